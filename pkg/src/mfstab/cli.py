"""Command-line front end: ``mfstab simulate|probe|criterion --config cfg.json``.

Exit codes: 0 ok/pass, 1 criterion violated, 2 invalid config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dynamics import BlowUpError, VectorFieldSpec, integrate_ensemble, summary_table, write_summary_csv, write_trajectory_csv
from .linear_stability import quadratic_form, tangent_basis
from .lyapunov import LyapunovSpec, check_monotone, default_tolerance, lyap_value, stability_probe
from .measures import EmpiricalMeasure, MeasureError
from .systems import GradientFlowSystem, PendulumSystem, gibbs_cloud, gradient_flow_field, pendulum_field

log = logging.getLogger("mfstab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown field {unknown[0]!r}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class SystemConfig:
    name: str
    parameters: dict = field(default_factory=dict)


@dataclass
class SimulationConfig:
    n_particles: int
    dt: float
    T: float
    integrator: str = "rk4"
    seed: int = 0
    record_every: int = 1
    initial_shift: list | None = None


@dataclass
class ProbeConfig:
    epsilon: float
    delta: float
    samples: int
    eval_every: int = 50


@dataclass
class LyapunovConfig:
    kind: str = "half_w2_sq"
    tolerance_c1: float | None = None
    tolerance_c2: float | None = None


@dataclass
class CriterionConfig:
    basis_degree: int = 2
    tol: float | None = None


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    system: SystemConfig
    simulation: SimulationConfig
    probe: ProbeConfig | None = None
    lyapunov: LyapunovConfig | None = None
    criterion: CriterionConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_json(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "system": SystemConfig,
    "simulation": SimulationConfig,
    "probe": ProbeConfig,
    "lyapunov": LyapunovConfig,
    "criterion": CriterionConfig,
    "output": OutputConfig,
}

_SYSTEM_PARAMS = {
    "pendulum": {"n_pend", "kappa", "beta"},
    "gradient_flow": {"lambda_interaction", "d"},
    "linear": {"A", "B"},
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def parse_config(data: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown field {unknown[0]!r}")
    for required in ("system", "simulation"):
        if required not in data:
            raise ConfigError(f"missing section {required!r}")
    parts = {k: _strict(_SECTIONS[k], v, k) for k, v in data.items() if v is not None}
    cfg = ExperimentConfig(**parts)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    sysc = cfg.system
    if sysc.name not in _SYSTEM_PARAMS:
        raise ConfigError(f"system.name: unknown system {sysc.name!r}")
    if not isinstance(sysc.parameters, dict):
        raise ConfigError("system.parameters: expected an object")
    extra = sorted(set(sysc.parameters) - _SYSTEM_PARAMS[sysc.name])
    if extra:
        raise ConfigError(f"system.parameters: unknown field {extra[0]!r}")

    sim = cfg.simulation
    if not _is_int(sim.n_particles) or sim.n_particles < 1:
        raise ConfigError("simulation.n_particles must be an integer >= 1")
    if not (_is_num(sim.dt) and sim.dt > 0):
        raise ConfigError("simulation.dt must be > 0")
    if not (_is_num(sim.T) and sim.T >= sim.dt):
        raise ConfigError("simulation.T must be >= dt")
    if sim.integrator not in ("rk4", "euler"):
        raise ConfigError("simulation.integrator must be 'rk4' or 'euler'")
    if not _is_int(sim.seed):
        raise ConfigError("simulation.seed must be an integer")
    if not _is_int(sim.record_every) or sim.record_every < 1:
        raise ConfigError("simulation.record_every must be an integer >= 1")

    if cfg.probe is not None:
        pr = cfg.probe
        if not (_is_num(pr.delta) and _is_num(pr.epsilon) and 0 < pr.delta <= pr.epsilon):
            raise ConfigError("probe: need epsilon >= delta > 0")
        if not _is_int(pr.samples) or pr.samples < 1:
            raise ConfigError("probe.samples must be an integer >= 1")
        if not _is_int(pr.eval_every) or pr.eval_every < 1:
            raise ConfigError("probe.eval_every must be an integer >= 1")
    if cfg.lyapunov is not None:
        ly = cfg.lyapunov
        if ly.kind not in ("half_w2_sq", "integral_v"):
            raise ConfigError("lyapunov.kind must be 'half_w2_sq' or 'integral_v'")
        if ly.kind == "integral_v" and sysc.name != "gradient_flow":
            raise ConfigError("lyapunov.kind 'integral_v' is only defined for the gradient_flow system")
        for name in ("tolerance_c1", "tolerance_c2"):
            v = getattr(ly, name)
            if v is not None and not (_is_num(v) and v >= 0):
                raise ConfigError(f"lyapunov.{name} must be a number >= 0")
    if cfg.criterion is not None:
        cr = cfg.criterion
        if cr.basis_degree not in (1, 2) or not _is_int(cr.basis_degree):
            raise ConfigError("criterion.basis_degree must be 1 or 2")
        if cr.tol is not None and not _is_num(cr.tol):
            raise ConfigError("criterion.tol must be a number")
    out = cfg.output
    if not isinstance(out.formats, list) or not set(out.formats) <= {"csv", "json"}:
        raise ConfigError("output.formats must be a subset of ['csv', 'json']")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(data)


# --- system construction --------------------------------------------------


@dataclass
class Setup:
    field: VectorFieldSpec
    reference: EmpiricalMeasure
    initial: EmpiricalMeasure
    system: object


def build_setup(cfg: ExperimentConfig) -> Setup:
    """Field, reference equilibrium cloud and initial cloud for the configured system.

    pendulum: reference = centered Gibbs cloud. linear: reference = centered
    standard Gaussian cloud. gradient_flow: reference = all particles at 0,
    initial = standard Gaussian cloud. ``initial_shift`` translates the initial cloud.
    """
    name, params = cfg.system.name, cfg.system.parameters
    n, seed = cfg.simulation.n_particles, cfg.simulation.seed
    try:
        if name == "pendulum":
            system = PendulumSystem(**params)
            spec = pendulum_field(system)
            reference = gibbs_cloud(system, n, seed)
            base = reference.points
        elif name == "linear":
            if "A" not in params or "B" not in params:
                raise ConfigError("linear system needs parameters A and B")
            spec = VectorFieldSpec.linear(params["A"], params["B"])
            system = None
            X = np.random.default_rng(seed).standard_normal((n, spec.dim))
            reference = EmpiricalMeasure(X - X.mean(axis=0))
            base = reference.points
        else:
            system = GradientFlowSystem(**params)
            spec = gradient_flow_field(system)
            reference = system.equilibrium(n)
            base = np.random.default_rng(seed).standard_normal((n, system.d))
    except (MeasureError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"system.parameters: {exc}") from None
    shift = cfg.simulation.initial_shift
    if shift is not None:
        shift = np.asarray(shift, dtype=float)
        if shift.shape != (spec.dim,) or not np.all(np.isfinite(shift)):
            raise ConfigError(f"simulation.initial_shift must be a finite {spec.dim}-vector")
        base = base + shift
    return Setup(spec, reference, EmpiricalMeasure(base), system)


# --- commands ---------------------------------------------------------------


def _manifest(cfg: ExperimentConfig, command: str, extra: dict | None = None) -> dict:
    out = {
        "command": command,
        "config": cfg.to_json(),
        "seed": cfg.simulation.seed,
        "versions": {
            "mfstab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        out.update(extra)
    return out


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    setup = build_setup(cfg)
    sim = cfg.simulation
    try:
        traj = integrate_ensemble(setup.field, setup.initial, sim.T, sim.dt, sim.integrator, sim.record_every)
    except BlowUpError as exc:
        log.error("%s", exc)
        _dump(_manifest(cfg, "simulate", {"status": "blow-up", "blowup_time": exc.time}), out / "manifest.json")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    extra, report = {}, None
    if cfg.lyapunov is not None:
        if cfg.lyapunov.kind == "half_w2_sq":
            lspec = LyapunovSpec.half_w2_sq(setup.reference)
        else:
            lspec = LyapunovSpec.integral_v(setup.system)
        phi0 = lyap_value(lspec, setup.initial)
        tol = default_tolerance(
            setup.field, phi0, sim.dt, sim.n_particles, cfg.lyapunov.tolerance_c1, cfg.lyapunov.tolerance_c2
        )
        report = check_monotone(traj, lspec, tol)
        extra["lyapunov"] = report.values

    formats = set(cfg.output.formats)
    if "csv" in formats:
        write_summary_csv(traj, out / "summary.csv", extra)
        write_trajectory_csv(traj, out / "trajectory.csv")
    if "json" in formats:
        header, rows = summary_table(traj, extra)
        _dump({"columns": header, "rows": rows}, out / "summary.json")
        if report is not None:
            _dump(report.to_json(), out / "descent_report.json")
    status = {"status": "ok"}
    if report is not None:
        status["lyapunov_verdict"] = "pass" if report.verdict else "fail"
    _dump(_manifest(cfg, "simulate", status), out / "manifest.json")
    return EXIT_OK


def cmd_probe(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.probe is None:
        raise ConfigError("probe section required for the probe command")
    setup = build_setup(cfg)
    sim, pr = cfg.simulation, cfg.probe
    report = stability_probe(
        setup.field,
        setup.reference,
        pr.epsilon,
        pr.delta,
        pr.samples,
        sim.T,
        sim.dt,
        seed=sim.seed,
        eval_every=pr.eval_every,
        method=sim.integrator,
    )
    _dump(report.to_json(), out / "probe.json")
    _dump(_manifest(cfg, "probe", {"escaped": report.escaped}), out / "manifest.json")
    print(f"escaped={str(report.escaped).lower()} sup_distance={report.sup_distance:.6g}")
    return EXIT_OK


def cmd_criterion(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.system.name == "gradient_flow":
        raise ConfigError(
            "criterion requires a linear-kind system (pendulum or linear); "
            "gradient_flow is affine but must be cast to 'linear' explicitly"
        )
    setup = build_setup(cfg)
    crit = cfg.criterion or CriterionConfig()
    basis = tangent_basis(setup.field.dim, crit.basis_degree)
    report = quadratic_form(setup.field.A, setup.field.B, setup.reference, basis, crit.tol)
    _dump(report.to_json(), out / "criterion.json")
    _dump(_manifest(cfg, "criterion", {"verdict": "pass" if report.verdict else "fail"}), out / "manifest.json")
    print(f"verdict={'pass' if report.verdict else 'fail'} max_eigenvalue={report.max_eigenvalue:.6g}")
    return EXIT_OK if report.verdict else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "probe": cmd_probe, "criterion": cmd_criterion}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfstab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, help="overrides simulation.seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.simulation.seed = args.seed
        out = Path(args.out or cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, MeasureError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
