"""Lyapunov functionals on particle clouds, their supergradients, and stability checks."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import BlowUpError, TrajectoryEnsemble, VectorFieldSpec, field_on_cloud, integrate_ensemble
from .measures import EmpiricalMeasure, MeasureError
from .transport import SupergradientField, barycentric_projection, wasserstein

LYAPUNOV_KINDS = ("half_w2_sq", "integral_v", "custom")
WORKERS_ENV = "MFSTAB_WORKERS"


@dataclass(frozen=True, eq=False)
class LyapunovSpec:
    """Candidate Lyapunov functional.

    ``half_w2_sq``: phi(m) = W_2(m, reference)^2 / 2, reference of equal size.
    ``integral_v``: phi(m) = int v(x, m) m(dx) for a potential exposing ``v``,
    ``grad_x`` and ``mean_grad_m`` (see ``systems.GradientFlowSystem``).
    ``custom``: caller-supplied ``value`` and ``gradient``; superdifferentiability
    of a custom functional is not checked.
    """

    kind: str
    reference: EmpiricalMeasure | None = None
    potential: object | None = None
    value: Callable[[EmpiricalMeasure], float] | None = field(default=None, repr=False)
    gradient: Callable[[EmpiricalMeasure], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in LYAPUNOV_KINDS:
            raise MeasureError(f"unknown Lyapunov kind {self.kind!r}")
        if self.kind == "half_w2_sq" and not isinstance(self.reference, EmpiricalMeasure):
            raise MeasureError("half_w2_sq needs a reference EmpiricalMeasure")
        if self.kind == "integral_v" and self.potential is None:
            raise MeasureError("integral_v needs a potential")
        if self.kind == "custom" and (self.value is None or self.gradient is None):
            raise MeasureError("custom Lyapunov spec needs value and gradient callables")

    @classmethod
    def half_w2_sq(cls, reference: EmpiricalMeasure) -> "LyapunovSpec":
        return cls("half_w2_sq", reference=reference)

    @classmethod
    def integral_v(cls, potential) -> "LyapunovSpec":
        return cls("integral_v", potential=potential)

    @classmethod
    def custom(cls, value, gradient) -> "LyapunovSpec":
        return cls("custom", value=value, gradient=gradient)


def _check_reference(spec: LyapunovSpec, m: EmpiricalMeasure) -> None:
    ref = spec.reference
    if ref.n != m.n or ref.d != m.d:
        raise MeasureError(
            f"half_w2_sq needs equal-size clouds: reference is ({ref.n}, {ref.d}), argument is ({m.n}, {m.d})"
        )


def lyap_value(spec: LyapunovSpec, m: EmpiricalMeasure) -> float:
    if spec.kind == "half_w2_sq":
        _check_reference(spec, m)
        return 0.5 * wasserstein(spec.reference, m, 2.0).cost ** 2
    if spec.kind == "integral_v":
        pot = spec.potential
        if hasattr(pot, "phi"):
            return float(pot.phi(m))
        return float(np.mean(pot.v(m.points, m.points)))
    return float(spec.value(m))


def supergradient(spec: LyapunovSpec, m: EmpiricalMeasure, warn_ties: bool = True) -> SupergradientField:
    """An element of the barycentric superdifferential of phi at ``m``.

    half_w2_sq: barycentric projection of the optimal plan from the reference
    to ``m``. integral_v: the intrinsic derivative
    grad_x v(x, m) + mean_y grad_m v(y, m, x).
    """
    if spec.kind == "half_w2_sq":
        _check_reference(spec, m)
        plan = wasserstein(spec.reference, m, 2.0)
        return barycentric_projection(plan, warn_ties=warn_ties)
    if spec.kind == "integral_v":
        pot = spec.potential
        X = np.array(m.points)
        return SupergradientField(pot.grad_x(X, X) + pot.mean_grad_m(X, X))
    vals = np.asarray(spec.gradient(m), dtype=float)
    if vals.shape != m.points.shape:
        raise MeasureError(f"custom gradient has shape {vals.shape}, expected {m.points.shape}")
    return SupergradientField(vals)


def descent_integral(gamma: SupergradientField, spec_f: VectorFieldSpec, m: EmpiricalMeasure) -> float:
    """mean_i gamma(x_i) . f(x_i, m)."""
    if gamma.values.shape != m.points.shape:
        raise MeasureError(f"supergradient has shape {gamma.values.shape}, measure has {m.points.shape}")
    F = field_on_cloud(spec_f, np.array(m.points))
    return float(np.mean(np.sum(gamma.values * F, axis=1)))


@dataclass
class DescentReport:
    times: np.ndarray
    values: np.ndarray
    descent_integrals: np.ndarray | None
    max_increase: float
    total_change: float
    tol: float
    verdict: bool

    def to_json(self) -> dict:
        return {
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "descent_integrals": None if self.descent_integrals is None else self.descent_integrals.tolist(),
            "max_increase": self.max_increase,
            "total_change": self.total_change,
            "tol": self.tol,
            "verdict": "pass" if self.verdict else "fail",
        }


def monotone_report(times, values, tol: float, descent_integrals=None) -> DescentReport:
    """Pass iff every step rises by at most tol*dt_k and the total by at most tol*T."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1 or len(times) < 1:
        raise MeasureError("times and values must be equal-length 1-d sequences")
    if tol < 0:
        raise MeasureError("tol must be >= 0")
    inc = np.diff(values)
    steps = np.diff(times)
    max_inc = float(inc.max()) if len(inc) else 0.0
    total = float(values[-1] - values[0])
    ok = bool(np.all(inc <= tol * steps) and total <= tol * (times[-1] - times[0]))
    di = None if descent_integrals is None else np.asarray(descent_integrals, dtype=float)
    return DescentReport(times, values, di, max_inc, total, float(tol), ok)


def check_monotone(
    traj: TrajectoryEnsemble,
    spec: LyapunovSpec,
    tol: float,
    spec_f: VectorFieldSpec | None = None,
) -> DescentReport:
    """Evaluate phi and the descent integral on every snapshot of ``traj``."""
    spec_f = spec_f if spec_f is not None else traj.spec
    values, integrals = [], []
    for k in range(len(traj)):
        m = traj.snapshot(k)
        if spec.kind == "half_w2_sq":
            _check_reference(spec, m)
            # one assignment serves both the value and the supergradient
            plan = wasserstein(spec.reference, m, 2.0)
            values.append(0.5 * plan.cost**2)
            gamma = barycentric_projection(plan) if spec_f is not None else None
        else:
            values.append(lyap_value(spec, m))
            gamma = supergradient(spec, m) if spec_f is not None else None
        if gamma is not None:
            integrals.append(descent_integral(gamma, spec_f, m))
    return monotone_report(traj.times, values, tol, integrals if spec_f is not None else None)


def default_tolerance(
    spec_f: VectorFieldSpec, phi0: float, dt: float, n: int, c1: float | None = None, c2: float | None = None
) -> float:
    """tol = c1*dt + c2/sqrt(n), c1 = (1 + |A| + |B|) phi0 and c2 = phi0 by default.

    Covers discretization and sampling error; calibrated, not derived.
    """
    if c1 is None:
        parts = spec_f.linear_parts()
        if parts is not None:
            scale = 1.0 + np.linalg.norm(parts[0], 2) + np.linalg.norm(parts[1], 2)
        else:
            scale = 1.0 + 2.0 * (spec_f.lipschitz_constant or 0.0)
        c1 = float(scale) * phi0
    if c2 is None:
        c2 = phi0
    return float(c1 * dt + c2 / math.sqrt(n))


# --- stability probe ------------------------------------------------------


def sample_initial_cloud(
    m_hat: EmpiricalMeasure, delta: float, rng: np.random.Generator, max_iter: int = 60
) -> tuple[EmpiricalMeasure, float]:
    """Displace each particle of ``m_hat`` so that delta/2 < W_2(m_hat, m0) < delta.

    Directions are uniform on the sphere and magnitudes folded-Gaussian clipped
    at 3; a global scale is then tuned until the empirical distance lands in
    the window.
    """
    n, d = m_hat.points.shape
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    g[norms == 0] = 1.0
    directions = g / np.linalg.norm(g, axis=1, keepdims=True)
    radii = np.minimum(np.abs(rng.standard_normal(n)), 3.0)
    b = directions * radii[:, None]
    target = delta * rng.uniform(0.6, 0.9)
    scale = target / math.sqrt(np.mean(radii**2))
    for _ in range(max_iter):
        m0 = EmpiricalMeasure(m_hat.points + scale * b)
        w = wasserstein(m_hat, m0, 2.0).cost
        if 0.5 * delta < w < delta:
            return m0, w
        scale *= target / w if w > 0 else 2.0
    raise RuntimeError("could not place the initial cloud inside the (delta/2, delta) window")


@dataclass
class ProbeSample:
    index: int
    initial_distance: float
    times: np.ndarray
    distances: np.ndarray
    means: np.ndarray
    blowup_time: float | None = None

    @property
    def sup_distance(self) -> float:
        if self.blowup_time is not None:
            return math.inf
        return float(self.distances.max())

    def to_json(self) -> dict:
        sup = self.sup_distance
        return {
            "index": self.index,
            "initial_distance": self.initial_distance,
            "sup_distance": None if math.isinf(sup) else sup,
            "blowup_time": self.blowup_time,
            "times": self.times.tolist(),
            "distances": self.distances.tolist(),
            "means": self.means.tolist(),
        }


@dataclass
class ProbeReport:
    epsilon: float
    delta: float
    T: float
    dt: float
    seed: int
    samples: list[ProbeSample]

    @property
    def sup_distance(self) -> float:
        return max(s.sup_distance for s in self.samples)

    @property
    def escaped(self) -> bool:
        return self.sup_distance >= self.epsilon

    def escaped_samples(self) -> list[int]:
        return [s.index for s in self.samples if s.sup_distance >= self.epsilon]

    def to_json(self) -> dict:
        sup = self.sup_distance
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "T": self.T,
            "dt": self.dt,
            "seed": self.seed,
            "sup_distance": None if math.isinf(sup) else sup,
            "escaped": self.escaped,
            "escaped_samples": self.escaped_samples(),
            "samples": [s.to_json() for s in self.samples],
        }


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise MeasureError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _run_probe_sample(spec_f, m_hat, delta, T, dt, eval_every, method, index, seq) -> ProbeSample:
    rng = np.random.default_rng(seq)
    m0, w0 = sample_initial_cloud(m_hat, delta, rng)
    try:
        traj = integrate_ensemble(spec_f, m0, T, dt, method=method, record_every=eval_every)
    except BlowUpError as exc:
        return ProbeSample(index, w0, np.array([0.0]), np.array([w0]), m0.mean()[None, :], exc.time)
    dists = np.array([wasserstein(m_hat, traj.snapshot(k), 2.0).cost for k in range(len(traj))])
    return ProbeSample(index, w0, traj.times, dists, traj.means())


def stability_probe(
    spec_f: VectorFieldSpec,
    m_hat: EmpiricalMeasure,
    epsilon: float,
    delta: float,
    samples: int,
    T: float,
    dt: float,
    seed: int = 0,
    eval_every: int = 50,
    method: str = "rk4",
    workers: int | None = None,
) -> ProbeReport:
    """Monte Carlo check of the epsilon-delta stability definition around ``m_hat``.

    Draws ``samples`` initial clouds within W_2 distance delta of ``m_hat``,
    integrates each to ``T`` and records W_2(m_hat, m_t) every ``eval_every``
    steps. ``escaped`` is set when the supremum over samples and recorded times
    reaches ``epsilon``. A sampled check, not a certificate.
    """
    if not (0 < delta <= epsilon):
        raise MeasureError(f"need 0 < delta <= epsilon, got delta={delta}, epsilon={epsilon}")
    if samples < 1:
        raise MeasureError("samples must be >= 1")
    seqs = np.random.SeedSequence(seed).spawn(samples)
    workers = worker_count() if workers is None else max(1, int(workers))

    def run(i):
        return _run_probe_sample(spec_f, m_hat, delta, T, dt, eval_every, method, i, seqs[i])

    if workers == 1:
        results = [run(i) for i in range(samples)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(samples)))
    return ProbeReport(float(epsilon), float(delta), float(T), float(dt), int(seed), results)
