"""Particle solver for the non-local continuity equation.

Every particle follows x' = f(x, m_t) where m_t is the empirical measure of the
whole ensemble at time t, so the snapshot at t_k is the push-forward of m_0
under the discrete flow and particle identity is preserved across snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linear_stability import GradientField, sq_norm_gradient, tangent_basis
from .measures import EmpiricalMeasure, MeasureError, moment_root
from .transport import wasserstein

BLOWUP_THRESHOLD = 1e12
FIELD_KINDS = ("linear", "gradient_flow", "custom")


class FieldEvaluationError(RuntimeError):
    """A custom field callback failed or returned a malformed value."""


class BlowUpError(RuntimeError):
    """The particle state left the finite range during integration."""

    def __init__(self, time: float, detail: str = ""):
        self.time = float(time)
        super().__init__(f"numerical blow-up at t={self.time:.17g}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True, eq=False)
class VectorFieldSpec:
    """Velocity field f(x, m).

    ``linear``: f = A x + B mean(m). ``gradient_flow``: f = -(grad_m phi(m, x))^T
    for phi(m) = int v(x, m) m(dx), with ``potential`` supplying ``grad_x`` and
    ``mean_grad_m``. ``custom``: ``callback(x, m)`` per point, or
    ``callback(X, m)`` on the whole array when ``vectorized`` is set.
    """

    kind: str
    dim: int
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    potential: object | None = None
    callback: Callable | None = field(default=None, repr=False)
    vectorized: bool = False
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise MeasureError(f"unknown field kind {self.kind!r}")
        if self.kind == "linear":
            A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
            B = np.atleast_2d(np.asarray(self.B, dtype=float)).copy()
            if A.shape != (self.dim, self.dim) or B.shape != (self.dim, self.dim):
                raise MeasureError(f"A, B must be {self.dim}x{self.dim}, got {A.shape}, {B.shape}")
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
                raise MeasureError("A and B must be finite")
            A.setflags(write=False)
            B.setflags(write=False)
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "B", B)
        elif self.kind == "gradient_flow" and self.potential is None:
            raise MeasureError("gradient_flow field needs a potential")
        elif self.kind == "custom" and self.callback is None:
            raise MeasureError("custom field needs a callback")

    @classmethod
    def linear(cls, A, B) -> "VectorFieldSpec":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls("linear", A.shape[0], A=A, B=B)

    @classmethod
    def zero(cls, d: int) -> "VectorFieldSpec":
        return cls.linear(np.zeros((d, d)), np.zeros((d, d)))

    @classmethod
    def gradient_flow(cls, potential, d: int) -> "VectorFieldSpec":
        return cls("gradient_flow", d, potential=potential)

    @classmethod
    def custom(cls, callback, d: int, vectorized: bool = False, lipschitz: float | None = None):
        return cls("custom", d, callback=callback, vectorized=vectorized, lipschitz=lipschitz)

    def linear_parts(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(A, B) when the field is affine of the form A x + B mean(m), else None."""
        if self.kind == "linear":
            return self.A, self.B
        if self.kind == "gradient_flow" and hasattr(self.potential, "as_linear"):
            return self.potential.as_linear()
        return None

    @property
    def lipschitz_constant(self) -> float | None:
        """C0 with |f(x,mu) - f(y,nu)| <= C0 (|x - y| + W_p(mu, nu))."""
        parts = self.linear_parts()
        if parts is not None:
            A, B = parts
            return float(max(np.linalg.norm(A, 2), np.linalg.norm(B, 2)))
        return self.lipschitz

    @property
    def growth_constant(self) -> float | None:
        """C1 with |f(x, mu)| <= C1 (1 + |x| + sigma_p(mu)).

        For affine fields |A x + B mean| <= |A||x| + |B| sigma_2(mu), so C0 serves.
        Otherwise C1 = max(C0, |f(0, delta_0)|).
        """
        if self.linear_parts() is not None:
            return self.lipschitz_constant
        if self.lipschitz is None:
            return None
        f00 = field_on_cloud(self, np.zeros((1, self.dim)))[0]
        return float(max(self.lipschitz, np.linalg.norm(f00)))


def field_on_cloud(spec: VectorFieldSpec, X: np.ndarray) -> np.ndarray:
    """f(x_i, m) for every particle, m being the empirical measure of ``X``."""
    if X.shape[1] != spec.dim:
        raise MeasureError(f"field is {spec.dim}-dimensional, cloud is {X.shape[1]}-dimensional")
    if spec.kind == "linear":
        return X @ spec.A.T + spec.B @ X.mean(axis=0)
    if spec.kind == "gradient_flow":
        pot = spec.potential
        return -(pot.grad_x(X, X) + pot.mean_grad_m(X, X))
    if not np.all(np.isfinite(X)):
        # an RK stage already overflowed; let the integrator's guard report it
        return np.full_like(X, np.nan)
    m = EmpiricalMeasure(X)
    try:
        if spec.vectorized:
            out = np.asarray(spec.callback(X.copy(), m), dtype=float)
        else:
            out = np.array([np.asarray(spec.callback(x.copy(), m), dtype=float) for x in X])
    except Exception as exc:
        raise FieldEvaluationError(f"custom field callback failed: {exc}") from exc
    if out.shape != X.shape:
        raise FieldEvaluationError(f"custom field returned shape {out.shape}, expected {X.shape}")
    return out


def evaluate_field(spec: VectorFieldSpec, x, m: EmpiricalMeasure) -> np.ndarray:
    """f(x, m) at a single point ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != spec.dim or m.d != spec.dim:
        raise MeasureError(f"dimension mismatch: field {spec.dim}, x {x.shape[0]}, measure {m.d}")
    if spec.kind == "linear":
        return spec.A @ x + spec.B @ m.mean()
    if spec.kind == "gradient_flow":
        pot = spec.potential
        X = x[None, :]
        return -(pot.grad_x(X, m.points) + pot.mean_grad_m(X, m.points))[0]
    try:
        if spec.vectorized:
            out = np.asarray(spec.callback(x[None, :], m), dtype=float)[0]
        else:
            out = np.asarray(spec.callback(x.copy(), m), dtype=float)
    except Exception as exc:
        raise FieldEvaluationError(f"custom field callback failed: {exc}") from exc
    if out.shape != x.shape:
        raise FieldEvaluationError(f"custom field returned shape {out.shape}, expected {x.shape}")
    return out


@dataclass(eq=False)
class TrajectoryEnsemble:
    """Snapshots of one particle system on an increasing time grid.

    ``states[k, i]`` is particle i at ``times[k]``; rows keep their identity.
    """

    times: np.ndarray
    states: np.ndarray
    spec: VectorFieldSpec | None = None
    dt: float | None = None
    method: str | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 3 or self.states.shape[0] != self.times.shape[0]:
            raise MeasureError("states must have shape (len(times), n, d)")
        if np.any(np.diff(self.times) <= 0):
            raise MeasureError("time grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def snapshot(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[k])

    @property
    def final(self) -> EmpiricalMeasure:
        return self.snapshot(-1)

    def means(self) -> np.ndarray:
        return self.states.mean(axis=1)

    def sigma(self, p: float = 2.0) -> np.ndarray:
        norms = np.linalg.norm(self.states, axis=2)
        return np.mean(norms**p, axis=1) ** (1.0 / p)


def _rk4_step(spec, X, h):
    k1 = field_on_cloud(spec, X)
    k2 = field_on_cloud(spec, X + 0.5 * h * k1)
    k3 = field_on_cloud(spec, X + 0.5 * h * k2)
    k4 = field_on_cloud(spec, X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler_step(spec, X, h):
    return X + h * field_on_cloud(spec, X)


_STEPPERS = {"rk4": _rk4_step, "euler": _euler_step}


def step_grid(T: float, dt: float) -> np.ndarray:
    """Fixed-step grid 0, dt, 2dt, ..., T; a final short step absorbs any remainder."""
    if not (T > 0 and dt > 0):
        raise MeasureError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    if dt > T:
        raise MeasureError(f"dt={dt} exceeds horizon T={T}")
    k = round(T / dt)
    if abs(k * dt - T) <= 1e-9 * T:
        grid = np.arange(k + 1) * dt
    else:
        k = math.ceil(T / dt)
        grid = np.append(np.arange(k) * dt, T)
    grid[-1] = T
    return grid


def integrate_ensemble(
    spec: VectorFieldSpec,
    m0: EmpiricalMeasure,
    T: float,
    dt: float,
    method: str = "rk4",
    record_every: int = 1,
) -> TrajectoryEnsemble:
    """Integrate the coupled particle ODE with a fixed step.

    The mean-field argument is the current ensemble at every RK stage, i.e.
    RK4 is applied to the joint n*d-dimensional system.

    Parameters
    ----------
    spec : VectorFieldSpec
    m0 : EmpiricalMeasure
        Initial cloud.
    T, dt : float
        Horizon and step, ``0 < dt <= T``.
    method : {"rk4", "euler"}
    record_every : int
        Keep every k-th step; the final time is always kept.

    Raises
    ------
    BlowUpError
        If any coordinate becomes non-finite or exceeds 1e12 in magnitude.
    """
    if method not in _STEPPERS:
        raise MeasureError(f"unknown integrator {method!r}; choose rk4 or euler")
    if record_every < 1:
        raise MeasureError("record_every must be >= 1")
    if m0.d != spec.dim:
        raise MeasureError(f"field is {spec.dim}-dimensional, cloud is {m0.d}-dimensional")
    stepper = _STEPPERS[method]
    grid = step_grid(T, dt)
    X = np.array(m0.points, dtype=float)
    times, states = [0.0], [X.copy()]
    last = len(grid) - 1
    for k in range(1, last + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            X = stepper(spec, X, grid[k] - grid[k - 1])
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > BLOWUP_THRESHOLD:
            raise BlowUpError(grid[k], "state magnitude exceeded the 1e12 guard")
        if k % record_every == 0 or k == last:
            times.append(float(grid[k]))
            states.append(X.copy())
    return TrajectoryEnsemble(np.array(times), np.stack(states), spec=spec, dt=float(dt), method=method)


def default_residual_basis(d: int) -> list[GradientField]:
    return tangent_basis(d, 2) + [sq_norm_gradient()]


def equilibrium_residual(
    spec: VectorFieldSpec, m_hat: EmpiricalMeasure, basis: Sequence[GradientField] | None = None
) -> float:
    """max_j |mean_i grad(phi_j)(x_i) . f(x_i, m_hat)| over a finite test basis.

    Zero only certifies weak stationarity against the chosen basis; the
    equilibrium condition proper ranges over all smooth compactly supported
    test functions.
    """
    if basis is None:
        basis = default_residual_basis(m_hat.d)
    if len(basis) == 0:
        raise MeasureError("empty test-function basis")
    F = field_on_cloud(spec, np.array(m_hat.points))
    return max(abs(float(np.mean(np.sum(g(m_hat.points) * F, axis=1)))) for g in basis)


@dataclass
class GrowthReport:
    C1: float
    alpha: float
    horizon: float
    G1: float
    G4: float
    sigma: np.ndarray
    moment_margin: float
    pairs: list[tuple[int, int]]
    distances: np.ndarray
    lipschitz_margin: float
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        return {
            "C1": self.C1,
            "alpha": self.alpha,
            "horizon": self.horizon,
            "G1": self.G1,
            "G4": self.G4,
            "sigma2": self.sigma.tolist(),
            "moment_margin": self.moment_margin,
            "pairs": [list(p) for p in self.pairs],
            "distances": self.distances.tolist(),
            "lipschitz_margin": self.lipschitz_margin,
            "violations": self.violations,
        }


def _default_pairs(K: int, max_anchor: int = 10) -> list[tuple[int, int]]:
    pairs = [(k, k + 1) for k in range(K - 1)]
    anchors = np.unique(np.linspace(1, K - 1, min(max_anchor, K - 1)).astype(int))
    pairs += [(0, int(k)) for k in anchors if k > 1]
    return pairs


def check_growth_bounds(
    traj: TrajectoryEnsemble,
    spec: VectorFieldSpec | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> GrowthReport:
    """Check the moment and time-Lipschitz bounds along a trajectory (p = 2).

    sigma_2(m_t) <= G1 = (C1 T + alpha) exp(2 C1 T) with alpha = sigma_2(m_0),
    and W_2(m_s, m_r) <= G4 (r - s) with G4 = C1 exp(C1 T) (1 + 2 G1).
    """
    spec = spec if spec is not None else traj.spec
    if spec is None or spec.growth_constant is None:
        raise MeasureError("growth constant C1 unknown for this field; pass a linear or gradient_flow spec")
    C1 = float(spec.growth_constant)
    T = traj.horizon
    sigma = traj.sigma(2.0)
    alpha = float(sigma[0])
    G1 = (C1 * T + alpha) * math.exp(2.0 * C1 * T)
    G4 = C1 * math.exp(C1 * T) * (1.0 + 2.0 * G1)
    # round-off allowance only
    slack = 1e-12 * (1.0 + G1)
    violations = int(np.count_nonzero(sigma > G1 + slack))

    pairs = list(pairs) if pairs is not None else _default_pairs(len(traj))
    dists = np.empty(len(pairs))
    margins = np.empty(len(pairs))
    for idx, (s, r) in enumerate(pairs):
        w = wasserstein(traj.snapshot(s), traj.snapshot(r), 2.0).cost
        bound = G4 * (traj.times[r] - traj.times[s])
        dists[idx] = w
        margins[idx] = bound - w
        if w > bound + 1e-12 * (1.0 + bound):
            violations += 1
    return GrowthReport(
        C1=C1,
        alpha=alpha,
        horizon=T,
        G1=G1,
        G4=G4,
        sigma=sigma,
        moment_margin=float(G1 - sigma.max()),
        pairs=pairs,
        distances=dists,
        lipschitz_margin=float(margins.min()) if len(margins) else math.inf,
        violations=violations,
    )


# --- export ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectory_csv(traj: TrajectoryEnsemble, path) -> None:
    """Columns t, particle_id, x_1..x_d; one row per particle per snapshot."""
    header = ["t", "particle_id"] + [f"x_{j + 1}" for j in range(traj.d)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t, X in zip(traj.times, traj.states):
            ts = _fmt(t)
            for i, x in enumerate(X):
                fh.write(f"{ts},{i}," + ",".join(_fmt(v) for v in x) + "\n")


def summary_table(traj: TrajectoryEnsemble, extra: dict[str, Sequence[float]] | None = None):
    """Header and rows: t, sigma2, mean_1..mean_d, then any extra columns."""
    header = ["t", "sigma2"] + [f"mean_{j + 1}" for j in range(traj.d)]
    cols = [traj.times, traj.sigma(2.0)] + list(traj.means().T)
    for name, values in (extra or {}).items():
        if len(values) != len(traj):
            raise MeasureError(f"extra column {name!r} has wrong length")
        header.append(name)
        cols.append(np.asarray(values, dtype=float))
    rows = [list(r) for r in zip(*cols)]
    return header, rows


def write_summary_csv(traj: TrajectoryEnsemble, path, extra=None) -> None:
    header, rows = summary_table(traj, extra)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(float(v)) for v in r) + "\n")
