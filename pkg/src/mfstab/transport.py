"""Exact discrete Wasserstein distances between equal-size uniform clouds.

For two clouds of n particles with weights 1/n, the extreme points of the
transport polytope are permutation matrices (Birkhoff), so W_p reduces to a
linear assignment problem on the matrix ||x_i - y_j||^p.
"""

from __future__ import annotations

import itertools
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .measures import EmpiricalMeasure, MeasureError

BRUTEFORCE_MAX_N = 8
# above this size the network simplex beats the dense assignment solver by a
# wide margin on independent samples; below it the two are on par
NETWORK_SIMPLEX_MIN_N = 512


class NonUniquePlanWarning(UserWarning):
    """The optimal assignment has a near-tied alternative that moves mass differently."""


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Optimal pairing of ``source`` particle i with ``target`` particle assignment[i]."""

    source: EmpiricalMeasure
    target: EmpiricalMeasure
    assignment: np.ndarray
    cost: float
    p: float

    @property
    def displacements(self) -> np.ndarray:
        """target[sigma(i)] - source[i], indexed by source particle."""
        return self.target.points[self.assignment] - self.source.points

    def to_json(self) -> dict:
        return {"assignment": self.assignment.tolist(), "cost": self.cost, "p": self.p}


@dataclass(frozen=True, eq=False)
class SupergradientField:
    """Per-particle covector gamma(x_j) of the measure it was taken at.

    Stored as an ``(n, d)`` array; row/column orientation is immaterial for p=2.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or not np.all(np.isfinite(vals)):
            raise MeasureError("supergradient values must be a finite (n, d) array")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.values**2, axis=1))))

    def pair(self, b) -> float:
        """<gamma, b>_{L2(m)} = mean_i gamma_i . b_i."""
        b = getattr(b, "values", b)
        return float(np.mean(np.sum(self.values * np.asarray(b), axis=1)))


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> None:
    if mu.n != nu.n:
        raise MeasureError(f"clouds must have equal size, got {mu.n} and {nu.n}")
    if mu.d != nu.d:
        raise MeasureError(f"clouds must have equal dimension, got {mu.d} and {nu.d}")
    if not p > 1:
        raise MeasureError(f"p must exceed 1, got {p}")


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> np.ndarray:
    if p == 2:
        return cdist(mu.points, nu.points, "sqeuclidean")
    return cdist(mu.points, nu.points, "euclidean") ** p


def _pairing_cost(mu, nu, assignment, p) -> float:
    dist = np.linalg.norm(nu.points[assignment] - mu.points, axis=1)
    return float(np.mean(dist**p) ** (1.0 / p))


def wasserstein(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0) -> TransportPlan:
    """Optimal assignment from ``mu`` to ``nu`` and the distance W_p(mu, nu).

    Parameters
    ----------
    mu, nu : EmpiricalMeasure
        Clouds of equal size and dimension.
    p : float
        Exponent of the ground cost, ``p > 1``.

    Returns
    -------
    TransportPlan
        ``plan.cost`` is W_p recomputed from the returned pairing.
    """
    _check_pair(mu, nu, p)
    if p == 2:
        # Centering shifts the cost by row/column constants only, so the
        # minimizers are unchanged; the assignment solver is far faster on it.
        a = mu.points - mu.mean()
        b = nu.points - nu.mean()
        C = cdist(a, b, "sqeuclidean")
    else:
        C = cost_matrix(mu, nu, p)
    assignment = _network_simplex(C) if mu.n >= NETWORK_SIMPLEX_MIN_N else None
    if assignment is None:
        rows, cols = linear_sum_assignment(C)
        assignment = np.empty(mu.n, dtype=np.intp)
        assignment[rows] = cols
    assignment.setflags(write=False)
    return TransportPlan(mu, nu, assignment, _pairing_cost(mu, nu, assignment, p), float(p))


def _import_pot():
    # POT probes every array backend it knows on import; only numpy is needed
    for name in ("TENSORFLOW", "JAX", "PYTORCH", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def _network_simplex(C: np.ndarray) -> np.ndarray | None:
    """Permutation from POT's exact network simplex, or None to fall back.

    With uniform integer-scaled marginals every vertex of the transport
    polytope is a permutation matrix; a degenerate or truncated run that does
    not return one is handed back to the dense solver.
    """
    ot = _import_pot()
    n = C.shape[0]
    w = np.full(n, 1.0 / n)
    G, log = ot.emd(w, w, C, numItermax=max(100_000, 50 * n * n), log=True)
    if log.get("warning") is not None:
        return None
    support = G > 0.5 / n
    if not (np.all(support.sum(axis=1) == 1) and np.all(support.sum(axis=0) == 1)):
        return None
    return np.argmax(support, axis=1).astype(np.intp)


def optimal_plan_bruteforce(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0) -> TransportPlan:
    """Exhaustive search over all n! pairings; test oracle for n <= 8.

    Among minimizers the lexicographically smallest permutation is returned.
    """
    _check_pair(mu, nu, p)
    n = mu.n
    if n > BRUTEFORCE_MAX_N:
        raise MeasureError(f"brute force limited to n <= {BRUTEFORCE_MAX_N}, got {n}")
    costs = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            costs[i, j] = math.sqrt(sum((a - b) ** 2 for a, b in zip(mu.points[i], nu.points[j]))) ** p
    # itertools yields permutations in lexicographic order
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = costs[np.arange(n), perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]
    cost = float((totals.min() / n) ** (1.0 / p))
    best.setflags(write=False)
    return TransportPlan(mu, nu, best, cost, float(p))


def near_tie_swaps(plan: TransportPlan, slack: float = 1e-10) -> int:
    """Count pairwise exchanges of the assignment that cost at most ``slack`` more.

    Only exchanges that change the displacement field are counted (swapping
    two coincident source particles is harmless). This detects ties among
    2-cycles only; longer alternating cycles are not examined.
    """
    sigma = plan.assignment
    n = len(sigma)
    if n < 2:
        return 0
    C = cost_matrix(plan.source, plan.target, plan.p)
    M = C[:, sigma]  # M[i, k] = c(x_i, y_sigma(k))
    diag = np.diag(M)
    delta = (M + M.T - diag[:, None] - diag[None, :]) / n
    src = plan.source.points
    tgt = plan.target.points[sigma]
    distinct = (cdist(src, src, "sqeuclidean") > 0) & (cdist(tgt, tgt, "sqeuclidean") > 0)
    tied = (delta <= slack) & distinct
    np.fill_diagonal(tied, False)
    return int(np.count_nonzero(np.triu(tied)))


def barycentric_projection(plan: TransportPlan, warn_ties: bool = False) -> SupergradientField:
    """gamma(y) = integral of (y - x_hat) against the plan conditioned on y.

    The field lives on the plan's target measure ``m``; the source is the
    reference ``m_hat``. Plans here are permutations, so the conditional is a
    single atom and gamma(y_sigma(i)) = y_sigma(i) - x_hat_i.
    """
    if plan.p != 2:
        raise MeasureError(f"barycentric projection requires a p=2 plan, got p={plan.p}")
    if warn_ties:
        ties = near_tie_swaps(plan)
        if ties:
            warnings.warn(
                f"optimal assignment is not unique: {ties} near-tied exchanges within 1e-10",
                NonUniquePlanWarning,
                stacklevel=2,
            )
    values = np.empty_like(plan.target.points)
    values[plan.assignment] = plan.displacements
    return SupergradientField(values)


def _psd_sqrt(S: np.ndarray, name: str) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise MeasureError(f"{name} must be square, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * scale):
        raise MeasureError(f"{name} is not symmetric")
    w, V = np.linalg.eigh(S)
    if w.min() < -1e-12 * scale:
        raise MeasureError(f"{name} is indefinite (smallest eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def gaussian_w2(mean1, cov1, mean2, cov2) -> float:
    """Closed-form W_2 between N(mean1, cov1) and N(mean2, cov2) (Bures metric)."""
    mean1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    mean2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    root2 = _psd_sqrt(cov2, "cov2")
    _psd_sqrt(cov1, "cov1")
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    if not (mean1.shape == mean2.shape and cov1.shape == root2.shape == (len(mean1),) * 2):
        raise MeasureError("gaussian_w2: inconsistent dimensions")
    inner = _psd_sqrt(0.5 * (root2 @ cov1 @ root2 + (root2 @ cov1 @ root2).T), "cross term")
    bures = np.trace(cov1) + np.trace(np.atleast_2d(cov2)) - 2.0 * np.trace(inner)
    total = float(np.sum((mean1 - mean2) ** 2) + max(bures, 0.0))
    return math.sqrt(total)
