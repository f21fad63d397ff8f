"""Ready-made systems: a quadratic gradient flow and mean-field coupled pendulums."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import VectorFieldSpec
from .measures import EmpiricalMeasure, MeasureError, dirac


@dataclass(frozen=True)
class GradientFlowSystem:
    """Potential v(x, m) = |x|^2/2 + (lam/2) int |x - y|^2 m(dy).

    The flat derivative of m -> v(x, m) is (lam/2)|x - z|^2, so
    grad_m v(x, m, z) = lam (z - x), and the intrinsic derivative of
    phi(m) = int v dm is (1 + 2 lam) x - 2 lam mean(m). The equilibrium is
    delta_0 and the induced flow is affine.
    """

    lambda_interaction: float = 0.0
    d: int = 2

    def __post_init__(self):
        if self.lambda_interaction < 0:
            raise MeasureError("lambda_interaction must be >= 0")
        if self.d < 1:
            raise MeasureError("dimension must be >= 1")

    @property
    def lam(self) -> float:
        return float(self.lambda_interaction)

    def v(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """v(x, m) for each row of ``X``; ``Y`` holds the particles of m."""
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        sq = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=2).mean(axis=1)
        return 0.5 * np.sum(X**2, axis=1) + 0.5 * self.lam * sq

    def grad_x(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        return X + self.lam * (X - Y.mean(axis=0))

    def grad_m(self, Yq: np.ndarray, Y: np.ndarray, X: np.ndarray) -> np.ndarray:
        """grad_m v(y, m, x) for every (y in Yq, x in X); shape (len(Yq), len(X), d)."""
        Yq, X = np.atleast_2d(Yq), np.atleast_2d(X)
        return self.lam * (X[None, :, :] - Yq[:, None, :])

    def mean_grad_m(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """int grad_m v(y, m, x) m(dy) at each row of ``X``; equals lam (x - mean(m))."""
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        return self.lam * (X - Y.mean(axis=0))

    def phi(self, m: EmpiricalMeasure) -> float:
        # mean_ij |x_i - x_j|^2 = 2 (mean |x|^2 - |mean x|^2)
        X = m.points
        second = float(np.mean(np.sum(X**2, axis=1)))
        spread = 2.0 * (second - float(np.sum(X.mean(axis=0) ** 2)))
        return 0.5 * second + 0.5 * self.lam * spread

    def as_linear(self) -> tuple[np.ndarray, np.ndarray]:
        eye = np.eye(self.d)
        return -(1.0 + 2.0 * self.lam) * eye, 2.0 * self.lam * eye

    def equilibrium(self, n: int = 1) -> EmpiricalMeasure:
        return dirac(np.zeros(self.d), n)


@dataclass(frozen=True)
class PendulumSystem:
    """n_pend pendulums, state (q, p) in R^(2 n_pend), H = |q|^2/2 + |p|^2/2.

    f(x, m) = A x + B mean(m) with the symplectic block A and B = -kappa I.
    """

    n_pend: int = 1
    kappa: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.n_pend < 1:
            raise MeasureError("n_pend must be >= 1")
        if not self.beta > 0:
            raise MeasureError("beta must be > 0")

    @property
    def d(self) -> int:
        return 2 * self.n_pend

    @property
    def A(self) -> np.ndarray:
        k = self.n_pend
        eye, zero = np.eye(k), np.zeros((k, k))
        return np.block([[zero, eye], [-eye, zero]])

    @property
    def B(self) -> np.ndarray:
        return -self.kappa * np.eye(self.d)

    def hamiltonian(self, X: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(np.atleast_2d(X) ** 2, axis=1)


def gradient_flow_field(system: GradientFlowSystem) -> VectorFieldSpec:
    """x' = -(grad_m phi(m, x))^T = -(1 + 2 lam) x + 2 lam mean(m)."""
    return VectorFieldSpec.gradient_flow(system, system.d)


def pendulum_field(system: PendulumSystem) -> VectorFieldSpec:
    return VectorFieldSpec.linear(system.A, system.B)


def gibbs_cloud(system: PendulumSystem, n: int, seed: int = 0) -> EmpiricalMeasure:
    """n draws from the Gibbs density exp(-beta H)/Z = N(0, I/beta), mean-centered.

    Centering gives the cloud an exactly zero first moment.
    """
    if n < 1:
        raise MeasureError("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, system.d)) / np.sqrt(system.beta)
    return EmpiricalMeasure(X - X.mean(axis=0))
