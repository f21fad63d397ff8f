"""Quadratic-form stability test for fields f(x, m) = A x + B mean(m).

The form evaluated on a tangent direction xi at the equilibrium cloud m_hat is

    q(xi, xi) = mean_i xi(x_i)^T A xi(x_i) + (mean_i xi(x_i))^T B (mean_i xi(x_i)),

and the equilibrium is stable when q <= 0 on the whole tangent space. Only a
finite polynomial basis can be checked, so a pass is evidence over that basis
and never a certificate for the full tangent space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .measures import EmpiricalMeasure, MeasureError

BASIS_NOTE = (
    "necessary evidence over the listed basis only; "
    "not a certificate over the full tangent space"
)


@dataclass(frozen=True)
class GradientField:
    """Gradient of a test function, evaluated row-wise on an ``(n, d)`` array."""

    label: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.fn(np.atleast_2d(X))


def _const_grad(d: int, j: int) -> GradientField:
    e = np.zeros(d)
    e[j] = 1.0
    return GradientField(f"grad(x{j + 1})", lambda X: np.broadcast_to(e, X.shape).copy())


def _quad_grad(d: int, j: int, l: int) -> GradientField:
    def fn(X):
        G = np.zeros_like(X)
        if j == l:
            G[:, j] = 2.0 * X[:, j]
        else:
            G[:, j] = X[:, l]
            G[:, l] = X[:, j]
        return G

    label = f"grad(x{j + 1}^2)" if j == l else f"grad(x{j + 1}*x{l + 1})"
    return GradientField(label, fn)


def sq_norm_gradient() -> GradientField:
    return GradientField("grad(|x|^2)", lambda X: 2.0 * X)


def tangent_basis(d: int, degree: int = 2) -> list[GradientField]:
    """Gradients of the monomials x_j (degree 1) and x_j x_l, j <= l (degree 2).

    >>> [g.label for g in tangent_basis(2, 2)]
    ['grad(x1)', 'grad(x2)', 'grad(x1^2)', 'grad(x1*x2)', 'grad(x2^2)']
    """
    if d < 1:
        raise MeasureError(f"dimension must be >= 1, got {d}")
    if degree not in (1, 2):
        raise MeasureError(f"unsupported basis degree {degree}; use 1 or 2")
    basis = [_const_grad(d, j) for j in range(d)]
    if degree == 2:
        basis += [_quad_grad(d, j, l) for j in range(d) for l in range(j, d)]
    return basis


def _check_matrices(A, B, d=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != A.shape[1] or A.shape != B.shape:
        raise MeasureError(f"A and B must be square of equal size, got {A.shape} and {B.shape}")
    if d is not None and A.shape[0] != d:
        raise MeasureError(f"matrices are {A.shape[0]}-dimensional, cloud is {d}-dimensional")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise MeasureError("A and B must be finite")
    return A, B


def form_value(A, B, m_hat: EmpiricalMeasure, xi: Callable, zeta: Callable) -> float:
    """Unsymmetrized q(xi, zeta) evaluated by particle averages over ``m_hat``."""
    A, B = _check_matrices(A, B, m_hat.d)
    U, V = xi(m_hat.points), zeta(m_hat.points)
    local = float(np.mean(np.einsum("ni,ij,nj->n", U, A, V)))
    return local + float(U.mean(axis=0) @ B @ V.mean(axis=0))


@dataclass
class QuadraticFormReport:
    basis_labels: list[str]
    gram_matrix: np.ndarray
    local_part: np.ndarray
    interaction_part: np.ndarray
    raw_diagonal: np.ndarray
    eigenvalues: np.ndarray
    max_eigenvalue: float
    tol: float
    verdict: bool
    note: str = BASIS_NOTE

    def to_json(self) -> dict:
        return {
            "basis": self.basis_labels,
            "gram_matrix": self.gram_matrix.tolist(),
            "local_part": self.local_part.tolist(),
            "interaction_part": self.interaction_part.tolist(),
            "raw_diagonal": self.raw_diagonal.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "max_eigenvalue": self.max_eigenvalue,
            "tol": self.tol,
            "verdict": "pass" if self.verdict else "fail",
            "note": self.note,
        }


def quadratic_form(
    A, B, m_hat: EmpiricalMeasure, basis: list[GradientField] | None = None, tol: float | None = None
) -> QuadraticFormReport:
    """Gram matrix of the symmetrized form over ``basis`` and its top eigenvalue.

    The verdict passes iff ``max_eigenvalue <= tol``; the default tolerance is
    ``1e-9 * (1 + ||A||_2 + ||B||_2)``.
    """
    A, B = _check_matrices(A, B, m_hat.d)
    if basis is None:
        basis = tangent_basis(m_hat.d, 2)
    if not basis:
        raise MeasureError("empty tangent basis")
    if tol is None:
        tol = 1e-9 * (1.0 + np.linalg.norm(A, 2) + np.linalg.norm(B, 2))

    fields = np.stack([g(m_hat.points) for g in basis])  # (k, n, d)
    if fields.shape[1:] != m_hat.points.shape:
        raise MeasureError("basis field returned the wrong shape")
    n = m_hat.n
    local_raw = np.einsum("kni,ij,lnj->kl", fields, A, fields) / n
    means = fields.mean(axis=1)  # (k, d)
    inter_raw = means @ B @ means.T
    local = 0.5 * (local_raw + local_raw.T)
    inter = 0.5 * (inter_raw + inter_raw.T)
    Q = local + inter
    eig = np.linalg.eigvalsh(Q)
    lam = float(eig[-1])
    return QuadraticFormReport(
        basis_labels=[g.label for g in basis],
        gram_matrix=Q,
        local_part=local,
        interaction_part=inter,
        raw_diagonal=np.diag(local_raw + inter_raw).copy(),
        eigenvalues=eig,
        max_eigenvalue=lam,
        tol=float(tol),
        verdict=bool(lam <= tol),
    )


@dataclass
class MeanDynamics:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    hurwitz: bool

    @property
    def spectral_abscissa(self) -> float:
        return float(np.max(self.eigenvalues.real))

    def to_json(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "eigenvalues_real": self.eigenvalues.real.tolist(),
            "eigenvalues_imag": self.eigenvalues.imag.tolist(),
            "hurwitz": self.hurwitz,
        }


def mean_dynamics_matrix(A, B) -> MeanDynamics:
    """The cloud mean of a linear system obeys mu' = (A + B) mu."""
    A, B = _check_matrices(A, B)
    M = A + B
    eig = np.linalg.eigvals(M)
    return MeanDynamics(M, eig, bool(np.all(eig.real < 0)))


def mean_trajectory(A, B, mu0, times) -> np.ndarray:
    """exp((A + B) t) mu0 for each t in ``times``; shape ``(len(times), d)``."""
    M = mean_dynamics_matrix(A, B).matrix
    mu0 = np.asarray(mu0, dtype=float)
    return np.array([expm(M * t) @ mu0 for t in np.asarray(times, dtype=float)])
