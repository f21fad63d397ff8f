"""Uniform-weight particle clouds standing in for probability measures on R^d."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np


class MeasureError(ValueError):
    """Raised when a cloud or a field attached to it is malformed."""


def _as_cloud_array(points, name: str = "points") -> np.ndarray:
    try:
        arr = np.array(points, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MeasureError(f"{name}: inconsistent dimensions or non-numeric entries") from exc
    if arr.ndim == 1 and arr.size == 0:
        raise MeasureError(f"{name}: empty input")
    if arr.ndim != 2:
        raise MeasureError(f"{name}: expected a list of d-vectors, got array of shape {arr.shape}")
    if arr.shape[0] == 0:
        raise MeasureError(f"{name}: empty input")
    if arr.shape[1] == 0:
        raise MeasureError(f"{name}: zero-dimensional points")
    if not np.all(np.isfinite(arr)):
        bad = tuple(np.argwhere(~np.isfinite(arr))[0])
        raise MeasureError(f"{name}: non-finite coordinate at index {bad}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Empirical measure (1/n) sum_i delta_{x_i}.

    ``points`` has shape ``(n, d)`` and is stored read-only. Weights are
    always uniform; there is deliberately no way to pass weights.
    """

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_cloud_array(self.points))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.n}, d={self.d})"


@dataclass(frozen=True, eq=False)
class PerturbationField:
    """Per-particle displacement b(x_i), an element of L_p(m; R^d)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_cloud_array(self.values, "values"))

    def norm(self, p: float = 2.0) -> float:
        return float(np.mean(np.linalg.norm(self.values, axis=1) ** p) ** (1.0 / p))


def empirical_from_points(points) -> EmpiricalMeasure:
    return EmpiricalMeasure(points)


def dirac(x, n: int = 1) -> EmpiricalMeasure:
    """``n`` coincident particles at ``x``; still the Dirac measure at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return EmpiricalMeasure(np.tile(x, (n, 1)))


def moment_root(m: EmpiricalMeasure, p: float = 2.0) -> float:
    """Return (mean_i ||x_i||^p)^(1/p), which equals W_p(m, delta_0)."""
    if not p > 1:
        raise MeasureError(f"moment order must satisfy p > 1, got {p}")
    norms = np.linalg.norm(m.points, axis=1)
    return float(np.mean(norms**p) ** (1.0 / p))


def push_forward(
    m: EmpiricalMeasure, h: Callable, vectorized: bool = False
) -> EmpiricalMeasure:
    """Image measure h#m: particle x_i is moved to h(x_i).

    With ``vectorized=True`` ``h`` receives the whole ``(n, d)`` array at once.
    """
    if vectorized:
        out = np.asarray(h(m.points.copy()), dtype=float)
    else:
        out = np.array([np.asarray(h(x.copy()), dtype=float) for x in m.points])
    if out.shape != m.points.shape:
        raise MeasureError(
            f"push-forward map changed the shape from {m.points.shape} to {out.shape}"
        )
    if not np.all(np.isfinite(out)):
        raise MeasureError("push-forward map produced a non-finite value")
    return EmpiricalMeasure(out)


def perturb(m: EmpiricalMeasure, b: PerturbationField | np.ndarray, tau: float) -> EmpiricalMeasure:
    """(Id + tau*b)#m."""
    values = b.values if isinstance(b, PerturbationField) else np.asarray(b, dtype=float)
    if values.shape != m.points.shape:
        raise MeasureError(
            f"perturbation has shape {values.shape}, measure has {m.points.shape}"
        )
    if tau < 0:
        raise MeasureError(f"tau must be non-negative, got {tau}")
    if tau == 0:
        return m
    return EmpiricalMeasure(m.points + tau * values)


# --- serialization --------------------------------------------------------


def read_cloud_csv(path) -> EmpiricalMeasure:
    """One particle per row, d columns, no header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise MeasureError(f"{path}:{lineno}: {exc}") from exc
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise MeasureError(f"{path}: inconsistent row widths {sorted(widths)}")
    return EmpiricalMeasure(rows)


def write_cloud_csv(m: EmpiricalMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        for x in m.points:
            fh.write(",".join(f"{v:.17g}" for v in x) + "\n")


def read_cloud_json(path) -> EmpiricalMeasure:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or not all(isinstance(r, list) for r in data):
        raise MeasureError(f"{path}: expected a JSON array of arrays")
    if len({len(r) for r in data}) > 1:
        raise MeasureError(f"{path}: inconsistent row widths")
    return EmpiricalMeasure(data)


def write_cloud_json(m: EmpiricalMeasure, path) -> None:
    Path(path).write_text(json.dumps(m.points.tolist()))
