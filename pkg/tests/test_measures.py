import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfstab.measures import (
    EmpiricalMeasure,
    MeasureError,
    PerturbationField,
    dirac,
    empirical_from_points,
    moment_root,
    perturb,
    push_forward,
    read_cloud_csv,
    read_cloud_json,
    write_cloud_csv,
    write_cloud_json,
)


def test_single_dirac():
    m = empirical_from_points([[0.0]])
    assert (m.n, m.d) == (1, 1)
    assert m.points[0, 0] == 0.0


def test_two_point_cloud():
    m = empirical_from_points([[0, 0], [1, 1]])
    assert (m.n, m.d) == (2, 2)
    np.testing.assert_array_equal(m.mean(), [0.5, 0.5])


@pytest.mark.parametrize(
    "points",
    [[[1.0], [float("nan")]], [[1.0], [float("inf")]], [], [[1.0, 2.0], [3.0]], [[]]],
    ids=["nan", "inf", "empty", "ragged", "zero-dim"],
)
def test_construction_rejects_bad_input(points):
    with pytest.raises(MeasureError):
        empirical_from_points(points)


def test_points_are_read_only():
    m = empirical_from_points([[0.0], [1.0]])
    with pytest.raises(ValueError):
        m.points[0, 0] = 5.0


def test_source_array_is_copied():
    raw = np.array([[0.0], [1.0]])
    m = empirical_from_points(raw)
    raw[0, 0] = 9.0
    assert m.points[0, 0] == 0.0


@pytest.mark.parametrize(
    "points, expected",
    [([[0.0]], 0.0), ([[-1.0], [1.0]], 1.0), ([[0.0], [2.0]], math.sqrt(2.0))],
)
def test_moment_root_examples(points, expected):
    assert moment_root(empirical_from_points(points), 2) == pytest.approx(expected, rel=1e-15)


def test_moment_root_rejects_p_le_1():
    with pytest.raises(MeasureError):
        moment_root(dirac([0.0]), 1.0)


def test_push_forward_examples():
    shifted = push_forward(dirac([0.0]), lambda x: x + 1)
    np.testing.assert_array_equal(shifted.points, [[1.0]])
    doubled = push_forward(empirical_from_points([[0.0], [2.0]]), lambda x: 2 * x)
    np.testing.assert_array_equal(doubled.points, [[0.0], [4.0]])


def test_push_forward_identity_is_bitwise_noop(rng):
    m = EmpiricalMeasure(rng.standard_normal((17, 3)))
    assert np.array_equal(push_forward(m, lambda x: x).points, m.points)
    assert np.array_equal(push_forward(m, lambda X: X, vectorized=True).points, m.points)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_push_forward_rejects_non_finite_image():
    with pytest.raises(MeasureError):
        push_forward(empirical_from_points([[0.0], [1.0]]), lambda x: 1.0 / x)


@pytest.mark.parametrize(
    "points, b, tau, expected",
    [
        ([[3.0], [4.0]], [[7.0], [8.0]], 0.0, [[3.0], [4.0]]),
        ([[0.0]], [[1.0]], 2.0, [[2.0]]),
        ([[0.0], [2.0]], [[1.0], [-1.0]], 0.5, [[0.5], [1.5]]),
    ],
)
def test_perturb_examples(points, b, tau, expected):
    out = perturb(empirical_from_points(points), PerturbationField(b), tau)
    np.testing.assert_array_equal(out.points, expected)


def test_perturb_rejects_mismatched_field():
    with pytest.raises(MeasureError):
        perturb(empirical_from_points([[0.0], [1.0]]), PerturbationField([[1.0]]), 1.0)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 30),
    d=st.integers(1, 4),
    # keep |c|**p clear of floating-point underflow
    c=st.one_of(st.just(0.0), st.floats(1e-6, 5), st.floats(-5, -1e-6)),
    p=st.sampled_from([1.5, 2.0, 3.0]),
)
def test_moment_root_is_absolutely_homogeneous(seed, n, d, c, p):
    m = EmpiricalMeasure(np.random.default_rng(seed).standard_normal((n, d)))
    scaled = push_forward(m, lambda X: c * X, vectorized=True)
    assert moment_root(scaled, p) == pytest.approx(abs(c) * moment_root(m, p), rel=1e-12, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 30),
    d=st.integers(1, 4),
    tau=st.floats(0, 10, allow_nan=False),
    p=st.sampled_from([1.5, 2.0, 3.0]),
)
def test_perturbation_moment_bound(seed, n, d, tau, p):
    rng = np.random.default_rng(seed)
    m = EmpiricalMeasure(rng.standard_normal((n, d)))
    b = PerturbationField(rng.standard_normal((n, d)) * rng.exponential(size=(n, 1)))
    assert moment_root(perturb(m, b, tau), p) <= moment_root(m, p) + tau * b.norm(p) + 1e-12


def test_csv_round_trip(tmp_path, rng):
    m = EmpiricalMeasure(rng.standard_normal((5, 3)))
    path = tmp_path / "cloud.csv"
    write_cloud_csv(m, path)
    assert np.array_equal(read_cloud_csv(path).points, m.points)


def test_json_round_trip(tmp_path, rng):
    m = EmpiricalMeasure(rng.standard_normal((5, 2)))
    path = tmp_path / "cloud.json"
    write_cloud_json(m, path)
    assert np.array_equal(read_cloud_json(path).points, m.points)


def test_readers_validate(tmp_path):
    bad_csv = tmp_path / "bad.csv"
    bad_csv.write_text("1,2\n3\n")
    with pytest.raises(MeasureError):
        read_cloud_csv(bad_csv)
    nan_csv = tmp_path / "nan.csv"
    nan_csv.write_text("1,2\nnan,3\n")
    with pytest.raises(MeasureError):
        read_cloud_csv(nan_csv)
    bad_json = tmp_path / "bad.json"
    bad_json.write_text(json.dumps([[1, 2], [3]]))
    with pytest.raises(MeasureError):
        read_cloud_json(bad_json)
    nan_json = tmp_path / "nan.json"
    nan_json.write_text("[[1.0], [NaN]]")
    with pytest.raises(MeasureError):
        read_cloud_json(nan_json)
