from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from bbeltrami import (
    EmptyEigenspaceError,
    GlobalTorusField,
    SurfaceMetric,
    TrigPolynomial,
    discrete_laplace_beltrami,
    eigen_residual_check,
    enumerate_eigenspace,
    morse_audit,
    sample_eigenfunction,
)
from bbeltrami.spectral import conformal_eigenpair, sheared_eigenpair, trig_eigen_residual
from conftest import BABC_POINTS, sum_two_squares_count

GENERIC_MUS = [1, 2, 4, 5]


def _wrapped_dist(a, b):
    d = (np.asarray(a) - np.asarray(b) + np.pi) % (2 * np.pi) - np.pi
    return float(np.hypot(*d))


# -- eigenspaces ------------------------------------------------------------


def test_dimensions_match_lattice_count():
    for mu in range(1, 1001):
        n = sum_two_squares_count(mu)
        if n == 0:
            with pytest.raises(EmptyEigenspaceError):
                enumerate_eigenspace(mu)
        else:
            assert enumerate_eigenspace(mu).dim == n


def test_mu3_empty_with_message():
    with pytest.raises(EmptyEigenspaceError, match="3"):
        enumerate_eigenspace(3)


def test_mu25_modes():
    b = enumerate_eigenspace(25)
    assert set(b.modes) == {(0, 5), (3, 4), (4, 3), (5, 0), (3, -4), (4, -3)}
    assert b.dim == 12


@pytest.mark.parametrize("mu", [1, 2, 5, 25, 65])
def test_samples_are_exact_eigenfunctions(mu):
    f = sample_eigenfunction(enumerate_eigenspace(mu), 11)
    assert trig_eigen_residual(f, math.sqrt(mu)) <= 1e-12
    assert trig_eigen_residual(f, math.sqrt(mu + 1)) > 1e-3
    assert f.sup_estimate(64) == pytest.approx(1.0)


def test_sampling_deterministic():
    b = enumerate_eigenspace(5)
    assert sample_eigenfunction(b, 4) == sample_eigenfunction(b, 4)
    assert sample_eigenfunction(b, 4) != sample_eigenfunction(b, 5)


def test_mu1_forced_coefficients_reproduce_babc():
    B, C = 1.0, 2.0
    b = enumerate_eigenspace(1)
    assert b.modes == ((0, 1), (1, 0))
    H = b.combine([0.0, -C, -B, 0.0])  # -B cos x - C sin y
    assert H == GlobalTorusField.babc(B, C).hamiltonian(0)


# -- Morse audit -------------------------------------------------------------


def test_babc_audit():
    H = TrigPolynomial.parse("-2 sin y - cos x")
    a = morse_audit(H)
    assert a.is_morse and a.zero_set_regular
    assert a.counts == {"min": 1, "saddle": 2, "max": 1, "degenerate": 0}
    assert a.euler_characteristic == 0
    assert len(a.critical_points) == 4
    for cp in a.critical_points:
        match = [v for p, v in BABC_POINTS.items() if _wrapped_dist((cp.x, cp.y), p) < 1e-12]
        assert len(match) == 1
        assert cp.value == pytest.approx(match[0], abs=1e-14)
        expected = {-3.0: "min", 3.0: "max"}.get(match[0], "saddle")
        assert cp.index == expected
    assert a.min_abs_critical_value == pytest.approx(1.0)


def test_equal_amplitudes_have_critical_zero():
    a = morse_audit(TrigPolynomial.parse("-sin y - cos x"))
    assert a.is_morse
    assert not a.zero_set_regular
    assert a.min_abs_critical_value < 1e-12


def test_cos_x_is_not_morse():
    a = morse_audit(TrigPolynomial.parse("cos x"))
    assert not a.is_morse
    assert a.counts["degenerate"] > 0


def _grid_extrema(f: TrigPolynomial, n: int = 400):
    """Strict local minima/maxima among 8 neighbours on a fine periodic grid."""
    v = f.on_grid(n)
    nb = [np.roll(np.roll(v, i, 0), j, 1) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)]
    mins = np.all([v < w for w in nb], axis=0).sum()
    maxs = np.all([v > w for w in nb], axis=0).sum()
    return int(mins), int(maxs)


@pytest.mark.parametrize("mu", [1, 2, 5, 13])
def test_extremum_counts_against_grid_oracle(mu):
    b = enumerate_eigenspace(mu)
    for seed in range(3):
        f = sample_eigenfunction(b, seed)
        a = morse_audit(f)
        assert (a.counts["min"], a.counts["max"]) == _grid_extrema(f)


@pytest.mark.parametrize("mu", GENERIC_MUS)
def test_generic_across_many_samples(mu):
    b = enumerate_eigenspace(mu)
    bad = []
    for seed in range(500):
        a = morse_audit(sample_eigenfunction(b, seed))
        if not a.generic or a.euler_characteristic != 0:
            bad.append(seed)
    assert not bad


@given(st.sampled_from([1, 2, 4, 5, 8, 10, 13, 25]), st.integers(0, 10_000))
def test_audit_points_are_nondegenerate_critical_points(mu, seed):
    f = sample_eigenfunction(enumerate_eigenspace(mu), seed)
    a = morse_audit(f)
    assert a.euler_characteristic == 0
    pts = np.array([[c.x, c.y] for c in a.critical_points])
    _, g, hess = f.jet(pts[:, 0], pts[:, 1])
    assert np.max(np.abs(g)) <= 1e-10 * mu
    dets = np.linalg.det(hess)
    for c, d, hs in zip(a.critical_points, dets, hess):
        assert c.hess_det == pytest.approx(d, rel=1e-9)
        if d < 0:
            assert c.index == "saddle"
        else:
            assert c.index == ("min" if hs[0, 0] > 0 else "max")
    # distinct points
    for i in range(len(pts)):
        for j in range(i):
            assert _wrapped_dist(pts[i], pts[j]) > 1e-7


@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.integers(0, 1000))
def test_translation_equivariance(a, b, seed):
    f = sample_eigenfunction(enumerate_eigenspace(5), seed)
    A, B = morse_audit(f), morse_audit(f.translate(a, b))
    assert A.counts == B.counts
    for cp in B.critical_points:
        moved = (cp.x + a, cp.y + b)
        d = [_wrapped_dist(moved, (c.x, c.y)) for c in A.critical_points]
        k = int(np.argmin(d))
        assert d[k] < 1e-8
        assert cp.value == pytest.approx(A.critical_points[k].value, abs=1e-10)
        assert cp.index == A.critical_points[k].index


def test_audit_json_shape():
    doc = morse_audit(TrigPolynomial.parse("-2 sin y - cos x")).to_json()
    assert doc["critical_point_fields"] == ["x", "y", "value", "hess_det", "index"]
    assert len(doc["critical_points"]) == 4 and doc["is_morse"] is True


# -- discrete Laplace-Beltrami -------------------------------------------------


def test_flat_cos_exact_discrete_symbol():
    n = 64
    d = 2 * math.pi / n
    op = discrete_laplace_beltrami(SurfaceMetric.flat(), n)
    X, Y = op.nodes
    u = np.cos(X)
    symbol = -4 * math.sin(d / 2) ** 2 / d**2
    assert np.max(np.abs(op.apply(u) - symbol * u)) <= 1e-12


def _sheared_metric():
    return sheared_eigenpair(TrigPolynomial.parse("cos x"), 1.0).metric


@pytest.mark.parametrize("h", [
    SurfaceMetric.flat(),
    SurfaceMetric(TrigPolynomial.parse("1 + 0.3 cos x"), TrigPolynomial.constant(1.0)),
    _sheared_metric(),
    conformal_eigenpair().metric,
])
def test_constants_and_weighted_symmetry(h):
    op = discrete_laplace_beltrami(h, 32)
    assert np.max(np.abs(op.apply(np.ones((32, 32))))) <= 1e-12
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal(32 * 32), rng.standard_normal(32 * 32)
    lhs = float((op.matrix @ u) @ (op.weights * v))
    rhs = float(u @ (op.weights * (op.matrix @ v)))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    # and L is negative semi-definite in that inner product
    assert float(u @ (op.weights * (op.matrix @ u))) < 0


def _symbolic_error(n: int) -> float:
    """Max error of the discrete operator against the exact Laplacian from sympy."""
    x, y = sp.symbols("x y")
    h11 = 1 + sp.Rational(3, 10) * sp.cos(x)
    g = sp.Matrix([[h11, 0], [0, 1]])
    ginv, rdet = g.inv(), sp.sqrt(g.det())
    u = sp.sin(x) * sp.cos(2 * y) + sp.cos(x + y)
    grad = [sp.diff(u, x), sp.diff(u, y)]
    flux = [rdet * sum(ginv[i, j] * grad[j] for j in range(2)) for i in range(2)]
    lap = (sp.diff(flux[0], x) + sp.diff(flux[1], y)) / rdet
    lap_f = sp.lambdify((x, y), sp.simplify(lap), "numpy")
    u_f = sp.lambdify((x, y), u, "numpy")
    h = SurfaceMetric(TrigPolynomial.parse("1 + 0.3 cos x"), TrigPolynomial.constant(1.0))
    op = discrete_laplace_beltrami(h, n)
    X, Y = op.nodes
    return float(np.max(np.abs(op.apply(u_f(X, Y)) - lap_f(X, Y))))


def test_non_flat_operator_second_order_against_symbolic():
    e64, e128 = _symbolic_error(64), _symbolic_error(128)
    assert e128 < e64
    assert 3.5 <= e64 / e128 <= 4.5


def test_flat_sample_residual_at_128():
    f = sample_eigenfunction(enumerate_eigenspace(1), 0)
    assert eigen_residual_check(f, SurfaceMetric.flat(), 1.0, 128) <= 1e-3


def test_off_shell_residual_bounded_away():
    f = TrigPolynomial.parse("cos(x+y)")
    assert eigen_residual_check(f, SurfaceMetric.flat(), 1.0, 128) > 0.5


@pytest.mark.parametrize("pair", [
    conformal_eigenpair(0.3),
    sheared_eigenpair(sample_eigenfunction(enumerate_eigenspace(1), 3), 1.0),
    sheared_eigenpair(sample_eigenfunction(enumerate_eigenspace(2), 3), math.sqrt(2)),
])
def test_manufactured_pairs_converge_at_second_order(pair):
    e = [eigen_residual_check(pair.Xz, pair.metric, pair.lam, n) for n in (32, 64, 128)]
    assert e[0] > e[1] > e[2]
    assert 3.5 <= e[1] / e[2] <= 4.5


def test_grid_too_small():
    with pytest.raises(ValueError):
        discrete_laplace_beltrami(SurfaceMetric.flat(), 8)
