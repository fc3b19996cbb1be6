import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmfbf import (
    BoxNormalCone,
    ConvergenceError,
    CustomSeparable,
    DiagonalMetric,
    L1Subdifferential,
    LinearMap,
    NumericalError,
    QuadraticGradient,
    SupportAbs,
    ZeroOperator,
    inverse_resolvent_scaled,
    linear_monotone_map,
    metric_norm,
    monotonicity_probe,
    operator_norm,
    resolvent_scaled,
)
from vmfbf.operators import SCALAR_FUNCTIONS, map_from_dict, operator_norm_bound, oracle_from_dict

rng0 = np.random.default_rng(20121110)
QR = rng0.standard_normal((3, 3))
Q_MONO = QR @ QR.T + (QR - QR.T)  # positive semidefinite part plus a skew part
B_Q = rng0.standard_normal(3)


def _scalar_bisect(h, lo=-1e3, hi=1e3, iters=200):
    """Root of a nondecreasing scalar function, used as an independent oracle."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if h(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# independent membership tests a in A(p), one per catalog kind

def _in_l1(p, a, w, tol):
    ok = np.abs(a) <= w + tol
    nz = p != 0
    ok[nz] &= np.abs(a[nz] - w * np.sign(p[nz])) <= tol
    return bool(ok.all())


def _in_box_cone(p, a, lo, hi, tol):
    inside = (p >= lo - tol) & (p <= hi + tol)
    at_lo, at_hi = np.abs(p - lo) <= tol, np.abs(p - hi) <= tol
    interior = ~at_lo & ~at_hi
    ok = inside & (~interior | (np.abs(a) <= tol))
    ok &= ~(at_lo & ~at_hi) | (a <= tol)
    ok &= ~(at_hi & ~at_lo) | (a >= -tol)
    return bool(ok.all())


def _in_graph(p, a, g, tol):
    # graph of the maximal extension of a nondecreasing scalar function g
    eps = 1e-9
    return bool(np.all((a >= g(p - eps) - tol) & (a <= g(p + eps) + tol)))


CATALOG = {
    "zero": (ZeroOperator(), 2, lambda p, a, tol: bool(np.all(np.abs(a) <= tol))),
    "l1": (L1Subdifferential(0.7), 2, lambda p, a, tol: _in_l1(p, a, 0.7, tol)),
    "box": (BoxNormalCone(-0.5, 1.5), 2, lambda p, a, tol: _in_box_cone(p, a, -0.5, 1.5, tol)),
    "support_abs": (SupportAbs(1.3), 2, lambda p, a, tol: _in_box_cone(p, a, -1.3, 1.3, tol)),
    "quadratic": (QuadraticGradient(Q_MONO, B_Q), 3,
                  lambda p, a, tol: bool(np.all(np.abs(Q_MONO @ p - B_Q - a) <= tol * (1 + np.abs(a))))),
    "cubic": (CustomSeparable(lambda s: s**3, "cubic"), 2, lambda p, a, tol: _in_graph(p, a, lambda s: s**3, tol)),
    "tanh": (CustomSeparable(np.tanh, "tanh"), 2, lambda p, a, tol: _in_graph(p, a, np.tanh, tol)),
    "sign": (CustomSeparable(np.sign, "sign"), 2, lambda p, a, tol: _in_graph(p, a, np.sign, tol)),
}


def _random_triples(dim, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        gamma = float(rng.uniform(0.1, 10.0))
        U = DiagonalMetric(rng.uniform(0.5, 4.0, dim))
        y = 3.0 * rng.standard_normal(dim)
        yield gamma, U, y


@pytest.mark.parametrize("name", list(CATALOG))
def test_resolvent_contract(name):
    A, dim, member = CATALOG[name]
    for gamma, U, y in _random_triples(dim, 500, seed=1):
        p = resolvent_scaled(A, gamma, U, y)
        a = (y - p) / (gamma * U.weights)
        assert member(p, a, 1e-9), (gamma, U, y, p)


@pytest.mark.parametrize("name", list(CATALOG))
def test_inverse_resolvent_contract(name):
    # (y - p)/(gamma U) in B^{-1} p, i.e. p in B((y - p)/(gamma U))
    B, dim, member = CATALOG[name]
    for gamma, U, y in _random_triples(dim, 500, seed=2):
        p = inverse_resolvent_scaled(B, gamma, U, y)
        s = (y - p) / (gamma * U.weights)
        assert member(s, p, 1e-9), (gamma, U, y, p)


@pytest.mark.parametrize("name", list(CATALOG))
def test_moreau_identity(name):
    B, dim, _ = CATALOG[name]
    for gamma, U, y in _random_triples(dim, 500, seed=3):
        t = gamma * U.weights
        direct = inverse_resolvent_scaled(B, gamma, U, y)
        via = y - t * resolvent_scaled(B, 1.0, DiagonalMetric(1.0 / t), y / t)
        assert np.all(np.abs(direct - via) <= 1e-10 * (1 + np.abs(y)))


@pytest.mark.parametrize("name", list(CATALOG))
def test_firmly_nonexpansive_in_inverse_metric(name):
    A, dim, _ = CATALOG[name]
    rng = np.random.default_rng(4)
    for gamma, U, y1 in _random_triples(dim, 200, seed=5):
        y2 = y1 + rng.standard_normal(dim)
        p1, p2 = resolvent_scaled(A, gamma, U, y1), resolvent_scaled(A, gamma, U, y2)
        dp, dy = p1 - p2, y1 - y2
        assert metric_norm(U.inverse(), dp) <= metric_norm(U.inverse(), dy) * (1 + 1e-10) + 1e-12
        # firm: ||dp||^2 <= <dp, dy> in the U^{-1} metric
        assert float(np.sum(dp * dp / U.weights)) <= float(np.sum(dp * dy / U.weights)) + 1e-10


@pytest.mark.parametrize("name", ["zero", "l1", "box", "support_abs", "cubic", "tanh", "sign"])
def test_scalar_resolvents_nondecreasing(name):
    A, _, _ = CATALOG[name]
    ys = np.linspace(-10, 10, 2001)
    for gamma, u in [(0.1, 0.5), (1.0, 1.0), (10.0, 4.0)]:
        U = DiagonalMetric(np.full(ys.size, u))
        p = resolvent_scaled(A, gamma, U, ys)
        # bisection stops at width 1e-12 * max(1, |y|)
        assert np.all(np.diff(p) >= -2e-12 * 10.0)
        # the inverse goes through y - t J(y/t), so bisection error is amplified by t
        t = gamma * u
        q = inverse_resolvent_scaled(A, gamma, U, ys)
        assert np.all(np.diff(q) >= -4e-12 * (t + 10.0))


# examples


def test_zero_resolvent_is_identity():
    y = np.array([1.5, -2.0, 0.0])
    assert np.array_equal(resolvent_scaled(ZeroOperator(), 3.0, DiagonalMetric([1, 2, 3]), y), y)


def test_soft_threshold_matches_grid_minimizer():
    step = 1e-6
    grid = np.linspace(-5.0, 5.0, int(round(10.0 / step)) + 1)
    best = grid[np.argmin(np.abs(grid) + 0.5 * (grid - 2.0) ** 2)]
    p = resolvent_scaled(L1Subdifferential(1.0), 1.0, DiagonalMetric([1.0]), [2.0])
    assert p[0] == 1.0
    assert abs(best - p[0]) <= step


def test_soft_threshold_scales_with_metric():
    p = resolvent_scaled(L1Subdifferential(1.0), 1.0, DiagonalMetric([2.0]), [3.0])
    oracle = _scalar_bisect(lambda s: s + 2.0 * np.sign(s) - 3.0)
    assert p[0] == 1.0
    assert abs(oracle - 1.0) < 1e-12


def test_inverse_of_identity_halves():
    B = QuadraticGradient([[1.0]])
    assert inverse_resolvent_scaled(B, 1.0, DiagonalMetric([1.0]), [2.0])[0] == pytest.approx(1.0, abs=1e-15)


def test_inverse_of_zero_is_origin():
    y = np.array([4.0, -1.0])
    assert np.array_equal(inverse_resolvent_scaled(ZeroOperator(), 2.0, DiagonalMetric([1, 3]), y), np.zeros(2))


def test_inverse_of_l1_clips():
    p = inverse_resolvent_scaled(L1Subdifferential(1.0), 1.0, DiagonalMetric([1.0]), [3.0])
    # scalar inclusion 3 - p in (d|.|)^{-1}(p), i.e. p in d|.|(3 - p)
    oracle = _scalar_bisect(lambda s: s - np.clip(3.0 - s, -1, 1) if abs(3.0 - s) > 1e-15 else s - 1)
    assert p[0] == 1.0
    assert abs(oracle - 1.0) < 1e-9
    assert 3.0 - resolvent_scaled(L1Subdifferential(1.0), 1.0, DiagonalMetric([1.0]), [3.0])[0] == 1.0


def test_box_inverse_closed_form_matches_moreau():
    B = BoxNormalCone([0.0, -1.0], [2.0, 1.0])
    rng = np.random.default_rng(6)
    for _ in range(200):
        gamma, w, y = rng.uniform(0.1, 5), rng.uniform(0.5, 4, 2), 5 * rng.standard_normal(2)
        t = gamma * w
        expect = y - t * np.clip(y / t, [0.0, -1.0], [2.0, 1.0])
        assert np.allclose(B.inverse_resolve(gamma, w, y), expect, rtol=0, atol=1e-12)


@pytest.mark.parametrize("fname", sorted(SCALAR_FUNCTIONS))
def test_custom_separable_matches_bisection_oracle(fname):
    g = SCALAR_FUNCTIONS[fname]
    A = CustomSeparable(g, fname)
    rng = np.random.default_rng(7)
    for _ in range(50):
        t, y = float(rng.uniform(0.1, 5)), float(4 * rng.standard_normal())
        p = resolvent_scaled(A, t, DiagonalMetric([1.0]), [y])[0]
        oracle = _scalar_bisect(lambda s: s + t * float(g(np.array(s))) - y)
        assert abs(p - oracle) <= 1e-10 * max(1.0, abs(y))


def test_custom_separable_bracket_failure_names_component():
    A = CustomSeparable(lambda s: np.where(np.arange(s.size) == 1, -5.0 * s, s))
    with pytest.raises(NumericalError) as info:
        A.resolve(1.0, np.ones(3), np.array([1.0, 2.0, 3.0]))
    assert info.value.component == 1


def test_custom_separable_iteration_cap_names_component():
    A = CustomSeparable(lambda s: s, max_bisect=3)
    with pytest.raises(NumericalError) as info:
        A.resolve(1.0, np.ones(2), np.array([0.0, 50.0]))
    assert info.value.component in (0, 1)


def test_resolvent_rejects_bad_input():
    with pytest.raises(ValueError):
        resolvent_scaled(ZeroOperator(), 0.0, DiagonalMetric([1.0]), [1.0])
    with pytest.raises(ValueError):
        resolvent_scaled(ZeroOperator(), 1.0, DiagonalMetric([1.0]), [1.0, 2.0])
    with pytest.raises(ValueError):
        resolvent_scaled(QuadraticGradient(np.eye(3)), 1.0, DiagonalMetric([1.0, 1.0]), [1.0, 2.0])


def test_quadratic_rejects_non_monotone():
    with pytest.raises(ValueError):
        QuadraticGradient([[-1.0, 0.0], [0.0, 1.0]])


def test_catalog_from_dict():
    assert isinstance(oracle_from_dict({"kind": "l1", "weight": 2.0}), L1Subdifferential)
    assert oracle_from_dict({"kind": "box", "lo": [0, 0], "hi": [1, 2]}, 2).to_dict()["hi"] == [1.0, 2.0]
    assert oracle_from_dict({"kind": "custom_separable", "function": "tanh"}).to_dict()["function"] == "tanh"
    with pytest.raises(ValueError, match="unknown operator kind"):
        oracle_from_dict({"kind": "nope"})
    with pytest.raises(ValueError):
        oracle_from_dict({"kind": "custom_separable", "function": "exp"})


# linear maps and norms


def test_adjoint_identity():
    rng = np.random.default_rng(8)
    L = LinearMap(rng.standard_normal((4, 6)))
    for _ in range(100):
        x, y = rng.standard_normal(6), rng.standard_normal(4)
        lhs, rhs = float(L.apply(x) @ y), float(x @ L.adjoint(y))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_linear_map_dimension_checks():
    L = LinearMap([[1.0, 2.0, 3.0]])
    assert (L.out_dim, L.in_dim) == (1, 3)
    with pytest.raises(ValueError):
        L.apply([1.0, 2.0])
    with pytest.raises(ValueError):
        L.adjoint([1.0, 2.0])


@pytest.mark.parametrize(
    "matrix, expected",
    [
        ([[3.0, 0.0], [0.0, 4.0]], 4.0),
        ([[0.0, -1.0], [1.0, 0.0]], 1.0),
        ([[1.0, 1.0], [0.0, 1.0]], math.sqrt((3 + math.sqrt(5)) / 2)),
    ],
    ids=["diag", "rotation", "shear"],
)
def test_operator_norm_examples(matrix, expected):
    # shear: L^T L = [[1,1],[1,2]] has top eigenvalue (3 + sqrt 5)/2 by the quadratic formula
    sigma = operator_norm(LinearMap(matrix), tol=1e-12)
    assert abs(sigma - expected) <= 1e-10 * expected


def test_operator_norm_random_against_svd():
    rng = np.random.default_rng(9)
    for _ in range(50):
        M = rng.standard_normal((5, 5))
        oracle = np.linalg.svd(M, compute_uv=False)[0]
        assert abs(operator_norm(LinearMap(M), tol=1e-14, max_iter=1_000_000) - oracle) <= 1e-6 * oracle


def test_operator_norm_rectangular_and_rank_one():
    u, v = np.array([1.0, 2.0, 2.0]), np.array([0.0, 3.0, 4.0, 0.0])
    assert operator_norm(LinearMap(np.outer(u, v))) == pytest.approx(15.0, rel=1e-10)


def test_operator_norm_start_orthogonal_to_top_direction():
    # all-ones start is orthogonal to the top right singular vector (1, -1)
    M = np.array([[3.0, -3.0], [1.0, 1.0]])
    assert operator_norm(LinearMap(M)) == pytest.approx(np.linalg.svd(M, compute_uv=False)[0], rel=1e-9)


def test_operator_norm_deterministic():
    M = np.random.default_rng(10).standard_normal((6, 4))
    assert operator_norm(LinearMap(M)) == operator_norm(LinearMap(M))


def test_operator_norm_bound_over_estimates():
    L = LinearMap([[2.0, 0.0], [0.0, 1.0]])
    for tol in (1e-6, 1e-10):
        assert 2.0 <= operator_norm_bound(L, tol) <= 2.0 * (1 + 2 * tol)


def test_operator_norm_errors():
    with pytest.raises(ValueError):
        operator_norm(LinearMap(np.zeros((2, 2))))
    # two nearly equal singular values stall the iteration
    with pytest.raises(ConvergenceError):
        operator_norm(LinearMap(np.diag([1.0, 1.0 - 1e-9, 0.5]) @ np.array(
            [[1.0, 0.3, 0.1], [0.2, 1.0, 0.4], [0.0, 0.5, 1.0]])), tol=1e-15, max_iter=5)


# probes


def test_probe_identity():
    rep = monotonicity_probe(linear_monotone_map(np.eye(3)), samples=100, seed=1)
    assert rep.min_inner >= 0 and rep.max_ratio <= 1 + 1e-12 and not rep.violation


def test_probe_rotation():
    rep = monotonicity_probe(linear_monotone_map([[0.0, -1.0], [1.0, 0.0]]), samples=100, seed=1)
    assert abs(rep.min_inner) <= 1e-12
    assert rep.max_ratio == pytest.approx(1.0, abs=1e-12)
    assert not rep.violation


def test_probe_flags_negative_identity():
    from vmfbf import LipschitzMonotoneMap

    rep = monotonicity_probe(LipschitzMonotoneMap(lambda x: -x, 1.0, 2), samples=10, seed=0)
    assert rep.violation and not rep.monotone_ok


def test_probe_flags_understated_lipschitz():
    rep = monotonicity_probe(linear_monotone_map(3 * np.eye(2), lipschitz=1.0), samples=10)
    assert rep.violation and not rep.lipschitz_ok and rep.monotone_ok


def test_probe_random_monotone_affine_maps():
    rng = np.random.default_rng(11)
    for _ in range(20):
        R = rng.standard_normal((4, 4))
        B = linear_monotone_map(R @ R.T + (R - R.T), offset=rng.standard_normal(4))
        assert not monotonicity_probe(B, samples=200, seed=3).violation


def test_linear_monotone_map_checks():
    with pytest.raises(ValueError):
        linear_monotone_map([[1.0, 0.0], [0.0, -1.0]])
    B = linear_monotone_map(np.zeros((2, 2)))
    assert B.lipschitz_constant == 1.0
    B = map_from_dict({"kind": "linear", "matrix": [[2.0, 0.0], [0.0, 1.0]], "offset": [1.0, 1.0]})
    assert np.array_equal(B(np.array([1.0, 1.0])), [3.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 20), st.floats(0.1, 10), st.floats(-50, 50), st.floats(0, 5))
def test_l1_soft_threshold_property(gamma, u, y, weight):
    p = resolvent_scaled(L1Subdifferential(weight), gamma, DiagonalMetric([u]), [y])[0]
    t = gamma * u * weight
    assert p == pytest.approx(math.copysign(max(abs(y) - t, 0.0), y), abs=1e-12 * (1 + abs(y)))
