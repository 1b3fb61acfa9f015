import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from math import factorial

from c2stadium import dynamics as dyn
from c2stadium import largesep as ls
from c2stadium.dynamics import PhaseState
from c2stadium.expansions import (
    AssumptionError,
    MapExpansion,
    check_symmetry_relations,
    compose,
    compose_all,
    expand_flight,
    expand_reflection,
    pass_expansion,
    reflection_coeffs,
    solve_f,
    symmetry_residual,
)
from c2stadium.geometry import CircleTable, build_boundary, build_table, make_shape

# 5-point stencils for derivatives 0..3
_NODES = np.arange(-2, 3)
_W = [
    np.array([0, 0, 1, 0, 0], float),
    np.array([1, -8, 0, 8, -1], float) / 12,
    np.array([-1, 16, -30, 16, -1], float) / 12,
    np.array([-1, 2, 0, -2, 1], float) / 2,
]


def _fd_raw(F, h):
    vals = np.array([[F(i * h, j * h) for j in _NODES] for i in _NODES])
    a, b = np.zeros((4, 4)), np.zeros((4, 4))
    for k in range(4):
        for l in range(4 - k):
            if k + l == 0:
                continue
            scale = h ** (k + l) * factorial(k) * factorial(l)
            a[k, l] = _W[k] @ vals[:, :, 0] @ _W[l] / scale
            b[k, l] = _W[k] @ vals[:, :, 1] @ _W[l] / scale
    return a, b


def fd_coefficients(F, h):
    """Taylor coefficients through degree 3 by tensor 5-point stencils.

    The third-derivative stencil is second order, so steps ``h`` and ``2h``
    are combined by one Richardson step.
    """
    a1, b1 = _fd_raw(F, h)
    a2, b2 = _fd_raw(F, 2 * h)
    return (4 * a1 - a2) / 3, (4 * b1 - b2) / 3


def exact_reflection(table, post):
    pre = PhaseState.from_omega(table, post.s, 2 * table.theta(post.s) - post.omega)
    return lambda x, y: dyn.chart_map(table, pre, post, 1, x, y, pre=True)


@pytest.fixture(scope="module")
def smooth_table(gamma):
    return build_table(gamma, 0.6)


def test_flat_wall_reflection():
    e = reflection_coeffs(0.0, 0.0, 0.0, 0.4)
    I = MapExpansion.identity(3)
    assert np.array_equal(e.a, -I.a) and np.array_equal(e.b, -I.b)


def test_reflection_linear_part():
    e = reflection_coeffs(-2.5, 0.3, 0.1, 0.2)
    assert np.array_equal(e.linear(), dyn.reflection_matrix(-2.5))


def test_flight_expansion():
    e = expand_flight(2.0)
    assert e.A(0, 3) == pytest.approx(-1 / 3, abs=1e-15)
    assert np.array_equal(e.linear(), [[1, 2], [0, 1]])
    z = expand_flight(0.0)
    I = MapExpansion.identity(3)
    assert np.array_equal(z.a, I.a) and np.array_equal(z.b, I.b)


def test_flight_truncation_scaling():
    e = expand_flight(1.3)
    errs = []
    for r in (0.1, 0.05, 0.025):
        x, y = 0.3 * r, r
        errs.append(abs(e(x, y)[0] - (x + 1.3 * np.sin(y))))
    # the first omitted term is y^5
    assert errs[0] / errs[1] == pytest.approx(32, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(32, rel=0.05)


def test_circle_reflection_vs_finite_differences():
    t = CircleTable(1.0)
    post = PhaseState.from_phi(t, 0.5, np.pi / 4)
    e = expand_reflection(t, post)
    a, b = fd_coefficients(exact_reflection(t, post), 2e-3)
    assert np.max(np.abs(_mask(e.a - a))) < 1e-5
    assert np.max(np.abs(_mask(e.b - b))) < 1e-5


def _mask(x):
    k, l = np.indices(x.shape)
    return np.where((k + l >= 1) & (k + l <= 3), x, 0.0)


def test_smoothed_reflection_vs_finite_differences(smooth_table, gamma):
    t = smooth_table
    # reference points inside the upper smoothed segment, where K' and K'' act
    for zeta in (0.2, 0.5, 0.8):
        for phi in (-0.6, 0.1, 0.7):
            post = PhaseState.from_phi(t, t.right_s(gamma.arc_len + zeta * gamma.s_alpha), phi)
            e = expand_reflection(t, post)
            a, b = fd_coefficients(exact_reflection(t, post), 1e-3)
            assert np.max(np.abs(_mask(e.a - a))) < 1e-5
            assert np.max(np.abs(_mask(e.b - b))) < 1e-5


def test_compose_flights():
    c = compose(expand_flight(0.7), expand_flight(1.1))
    f = expand_flight(1.8)
    assert np.allclose(c.a, f.a, atol=1e-15) and np.allclose(c.b, f.b, atol=1e-15)


def test_compose_identity():
    e = reflection_coeffs(-1.3, 0.4, -0.2, 0.3)
    I = MapExpansion.identity(3)
    for c in (compose(I, e), compose(e, I)):
        assert np.allclose(c.a, e.a, atol=1e-15) and np.allclose(c.b, e.b, atol=1e-15)


def test_compose_associative():
    e1 = reflection_coeffs(-1.3, 0.4, -0.2, 0.3)
    e2 = expand_flight(0.9)
    e3 = reflection_coeffs(-0.7, -0.1, 0.5, -0.4)
    left = compose(compose(e1, e2), e3)
    right = compose(e1, compose(e2, e3))
    assert np.max(np.abs(left.a - right.a)) < 1e-12
    assert np.max(np.abs(left.b - right.b)) < 1e-12


def test_compose_requires_fixed_origin():
    e = MapExpansion.identity(3)
    e.a[0, 0] = 1.0
    with pytest.raises(ValueError):
        compose(e, MapExpansion.identity(3))


def test_circle_chain_linear_part():
    t = CircleTable(1.0)
    states, taus = dyn.iterate(t, PhaseState.from_phi(t, 0.0, 0.5), 2)
    F = pass_expansion(t, states, taus, check=False)
    M = dyn.orbit_monodromy(t, states, taus) @ dyn.reflection_matrix(-2 / np.cos(0.5))
    assert np.max(np.abs(F.linear() - M)) < 1e-12


def test_pass_basic_properties(P):
    F = P.expansion
    D = F.linear()
    assert np.linalg.det(D) == pytest.approx(1.0, abs=1e-10)
    assert D[0, 0] == pytest.approx(-1, abs=1e-8)
    assert D[1, 1] == pytest.approx(-1, abs=1e-8)
    assert abs(D[1, 0]) < 1e-8
    assert P.beta == F.A(0, 1)
    assert symmetry_residual(F) < 1e-8


def test_pass_closed_forms(P, geom):
    F = P.expansion
    c = ls.three_orbit_constants(geom)
    assert F.A(0, 1) == pytest.approx(c["a01"], abs=1e-8)
    assert F.A(2, 0) == pytest.approx(c["a20"], abs=1e-8)
    assert F.B(3, 0) == pytest.approx(c["b30"], abs=1e-8 * abs(c["b30"]))


def test_pass_expansion_rejects_bad_linear_part(table0):
    st0 = PhaseState.from_phi(table0, 0.3, 0.2)
    states, taus = dyn.iterate(table0, st0, 2)
    with pytest.raises(AssumptionError):
        pass_expansion(table0, states, taus)


@pytest.mark.parametrize("coeffs", [[1, 0, -1], [1, -1], [1, -0.5, -0.5]])
def test_symmetry_relations(coeffs):
    g = build_boundary(make_shape(coeffs), 0.1, 1.0)
    P = ls.build_pass(build_table(g, 0.0), ls.find_three_pass(g))
    rep = check_symmetry_relations(P.expansion)
    assert rep["ok"], rep
    assert abs(rep["residuals"]["b11+2a20"]) < 1e-7
    assert abs(rep["residuals"]["b30"]) < 1e-7


def test_fake_pass_flagged():
    rep = check_symmetry_relations(expand_flight(1.0))
    assert not rep["ok"]
    assert rep["basic"]["a10"] == pytest.approx(2.0)


def test_solve_f_series(P):
    F = P.expansion
    f = solve_f(F)
    assert f(0.0) == 0.0
    assert f.deriv(0.0) == pytest.approx(F.A(0, 1) / 2)
    assert f.coeffs[2] == pytest.approx(F.A(0, 2) / 2 + F.A(0, 1) ** 2 * F.A(2, 0) / 8)
    # F(f(y), y) = (f(y), -y) up to the truncation order
    res = []
    for y in (2e-3, 1e-3, 5e-4):
        X, Y = F(f(y), y)
        res.append(abs(X - f(y)) + abs(Y + y))
    assert res[0] / res[1] > 12 and res[1] / res[2] > 12


def test_solve_f_exact(P):
    # residual of the series against the exact pass shrinks like y^4
    errs = []
    for y in (4e-3, 2e-3, 1e-3):
        errs.append(abs(P.F_exact(float(P.f(y)), y)[0] - float(P.f(y))))
    assert 10 < errs[0] / errs[1] < 24 and 10 < errs[1] / errs[2] < 24
    y = 2e-3
    x = P.f_exact(y)
    X, Y = P.F_exact(x, y)
    assert abs(X - x) < 1e-13 and abs(Y + y) < 1e-12


def test_solve_f_degenerate():
    e = MapExpansion.identity(3)
    e.a[1, 0] = -1
    e.b[0, 1] = -1
    with pytest.raises(AssumptionError):
        solve_f(e)


def test_json_round_trip(P):
    F = P.expansion
    G = MapExpansion.from_json(F.to_json())
    assert np.array_equal(F.a, G.a) and np.array_equal(F.b, G.b)


def test_jacobian_det_composed(P):
    det = P.expansion.jacobian_det()
    det[0, 0] -= 1
    assert np.max(np.abs(det)) < 1e-8 * max(1, np.abs(P.expansion.b).max())


@settings(max_examples=40, deadline=None)
@given(R=st.floats(-5, 5), R1=st.floats(-5, 5), R2=st.floats(-5, 5), phi=st.floats(-1.2, 1.2),
       tau=st.floats(0.1, 3))
def test_symplectic_through_quadratic_order(R, R1, R2, phi, tau):
    e = compose_all(reflection_coeffs(R, R1, R2, phi), expand_flight(tau), reflection_coeffs(-R, R1, R2, -phi))
    det = e.jacobian_det()
    det[0, 0] -= 1
    scale = max(1.0, np.abs(e.a).max(), np.abs(e.b).max()) ** 2
    assert np.max(np.abs(det)) < 1e-12 * scale
