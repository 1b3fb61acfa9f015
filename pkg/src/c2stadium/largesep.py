"""Large-separation periodic orbits bouncing through the channel.

A symmetric pass enters the right component at ``Gamma(-u0)`` moving
down-right, reflects at the midpoint, leaves from ``Gamma(u0)`` moving
down-left and then crosses the channel with ``n`` wall bounces before
meeting the left component.
Everything is expressed through the pass map ``F`` between the pre-collision
Jacobi chart at entry and the post-collision chart at exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect, brentq

from . import dynamics as dyn
from .dynamics import PhaseState, wrap_angle
from .expansions import (
    AssumptionError,
    MapExpansion,
    SymmetricCurve,
    chart_shift,
    compose,
    compose_all,
    expand_flight,
    expand_reflection,
    pass_expansion,
    refine_f,
    sin_cos_series,
    solve_f,
)
from .geometry import BoundaryCurve, Table, build_table


class NoRootError(ArithmeticError):
    """``q`` has no sign change on the admissible range."""


class ResonanceError(ArithmeticError):
    """Eigenvalues of the linear part are at a low-order resonance."""


class ConvergenceError(ArithmeticError):
    """Newton iteration left its validity region."""


# three-reflection geometry ------------------------------------------------------------------


def _three_point_data(gamma: BoundaryCurve, u0: float) -> dict:
    # entry on the lower half, exit on the upper half
    P0, P1, P2 = gamma.point(-u0), gamma.point(0.0), gamma.point(u0)
    d01 = P1 - P0
    tau = float(np.hypot(*d01))
    om01 = float(np.arctan2(d01[1], d01[0]))
    om12 = float(np.arctan2(P2[1] - P1[1], P2[0] - P1[0]))
    phi0 = float(wrap_angle(gamma.theta(-u0) + np.pi / 2 - om01))
    phi1 = float(wrap_angle(gamma.theta(0.0) + np.pi / 2 - om12))
    c0, c1 = np.cos(phi0), np.cos(phi1)
    R0 = 2 * gamma.curvature(-u0) / c0
    R1 = 2 * gamma.curvature(0.0) / c1
    return dict(
        u0=u0, tau=tau, om01=om01, om12=om12, phi0=phi0, phi1=phi1,
        R0=R0, R1=R1,
        R0p1=4 * gamma.dcurvature(-u0) / c0**2, R1p1=4 * gamma.dcurvature(0.0) / c1**2,
        R0p2=8 * gamma.d2curvature(-u0) / c0**3, R1p2=8 * gamma.d2curvature(0.0) / c1**3,
    )


def q_function(gamma: BoundaryCurve, u0: float) -> float:
    """``tau R0 + tau R1/(2 + tau R1)`` for the symmetric triangle through ``Gamma(u0)``."""
    d = _three_point_data(gamma, u0)
    t = d["tau"]
    return t * d["R0"] + t * d["R1"] / (2 + t * d["R1"])


@dataclass(frozen=True)
class ThreeOrbitGeometry:
    """Symmetric three-reflection pass data.

    Reflections happen at component arc lengths ``-s0``, ``s1 = 0`` and
    ``s0``; angles are post-collision.
    """

    s0: float
    s1: float
    phi0: float
    phi1: float
    tau01: float
    R0: float
    R1: float
    R0p1: float
    R1p1: float
    R0p2: float
    R1p2: float
    omega01: float
    omega12: float
    kappa: float = float("nan")
    a01: float = float("nan")
    a20: float = float("nan")
    b30: float = float("nan")


def find_three_pass(gamma: BoundaryCurve, grid: int = 400, all_roots: bool = False):
    """Root of ``q`` on ``(0, half length)`` by a dense scan and Brent refinement.

    Raises :class:`NoRootError` when ``q`` keeps one sign (e.g. a circle).
    With ``all_roots=True`` returns every root found.
    """
    lo = gamma.arc_len * 0.5
    us = np.linspace(lo, gamma.half_len, grid + 1)[:-1]
    us = np.append(us, gamma.half_len * (1 - 1e-12))
    qs = np.array([q_function(gamma, u) for u in us])
    roots = []
    for i in range(len(us) - 1):
        if np.isfinite(qs[i]) and np.isfinite(qs[i + 1]) and qs[i] * qs[i + 1] < 0:
            # skip poles of q (2 + tau R1 = 0) where it jumps through infinity
            if abs(qs[i]) + abs(qs[i + 1]) > 50:
                continue
            roots.append(brentq(lambda u: q_function(gamma, u), us[i], us[i + 1], xtol=1e-15, rtol=1e-15))
    if not roots:
        raise NoRootError("q has no sign change; no symmetric three-reflection pass")
    geoms = [_geometry_at(gamma, u) for u in roots]
    return geoms if all_roots else geoms[0]


def _geometry_at(gamma: BoundaryCurve, u0: float) -> ThreeOrbitGeometry:
    d = _three_point_data(gamma, u0)
    c = three_orbit_constants_raw(d["tau"], d["R0p1"], d["R0p2"], d["R1"], d["R1p2"], d["phi0"], d["phi1"])
    return ThreeOrbitGeometry(
        s0=u0, s1=0.0, phi0=d["phi0"], phi1=d["phi1"], tau01=d["tau"],
        R0=d["R0"], R1=d["R1"], R0p1=d["R0p1"], R1p1=d["R1p1"], R0p2=d["R0p2"], R1p2=d["R1p2"],
        omega01=d["om01"], omega12=d["om12"], kappa=c["kappa"], a01=c["a01"], a20=c["a20"], b30=c["b30"],
    )


def three_orbit_constants_raw(tau, R0p1, R0p2, R1, R1p2, phi0, phi1) -> dict:
    """Closed forms for ``a01``, ``a20``, ``b30`` and ``kappa`` of the three-reflection pass."""
    m = 2 + tau * R1
    t0, t1 = np.tan(phi0), np.tan(phi1)
    a01 = -tau * m
    a20 = -0.25 * tau * R0p1 * m - 0.25 * R1 / m * (3 * tau * R1 * t0 + 4 * t1 + 4 * t0)
    b30 = (
        -16 * R1p2
        - 2 * R0p2 * m**4
        + 3 * tau * R0p1**2 * m**5
        + 2 * R0p1 * R1 * m**3 * ((14 + 9 * tau * R1) * t0 + 12 * t1)
        + 3 * R1**3 * ((3 * t0 * m + 4 * t1) ** 2 + 2 * m)
    ) / (24 * m**4)
    return {"a01": a01, "a20": a20, "b30": b30, "kappa": -a20}


def three_orbit_constants(geom: ThreeOrbitGeometry) -> dict:
    """Constants plus the non-degeneracy flags ``a20 != 0`` and ``b30 != 0``."""
    c = three_orbit_constants_raw(geom.tau01, geom.R0p1, geom.R0p2, geom.R1, geom.R1p2, geom.phi0, geom.phi1)
    c["a20_nonzero"] = abs(c["a20"]) > 1e-10
    c["b30_nonzero"] = abs(c["b30"]) > 1e-10
    return c


def verify_pass_admissibility(gamma: BoundaryCurve, geom: ThreeOrbitGeometry) -> tuple[bool, list]:
    """Sufficient circle-subsegment bound plus a direct simulation check."""
    reasons = []
    a = gamma.alpha
    # phi_end: reflection angle at the midpoint of the chord from the endpoint
    phi_end = abs(float(_three_point_data(gamma, gamma.half_len)["phi1"]))
    if 2 * a > phi_end:
        reasons.append(f"2 alpha = {2 * a:.6g} exceeds phi_end = {phi_end:.6g}")
    bound = arc_length_bound(a)
    # |Gamma| / |Gamma_c|: smoothed length against the replaced circular length
    ratio = gamma.total_len / (np.pi * gamma.rho)
    if ratio > bound:
        reasons.append(f"length ratio {ratio:.6g} exceeds bound {bound:.6g}")
    table = build_table(gamma, 1.0)
    try:
        nrefl = count_pass_reflections(table, geom)
    except ArithmeticError as exc:
        nrefl = -1
        reasons.append(f"simulation failed: {exc}")
    if nrefl != 3:
        reasons.append(f"simulated pass has {nrefl} reflections on Gamma")
    return (not reasons), reasons


def arc_length_bound(alpha: float) -> float:
    return 1 + (4 / np.pi) * np.cos(alpha) / np.tan(np.pi / 4 + alpha / 2) - 2 * alpha / np.pi


def count_pass_reflections(table: Table, geom: ThreeOrbitGeometry) -> int:
    """Reflections on the right component of the pass before it leaves."""
    st = PhaseState.from_omega(table, table.right_s(-geom.s0), geom.omega01)
    count = 1
    for _ in range(10):
        nxt, _ = dyn.step(table, st)
        if not _on_right(table, nxt.s):
            break
        count += 1
        st = nxt
    return count


def _on_right(table: Table, s: float) -> bool:
    s = table.wrap(s)
    g2 = table.gamma.half_len
    return s <= g2 or s >= table.perimeter - g2


# symmetric pass -----------------------------------------------------------------------------


@dataclass
class SymmetricPass:
    """Reference pass together with its cubic expansion ``F``."""

    table: Table
    geometry: ThreeOrbitGeometry
    states: list
    taus: list
    entry: PhaseState  # pre-collision chart at s_hat_0
    exit: PhaseState  # post-collision chart at s_hat_1
    expansion: MapExpansion
    f: SymmetricCurve
    beta: float
    nrefl: int = 3
    _fcache: dict = field(default_factory=dict, repr=False)

    @property
    def omega_hat_0(self) -> float:
        return self.entry.omega

    @property
    def omega_hat_1(self) -> float:
        return self.exit.omega

    @property
    def gamma(self) -> BoundaryCurve:
        return self.table.gamma

    def exit_point(self) -> np.ndarray:
        """``Gamma(s_hat_1)`` in component coordinates (endpoints on ``x = 0``)."""
        return self.gamma.point(self.geometry.s0)

    def F_exact(self, x: float, y: float) -> tuple[float, float]:
        return dyn.chart_map(self.table, self.entry, self.exit, self.nrefl, x, y, pre=True)

    def f_exact(self, y: float) -> float:
        """Symmetric curve: cubic series plus Newton against the exact pass map."""
        key = float(y)
        if key not in self._fcache:
            self._fcache[key] = refine_f(self.F_exact, y, float(self.f(y)))
        return self._fcache[key]


def build_pass(table: Table, geom: ThreeOrbitGeometry, degree: int = 3) -> SymmetricPass:
    """Symmetric pass on ``table`` from a three-reflection geometry."""
    g = table.gamma
    s0 = table.right_s(-geom.s0)
    st0 = PhaseState.from_omega(table, s0, geom.omega01)
    st1 = PhaseState.from_omega(table, table.right_s(0.0), geom.omega12)
    s2 = table.right_s(geom.s0)
    st2 = PhaseState.from_omega(table, s2, 2 * g.theta(geom.s0) - geom.omega12)
    tau = geom.tau01
    entry = PhaseState.from_omega(table, s0, 2 * g.theta(-geom.s0) - geom.omega01)
    if not (3 * np.pi / 2 < entry.omega < 2 * np.pi):
        raise AssumptionError(f"entry direction {entry.omega:.6g} not in (3pi/2, 2pi)")
    F = pass_expansion(table, [st0, st1, st2], [tau, tau], degree)
    F.ref_meta.update(s_hat_0=s0, omega_hat_0=entry.omega, s_hat_1=s2, omega_hat_1=st2.omega)
    return SymmetricPass(table, geom, [st0, st1, st2], [tau, tau], entry, st2, F, solve_f(F), float(F.a[0, 1]))


def _right_u(table: Table, s: float) -> float:
    piece, u = table._split(s)
    if piece[0] not in (0, 4):
        raise AssumptionError("state left the right component")
    return float(u[0])


def pass_states(P: SymmetricPass, x: float, y: float):
    """Entry pre-collision state and the post-collision states of the pass through ``(x, y)``."""
    pre = dyn.from_jacobi(P.table, P.entry, x, y)
    st = dyn.reflect(P.table, pre.s, pre.omega)
    states, taus = [st], []
    for _ in range(P.nrefl - 1):
        st, tau = dyn.step(P.table, st)
        states.append(st)
        taus.append(tau)
    return pre, states, taus


# closing condition --------------------------------------------------------------------------


def L_n_of(P: SymmetricPass, ybar0: float, n: int, fval: float | None = None) -> float:
    """Separation for which the pass through ``(f(ybar0), ybar0)`` closes after ``n`` wall bounces."""
    if fval is None:
        fval = P.f_exact(ybar0) if ybar0 != 0 else 0.0
    a = P.omega_hat_1 - ybar0
    sa = np.sin(a)
    if abs(sa) < 1e-12:
        raise ArithmeticError("sin(omega_hat_1 - ybar0) vanishes")
    G = P.exit_point()
    W = P.table.W
    return float((2 * fval + n * W * np.cos(a) + 2 * (-G[0] * np.sin(a) + G[1] * np.cos(a))) / sa)


def L_n_identity(P: SymmetricPass, ybar0: float, n: int) -> dict:
    """Both sides of the trace form of ``L_n(ybar0) - L_n(0)``."""
    fval = P.f_exact(ybar0)
    lhs = L_n_of(P, ybar0, n, fval) - L_n_of(P, 0.0, n, 0.0)
    Fb = recentered_F(P, ybar0)
    trT = return_trace(P, ybar0, n)
    trF = np.trace(Fb.linear())
    Fyx = Fb.b[1, 0]
    w1 = P.omega_hat_1
    a = w1 - ybar0
    rhs = ((trT + trF) / np.sin(w1) * np.sin(ybar0) / Fyx
           - 2 * fval * np.cos(a) / (np.sin(w1) * np.sin(a)) * np.sin(ybar0)
           + 2 * fval / np.sin(a))
    return {"lhs": float(lhs), "rhs": float(rhs)}


# return map ---------------------------------------------------------------------------------


def recentered_F(P: SymmetricPass, ybar0: float, degree: int = 3) -> MapExpansion:
    """``F(f + dx, ybar0 + dy) - F(f, ybar0)`` as an expansion in the fixed charts."""
    fval = P.f_exact(ybar0)
    pre, states, taus = pass_states(P, fval, ybar0)
    core = pass_expansion(P.table, states, taus, degree, check=False)
    t = P.table
    d0 = t.point(pre.s) - t.point(P.entry.s)
    n0 = np.array([-np.sin(pre.omega), np.cos(pre.omega)])
    v0 = np.array([np.cos(pre.omega), np.sin(pre.omega)])
    ex = states[-1]
    d1 = t.point(ex.s) - t.point(P.exit.s)
    n1 = np.array([-np.sin(ex.omega), np.cos(ex.omega)])
    v1 = np.array([np.cos(ex.omega), np.sin(ex.omega)])
    cin = chart_shift(float(d0 @ n0), float(d0 @ v0), degree, inverse=True)
    cout = chart_shift(float(d1 @ n1), float(d1 @ v1), degree)
    Fb = compose_all(cin, core, cout)
    Fb.ref_meta = {"kind": "recentered", "ybar0": ybar0, "f": fval}
    return Fb


def flight_hg(P: SymmetricPass, ybar0: float, n: int) -> tuple[float, float]:
    """``h = f(ybar0)`` and ``g`` of the channel crossing at the periodic point."""
    fval = P.f_exact(ybar0)
    a = P.omega_hat_1 - ybar0
    G = P.exit_point()
    g = (2 * fval * np.cos(a) + 2 * G[1] + n * P.table.W) / np.sin(a)
    return float(fval), float(g)


def crossing_expansion(h: float, g: float, degree: int = 3) -> MapExpansion:
    """Exact crossing ``-dx2 = dx1 + 2h(1 - cos dy1) - g sin dy1``, ``-dy2 = dy1``."""
    s, c = sin_cos_series(degree)
    e = MapExpansion.zeros(degree)
    e.a[1, 0] = -1.0
    e.a[0, :] = 2 * h * c + g * s
    e.b[0, 1] = -1.0
    e.ref_meta = {"kind": "crossing", "h": h, "g": g}
    return e


def return_expansion(P: SymmetricPass, ybar0: float, n: int, degree: int = 3) -> MapExpansion:
    """Cubic expansion of the return map about its fixed point, by composition."""
    Fb = recentered_F(P, ybar0, degree)
    h, g = flight_hg(P, ybar0, n)
    T = compose(Fb, crossing_expansion(h, g, degree))
    T.ref_meta = {"kind": "return", "ybar0": ybar0, "n": n, "h": h, "g": g}
    return T


def return_coeffs_from_parts(abar: MapExpansion, h: float, g: float) -> MapExpansion:
    """Return-map coefficients assembled from ``abar, bbar`` and the crossing constants."""
    a, b = abar.A, abar.B
    A = {
        (1, 0): -a(1, 0) + g * b(1, 0),
        (0, 1): -a(0, 1) + g * b(0, 1),
        (2, 0): -a(2, 0) + g * b(2, 0) - h * b(1, 0) ** 2,
        (1, 1): -a(1, 1) + g * b(1, 1) - 2 * h * b(1, 0) * b(0, 1),
        (0, 2): -a(0, 2) + g * b(0, 2) - h * b(0, 1) ** 2,
        (3, 0): -a(3, 0) + g * b(3, 0) - 2 * h * b(1, 0) * b(2, 0) - g / 6 * b(1, 0) ** 3,
        (2, 1): -a(2, 1) + g * b(2, 1) - 2 * h * (b(1, 0) * b(1, 1) + b(0, 1) * b(2, 0))
                - g / 2 * b(1, 0) ** 2 * b(0, 1),
        (1, 2): -a(1, 2) + g * b(1, 2) - 2 * h * (b(1, 0) * b(0, 2) + b(0, 1) * b(1, 1))
                - g / 2 * b(1, 0) * b(0, 1) ** 2,
        (0, 3): -a(0, 3) + g * b(0, 3) - 2 * h * b(0, 1) * b(0, 2) - g / 6 * b(0, 1) ** 3,
    }
    B = {(k, l): -b(k, l) for k in range(4) for l in range(4 - k) if k + l >= 1}
    return MapExpansion.from_dict(3, A, B, kind="return-coeffs", h=h, g=g)


def return_trace(P: SymmetricPass, ybar0: float, n: int) -> float:
    """Trace of the linearized return map at the periodic point."""
    if ybar0 == 0.0:
        Fb = P.expansion
        h, g = 0.0, flight_hg(P, 0.0, n)[1]
    else:
        Fb = recentered_F(P, ybar0)
        h, g = flight_hg(P, ybar0, n)
    D = Fb.linear()
    return float(-np.trace(D) + g * D[1, 0])


def return_map_exact(P: SymmetricPass, ybar0: float, n: int, L: float | None = None, fval: float | None = None):
    """Exact return map in the entry chart, centred at the periodic point.

    The channel crossing is done in the unfolded picture, where the ``n``
    wall bounces become a straight flight to the mirrored component.
    """
    g = P.gamma
    t = P.table
    if fval is None:
        fval = P.f_exact(ybar0)
    if L is None:
        L = L_n_of(P, ybar0, n, fval)
    shift = np.array([L, n * t.W])
    e0 = t.point(P.entry.s)

    def T(dx, dy):
        _, states, _ = pass_states(P, fval + dx, ybar0 + dy)
        ex = states[-1]
        p = g.point(_right_u(t, ex.s))
        v = np.array([np.cos(ex.omega), np.sin(ex.omega)])
        u = -P.geometry.s0
        for _ in range(50):
            q = g.point(u)
            qq = np.array([-q[0], q[1]]) - shift - p
            th = g.theta(u)
            dq = np.array([-np.cos(th), np.sin(th)])
            F = v[0] * qq[1] - v[1] * qq[0]
            dF = v[0] * dq[1] - v[1] * dq[0]
            du = F / dF
            u -= du
            if abs(du) < 1e-14:
                break
        else:
            if abs(F) > 1e-12:
                raise ConvergenceError("crossing intersection did not converge")
        om = np.pi - ex.omega
        d = g.point(u) - e0_comp
        x2 = d @ np.array([-np.sin(om), np.cos(om)])
        y2 = wrap_angle(om - P.omega_hat_0)
        return float(x2 - fval), float(y2 - ybar0)

    e0_comp = g.point(-P.geometry.s0)
    return T


def rotation_oracle_A(P: SymmetricPass, ybar0: float, n: int, amplitudes=(1e-3, 2e-3, 4e-3),
                      iters: int = 256, scale: float | None = None) -> dict:
    """Twist coefficient from rotation numbers of the exact return map.

    Orbits start at normalized amplitude ``scale * r``; the rotation number is
    a smooth-window weighted average of angle increments in symplectically
    normalized coordinates, and the squared amplitude is the orbit average of
    ``|z|^2``.  A quadratic in ``r^2`` is fitted and its slope at 0 returned.

    ``A`` grows like ``n^2``, so the default ``scale`` is ``30 / sqrt(|A_est|)``
    with ``A_est`` the large-``n`` law; this keeps the amplitude-dependent
    rotation a few hundredths of a radian.
    """
    T = return_map_exact(P, ybar0, n)
    Tl = return_expansion(P, ybar0, n)
    M = Tl.linear()
    if scale is None:
        tr = float(np.trace(M))
        scale = 30.0 / np.sqrt(abs(birkhoff_limit(P, tr)) * n * n)
    amplitudes = [scale * r for r in amplitudes]
    S, phi = symplectic_rotation_form(M)
    Si = np.linalg.inv(S)
    k = np.arange(1, iters + 1) / (iters + 1)
    w = np.exp(-1.0 / (k * (1 - k)))
    w /= w.sum()
    nus, r2s = [], []
    for r in amplitudes:
        z = np.array([r, 0.0])
        dels, rad = [], []
        for _ in range(iters):
            xy = S @ z
            nx = np.array(T(*xy))
            z2 = Si @ nx
            dels.append(float(wrap_angle(np.arctan2(z2[1], z2[0]) - np.arctan2(z[1], z[0]))))
            rad.append(z @ z)
            z = z2
        dels = np.array(dels)
        # unwrap the increments around the linear rotation angle
        dels = phi + wrap_angle(dels - phi)
        nus.append(float(w @ dels))
        r2s.append(float(w @ np.array(rad)))
    r2s = np.array(r2s)
    deg = min(2, len(amplitudes) - 1)
    coef = np.polynomial.polynomial.polyfit(r2s, np.array(nus), deg)
    return {"A": float(coef[1]), "nu0": float(coef[0]), "phi": float(phi), "r2": r2s.tolist(), "nu": nus}


# Birkhoff coefficient -----------------------------------------------------------------------


def symplectic_rotation_form(M: np.ndarray) -> tuple[np.ndarray, float]:
    """``S`` with ``det S = 1`` and ``S^-1 M S`` a rotation by ``phi`` (counterclockwise)."""
    a, b, c, d = M.ravel()
    tr = a + d
    if abs(tr) >= 2:
        raise ArithmeticError("linear part is not elliptic")
    phi = float(np.arccos(tr / 2))
    # orientation-preserving normalization fixes the sign of the rotation
    if b * np.sin(phi) > 0:
        phi = -phi
    s, co = np.sin(phi), np.cos(phi)
    p = np.sqrt(s / c)
    q = (co - d) / (c * p)
    S = np.array([[p, q], [0.0, 1.0 / p]])
    return S, phi


def _check_resonance(M: np.ndarray, tol: float = 1e-8) -> complex:
    tr = float(np.trace(M))
    if abs(tr) >= 2:
        raise ResonanceError(f"trace {tr} is not elliptic")
    lam = complex(tr / 2, np.sqrt(1 - tr * tr / 4))
    for k in (2, 3, 4):
        if abs(lam**k - 1) < tol:
            raise ResonanceError(f"lambda^{k} = 1 (trace {tr})")
    return lam


def balance_diagonal(T: MapExpansion) -> MapExpansion:
    """Conjugate by a linear shear so that the linear part has equal diagonal entries."""
    a, b, _, d = T.linear().ravel()
    k = (a - d) / (2 * b)
    U = MapExpansion.from_dict(T.degree, {(1, 0): 1.0}, {(1, 0): k, (0, 1): 1.0})
    Ui = MapExpansion.from_dict(T.degree, {(1, 0): 1.0}, {(1, 0): -k, (0, 1): 1.0})
    return compose_all(Ui, T, U)


def birkhoff_A(T: MapExpansion, printed_sign: bool = False, balance: bool = True) -> float:
    """First Birkhoff coefficient from the cubic coefficients of ``T``.

    The closed form holds for linear parts with equal diagonal entries, so by
    default ``T`` is first conjugated by a linear shear (which leaves ``A``
    unchanged).  The quadratic-term contribution enters with the sign that
    makes the value invariant under symplectic changes of coordinates;
    ``printed_sign=True`` flips it.
    """
    if balance:
        T = balance_diagonal(T)
    _check_resonance(T.linear())
    A, B = T.A, T.B
    A10, A01, B10 = A(1, 0), A(0, 1), B(1, 0)
    phi = float(np.arccos((A10 + B(0, 1)) / 2))
    if A01 * np.sin(phi) < 0:
        phi = -phi
    im_c21 = (
        A10 * (-A(2, 1) + 3 * B10 * A(0, 3) / A01 - 3 * A01 * B(3, 0) / B10 + B(1, 2))
        - B10 * (A(1, 2) - 3 * A01 * A(3, 0) / B10 - A01 * B(2, 1) / B10 + 3 * B(0, 3))
    ) / 8
    r1, r2 = np.sqrt(-A01 / B10), np.sqrt(-B10 / A01)
    c20 = (r1 * (B10 / A01 * A(0, 2) + A(2, 0) + B(1, 1)) ** 2
           + r2 * (A01 / B10 * B(2, 0) + B(0, 2) + A(1, 1)) ** 2) / 16
    c02 = (r1 * (B10 / A01 * A(0, 2) + A(2, 0) - B(1, 1)) ** 2
           + r2 * (A01 / B10 * B(2, 0) + B(0, 2) - A(1, 1)) ** 2) / 16
    cp = np.cos(phi)
    quad = np.sin(phi) / (cp - 1) * (3 * c20 + (2 * cp - 1) / (2 * cp + 1) * c02)
    return float(im_c21 + quad) if printed_sign else float(im_c21 - quad)


def birkhoff_A_normal_form(T: MapExpansion) -> float:
    """First Birkhoff coefficient by explicit normalization to cubic order."""
    from .expansions import poly_substitute  # noqa: F401

    _check_resonance(T.linear())
    S, phi = symplectic_rotation_form(T.linear())
    Si = np.linalg.inv(S)
    lin = lambda m: MapExpansion.from_dict(3, {(1, 0): m[0, 0], (0, 1): m[0, 1]}, {(1, 0): m[1, 0], (0, 1): m[1, 1]})
    Tn = compose_all(lin(S), T, lin(Si))
    X = np.zeros((4, 4), complex)
    X[1, 0] = X[0, 1] = 0.5
    Y = np.zeros((4, 4), complex)
    Y[1, 0], Y[0, 1] = -0.5j, 0.5j
    Z = poly_substitute(Tn.a.astype(complex), X, Y) + 1j * poly_substitute(Tn.b.astype(complex), X, Y)
    lam = Z[1, 0]
    H = np.zeros((4, 4), complex)
    H[1, 0] = 1.0
    for j, k in ((2, 0), (1, 1), (0, 2)):
        H[j, k] = Z[j, k] / (lam**j * np.conj(lam) ** k - lam)
    W = poly_substitute(Z, H, np.conj(H.T))
    return float((W[2, 1] / lam / 1j).real)


def birkhoff_limit(P: SymmetricPass, theta_tr: float, printed: bool = False) -> float:
    """Large-``n`` limit of ``A / n^2`` at fixed trace ``theta_tr``.

    The default is the limit observed for the balanced closed form and the
    normal-form algorithm, ``-3 b30 W^2 / (2 (4 - theta^2) sin^2 omega_hat_1)``.
    ``printed=True`` gives ``-3 b30 W^2 / (8 (2 - theta) sin^2 omega_hat_1)``,
    which differs by the factor ``(2 + theta) / 4``.
    """
    W = P.table.W
    b30 = P.expansion.B(3, 0)
    s2 = np.sin(P.omega_hat_1) ** 2
    if printed:
        return float(-3 * b30 * W**2 / (8 * (2 - theta_tr) * s2))
    return float(-3 * b30 * W**2 / (2 * (4 - theta_tr**2) * s2))


# trace parametrization ----------------------------------------------------------------------


def upsilon_asymptotic(P: SymmetricPass, n: int, t: float) -> float:
    a20 = P.expansion.A(2, 0)
    return float(t * np.sin(P.omega_hat_1) / (2 * a20 * n * P.table.W))


def trace_slope(P: SymmetricPass, n: int) -> float:
    """Leading derivative of the return trace in ``ybar0`` at 0."""
    F = P.expansion
    G = P.exit_point()
    return float(-2 * F.A(2, 0) * (F.A(0, 1) + (2 * G[1] + n * P.table.W) / np.sin(P.omega_hat_1)))


def solve_upsilon(P: SymmetricPass, n: int, t: float, tol: float = 1e-12, maxiter: int = 40) -> float:
    """``ybar0`` with return trace ``2 - t`` (secant iteration from the asymptotic seed)."""
    if t == 0:
        return 0.0
    target = 2.0 - t
    y0 = upsilon_asymptotic(P, n, t)
    r0 = return_trace(P, y0, n) - target
    y1 = y0 * (1 + 1e-4)
    r1 = return_trace(P, y1, n) - target
    lim = 10 * abs(y0) + 1e-3
    for _ in range(maxiter):
        if r1 == r0:
            break
        y2 = y1 - r1 * (y1 - y0) / (r1 - r0)
        if not np.isfinite(y2) or abs(y2) > lim:
            raise ConvergenceError(f"Upsilon iteration left its range (n={n}, t={t})")
        y0, r0 = y1, r1
        y1, r1 = y2, return_trace(P, y2, n) - target
        if abs(r1) < tol:
            return float(y1)
    if abs(r1) < 1e-9:
        return float(y1)
    raise ConvergenceError(f"Upsilon iteration did not converge (n={n}, t={t})")


def determine_n0(P: SymmetricPass, ts=(-1.0, 0.5, 2.0, 3.5, 5.0), start: int = 8, limit: int = 1024) -> int:
    """Smallest ``n`` in the doubling sequence from ``start`` where every ``t`` solves."""
    n = start
    while n <= limit:
        try:
            for t in ts:
                solve_upsilon(P, n, t)
            return n
        except (ConvergenceError, ArithmeticError):
            n *= 2
    raise ConvergenceError("no n0 found")


def build_return_coeffs(P: SymmetricPass, theta_tr: float, n: int) -> tuple[MapExpansion, dict]:
    """Return-map coefficients at trace ``theta_tr``, with the intermediate constants."""
    ybar0 = solve_upsilon(P, n, 2 - theta_tr)
    abar = recentered_F(P, ybar0)
    h, g = flight_hg(P, ybar0, n)
    T = return_coeffs_from_parts(abar, h, g)
    T.ref_meta.update(ybar0=ybar0, n=n, theta_tr=theta_tr)
    return T, {"ybar0": ybar0, "h": h, "g": g, "abar": abar}


# orbits and intervals -----------------------------------------------------------------------


@dataclass
class LargeSepOrbit:
    pass_: SymmetricPass
    n: int
    ybar0: float
    L: float
    trace: float
    closure: float = float("nan")
    sim_trace: float = float("nan")
    birkhoff_A: float | None = None
    verdict: str = ""
    states: list = field(default_factory=list, repr=False)
    taus: list = field(default_factory=list, repr=False)


def verdict_from_trace(tr: float, tol: float = 1e-12) -> str:
    if abs(tr) < 2 - tol:
        return "elliptic"
    if abs(tr) <= 2 + tol:
        return "parabolic"
    return "hyperbolic"


def simulate_orbit(P: SymmetricPass, n: int, ybar0: float, L: float | None = None) -> LargeSepOrbit:
    """Build the table with ``L = L_n(ybar0)`` and follow the orbit once around."""
    fval = P.f_exact(ybar0)
    if L is None:
        L = L_n_of(P, ybar0, n, fval)
    if L < 0:
        raise AssumptionError(f"closing condition gives negative L = {L}")
    table = build_table(P.gamma, L)
    pre0 = dyn.from_jacobi(P.table, P.entry, fval, ybar0)
    u = _right_u(P.table, pre0.s)
    start = dyn.reflect(table, table.right_s(u), pre0.omega)
    states, taus = dyn.iterate(table, start, 2 * n + 6)
    end = states[-1]
    ds = float(np.linalg.norm(table.point(end.s) - table.point(start.s)))
    dw = abs(float(wrap_angle(end.omega - start.omega)))
    M = dyn.orbit_monodromy(table, states, taus)
    tr = return_trace(P, ybar0, n)
    return LargeSepOrbit(P, n, ybar0, L, tr, closure=ds + dw, sim_trace=float(np.trace(M)),
                         verdict=verdict_from_trace(tr), states=states, taus=taus)


def half_orbit_trace(orbit: LargeSepOrbit) -> float:
    """Trace of the tangent product over one pass and one crossing.

    The second half of the orbit is the symmetric image of the first, so this
    equals ``-trace`` (the sign comes from the chart identification) and the
    full-orbit trace is ``trace**2 - 2``.
    """
    table = build_table(orbit.pass_.gamma, orbit.L)
    m = orbit.n + 3
    return float(np.trace(dyn.orbit_monodromy(table, orbit.states[: m + 1], orbit.taus[:m])))


def interval_scale(P: SymmetricPass) -> float:
    return float(1.0 / (2 * P.expansion.A(2, 0) * np.sin(P.omega_hat_1)))


I_BRANCHES = ((0.0, 2.0), (2.0, 3.0), (3.0, 4.0))


def stable_intervals(P: SymmetricPass, epsilon: float, n_range, a20: float | None = None) -> list[dict]:
    """Separation intervals predicted to carry elliptic orbits, one per branch and ``n``."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    F = P.expansion
    a20 = F.A(2, 0) if a20 is None else a20
    if abs(a20) < 1e-12 or abs(F.B(3, 0)) < 1e-12:
        raise ArithmeticError("degenerate a20 or b30")
    w1 = P.omega_hat_1
    W = P.table.W
    L00 = L_n_of(P, 0.0, 0, 0.0)
    scale = 1.0 / (2 * a20 * np.sin(w1))
    out = []
    for n in n_range:
        base = L00 + n * W / np.tan(w1)
        for k, (lo, hi) in enumerate(I_BRANCHES, start=1):
            e1, e2 = base + scale * (lo + epsilon), base + scale * (hi - epsilon)
            out.append({"n": int(n), "L_lo": float(min(e1, e2)), "L_hi": float(max(e1, e2)), "branch": k})
    return out


def overlap_threshold(P: SymmetricPass, epsilon: float) -> float:
    """``|a20|`` below which consecutive ``n``-blocks of intervals overlap.

    A block spans ``(4 - 2 eps) / (2 |a20 sin w|)`` and consecutive blocks sit
    ``W |cot w|`` apart, with ``w = omega_hat_1``.
    """
    return float((2 - epsilon) / (P.table.W * abs(np.cos(P.omega_hat_1))))


def blocks_overlap(intervals: list[dict]) -> bool:
    by_n: dict = {}
    for iv in intervals:
        lo, hi = by_n.get(iv["n"], (np.inf, -np.inf))
        by_n[iv["n"]] = (min(lo, iv["L_lo"]), max(hi, iv["L_hi"]))
    ns = sorted(by_n)
    for a, b in zip(ns[:-1], ns[1:]):
        (l1, h1), (l2, h2) = by_n[a], by_n[b]
        if h1 < l2 or h2 < l1:
            return False
    return True


def orbit_for_L(P: SymmetricPass, n: int, L: float, seed_t: float) -> float:
    """``ybar0`` with ``L_n(ybar0) = L``, by secant iteration seeded at ``Upsilon(seed_t)``."""
    y0 = upsilon_asymptotic(P, n, seed_t)
    y1 = y0 * 1.001 + 1e-9
    r0 = L_n_of(P, y0, n) - L
    r1 = L_n_of(P, y1, n) - L
    for _ in range(60):
        if r1 == r0:
            break
        y2 = y1 - r1 * (y1 - y0) / (r1 - r0)
        y0, r0 = y1, r1
        y1, r1 = y2, L_n_of(P, y2, n) - L
        if abs(r1) < 1e-11 * max(1.0, abs(L)):
            return float(y1)
    raise ConvergenceError(f"no orbit with L={L} for n={n}")


def verify_intervals(P: SymmetricPass, intervals: list[dict]) -> list[dict]:
    """Re-simulate the orbit at each interval midpoint and report trace and closure."""
    scale = interval_scale(P)
    base0 = L_n_of(P, 0.0, 0, 0.0)
    rows = []
    for iv in intervals:
        n = iv["n"]
        L = 0.5 * (iv["L_lo"] + iv["L_hi"])
        t_guess = (L - base0 - n * P.table.W / np.tan(P.omega_hat_1)) / scale
        y = orbit_for_L(P, n, L, t_guess)
        orb = simulate_orbit(P, n, y, L)
        try:
            A = birkhoff_A(return_expansion(P, y, n))
        except ResonanceError:
            A = float("nan")
        rows.append({**iv, "L": L, "ybar0": y, "trace": orb.trace, "sim_trace": orb.sim_trace,
                     "closure": orb.closure, "birkhoff_A": A,
                     "elliptic": bool(abs(orb.trace) < 2), "twist": bool(np.isfinite(A) and A != 0)})
    return rows


# all separations ----------------------------------------------------------------------------


def all_sep_trace(n: int, rho_ratio: float, l: float, tau: float) -> float:
    """Half-trace of the circle-arc orbit with a modified reflection and extra flight ``l``."""
    r = rho_ratio
    return float(1 + 2 * (n - 2 * (n + 1) * r) * (1 + (1 - 2 * r) * l / tau))


def all_sep_matrix(n: int, rho_ratio: float, l: float, tau: float) -> np.ndarray:
    """``flight(l) refl(R0) [flight(tau) refl(R)]^n flight(tau) refl(R0)`` with ``R = -4/tau``."""
    R = -4.0 / tau
    R0 = -4.0 * rho_ratio / tau
    M = dyn.reflection_matrix(R0)
    M = dyn.flight_matrix(tau) @ M
    for _ in range(n):
        M = dyn.flight_matrix(tau) @ dyn.reflection_matrix(R) @ M
    M = dyn.flight_matrix(l) @ dyn.reflection_matrix(R0) @ M
    return M


def all_sep_lmax(n: int, rho_ratio: float, tau: float) -> float:
    """Largest ``l`` keeping the orbit elliptic; 0 when it is not elliptic at ``l = 0``."""
    d = rho_ratio - n / (2 * (n + 1))
    if d <= 0 or rho_ratio >= 0.5:
        return 0.0
    return float((tau / 2) / d)


def all_sep_lmax_bisect(n: int, rho_ratio: float, tau: float, l_hi: float = 1e6, xtol: float = 1e-12) -> float:
    """Edge of the elliptic window in ``l`` from the matrix model, by bisection."""
    f = lambda l: float(np.trace(all_sep_matrix(n, rho_ratio, l, tau))) / 2 + 1
    if not 0 < f(0.0) < 2:
        return 0.0
    if f(l_hi) > 0:
        return float("inf")
    return float(bisect(f, 0.0, l_hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=400))
