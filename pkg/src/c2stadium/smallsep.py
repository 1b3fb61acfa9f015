"""Small-separation periodic orbits with one reflection off each smoothed segment.

The orbit starts at the midpoint of the right component, makes ``n`` further
reflections on its circular arc, reflects once off the upper smoothed
segment at ``zeta`` (fraction of the smoothed arc length from the junction),
then ``n + 1`` reflections on the left arc reach the left midpoint.  The
second half is the mirror image, giving period ``4(n + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, root

from . import dynamics as dyn
from .dynamics import PhaseState
from .geometry import QUAD_TOL, BoundaryCurve, ShapeFunction, build_boundary, build_table

DEGENERATE_BAND = 1e-9


class NoInteriorSolution(ValueError):
    """``H(zeta) = beta`` has no root in ``(0, 1)``."""


class OrbitError(ArithmeticError):
    """Newton failure or an orbit violating the reflection pattern."""


def beta_of(n: int) -> float:
    return (2 * n + 1) / (2 * n + 2)


def H_of(h: ShapeFunction, zeta):
    """Mean of ``h`` over ``[zeta, 1]``, i.e. ``int_0^1 h(t zeta + 1 - t) dt``."""
    z = np.asarray(zeta, dtype=float)
    out = np.empty_like(z)
    flat = z.ravel()
    res = out.ravel()
    for i, zi in enumerate(flat):
        if zi > 1 - 1e-6:
            res[i] = quad(lambda t: float(h(t * zi + 1 - t)), 0.0, 1.0, epsabs=QUAD_TOL, epsrel=QUAD_TOL)[0]
        else:
            res[i] = (h.primitive(1.0) - h.primitive(zi)) / (1 - zi)
    return float(out) if out.ndim == 0 else out


def _dH(h: ShapeFunction, zeta: float) -> float:
    return (H_of(h, zeta) - float(h(zeta))) / (1 - zeta)


def _largest_root(h: ShapeFunction, beta: float, lo: float, hi: float, tol: float = 1e-12) -> float:
    # sup{z : H(z) >= beta} on a bracket with H(lo) >= beta > H(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if H_of(h, mid) >= beta:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    d = _dH(h, z)
    if d != 0:
        zn = z - (H_of(h, z) - beta) / d
        if lo - tol <= zn <= hi + tol:
            z = zn
    return float(z)


def solve_zeta_star(h: ShapeFunction, n: int) -> tuple[float, float]:
    """Interior root of ``H(zeta) = (2n+1)/(2n+2)``; returns ``(zeta_star, h(zeta_star))``.

    Bisection toward the largest root, followed by one Newton polish.
    """
    beta = beta_of(n)
    if not 0 < beta < h.integral_cache:
        raise NoInteriorSolution(f"beta={beta:.6g} not below int h={h.integral_cache:.6g}")
    z = _largest_root(h, beta, 0.0, 1.0)
    if not 0 < z < 1:
        raise NoInteriorSolution("root on the boundary")
    return z, float(h(z))


def all_roots(h: ShapeFunction, beta: float, grid: int = 2001) -> list[float]:
    """All roots of ``H = beta`` in ``(0, 1)`` located by a sign scan."""
    zs = np.linspace(0.0, 1.0, grid)[:-1]
    vals = H_of(h, zs) - beta
    roots = []
    for i in range(len(zs) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0:
            roots.append(float(zs[i]))
        elif a * b < 0:
            roots.append(float(brentq(lambda z: H_of(h, z) - beta, zs[i], zs[i + 1], xtol=1e-14)))
    return roots


def trace_limit(n: int, hz: float) -> float:
    """Trace of the monodromy in the small-``alpha`` limit."""
    return 4 * (3 + 4 * n - 4 * (1 + n) * hz) ** 2 - 2


def verdict_from_h(n: int, hz: float) -> str:
    if abs(hz - (n + 0.75) / (n + 1)) < DEGENERATE_BAND:
        return "degenerate"
    if (n + 0.5) / (n + 1) < hz < 1:
        return "elliptic"
    return "hyperbolic"


@dataclass
class StabilityRecord:
    n: int
    zeta_star: float
    h_at_zeta: float
    half_trace: float
    trace: float
    verdict: str


def stability_small(h: ShapeFunction, n: int) -> StabilityRecord:
    """Window test on ``h(zeta_star)`` together with the limiting trace."""
    z, hz = solve_zeta_star(h, n)
    tr = trace_limit(n, hz)
    return StabilityRecord(n, z, hz, tr / 2, tr, verdict_from_h(n, hz))


def check_condition_C(h: ShapeFunction, n_max: int = 200) -> dict:
    """Integers ``n`` satisfying the non-degeneracy condition.

    For every ``n`` with ``(2n+1)/(2n+2) < int h`` all roots of
    ``H(zeta) = (2n+1)/(2n+2)`` are checked against ``h != (n+3/4)/(n+1)``.
    """
    ok, bad = [], []
    n = 0
    while n <= n_max and beta_of(n) < h.integral_cache:
        target = (n + 0.75) / (n + 1)
        roots = all_roots(h, beta_of(n))
        if roots and all(abs(float(h(z)) - target) > DEGENERATE_BAND for z in roots):
            ok.append(n)
        else:
            bad.append(n)
        n += 1
    return {"n_star": ok, "degenerate": bad, "pass": bool(ok)}


# finite alpha -------------------------------------------------------------------------------


@dataclass
class SmallSepOrbit:
    n: int
    alpha: float
    rho: float
    zeta: float
    phi_np1: float
    phi_n: float
    phi_np2: float
    psi_n: float
    psi_np2: float
    tau_n_np1: float
    tau_np1_np2: float
    h_zeta: float
    monodromy: np.ndarray = field(repr=False, default=None)
    trace: float = float("nan")
    verdict: str = ""
    residual: float = float("nan")
    closure: float = float("nan")
    sim_trace: float = float("nan")


def _smoothed(gamma: BoundaryCurve, zeta: float) -> tuple[np.ndarray, float]:
    u = gamma.arc_len + zeta * gamma.s_alpha
    return gamma.point(u), gamma.alpha * float(gamma.shape.turning_fraction(zeta))


def orbit_equations(gamma: BoundaryCurve, n: int, zeta: float, phi: float) -> np.ndarray:
    """Residuals of the two component equations for ``(zeta, phi_{n+1})``."""
    rho = gamma.rho
    G, at = _smoothed(gamma, zeta)
    m = 2 * n + 1
    c = gamma.c_alpha / rho
    sa, ca = np.sin(at), np.cos(at)
    sm, cm = np.sin(at / m), np.cos(at / m)
    gx = (np.cos(phi / m) / np.sin(phi) * sa * cm + np.sin(phi / m) / np.cos(phi) * sm * ca
          + c * sa * ca * (np.tan(phi) + 1 / np.tan(phi)))
    gy = (np.cos(phi / m) / np.sin(phi) * cm * ca - np.sin(phi / m) / np.cos(phi) * sm * sa
          + c * (ca**2 / np.tan(phi) - sa**2 * np.tan(phi)))
    return np.array([G[0] / rho - gx, G[1] / rho - gy])


def _derived(gamma: BoundaryCurve, n: int, zeta: float, phi: float) -> dict:
    rho = gamma.rho
    G, at = _smoothed(gamma, zeta)
    m = 2 * n + 1
    c = gamma.c_alpha
    phi_n = np.pi / 2 - (phi - at) / m
    phi_np2 = np.pi / 2 - (phi + at) / m
    t12 = (G[0] + c) * np.sin(phi + at) + G[1] * np.cos(phi + at) + rho * np.cos(phi_np2)
    t01 = -(G[0] - c) * np.sin(phi - at) + G[1] * np.cos(phi - at) + rho * np.cos(phi_n)
    return dict(phi_n=phi_n, phi_np2=phi_np2, psi_n=n * (np.pi - 2 * phi_n),
                psi_np2=n * (np.pi - 2 * phi_np2), tau_n_np1=t01, tau_np1_np2=t12)


def constraint_violations(alpha: float, d: dict) -> list[str]:
    """Violated inequalities of the reflection-pattern window (``psi >= 0`` allowed for ``n = 0``)."""
    out = []
    for k in ("psi_n", "psi_np2"):
        if not (0 <= d[k] < np.pi / 2 - alpha):
            out.append(f"{k}={d[k]:.6g} outside [0, pi/2 - alpha)")
    if not d["phi_n"] - d["psi_n"] > 0:
        out.append("phi_n <= psi_n")
    if not d["phi_np2"] - d["psi_np2"] > 0:
        out.append("phi_np2 <= psi_np2")
    return out


def circle_block(phi: float, n: int, rho: float) -> np.ndarray:
    """Closed form of ``2n+1`` reflections on a circle at angle ``phi``."""
    c = np.cos(phi)
    return np.array([[-1 - 4 * n, 4 * n * rho * c], [2 * (2 * n + 1) / (rho * c), -1 - 4 * n]])


def circle_block_product(phi: float, n: int, rho: float) -> np.ndarray:
    """The same block as an explicit product of reflection and flight factors."""
    R = -2 / (rho * np.cos(phi))
    refl = dyn.reflection_matrix(R)
    fl = dyn.flight_matrix(2 * rho * np.cos(phi))
    M = refl
    for _ in range(2 * n):
        M = refl @ fl @ M
    return M


def monodromy_small(orbit: SmallSepOrbit) -> np.ndarray:
    """Monodromy over one period from the product formula."""
    F = dyn.flight_matrix
    S = np.array([[-1.0, 0.0], [2 * orbit.h_zeta / (orbit.rho * np.cos(orbit.phi_np1)), -1.0]])
    half1 = F(orbit.tau_np1_np2) @ S @ F(orbit.tau_n_np1) @ circle_block(orbit.phi_n, orbit.n, orbit.rho)
    half2 = F(orbit.tau_n_np1) @ S @ F(orbit.tau_np1_np2) @ circle_block(orbit.phi_np2, orbit.n, orbit.rho)
    return half2 @ half1


def simulate_small(gamma: BoundaryCurve, orbit: SmallSepOrbit, L: float = 0.0):
    """Re-simulate the orbit from the right midpoint; returns ``(closure, trace, states, taus)``."""
    table = build_table(gamma, L)
    start = PhaseState.from_phi(table, table.right_s(0.0), orbit.phi_n)
    states, taus = dyn.iterate(table, start, 4 * (orbit.n + 1))
    end = states[-1]
    closure = float(np.linalg.norm(table.point(end.s) - table.point(start.s))
                    + abs(dyn.wrap_angle(end.omega - start.omega)))
    M = dyn.orbit_monodromy(table, states, taus)
    return closure, float(np.trace(M)), states, taus


def solve_orbit(h: ShapeFunction, alpha: float, rho: float, n: int, seed=None,
                simulate: bool = True) -> SmallSepOrbit:
    """Finite-``alpha`` orbit from Newton iteration on the component equations.

    Seeded with ``(zeta_star, pi/4 (2n+1)/(n+1))`` unless ``seed`` is given.
    """
    gamma = build_boundary(h, alpha, rho)
    if seed is None:
        seed = (solve_zeta_star(h, n)[0], np.pi / 4 * (2 * n + 1) / (n + 1))
    sol = root(lambda v: orbit_equations(gamma, n, v[0], v[1]), np.asarray(seed, float),
               method="hybr", options={"xtol": 1e-15})
    zeta, phi = map(float, sol.x)
    res = float(np.max(np.abs(orbit_equations(gamma, n, zeta, phi))))
    if res > 1e-11 or not (0 < zeta < 1) or not (0 < phi < np.pi / 2):
        raise OrbitError(f"Newton failed: residual {res:.3g}, zeta={zeta:.6g}, phi={phi:.6g}")
    d = _derived(gamma, n, zeta, phi)
    bad = constraint_violations(alpha, d)
    if bad:
        raise OrbitError("reflection pattern violated: " + "; ".join(bad))
    orb = SmallSepOrbit(n, alpha, rho, zeta, phi, h_zeta=float(h(zeta)), residual=res, **d)
    orb.monodromy = monodromy_small(orb)
    orb.trace = float(np.trace(orb.monodromy))
    orb.verdict = verdict_from_trace(orb.trace)
    if simulate:
        orb.closure, orb.sim_trace, _, _ = simulate_small(gamma, orb)
        if orb.closure > 1e-8:
            raise OrbitError(f"orbit does not close: residual {orb.closure:.3g}")
    return orb


def verdict_from_trace(tr: float, band: float = 1e-9) -> str:
    if abs(abs(tr) - 2) <= band:
        return "degenerate"
    return "elliptic" if abs(tr) < 2 else "hyperbolic"


def solve_orbit_continued(h: ShapeFunction, alpha: float, rho: float, n: int, steps: int = 8) -> SmallSepOrbit:
    """Continuation in ``alpha`` from a small value, for stiff cases."""
    seed = None
    for a in np.geomspace(min(alpha, 1e-3), alpha, steps):
        orb = solve_orbit(h, float(a), rho, n, seed=seed, simulate=False)
        seed = (orb.zeta, orb.phi_np1)
    return solve_orbit(h, alpha, rho, n, seed=seed)


# continuation in L --------------------------------------------------------------------------


def _shoot(table, n: int, phi0: float) -> float:
    start = PhaseState.from_phi(table, table.right_s(0.0), phi0)
    states, _ = dyn.iterate(table, start, 2 * n + 2)
    return float(table.point(states[-1].s)[1])


def continue_in_L(gamma: BoundaryCurve, orbit: SmallSepOrbit, L_values) -> list[dict]:
    """Follow the orbit to positive separations.

    For each ``L`` the midpoint angle is adjusted (secant iteration) until
    ``2n + 2`` steps from the right midpoint land on the left midpoint; the
    horizontal symmetry then closes the orbit.  Stops after the first
    non-elliptic or failed point.
    """
    n = orbit.n
    phi = orbit.phi_n
    rows = []
    for L in L_values:
        table = build_table(gamma, float(L))
        try:
            p0, p1 = phi, phi + 1e-7
            r0, r1 = _shoot(table, n, p0), _shoot(table, n, p1)
            for _ in range(50):
                if r1 == r0:
                    break
                p0, p1, r0 = p1, p1 - r1 * (p1 - p0) / (r1 - r0), r1
                r1 = _shoot(table, n, p1)
                if abs(r1) < 1e-13:
                    break
            if abs(r1) > 1e-10:
                raise OrbitError(f"shooting failed at L={L}")
            phi = p1
            start = PhaseState.from_phi(table, table.right_s(0.0), phi)
            states, taus = dyn.iterate(table, start, 4 * (n + 1))
            end = states[-1]
            closure = float(np.linalg.norm(table.point(end.s) - table.point(start.s))
                            + abs(dyn.wrap_angle(end.omega - start.omega)))
            tr = float(np.trace(dyn.orbit_monodromy(table, states, taus)))
        except (OrbitError, ArithmeticError, RuntimeError) as exc:
            rows.append({"L": float(L), "ok": False, "error": str(exc)})
            break
        rows.append({"L": float(L), "ok": True, "phi0": float(phi), "trace": tr, "closure": closure,
                     "verdict": verdict_from_trace(tr)})
        if abs(tr) >= 2:
            break
    return rows
