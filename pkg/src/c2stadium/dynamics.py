"""Exact billiard map, local Jacobi coordinates and tangent propagation.

Conventions: ``theta(s)`` is the tangent angle of the counterclockwise
boundary, ``omega`` the direction of motion and
``phi = theta + pi/2 - omega`` the angle to the inward normal.  After a
reflection ``|phi| < pi/2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .geometry import Billiard

TANGENCY_TOL = 1e-8
TWO_PI = 2 * np.pi


class TangencyError(ArithmeticError):
    """Ray (nearly) tangent to the boundary."""


class IntersectionError(RuntimeError):
    """No boundary intersection found; indicates a geometry bug."""


class ChartError(ArithmeticError):
    """State lies outside the local Jacobi chart."""


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)


@dataclass(frozen=True)
class PhaseState:
    s: float
    phi: float
    omega: float

    @classmethod
    def from_omega(cls, table: Billiard, s: float, omega: float) -> "PhaseState":
        s = float(table.wrap(s))
        phi = float(wrap_angle(table.theta(s) + np.pi / 2 - omega))
        return cls(s, phi, float(np.mod(omega, TWO_PI)))

    @classmethod
    def from_phi(cls, table: Billiard, s: float, phi: float) -> "PhaseState":
        s = float(table.wrap(s))
        omega = float(np.mod(table.theta(s) + np.pi / 2 - phi, TWO_PI))
        return cls(s, float(phi), omega)


@dataclass(frozen=True)
class JacobiState:
    x: float
    y: float
    z: float
    ref: PhaseState


def _direction(omega):
    return np.array([np.cos(omega), np.sin(omega)])


def _normal(omega):
    return np.array([-np.sin(omega), np.cos(omega)])


def next_hit(table: Billiard, s0: float, omega: float) -> tuple[float, float]:
    """Arc length of the next boundary point hit by the ray from ``s0``.

    The cross product ``g(d) = v x (Gamma(s0+d) - Gamma(s0))`` vanishes at
    ``d = 0`` and at the hit.  Dividing by ``d`` removes the trivial root, and
    convexity leaves exactly one sign change on ``(0, P)``.
    """
    P = table.perimeter
    p0 = table.point(s0)
    v = _direction(omega)
    if abs(np.cos(table.theta(s0) + np.pi / 2 - omega)) < TANGENCY_TOL:
        raise TangencyError("outgoing ray is tangent to the boundary")

    def gt(d):
        q = table.point(s0 + d) - p0
        return (v[0] * q[1] - v[1] * q[0]) / d

    d = np.mod(table._sample_s - s0, P)
    pts = table._sample_pts - p0
    ok = (d > 1e-9 * P) & (d < P * (1 - 1e-9))
    d, pts = d[ok], pts[ok]
    order = np.argsort(d)
    d, pts = d[order], pts[order]
    edge = np.geomspace(1e-9 * P, 1e-3 * P, 24)
    d = np.concatenate([edge, d, P - edge[::-1]])
    extra = table.point(s0 + np.concatenate([edge, P - edge[::-1]])) - p0
    pts = np.concatenate([extra[:24], pts, extra[24:]])
    g = (v[0] * pts[:, 1] - v[1] * pts[:, 0]) / d
    # the hit is the sign change at which the point lies ahead of the start
    ahead = pts @ v
    idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]
    idx = [i for i in idx if ahead[i] + ahead[i + 1] > 0]
    if not idx:
        raise IntersectionError(f"no intersection from s={s0}, omega={omega}")
    i = idx[0]
    lo, hi = d[i], d[i + 1]
    glo, ghi = gt(lo), gt(hi)
    if glo == 0.0:
        dh = lo
    elif ghi == 0.0:
        dh = hi
    elif glo * ghi > 0:
        # root sits on a sample point within roundoff
        dh = lo if abs(glo) < abs(ghi) else hi
    else:
        dh = brentq(gt, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    s1 = float(table.wrap(s0 + dh))
    tau = float((table.point(s1) - p0) @ v)
    return s1, tau


def step(table: Billiard, state: PhaseState) -> tuple[PhaseState, float]:
    """One reflection: returns the post-collision state at the next hit and the free path."""
    s1, tau = next_hit(table, state.s, state.omega)
    th = float(table.theta(s1))
    phi_in = wrap_angle(th + np.pi / 2 - state.omega)
    if abs(np.cos(phi_in)) < TANGENCY_TOL:
        raise TangencyError("incoming ray is tangent to the boundary")
    omega = float(np.mod(2 * th - state.omega, TWO_PI))
    phi = float(wrap_angle(th + np.pi / 2 - omega))
    return PhaseState(s1, phi, omega), tau


def iterate(table: Billiard, state: PhaseState, k: int):
    """``k`` exact steps; returns the list of states and the list of free paths."""
    states, taus = [state], []
    for _ in range(k):
        state, tau = step(table, state)
        states.append(state)
        taus.append(tau)
    return states, taus


def flight_matrix(tau: float) -> np.ndarray:
    return np.array([[1.0, tau], [0.0, 1.0]])


def reflection_matrix(R: float) -> np.ndarray:
    return np.array([[-1.0, 0.0], [-R, -1.0]])


def r_quantities(table: Billiard, s: float, phi: float) -> tuple[float, float, float]:
    """``R = 2K/cos phi``, ``R1 = 4K'/cos^2 phi``, ``R2 = 8K''/cos^3 phi``."""
    c = np.cos(phi)
    if abs(c) < TANGENCY_TOL:
        raise TangencyError("reflection angle at tangency")
    return (
        2 * float(table.curvature(s)) / c,
        4 * float(table.dcurvature(s)) / c**2,
        8 * float(table.d2curvature(s)) / c**3,
    )


def tangent_step(table: Billiard, state: PhaseState, next_state: PhaseState, tau: float) -> np.ndarray:
    """Linearization between post-collision Jacobi charts of consecutive reflections."""
    R = r_quantities(table, next_state.s, next_state.phi)[0]
    return reflection_matrix(R) @ flight_matrix(tau)


def to_jacobi(table: Billiard, ref: PhaseState, s: float, omega: float) -> JacobiState:
    """Local flow coordinates of ``(s, omega)`` about ``ref``."""
    d = table.point(s) - table.point(ref.s)
    return JacobiState(
        float(d @ _normal(omega)),
        float(wrap_angle(omega - ref.omega)),
        float(d @ _direction(omega)),
        ref,
    )


def from_jacobi(table: Billiard, ref: PhaseState, x: float, y: float, maxiter: int = 50) -> PhaseState:
    """Inverse of :func:`to_jacobi` (``z`` is implied by ``x, y``).

    Newton on ``s`` seeded with ``s_bar - x / cos(phi_bar)``.
    """
    omega = ref.omega + y
    nrm = _normal(omega)
    p0 = table.point(ref.s)
    cphi = np.cos(table.theta(ref.s) + np.pi / 2 - ref.omega)
    if abs(cphi) < TANGENCY_TOL:
        raise TangencyError("reference state is tangent")
    # keep s as an unwrapped offset from the reference point
    ds = -x / cphi
    # roundoff floors scale with the coordinates of the table
    eps = 4 * np.finfo(float).eps
    s_floor = eps * max(1.0, abs(ref.s))
    f_floor = eps * max(1.0, float(np.abs(p0).max()))
    for _ in range(maxiter):
        s = ref.s + ds
        F = (table.point(s) - p0) @ nrm - x
        dF = np.sin(table.theta(s) - omega)
        if dF == 0:
            break
        delta = F / dF
        ds -= delta
        if abs(ds) > table.perimeter / 2:
            break
        if abs(delta) < max(1e-15 * abs(ds), s_floor) or abs(F) < f_floor:
            if abs(F) > 1e-10 * max(1.0, abs(x)):
                break
            return PhaseState.from_omega(table, ref.s + ds, omega)
    raise ChartError(f"Jacobi chart inversion failed for x={x}, y={y}")


def reflect(table: Billiard, s: float, omega_in: float) -> PhaseState:
    """Specular reflection of incoming direction ``omega_in`` at ``s``."""
    th = float(table.theta(s))
    return PhaseState.from_omega(table, s, 2 * th - omega_in)


def chart_map(table: Billiard, ref_in: PhaseState, ref_out: PhaseState, nrefl: int, x: float, y: float,
              pre: bool = True) -> tuple[float, float]:
    """Exact map between Jacobi charts.

    With ``pre=True`` the input chart is pre-collision: the point is
    reflected in place first and then ``nrefl - 1`` further steps follow.
    With ``pre=False`` the input is post-collision and ``nrefl`` steps follow.
    The output chart is the post-collision chart ``ref_out``.
    """
    st = from_jacobi(table, ref_in, x, y)
    if pre:
        st = reflect(table, st.s, st.omega)
        nrefl -= 1
    for _ in range(nrefl):
        st, _ = step(table, st)
    j = to_jacobi(table, ref_out, st.s, st.omega)
    return j.x, j.y


def orbit_monodromy(table: Billiard, states, taus) -> np.ndarray:
    """Product of tangent matrices along an orbit segment."""
    M = np.eye(2)
    for a, b, t in zip(states[:-1], states[1:], taus):
        M = tangent_step(table, a, b, t) @ M
    return M
