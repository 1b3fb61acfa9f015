"""Smoothed focusing components and assembled C2-stadium tables.

A component is a semicircle of radius ``rho`` whose two end arcs of
half-angle ``alpha`` are replaced by segments with curvature
``-h(s/s_alpha)/rho``.  Arc length ``u`` on a component is measured from its
midpoint, counterclockwise.  The component is placed so that its endpoints
sit on the line ``x = 0`` at heights ``+-W/2``.

A :class:`Table` glues two components and two straight walls of length ``L``
into one closed convex curve with a single global arc-length chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

QUAD_TOL = 1e-12
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


class ShapeError(ValueError):
    """Raised when a shape function violates its normalization."""


@dataclass(frozen=True)
class ShapeFunction:
    """Normalized curvature profile ``h`` on ``[0, 1]``.

    ``kind`` is ``"poly"`` (ascending coefficients) or ``"table"``
    (samples joined by monotone cubic interpolation).
    """

    kind: str
    evaluator: Callable
    d1: Callable
    d2: Callable
    primitive: Callable
    integral_cache: float
    monotone: bool
    knots: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    source: dict = field(default_factory=dict)

    def __call__(self, xi):
        return self.evaluator(xi)

    def turning_fraction(self, zeta):
        """Normalized remaining curvature integral of ``h`` over ``[zeta, 1]``."""
        return (self.primitive(1.0) - self.primitive(zeta)) / self.integral_cache


def make_shape(spec, monotone: bool = False) -> ShapeFunction:
    """Build a :class:`ShapeFunction` from a JSON-like description.

    Parameters
    ----------
    spec : dict or sequence
        ``{"kind": "poly", "coeffs": [...]}`` with ascending coefficients, or
        ``{"kind": "table", "samples": [[xi, h], ...]}``.  A bare sequence is
        read as polynomial coefficients.
    monotone : bool
        Require ``h`` to be non-increasing.
    """
    if not isinstance(spec, dict):
        spec = {"kind": "poly", "coeffs": list(spec)}
    kind = spec.get("kind", "poly")
    monotone = bool(spec.get("monotone", monotone))
    if kind == "poly":
        coeffs = np.asarray(spec["coeffs"], dtype=float)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise ShapeError("polynomial shape needs a non-empty coefficient list")
        p = Polynomial(coeffs)
        d1p, d2p, prim = p.deriv(1), p.deriv(2), p.integ()
        ev, d1, d2, pr = p, d1p, d2p, prim
        knots = np.array([0.0, 1.0])
    elif kind == "table":
        pts = np.asarray(spec.get("samples", spec.get("data")), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ShapeError("table shape needs [[xi, h], ...] samples")
        pts = pts[np.argsort(pts[:, 0])]
        if abs(pts[0, 0]) > 1e-12 or abs(pts[-1, 0] - 1.0) > 1e-12:
            raise ShapeError("table samples must span [0, 1]")
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise ShapeError("table abscissae must be distinct")
        if monotone and np.any(np.diff(pts[:, 1]) > 0):
            raise ShapeError("table samples are not non-increasing")
        ip = PchipInterpolator(pts[:, 0], pts[:, 1])
        ev, d1, d2, pr = ip, ip.derivative(1), ip.derivative(2), ip.antiderivative()
        knots = pts[:, 0].copy()
    else:
        raise ShapeError(f"unknown shape kind {kind!r}")

    h0, h1 = float(ev(0.0)), float(ev(1.0))
    if abs(h0 - 1.0) > 1e-9 or abs(h1) > 1e-9:
        raise ShapeError(f"need h(0)=1 and h(1)=0, got h(0)={h0:g}, h(1)={h1:g}")
    grid = np.linspace(0.0, 1.0, 2001)
    vals = np.asarray(ev(grid), dtype=float)
    if np.any(vals < -1e-12):
        raise ShapeError("h takes negative values on [0, 1]")
    if monotone and np.any(np.diff(vals) > 1e-12):
        raise ShapeError("h is not non-increasing on [0, 1]")

    integral = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        integral += quad(lambda t: float(ev(t)), a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL)[0]
    if integral <= 0:
        raise ShapeError("h has zero integral")
    return ShapeFunction(kind, ev, d1, d2, pr, integral, monotone, knots, dict(spec))


@dataclass(frozen=True)
class _Cumulative:
    breaks: np.ndarray
    cos_cum: np.ndarray
    sin_cum: np.ndarray


class BoundaryCurve:
    """One smoothed focusing component ``Gamma``.

    Attributes
    ----------
    rho, alpha : float
        Radius of the underlying semicircle and half-angle of each replaced arc.
    s_alpha : float
        Arc length of one smoothed segment.
    arc_len : float
        Arc length of the circular part above the midpoint.
    total_len : float
        Length of the whole component.
    c_alpha, delta_alpha : float
        Circle-centre abscissa and abscissa where the upper smoothing starts.
    W : float
        Distance between the two endpoints (channel width).
    """

    def __init__(self, shape: ShapeFunction, alpha: float, rho: float = 1.0):
        if not 0.0 < alpha < np.pi / 2:
            raise ValueError("alpha must lie in (0, pi/2)")
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.shape = shape
        self.alpha = float(alpha)
        self.rho = float(rho)
        self.s_alpha = self.rho * self.alpha / shape.integral_cache
        self.arc_len = self.rho * (np.pi / 2 - self.alpha)
        self.half_len = self.arc_len + self.s_alpha
        self.total_len = 2.0 * self.half_len
        self._cum = self._build_cumulative()
        c1 = self._cum.cos_cum[-1]
        s1 = self._cum.sin_cum[-1]
        self.c_alpha = self.s_alpha * c1 - self.rho * np.sin(self.alpha)
        self.delta_alpha = self.c_alpha + self.rho * np.sin(self.alpha)
        self.y_end = self.rho * np.cos(self.alpha) + self.s_alpha * s1
        self.W = 2.0 * self.y_end

    def _build_cumulative(self) -> _Cumulative:
        breaks = np.union1d(np.linspace(0.0, 1.0, 65), self.shape.knots)
        a = self.alpha
        tf = self.shape.turning_fraction
        cc, ss = [0.0], [0.0]
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            cc.append(cc[-1] + quad(lambda t: np.cos(a * tf(t)), lo, hi, epsabs=1e-14, epsrel=1e-14)[0])
            ss.append(ss[-1] + quad(lambda t: np.sin(a * tf(t)), lo, hi, epsabs=1e-14, epsrel=1e-14)[0])
        return _Cumulative(breaks, np.array(cc), np.array(ss))

    def _partial(self, zeta):
        """Integrals of ``cos`` and ``sin`` of ``alpha*Theta`` over ``[0, zeta]``."""
        zeta = np.clip(np.atleast_1d(np.asarray(zeta, dtype=float)), 0.0, 1.0)
        br = self._cum.breaks
        k = np.clip(np.searchsorted(br, zeta, side="right") - 1, 0, len(br) - 2)
        lo = br[k]
        half = 0.5 * (zeta - lo)
        t = lo[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
        ang = self.alpha * self.shape.turning_fraction(t)
        c = self._cum.cos_cum[k] + half * (np.cos(ang) @ _GL_WEIGHTS)
        s = self._cum.sin_cum[k] + half * (np.sin(ang) @ _GL_WEIGHTS)
        return c, s

    # upper-half evaluators, u in [0, half_len]
    def _upper(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = np.empty_like(u)
        y = np.empty_like(u)
        th = np.empty_like(u)
        circ = u <= self.arc_len
        uc = u[circ] / self.rho
        x[circ] = self.c_alpha + self.rho * np.cos(uc)
        y[circ] = self.rho * np.sin(uc)
        th[circ] = np.pi / 2 + uc
        if np.any(~circ):
            zeta = (u[~circ] - self.arc_len) / self.s_alpha
            c, s = self._partial(zeta)
            x[~circ] = self.delta_alpha - self.s_alpha * c
            y[~circ] = self.rho * np.cos(self.alpha) + self.s_alpha * s
            th[~circ] = np.pi - self.alpha * self.shape.turning_fraction(np.clip(zeta, 0, 1))
        return x, y, th

    def _zeta(self, u):
        return np.clip((np.abs(u) - self.arc_len) / self.s_alpha, 0.0, 1.0)

    def _point_scalar(self, u: float):
        a = abs(u)
        if a <= self.arc_len:
            x = self.c_alpha + self.rho * math.cos(a / self.rho)
            y = self.rho * math.sin(a / self.rho)
        else:
            c, s = self._partial((a - self.arc_len) / self.s_alpha)
            x = self.delta_alpha - self.s_alpha * c[0]
            y = self.rho * math.cos(self.alpha) + self.s_alpha * s[0]
        return np.array([x, -y if u < 0 else y])

    def point(self, u):
        """Position at component arc length ``u`` (array of shape ``(..., 2)``)."""
        if isinstance(u, (float, int)):
            return self._point_scalar(float(u))
        u_arr = np.asarray(u, dtype=float)
        ua = np.atleast_1d(u_arr)
        x, y, _ = self._upper(np.abs(ua))
        y = np.where(ua < 0, -y, y)
        out = np.stack([x, y], axis=-1)
        return out[0] if u_arr.ndim == 0 else out

    def theta(self, u):
        """Tangent angle; runs from 0 at the lower endpoint to pi at the upper one."""
        u_arr = np.asarray(u, dtype=float)
        ua = np.atleast_1d(u_arr)
        _, _, th = self._upper(np.abs(ua))
        th = np.where(ua < 0, np.pi - th, th)
        return th[0] if u_arr.ndim == 0 else th

    def curvature(self, u):
        """Signed curvature, ``-1/rho`` on the circular part (theta' = -K)."""
        u = np.asarray(u, dtype=float)
        smooth = np.abs(u) > self.arc_len
        k = np.where(smooth, -self.shape(self._zeta(u)) / self.rho, -1.0 / self.rho)
        return k if k.ndim else float(k)

    def dcurvature(self, u):
        u = np.asarray(u, dtype=float)
        smooth = np.abs(u) > self.arc_len
        k1 = -self.shape.d1(self._zeta(u)) / (self.rho * self.s_alpha)
        k1 = np.where(smooth, np.sign(u) * k1, 0.0)
        return k1 if k1.ndim else float(k1)

    def d2curvature(self, u):
        u = np.asarray(u, dtype=float)
        smooth = np.abs(u) > self.arc_len
        k2 = -self.shape.d2(self._zeta(u)) / (self.rho * self.s_alpha**2)
        k2 = np.where(smooth, k2, 0.0)
        return k2 if k2.ndim else float(k2)


def build_boundary(shape: ShapeFunction, alpha: float, rho: float = 1.0) -> BoundaryCurve:
    return BoundaryCurve(shape, alpha, rho)


class Billiard:
    """Closed convex boundary with a global arc-length chart ``s in [0, perimeter)``.

    Subclasses provide ``_eval(s)`` returning point, tangent angle and the
    curvature jet on a wrapped chart value.
    """

    perimeter: float
    _sample_s: np.ndarray
    _sample_pts: np.ndarray

    def wrap(self, s):
        return np.mod(s, self.perimeter)

    def _init_samples(self, n: int = 4096, extra: Sequence[float] = ()):
        s = np.union1d(np.linspace(0.0, self.perimeter, n, endpoint=False), np.asarray(extra, dtype=float))
        s = s[s < self.perimeter]
        self._sample_s = s
        self._sample_pts = self.point(s)

    def point(self, s):
        raise NotImplementedError

    def theta(self, s):
        raise NotImplementedError

    def curvature(self, s):
        raise NotImplementedError

    def dcurvature(self, s):
        raise NotImplementedError

    def d2curvature(self, s):
        raise NotImplementedError

    def tangent(self, s):
        th = self.theta(s)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)


class CircleTable(Billiard):
    """Full circle of radius ``rho`` centred at the origin, ``s=0`` at ``(rho, 0)``."""

    def __init__(self, rho: float = 1.0):
        self.rho = float(rho)
        self.perimeter = 2 * np.pi * self.rho
        self._init_samples(1024)

    def point(self, s):
        a = np.asarray(s, dtype=float) / self.rho
        return self.rho * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def theta(self, s):
        return np.asarray(s, dtype=float) / self.rho + np.pi / 2

    def curvature(self, s):
        return np.full_like(np.asarray(s, dtype=float), -1.0 / self.rho)[()]

    def dcurvature(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))[()]

    def d2curvature(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))[()]


class Table(Billiard):
    """C2-stadium: two copies of ``gamma`` joined by straight walls of length ``L``.

    The right component is ``gamma`` shifted by ``L/2``; the left one is its
    image under the half-turn about the origin.  Global chart order:
    right upper half, top wall, left component, bottom wall, right lower half.
    """

    def __init__(self, gamma: BoundaryCurve, L: float = 0.0):
        if L < 0:
            raise ValueError("L must be non-negative")
        self.gamma = gamma
        self.L = float(L)
        self.W = gamma.W
        g = gamma.total_len
        self.perimeter = 2 * g + 2 * self.L
        hl = gamma.half_len
        self._b = np.array([hl, hl + self.L, hl + self.L + g, hl + 2 * self.L + g])
        self._offsets = np.array([0.0, hl, 2 * hl + self.L, self._b[2], self.perimeter])
        self._init_samples(4096, extra=list(self._b))

    def _split(self, s):
        s = np.atleast_1d(self.wrap(np.asarray(s, dtype=float)))
        b = self._b
        # junctions belong to the curved pieces
        piece = (s > b[0]).astype(int) + (s >= b[1]) + (s > b[2]) + (s >= b[3])
        return piece, s - self._offsets[piece]

    def _point_scalar(self, s: float):
        s = s % self.perimeter
        b = self._b
        piece = int(s > b[0]) + int(s >= b[1]) + int(s > b[2]) + int(s >= b[3])
        u = s - self._offsets[piece]
        if piece == 1:
            return np.array([self.L / 2 - u, self.W / 2])
        if piece == 3:
            return np.array([-self.L / 2 + u, -self.W / 2])
        p = self.gamma._point_scalar(float(u))
        if piece == 2:
            return np.array([-self.L / 2 - p[0], -p[1]])
        return np.array([self.L / 2 + p[0], p[1]])

    def point(self, s):
        if isinstance(s, (float, int)):
            return self._point_scalar(float(s))
        s_arr = np.asarray(s, dtype=float)
        piece, u = self._split(s_arr)
        out = np.empty((u.size, 2))
        curved = (piece == 0) | (piece == 4) | (piece == 2)
        if np.any(curved):
            p = self.gamma.point(u[curved])
            p = np.atleast_2d(p)
            left = piece[curved] == 2
            p[:, 0] = np.where(left, -self.L / 2 - p[:, 0], self.L / 2 + p[:, 0])
            p[:, 1] = np.where(left, -p[:, 1], p[:, 1])
            out[curved] = p
        top = piece == 1
        out[top, 0] = self.L / 2 - u[top]
        out[top, 1] = self.W / 2
        bot = piece == 3
        out[bot, 0] = -self.L / 2 + u[bot]
        out[bot, 1] = -self.W / 2
        return out[0] if s_arr.ndim == 0 else out

    def theta(self, s):
        s_arr = np.asarray(s, dtype=float)
        piece, u = self._split(s_arr)
        th = np.select([piece == 1, piece == 3], [np.pi, 2 * np.pi], default=0.0)
        curved = (piece == 0) | (piece == 4) | (piece == 2)
        if np.any(curved):
            tg = np.atleast_1d(self.gamma.theta(u[curved]))
            tg = tg + np.select([piece[curved] == 2, piece[curved] == 4], [np.pi, 2 * np.pi], default=0.0)
            th[curved] = tg
        return th[0] if s_arr.ndim == 0 else th

    def _curv_like(self, s, fn):
        s_arr = np.asarray(s, dtype=float)
        piece, u = self._split(s_arr)
        k = np.where((piece == 1) | (piece == 3), 0.0, fn(u))
        return k[0] if s_arr.ndim == 0 else k

    def curvature(self, s):
        return self._curv_like(s, self.gamma.curvature)

    def dcurvature(self, s):
        return self._curv_like(s, self.gamma.dcurvature)

    def d2curvature(self, s):
        return self._curv_like(s, self.gamma.d2curvature)

    # chart helpers
    def right_s(self, u):
        """Global chart value of right-component arc length ``u``."""
        return self.wrap(u)

    def left_s(self, u):
        """Global chart value of left-component arc length ``u``."""
        return self.gamma.half_len + self.L + self.gamma.half_len + u


def build_table(gamma: BoundaryCurve, L: float = 0.0) -> Table:
    return Table(gamma, L)
