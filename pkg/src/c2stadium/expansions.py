"""Truncated bivariate expansions of billiard maps in Jacobi coordinates.

A map ``(x, y) -> (X, Y)`` is stored as two dense triangular arrays
``a[k, l]``, ``b[k, l]`` holding the coefficients of ``x**k * y**l`` with
``k + l <= degree``.  All expansions are about a fixed point of the charts,
so constant terms vanish.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .dynamics import PhaseState, TangencyError, r_quantities


class AssumptionError(ValueError):
    """A pass does not satisfy the symmetric-pass hypotheses."""


def _mask(degree: int) -> np.ndarray:
    k, l = np.indices((degree + 1, degree + 1))
    return (k + l) <= degree


def poly_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Product of two truncated bivariate polynomials of equal degree."""
    d = p.shape[0] - 1
    r = np.zeros_like(p)
    for k, l in zip(*np.nonzero(p)):
        r[k:, l:] += p[k, l] * q[: d + 1 - k, : d + 1 - l]
    return r * _mask(d)


def poly_eval(p: np.ndarray, x, y):
    d = p.shape[0] - 1
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for k in range(d + 1):
        for l in range(d + 1 - k):
            if p[k, l] != 0.0:
                out = out + p[k, l] * x**k * y**l
    return out


def poly_substitute(p: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``p(X(x, y), Y(x, y))`` truncated; ``X`` and ``Y`` must have no constant term."""
    d = p.shape[0] - 1
    one = np.zeros_like(p)
    one[0, 0] = 1.0
    xp = [one]
    yp = [one]
    for _ in range(d):
        xp.append(poly_mul(xp[-1], X))
        yp.append(poly_mul(yp[-1], Y))
    r = np.zeros_like(p)
    for k in range(d + 1):
        for l in range(d + 1 - k):
            if p[k, l] != 0.0:
                r += p[k, l] * poly_mul(xp[k], yp[l])
    return r


@dataclass
class MapExpansion:
    """Truncated power series of a planar map: ``X = sum a_kl x^k y^l``, ``Y = sum b_kl x^k y^l``."""

    a: np.ndarray
    b: np.ndarray
    degree: int
    ref_meta: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, degree: int) -> "MapExpansion":
        return cls(np.zeros((degree + 1,) * 2), np.zeros((degree + 1,) * 2), degree)

    @classmethod
    def identity(cls, degree: int) -> "MapExpansion":
        e = cls.zeros(degree)
        e.a[1, 0] = 1.0
        e.b[0, 1] = 1.0
        return e

    @classmethod
    def from_dict(cls, degree: int, a: dict, b: dict, **meta) -> "MapExpansion":
        e = cls.zeros(degree)
        for (k, l), v in a.items():
            if k + l <= degree:
                e.a[k, l] = v
        for (k, l), v in b.items():
            if k + l <= degree:
                e.b[k, l] = v
        e.ref_meta = dict(meta)
        return e

    def __call__(self, x, y):
        return poly_eval(self.a, x, y), poly_eval(self.b, x, y)

    def linear(self) -> np.ndarray:
        return np.array([[self.a[1, 0], self.a[0, 1]], [self.b[1, 0], self.b[0, 1]]])

    def A(self, k: int, l: int) -> float:
        return float(self.a[k, l]) if k + l <= self.degree else 0.0

    def B(self, k: int, l: int) -> float:
        return float(self.b[k, l]) if k + l <= self.degree else 0.0

    def jacobian_det(self) -> np.ndarray:
        """Polynomial of ``det DF`` through degree ``degree - 1`` (the orders fixed by the coefficients)."""
        ax, ay = _dx(self.a), _dy(self.a)
        bx, by = _dx(self.b), _dy(self.b)
        det = poly_mul(ax, by) - poly_mul(ay, bx)
        k, l = np.indices(det.shape)
        det[k + l > self.degree - 1] = 0.0
        return det

    def to_json(self) -> str:
        def dump(p):
            return {f"{k}{l}": float(p[k, l]) for k in range(self.degree + 1)
                    for l in range(self.degree + 1 - k) if k + l >= 1}
        return json.dumps({"a": dump(self.a), "b": dump(self.b), "degree": self.degree}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MapExpansion":
        obj = json.loads(text)
        d = int(obj["degree"])
        conv = lambda m: {(int(key[0]), int(key[1])): v for key, v in m.items()}
        return cls.from_dict(d, conv(obj["a"]), conv(obj["b"]))


def _dx(p):
    r = np.zeros_like(p)
    r[:-1, :] = p[1:, :] * np.arange(1, p.shape[0])[:, None]
    return r


def _dy(p):
    r = np.zeros_like(p)
    r[:, :-1] = p[:, 1:] * np.arange(1, p.shape[0])[None, :]
    return r


def compose(e1: MapExpansion, e2: MapExpansion) -> MapExpansion:
    """Truncated coefficients of ``e2 o e1`` (apply ``e1`` first)."""
    if e1.degree != e2.degree:
        raise ValueError("degree mismatch")
    if e1.a[0, 0] or e1.b[0, 0]:
        raise ValueError("inner expansion must fix the origin")
    return MapExpansion(
        poly_substitute(e2.a, e1.a, e1.b),
        poly_substitute(e2.b, e1.a, e1.b),
        e1.degree,
        {"chain": [e1.ref_meta, e2.ref_meta]},
    )


def compose_all(*maps: MapExpansion) -> MapExpansion:
    """``maps[-1] o ... o maps[0]``."""
    out = maps[0]
    for m in maps[1:]:
        out = compose(out, m)
    return out


def reflection_coeffs(R: float, R1: float, R2: float, phi: float, degree: int = 3) -> MapExpansion:
    """Reflection from the pre- to the post-collision chart.

    ``R, R1, R2`` and ``phi`` are post-collision quantities.  Terms beyond
    cubic order are not available in closed form and are left at zero.
    """
    t = np.tan(phi)
    t2 = t * t
    a = {
        (1, 0): -1.0,
        (2, 0): 0.5 * t * R,
        (2, 1): 0.5 * (1 + 2 * t2) * R,
        (3, 0): (3 * (1 + t2) * R * R + 2 * t * R1) / 12,
    }
    b = {
        (1, 0): -R,
        (0, 1): -1.0,
        (1, 1): -t * R,
        (2, 0): -0.25 * (t * R * R + R1),
        (1, 2): -0.5 * (1 + 2 * t2) * R,
        (2, 1): -0.25 * ((1 + 3 * t2) * R * R + 2 * t * R1),
        (3, 0): -((1 + 3 * t2) * R**3 + 4 * t * R * R1 + R2) / 24,
    }
    return MapExpansion.from_dict(degree, a, b, kind="reflection", R=R, R1=R1, R2=R2, phi=phi)


def expand_reflection(table, ref: PhaseState, degree: int = 3) -> MapExpansion:
    """Expansion of the reflection at the post-collision reference state ``ref``."""
    R, R1, R2 = r_quantities(table, ref.s, ref.phi)
    e = reflection_coeffs(R, R1, R2, ref.phi, degree)
    e.ref_meta["s"] = ref.s
    return e


def expand_flight(taubar: float, degree: int = 3) -> MapExpansion:
    """Free flight ``x -> x + tau sin y`` between Jacobi charts."""
    e = MapExpansion.identity(degree)
    e.a[0, :] += taubar * sin_cos_series(degree)[0]
    e.ref_meta = {"kind": "flight", "tau": taubar}
    return e


def sin_cos_series(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Taylor coefficients of ``sin y`` and ``cos y - 1`` in ``y``."""
    s = np.zeros(degree + 1)
    c = np.zeros(degree + 1)
    for j in range(1, degree + 1):
        if j % 2:
            s[j] = (-1) ** ((j - 1) // 2) / factorial(j)
        else:
            c[j] = (-1) ** (j // 2) / factorial(j)
    return s, c


def chart_shift(p: float, q: float, degree: int = 3, inverse: bool = False) -> MapExpansion:
    """Change between two Jacobi charts sharing a direction reference.

    For base points differing by ``d`` with ``p = d . n(omega_bar)`` and
    ``q = d . v(omega_bar)`` the transverse coordinate moves by
    ``p (cos y - 1) - q sin y``; ``y`` is unchanged.
    """
    s, c = sin_cos_series(degree)
    e = MapExpansion.identity(degree)
    sign = -1.0 if inverse else 1.0
    e.a[0, :] += sign * (p * c - q * s)
    e.ref_meta = {"kind": "shift", "p": p, "q": q}
    return e


def pass_expansion(table, states, taus, degree: int = 3, check: bool = True) -> MapExpansion:
    """Expansion of a pass from the pre-collision chart at ``states[0]`` to
    the post-collision chart at ``states[-1]``.

    Parameters
    ----------
    states : list of PhaseState
        Post-collision states of consecutive reflections of the pass.
    taus : list of float
        Free paths between them.
    """
    maps = [expand_reflection(table, states[0], degree)]
    for st, tau in zip(states[1:], taus):
        maps.append(expand_flight(tau, degree))
        maps.append(expand_reflection(table, st, degree))
    F = compose_all(*maps)
    F.ref_meta = {"kind": "pass", "s": [st.s for st in states], "taus": list(taus)}
    if check:
        if abs(F.b[1, 0]) > 1e-8 or abs(F.a[1, 0] + 1) > 1e-8 or abs(F.b[0, 1] + 1) > 1e-8:
            raise AssumptionError(f"linear part {F.linear().tolist()} is not [[-1, beta], [0, -1]]")
        if abs(F.a[0, 1]) < 1e-8:
            raise AssumptionError("beta vanishes")
    return F


def symmetry_J(degree: int = 3) -> MapExpansion:
    e = MapExpansion.identity(degree)
    e.b[0, 1] = -1.0
    return e


def symmetry_residual(F: MapExpansion) -> float:
    """Largest coefficient of ``J o F o J o F - id``."""
    J = symmetry_J(F.degree)
    G = compose_all(F, J, F, J)
    I = MapExpansion.identity(F.degree)
    return float(max(np.abs(G.a - I.a).max(), np.abs(G.b - I.b).max()))


RELATION_NAMES = (
    "a11", "b20", "b11+2a20", "b02-a01a20", "b30", "b21", "b12", "b03", "a21",
)


def check_symmetry_relations(F: MapExpansion, tol: float = 1e-7) -> dict:
    """Residuals of the nine order-3 relations implied by ``J F J F = id``."""
    a = F.A
    b = F.B
    a01, a02, a12, a20, a30 = a(0, 1), a(0, 2), a(1, 2), a(2, 0), a(3, 0)
    basic = {
        "a10": a(1, 0) + 1.0,
        "b10": b(1, 0),
        "b01": b(0, 1) + 1.0,
    }
    if abs(a01) < 1e-14:
        return {"residuals": {}, "basic": basic, "ok": False, "reason": "a01 vanishes"}
    res = {
        "a11": a(1, 1),
        "b20": b(2, 0),
        "b11+2a20": b(1, 1) + 2 * a20,
        "b02-a01a20": b(0, 2) - a01 * a20,
        "b30": b(3, 0) + 2 * (a20**2 + a30) / a01,
        "b21": b(2, 1) - (3 * a30 + 2 * a20**2),
        "b12": b(1, 2) - (2 * a12 - 2 * a02 * a20 - 3 * a01**2 * a30) / a01,
        "b03": b(0, 3) - (a01**2 * a30 + 2 * a02 * a20 - a12),
        "a21": a(2, 1) - 2 * (a02 * a20 - a12) / a01,
    }
    ok = all(abs(v) < tol for v in res.values()) and all(abs(v) < tol for v in basic.values())
    return {"residuals": res, "basic": basic, "ok": ok}


@dataclass(frozen=True)
class SymmetricCurve:
    """``x = f(y)`` with ``F(f(y), y) = (f(y), -y)``; ``coeffs[j]`` multiplies ``y**j``."""

    coeffs: np.ndarray
    radius: float

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(y, self.coeffs)

    def deriv(self, y):
        return np.polynomial.polynomial.polyval(y, np.polynomial.polynomial.polyder(self.coeffs))


def solve_f(F: MapExpansion) -> SymmetricCurve:
    """Cubic series of the symmetric curve from the expansion coefficients."""
    a01, a02, a03 = F.A(0, 1), F.A(0, 2), F.A(0, 3)
    a20, a30 = F.A(2, 0), F.A(3, 0)
    if abs(a01) < 1e-12:
        raise AssumptionError("a01 vanishes; symmetric curve is degenerate")
    c = np.array([
        0.0,
        a01 / 2,
        a02 / 2 + a01**2 * a20 / 8,
        a03 / 2 + a01 * a02 * a20 / 2 + a01**3 * a20**2 / 16 + a01**3 * a30 / 16,
    ])
    # crude validity radius: where the cubic term matches the linear one
    rad = abs(c[1]) / max(abs(c[2]), np.sqrt(abs(c[1] * c[3])), 1e-300)
    return SymmetricCurve(c, float(min(rad, 1.0)))


def refine_f(F_exact, y: float, x0: float, tol: float = 1e-14, maxiter: int = 30) -> float:
    """Newton refinement of ``F_x(x, y) = x`` against an exact map ``F_exact``."""
    x = x0
    h = 1e-7
    for _ in range(maxiter):
        r = F_exact(x, y)[0] - x
        dr = (F_exact(x + h, y)[0] - F_exact(x - h, y)[0]) / (2 * h) - 1.0
        dx = r / dr
        x -= dx
        if abs(dx) < tol:
            return x
    return x
