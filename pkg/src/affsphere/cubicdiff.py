"""Meromorphic cubic differentials on the plane and the punctured plane.

A differential is stored through its rational coefficient function

    b(z) = N(z) / prod_i (z - p_i)^{m_i},

understood as b(z) dz^3.  Everything downstream (pole orders, third-order
residues, sector decompositions at higher-order poles, half-plane charts)
is derived from this representation.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

INFINITY = "infinity"

_DOMAINS = ("plane", "punctured-plane")


class PoleEvaluationError(ZeroDivisionError):
    """Evaluation point coincides with a pole."""


class UnsupportedOrderError(ValueError):
    """Half-plane charts do not exist when 3 divides n."""


def _trim(coeffs):
    c = [complex(x) for x in coeffs]
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return tuple(c)


def _poly_eval(coeffs, z):
    acc = 0j
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def _poly_eval_array(coeffs, z):
    acc = np.zeros_like(z, dtype=complex)
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def _poly_derivative(coeffs):
    d = tuple(k * c for k, c in enumerate(coeffs))[1:]
    return d if d else (0j,)


def _deflate(coeffs, root):
    """Synthetic division of an ascending-coefficient polynomial by (z - root).

    Returns (quotient, remainder).
    """
    rev = list(reversed(coeffs))
    out = [rev[0]]
    for c in rev[1:]:
        out.append(c + root * out[-1])
    rem = out.pop()
    if not out:
        out = [0j]
    return tuple(reversed(out)), rem


def _zero_order(coeffs, p, rtol=1e-10):
    """Vanishing order of the polynomial at p, with a relative tolerance."""
    c = _trim(coeffs)
    order = 0
    while len(c) >= 1:
        scale = sum(abs(ck) * max(1.0, abs(p)) ** k for k, ck in enumerate(c))
        if scale == 0.0:
            break
        if abs(_poly_eval(c, p)) > rtol * scale:
            break
        if len(c) == 1:
            break
        c, _ = _deflate(c, p)
        order += 1
    return order


@dataclass(frozen=True)
class CubicDifferential:
    """Rational cubic differential N(z) / prod (z - p_i)^{m_i} dz^3.

    numerator holds ascending coefficients of N; poles is a tuple of
    (location, multiplicity) pairs with distinct locations.
    """

    numerator: tuple
    poles: tuple = ()
    domain: str = "plane"

    def __post_init__(self):
        num = _trim(self.numerator)
        if all(c == 0 for c in num):
            raise ValueError("numerator must not vanish identically")
        poles = tuple((complex(p), int(m)) for p, m in self.poles)
        locs = [p for p, _ in poles]
        if len(set(locs)) != len(locs):
            raise ValueError("pole locations must be pairwise distinct")
        if any(m < 1 for _, m in poles):
            raise ValueError("pole multiplicities must be >= 1")
        if self.domain not in _DOMAINS:
            raise ValueError(f"domain must be one of {_DOMAINS}")
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "poles", poles)

    @classmethod
    def polynomial(cls, *coeffs):
        """b = (c0 + c1 z + ...) dz^3 with no finite poles."""
        return cls(numerator=tuple(coeffs), poles=(), domain="plane")

    @classmethod
    def zpow(cls, coeff, power, domain=None):
        """Monomial differential coeff * z^power dz^3."""
        if power >= 0:
            num = (0j,) * power + (complex(coeff),)
            return cls(numerator=num, poles=(), domain=domain or "plane")
        return cls(
            numerator=(complex(coeff),),
            poles=((0j, -power),),
            domain=domain or "punctured-plane",
        )

    @property
    def numerator_degree(self):
        return len(self.numerator) - 1

    @property
    def denominator_degree(self):
        return sum(m for _, m in self.poles)

    def evaluate(self, z):
        z = complex(z)
        den = 1.0 + 0j
        for p, m in self.poles:
            d = z - p
            if d == 0:
                raise PoleEvaluationError(f"evaluation at pole z = {p}")
            den *= d**m
        if den == 0:
            raise PoleEvaluationError(f"denominator underflow at z = {z}")
        return _poly_eval(self.numerator, z) / den

    def evaluate_array(self, z):
        """Vectorized evaluation; nodes at poles come back as inf/nan."""
        z = np.asarray(z, dtype=complex)
        den = np.ones_like(z)
        for p, m in self.poles:
            den = den * (z - p) ** m
        with np.errstate(divide="ignore", invalid="ignore"):
            return _poly_eval_array(self.numerator, z) / den

    def log_derivative(self, z):
        """b'(z)/b(z), valid away from poles and zeros of the numerator."""
        z = complex(z)
        nval = _poly_eval(self.numerator, z)
        if nval == 0:
            raise ZeroDivisionError("logarithmic derivative at a zero of b")
        out = _poly_eval(_poly_derivative(self.numerator), z) / nval
        for p, m in self.poles:
            out -= m / (z - p)
        return out

    def finite_zero_radius(self):
        """Radius bounding all finite zeros of the numerator."""
        if self.numerator_degree == 0:
            return 0.0
        roots = np.roots(list(reversed(self.numerator)))
        return float(max(abs(r) for r in roots)) if len(roots) else 0.0


def evaluate(b, z):
    """Coefficient value b(z); scalar or array following the input shape."""
    if np.ndim(z) == 0:
        return b.evaluate(z)
    return b.evaluate_array(np.asarray(z, dtype=complex))


def dilate(b, c):
    """Pullback of b under z -> c z, i.e. c^3 b(c z) dz^3."""
    c = complex(c)
    if c == 0:
        raise ValueError("dilation factor must be nonzero")
    shift = 3 - b.denominator_degree
    num = tuple(a * c ** (k + shift) for k, a in enumerate(b.numerator))
    poles = tuple((p / c, m) for p, m in b.poles)
    return CubicDifferential(numerator=num, poles=poles, domain=b.domain)


@dataclass(frozen=True)
class PoleAnalysis:
    location: object  # complex or INFINITY
    order: int
    residue: complex = None
    n: int = None


def _laurent_cm3(b, p, radius, nodes=2048):
    """Coefficient of (z - p)^{-3} by a trapezoid contour integral."""
    phi = 2.0 * math.pi * np.arange(nodes) / nodes
    zs = p + radius * np.exp(1j * phi)
    vals = b.evaluate_array(zs)
    return complex(radius**3 * np.mean(vals * np.exp(3j * phi)))


def _laurent_cm3_at_infinity(b, nodes=4096):
    """Coefficient of z^{-3} in the expansion of b at infinity."""
    r = 2.0 * (1.0 + max([abs(p) for p, _ in b.poles], default=0.0))
    r = max(r, 2.0 * (1.0 + b.finite_zero_radius()))
    return _laurent_cm3(b, 0j, r, nodes)


def classify_pole(b, location):
    """Order, third-order residue, and n = order - 3 at a declared pole.

    At infinity the order is deg N - deg D + 6; non-poles come back with
    order 0 (removable).  The residue is only defined at order exactly 3.
    """
    if location == INFINITY or (
        isinstance(location, float) and math.isinf(location)
    ):
        order = b.numerator_degree - b.denominator_degree + 6
        if order <= 0:
            return PoleAnalysis(location=INFINITY, order=0)
        if order == 3:
            # b(z) dz^3 = -b(1/w) w^{-6} dw^3 under w = 1/z, so the
            # residue at infinity is minus the z^{-3} Laurent coefficient.
            return PoleAnalysis(
                location=INFINITY, order=3, residue=-_laurent_cm3_at_infinity(b)
            )
        return PoleAnalysis(location=INFINITY, order=order, n=order - 3)

    p = complex(location)
    declared = {q: m for q, m in b.poles}
    if p not in declared:
        raise ValueError(f"{p} is not a declared pole location")
    m = declared[p]
    order = m - _zero_order(b.numerator, p)
    if order <= 0:
        return PoleAnalysis(location=p, order=0)
    if order == 3:
        others = [abs(p - q) for q, _ in b.poles if q != p]
        radius = 0.5 * min(others) if others else 1.0
        return PoleAnalysis(location=p, order=3, residue=_laurent_cm3(b, p, radius))
    if order >= 4:
        return PoleAnalysis(location=p, order=order, n=order - 3)
    return PoleAnalysis(location=p, order=order)


# ---------------------------------------------------------------------------
# sector decompositions at a pole of order n + 3 >= 4
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectorDecomposition:
    """Rays and stable sectors at a higher-order pole.

    Wall rays sit at 2 pi k / n, unstable rays at odd multiples of
    pi / (2n).  The stable sectors come in two interleaved families:
    vertex sectors S_k centered between consecutive walls and edge
    sectors S_{k,k+1} centered on the walls, each of width pi / n.
    """

    n: int
    wall_rays: tuple
    unstable_rays: tuple
    stable_vertex: tuple  # (lo, hi) intervals, lo reduced to [0, 2 pi)
    stable_edge: tuple

    def classify_angle(self, theta, eps=1e-9):
        """Label of theta in [0, 2 pi): wall / unstable / stable sector."""
        q = theta * self.n / math.pi
        m = round(q)
        if abs(q - m) <= eps:
            if m % 2 == 0:
                return ("wall", (m // 2) % self.n)
            return ("stable-vertex", ((m + 1) // 2 - 1) % self.n + 1)
        m2 = round(q - 0.5)
        if abs(q - 0.5 - m2) <= eps:
            if m2 % 2 == 0:
                return ("unstable-", (m2 // 2) % self.n + 1)
            return ("unstable+", ((m2 + 1) // 2 - 1) % self.n + 1)
        c = round(q)
        if c % 2 == 0:
            return ("stable-edge", (c // 2) % self.n)
        return ("stable-vertex", ((c + 1) // 2 - 1) % self.n + 1)


def special_sectors(n):
    if n < 1:
        raise ValueError("sector decomposition needs n >= 1")
    walls = tuple(2.0 * math.pi * k / n for k in range(n))
    unstable = tuple((2 * j + 1) * math.pi / (2 * n) for j in range(2 * n))
    width = math.pi / n
    sv = []
    se = []
    for k in range(1, n + 1):
        lo = ((4 * k - 3) * math.pi / (2 * n)) % (2.0 * math.pi)
        sv.append((lo, lo + width))
    for k in range(n):
        lo = ((4 * k - 1) * math.pi / (2 * n)) % (2.0 * math.pi)
        se.append((lo, lo + width))
    return SectorDecomposition(
        n=n,
        wall_rays=walls,
        unstable_rays=unstable,
        stable_vertex=tuple(sv),
        stable_edge=tuple(se),
    )


@dataclass(frozen=True)
class WindingLabel:
    """Sector label on the universal cover; k runs over all integers."""

    kind: str  # "wall" | "unstable-" | "unstable+" | "stable-vertex" | "stable-edge"
    k: int


def winding_sector_label(theta, n, eps=1e-9):
    """Label of a winding angle without reduction mod 2 pi.

    Walls C_{k,k+1} sit at theta = 2 pi k / n for integer k (so the label
    at theta - 2 pi is the label at theta with k shifted down by n).
    """
    if n < 1:
        raise ValueError("winding labels need n >= 1")
    q = theta * n / math.pi
    m = round(q)
    if abs(q - m) <= eps:
        if m % 2 == 0:
            return WindingLabel("wall", m // 2)
        return WindingLabel("stable-vertex", (m + 1) // 2)
    m2 = round(q - 0.5)
    if abs(q - 0.5 - m2) <= eps:
        if m2 % 2 == 0:
            return WindingLabel("unstable-", m2 // 2 + 1)
        return WindingLabel("unstable+", (m2 + 1) // 2)
    c = round(q)
    if c % 2 == 0:
        return WindingLabel("stable-edge", c // 2)
    return WindingLabel("stable-vertex", (c + 1) // 2)


# ---------------------------------------------------------------------------
# half-plane charts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HalfPlaneChart:
    """Chart Phi_k from the closed upper half-plane into a sector at a pole.

    Phi_k(zeta) = (2^{1/3} n / 3)^{-3/n} exp(-(3/n) Log(zeta + B) + (2k+1) pi i / n)

    with the principal logarithm.  The pullback of the normal-form
    differential z^{-n-3} dz^3 under Phi_k is 2 dzeta^3.
    """

    n: int
    k: int
    shift: float  # the positive offset B

    @property
    def prefactor(self):
        return (2.0 ** (1.0 / 3.0) * self.n / 3.0) ** (-3.0 / self.n)

    @property
    def phase(self):
        return cmath.exp((2 * self.k + 1) * math.pi * 1j / self.n)

    def map(self, zeta):
        zeta = complex(zeta)
        return self.prefactor * self.phase * cmath.exp(
            -(3.0 / self.n) * cmath.log(zeta + self.shift)
        )

    def derivative(self, zeta):
        zeta = complex(zeta)
        return -(3.0 / self.n) * self.map(zeta) / (zeta + self.shift)


def half_plane_chart(analysis, k, shift):
    """Half-plane chart at a pole of order n + 3 >= 4 with 3 not dividing n."""
    if analysis.order < 4 or analysis.n is None:
        raise ValueError("half-plane charts need a pole of order >= 4")
    n = analysis.n
    if n % 3 == 0:
        raise UnsupportedOrderError(f"no half-plane chart when 3 divides n = {n}")
    if not shift > 0:
        raise ValueError("the offset B must be positive")
    return HalfPlaneChart(n=n, k=int(k), shift=float(shift))


def chart_pullback_residual(chart, b, zeta):
    """b(Phi(zeta)) Phi'(zeta)^3 - 2 with Phi' by central differences.

    The step is 1e-4 * max(1, |zeta|); for a normal-form differential the
    result is at the finite-difference floor.
    """
    zeta = complex(zeta)
    h = 1e-4 * max(1.0, abs(zeta))
    dphi = (chart.map(zeta + h) - chart.map(zeta - h)) / (2.0 * h)
    return b.evaluate(chart.map(zeta)) * dphi**3 - 2.0
