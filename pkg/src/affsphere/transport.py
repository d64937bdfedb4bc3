"""Flat SL(3, R) connections of Wang metrics and their parallel transport.

The structure equations of an affine sphere over a conformal metric
h = e^w |dz|^2 with cubic differential b dz^3 produce a flat connection.
In the equilateral frame (the real basis in which the Titeica solution
diagonalizes) the connection matrix in a direction d is

    A(d) = Re( B^{-1} M(d) B ),

    M(d) = [[ i Im(w_z d),  (conj b / h) conj d,  sqrt(h/2) d      ],
            [ (b/h) d,      -i Im(w_z d),         sqrt(h/2) conj d ],
            [ sqrt(h/2) conj d,  sqrt(h/2) d,     0                ]]

which is real trace-free whenever w is real, so transports stay
unimodular.  Transport matrices are integrated with classical RK4 and
held in a scale-split representation to survive exponential growth.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

OMEGA = complex(-0.5, math.sqrt(3.0) / 2.0)

_B = np.array(
    [[1, OMEGA, OMEGA**2], [1, OMEGA**2, OMEGA], [1, 1, 1]], dtype=complex
)
_BINV = (
    np.array([[1, 1, 1], [OMEGA**2, OMEGA, 1], [OMEGA, OMEGA**2, 1]], dtype=complex)
    / 3.0
)

_LOG2 = math.log(2.0)
_LOG2_THIRD = _LOG2 / 3.0


class ComplexityLeakError(ArithmeticError):
    """The frame change failed to produce a real matrix."""


class StepUnderflowError(RuntimeError):
    """Adaptive step control collapsed below the minimum step."""


def base_change():
    """The frame-change pair (B, B^{-1}) between complexified and real frames."""
    return _B.copy(), _BINV.copy()


# ---------------------------------------------------------------------------
# scale-split unimodular matrices
# ---------------------------------------------------------------------------

_FRO_LO = 0.125
_FRO_HI = 8.0


@dataclass(frozen=True)
class SL3:
    """A unimodular matrix represented as exp(log_scale) * entries.

    entries keeps a moderate Frobenius norm; log_scale absorbs the
    exponential growth of long transports.  The represented determinant
    is one: log det(entries) + 3 log_scale = 0 up to rounding.
    """

    entries: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.shape != (3, 3):
            raise ValueError("entries must be 3x3")
        sign, ld = np.linalg.slogdet(e)
        if sign < 0:
            # Rounding noise in a matrix whose singular values spread past
            # machine precision produces determinants of either sign with
            # magnitude about eps * |e|^3; only a determinant clearly above
            # that floor witnesses a genuine reflection.
            fro = float(np.linalg.norm(e))
            if math.isfinite(ld) and math.exp(min(ld, 700.0)) > 1e-12 * fro**3:
                raise ValueError("entries must have positive determinant")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "log_scale", float(self.log_scale))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), 0.0)

    @classmethod
    def from_matrix(cls, m, log_scale=0.0, project=False):
        out = cls(np.array(m, dtype=float), log_scale).renormalized()
        return out.det_projected() if project else out

    def renormalized(self):
        """Rescale entries by powers of two into the working Frobenius band."""
        e = self.entries
        ls = self.log_scale
        fro = float(np.linalg.norm(e))
        if fro == 0.0 or not math.isfinite(fro):
            raise ValueError("entries norm must be finite and nonzero")
        k = 0
        while fro > _FRO_HI:
            fro *= 0.5
            k += 1
        while fro < _FRO_LO:
            fro *= 2.0
            k -= 1
        if k == 0:
            return self
        return SL3(e * 2.0**-k, ls + k * _LOG2)

    def det_projected(self):
        """Rescale entries so the represented determinant is exactly one.

        Left untouched when the computed determinant is noise-dominated
        (nonpositive sign or non-finite log), since a correction against
        noise would corrupt the state.
        """
        sign, ld = np.linalg.slogdet(self.entries)
        if sign <= 0 or not math.isfinite(ld):
            return self
        drift = ld + 3.0 * self.log_scale
        if drift == 0.0:
            return self
        return SL3(self.entries * math.exp(-drift / 3.0), self.log_scale)

    def represented(self):
        return self.entries * math.exp(self.log_scale)

    def unimodularity_defect(self):
        _, ld = np.linalg.slogdet(self.entries)
        return abs(ld + 3.0 * self.log_scale)

    def compose(self, other):
        """Matrix product self @ other in the represented sense."""
        return SL3(
            self.entries @ other.entries, self.log_scale + other.log_scale
        ).renormalized()

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        return SL3(np.linalg.inv(self.entries), -self.log_scale).renormalized()

    def apply(self, vec):
        """Represented action on a 3-vector (up to overall scale exp(ls))."""
        return self.entries @ np.asarray(vec, dtype=float), self.log_scale

    def eigenvalues(self):
        """Eigenvalues of the represented matrix, overflow-safe."""
        return np.linalg.eigvals(self.entries) * math.exp(self.log_scale)

    def frobenius_distance(self, other):
        return float(np.linalg.norm(self.represented() - other.represented()))

    def to_json(self):
        return {
            "entries": [[float(x) for x in row] for row in self.entries],
            "logScale": float(self.log_scale),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(np.array(doc["entries"], dtype=float), float(doc["logScale"]))


# ---------------------------------------------------------------------------
# connection samplers
# ---------------------------------------------------------------------------


def equilateral_real_form(w, dw, bval, direction, leak_tol=1e-8):
    """Connection matrix A(direction) in the equilateral real frame.

    w is the real log conformal factor, dw its z-derivative, bval the
    cubic differential coefficient at the point.
    """
    h = math.exp(w)
    rt = math.sqrt(h / 2.0)
    d = complex(direction)
    cd = d.conjugate()
    diag = 1j * (dw * d).imag
    binv_over_h = bval / h
    m = np.array(
        [
            [diag, binv_over_h.conjugate() * cd, rt * d],
            [binv_over_h * d, -diag, rt * cd],
            [rt * cd, rt * d, 0.0],
        ],
        dtype=complex,
    )
    a = _BINV @ m @ _B
    leak = float(np.max(np.abs(a.imag)))
    if leak > leak_tol:
        raise ComplexityLeakError(f"imaginary leak {leak:.3e} in frame change")
    return a.real


class _FieldSpline:
    """Bicubic interpolant of a gridded real field with derivative access."""

    def __init__(self, grid, values):
        from scipy.interpolate import RectBivariateSpline

        self._sp = RectBivariateSpline(grid.ys, grid.xs, values, kx=3, ky=3, s=0)

    def value(self, z):
        return float(self._sp.ev(z.imag, z.real))

    def gradient(self, z):
        gx = float(self._sp.ev(z.imag, z.real, dy=1))
        gy = float(self._sp.ev(z.imag, z.real, dx=1))
        return gx, gy


@dataclass(frozen=True)
class ConnectionSampler:
    """Pointwise access to (w, w_z, b) for the structure connection.

    mode selects how the metric is produced:
      flat-chart       w = log 2, b = 2                (exact Titeica plane)
      chart-field      w = log 2 + u(zeta), b = 2      (solved chart metric)
      exact-cstar      closed form for b = R z^{-3}
      model-flat       w = log(2^{1/3} |b|^{2/3})      (zero-u reference)
      raw-field        solved w sampled by spline, rational b
    """

    mode: str
    b: object = None
    residue: complex = None
    spline: object = field(default=None, compare=False)
    grid: object = field(default=None, compare=False)

    # -- constructors -------------------------------------------------

    @classmethod
    def flat_chart(cls):
        return cls(mode="flat-chart")

    @classmethod
    def chart_from_field(cls, u_field):
        w = np.where(np.isfinite(u_field.values), u_field.values, 0.0) + _LOG2
        return cls(
            mode="chart-field",
            spline=_FieldSpline(u_field.grid, w),
            grid=u_field.grid,
        )

    @classmethod
    def exact_cstar(cls, residue):
        from .cubicdiff import CubicDifferential

        residue = complex(residue)
        if residue == 0:
            raise ValueError("the residue must be nonzero")
        return cls(
            mode="exact-cstar",
            b=CubicDifferential.zpow(residue, -3),
            residue=residue,
        )

    @classmethod
    def model_flat(cls, b):
        return cls(mode="model-flat", b=b)

    @classmethod
    def raw_from_field(cls, w_field, b, fill=None):
        vals = np.array(w_field.values, dtype=float)
        bad = ~np.isfinite(vals)
        if w_field.grid.mask is not None:
            bad |= w_field.grid.mask
        if bad.any():
            if fill is not None:
                vals[bad] = np.asarray(fill, dtype=float)[bad]
            else:
                vals[bad] = float(np.median(vals[~bad]))
        return cls(
            mode="raw-field",
            b=b,
            spline=_FieldSpline(w_field.grid, vals),
            grid=w_field.grid,
        )

    # -- sampling -----------------------------------------------------

    def state(self, z):
        """(w, w_z, b) at the point z of the working coordinate."""
        z = complex(z)
        if self.mode == "flat-chart":
            return _LOG2, 0j, 2.0 + 0j
        if self.mode == "chart-field":
            w = self.spline.value(z)
            gx, gy = self.spline.gradient(z)
            return w, complex(gx, -gy) / 2.0, 2.0 + 0j
        if self.mode == "exact-cstar":
            r = abs(z)
            if r == 0:
                raise ZeroDivisionError("the exact C* metric is singular at 0")
            w = _LOG2_THIRD + (2.0 / 3.0) * math.log(abs(self.residue)) - 2.0 * math.log(r)
            return w, -1.0 / z, self.residue / z**3
        if self.mode == "model-flat":
            bval = self.b.evaluate(z)
            if bval == 0:
                # the reference metric degenerates at zeros of b; the
                # connection matrix still vanishes continuously there
                return -745.0, 0j, 0j
            w = _LOG2_THIRD + (2.0 / 3.0) * math.log(abs(bval))
            return w, self.b.log_derivative(z) / 3.0, bval
        if self.mode == "raw-field":
            w = self.spline.value(z)
            gx, gy = self.spline.gradient(z)
            return w, complex(gx, -gy) / 2.0, self.b.evaluate(z)
        raise ValueError(f"unknown sampler mode {self.mode!r}")

    def b_at(self, z):
        if self.mode in ("flat-chart", "chart-field"):
            return 2.0 + 0j
        return self.b.evaluate(complex(z))

    def matrix(self, z, direction):
        w, dw, bval = self.state(z)
        return equilateral_real_form(w, dw, bval, direction)


def connection_matrix(sampler, z, direction):
    """Real 3x3 connection matrix of the sampler at z in a unit direction."""
    return sampler.matrix(complex(z), complex(direction))


# ---------------------------------------------------------------------------
# paths and transport
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSpec:
    """Piecewise-linear path in the working coordinate.

    With flat_arclength the step budget is measured in the |b|^{2/3}
    metric instead of Euclidean length; max_step bounds the parameter
    step either way and shrinks further with the local connection norm.
    """

    vertices: tuple
    flat_arclength: bool = False
    max_step: float = 0.01
    min_step: float = 1e-12

    def __post_init__(self):
        verts = tuple(complex(v) for v in self.vertices)
        if len(verts) < 2:
            raise ValueError("a path needs at least two vertices")
        for a, bb in zip(verts, verts[1:]):
            if a == bb:
                raise ValueError("consecutive path vertices must be distinct")
        if not (self.max_step > 0):
            raise ValueError("max_step must be positive")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def circle(cls, center, radius, segments=64, ccw=True, **kw):
        center = complex(center)
        sgn = 1.0 if ccw else -1.0
        verts = [
            center + radius * cmath.exp(sgn * 2j * math.pi * j / segments)
            for j in range(segments)
        ]
        verts.append(verts[0])
        return cls(tuple(verts), **kw)

    def is_closed(self, tol=0.0):
        return abs(self.vertices[0] - self.vertices[-1]) <= tol

    def reversed(self):
        return replace(self, vertices=tuple(reversed(self.vertices)))

    def euclidean_length(self):
        return sum(abs(b - a) for a, b in zip(self.vertices, self.vertices[1:]))


def _rk4_matrix_step(mats, a1, a2, a4, dt):
    """One classical RK4 step of S' = S A for a list of matrices.

    The connection is supplied at the three stage points (start, mid,
    end); the midpoint value serves both central stages.
    """
    out = []
    for s, m1, m2, m4 in zip(mats, a1, a2, a4):
        k1 = s @ m1
        k2 = (s + 0.5 * dt * k1) @ m2
        k3 = (s + 0.5 * dt * k2) @ m2
        k4 = (s + dt * k3) @ m4
        out.append(s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    return out


def _normalize_state(entries, log_scale):
    fro = float(np.linalg.norm(entries))
    if not math.isfinite(fro) or fro == 0.0:
        raise ArithmeticError("transport matrix lost finiteness")
    k = 0
    while fro > _FRO_HI:
        fro *= 0.5
        k += 1
    while fro < _FRO_LO:
        fro *= 2.0
        k -= 1
    if k:
        entries = entries * 2.0**-k
        log_scale += k * _LOG2
    # Re-project onto unit determinant only while the determinant of the
    # scaled entries is numerically trustworthy.  Once the singular values
    # spread past machine precision the computed determinant (sign
    # included) is pure rounding noise, so correcting against it would
    # corrupt the state; the Frobenius window alone keeps things finite.
    sign, ld = np.linalg.slogdet(entries)
    if sign > 0:
        drift = ld + 3.0 * log_scale
        if abs(drift) < 0.5:
            entries = entries * math.exp(-drift / 3.0)
    return entries, log_scale


def _integrate_legs(samplers, legs, record=None):
    """Integrate S' = S A along a sequence of legs for several samplers.

    Legs are ("linear", z0, z1) segments or ("flow", z0, direction, length)
    pieces that follow a straight line of the flat coordinate by solving
    dz/dt = direction * (b(z)/2)^{-1/3} with a branch-continuous cube
    root.  All samplers share the step sequence.  record, if given, is
    called with (t_total, z, states) after every accepted step.
    """
    states = [(np.eye(3), 0.0) for _ in samplers]
    t_total = 0.0
    branch = [None]  # mutable cube-root branch memory across legs

    def cbrt_near(val):
        root = val ** (1.0 / 3.0)
        if branch[0] is None:
            branch[0] = root
            return root
        cands = (root, root * OMEGA, root * OMEGA**2)
        best = min(cands, key=lambda c: abs(c - branch[0]))
        branch[0] = best
        return best

    if record is not None:
        record(0.0, complex(legs[0][1]), states)

    z_end = complex(legs[0][1])
    for leg in legs:
        kind = leg[0]
        if kind == "linear":
            _, z0, z1 = leg
            z0, z1 = complex(z0), complex(z1)
            seglen = abs(z1 - z0)
            unit = (z1 - z0) / seglen
            primary = samplers[0]
            flat = getattr(primary, "_flat_steps", False)
            t = 0.0
            tail_eps = 1e-12 * max(1.0, seglen)
            # the end-stage evaluation of each step doubles as the
            # start-stage of the next, so the connection is sampled twice
            # per accepted step instead of four times
            a1 = [s.matrix(z0, unit) for s in samplers]
            while t < seglen - tail_eps:
                z = z0 + unit * t
                norm = max(float(np.linalg.norm(m)) for m in a1)
                cap = primary._max_step
                if flat:
                    bmag = abs(primary.b_at(z) / 2.0) ** (1.0 / 3.0)
                    if bmag > 0:
                        cap = primary._max_step / bmag
                dt = min(cap, seglen - t)
                if norm > 0:
                    dt = min(dt, 0.5 / norm)
                if dt < primary._min_step:
                    raise StepUnderflowError(f"step {dt:.3e} under the floor")

                a2 = [s.matrix(z0 + unit * (t + 0.5 * dt), unit) for s in samplers]
                a4 = [s.matrix(z0 + unit * (t + dt), unit) for s in samplers]
                new = _rk4_matrix_step([e for e, _ in states], a1, a2, a4, dt)
                states = [
                    _normalize_state(e, ls) for e, (_, ls) in zip(new, states)
                ]
                a1 = a4
                t += dt
                t_total += dt
                if record is not None:
                    record(t_total, z0 + unit * t, states)
            z_end = z1
        elif kind == "flow":
            _, z0, direction, length = leg
            z0 = complex(z0)
            direction = complex(direction) / abs(complex(direction))
            primary = samplers[0]
            t = 0.0
            z = z0
            tail_eps = 1e-12 * max(1.0, length)
            v0 = direction / cbrt_near(primary.b_at(z) / 2.0)
            a1 = [s.matrix(z, v0) for s in samplers]
            while t < length - tail_eps:
                norm = max(float(np.linalg.norm(m)) for m in a1)
                dt = min(primary._max_step, length - t)
                if norm > 0:
                    dt = min(dt, 0.5 / norm)
                speed = abs(v0)
                if speed > 0:
                    dt = min(dt, 0.2 / speed)
                if dt < primary._min_step:
                    raise StepUnderflowError(f"step {dt:.3e} under the floor")

                # joint RK4 on (z, S): the position update only needs b
                def vel(zz):
                    return direction / cbrt_near(primary.b_at(zz) / 2.0)

                k1 = v0
                k2 = vel(z + 0.5 * dt * k1)
                k3 = vel(z + 0.5 * dt * k2)
                k4 = vel(z + dt * k3)
                z_mid = z + 0.5 * dt * k1
                z_next = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

                a2 = [s.matrix(z_mid, k2) for s in samplers]
                a4 = [s.matrix(z_next, k4) for s in samplers]
                new = _rk4_matrix_step([e for e, _ in states], a1, a2, a4, dt)
                states = [
                    _normalize_state(e, ls) for e, (_, ls) in zip(new, states)
                ]
                z = z_next
                v0 = direction / cbrt_near(primary.b_at(z) / 2.0)
                a1 = [s.matrix(z, v0) for s in samplers]
                t += dt
                t_total += dt
                if record is not None:
                    record(t_total, z, states)
            z_end = z
        else:
            raise ValueError(f"unknown leg kind {kind!r}")

    return [SL3(e, ls) for e, ls in states], z_end


def _attach_step_params(sampler, path_or_step, flat=False):
    """Stash step control on the sampler object for the integrator core."""
    if isinstance(path_or_step, PathSpec):
        object.__setattr__(sampler, "_max_step", path_or_step.max_step)
        object.__setattr__(sampler, "_min_step", path_or_step.min_step)
        object.__setattr__(sampler, "_flat_steps", path_or_step.flat_arclength)
    else:
        object.__setattr__(sampler, "_max_step", float(path_or_step))
        object.__setattr__(sampler, "_min_step", 1e-12)
        object.__setattr__(sampler, "_flat_steps", flat)
    return sampler


def _legs_of_path(path):
    return [("linear", a, bb) for a, bb in zip(path.vertices, path.vertices[1:])]


def parallel_transport(sampler, path):
    """Transport matrix of the connection along the path.

    The returned matrix carries frame data at the path's end back to its
    start: for the flat chart metric it reproduces titeica_transport of
    the displacement, and concatenation composes left-to-right,
    T(alpha then beta) = T(alpha) @ T(beta).
    """
    _attach_step_params(sampler, path)
    mats, _ = _integrate_legs([sampler], _legs_of_path(path))
    return mats[0]


def titeica_transport(zeta):
    """Closed-form flat-chart transport along a segment from 0 to zeta.

    Diagonal with entries exp(2 Re zeta), exp(2 Re(omega^2 zeta)),
    exp(2 Re(omega zeta)).
    """
    zeta = complex(zeta)
    exps = np.array(
        [
            2.0 * zeta.real,
            2.0 * (OMEGA**2 * zeta).real,
            2.0 * (OMEGA * zeta).real,
        ]
    )
    m = float(np.max(exps)) - 0.5
    return SL3(np.diag(np.exp(exps - m)), m).renormalized().det_projected()


# ---------------------------------------------------------------------------
# sector pairing weights
# ---------------------------------------------------------------------------


def varpi(i, j, theta):
    """Pairing weight 2 Re((omega^{1-i} - omega^{1-j}) e^{i theta})."""
    i, j = int(i), int(j)
    if i == j or not (1 <= i <= 3 and 1 <= j <= 3):
        raise ValueError("indices must be distinct elements of {1, 2, 3}")
    wi = OMEGA ** ((1 - i) % 3)
    wj = OMEGA ** ((1 - j) % 3)
    return 2.0 * ((wi - wj) * cmath.exp(1j * theta)).real


VARPI_MAX = 2.0 * math.sqrt(3.0)


def varpi_max(theta, tie_tol=1e-9):
    """Maximum of varpi over ordered pairs, with ties reported as a tuple."""
    pairs = [(i, j) for i in (1, 2, 3) for j in (1, 2, 3) if i != j]
    vals = {p: varpi(p[0], p[1], theta) for p in pairs}
    best = max(vals.values())
    cut = best - tie_tol * (1.0 + abs(best))
    winners = tuple(p for p in pairs if vals[p] >= cut)
    return best, winners
