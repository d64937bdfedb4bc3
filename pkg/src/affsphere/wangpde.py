"""Finite-difference solver for Wang's equation.

For w = log h the equation reads

    F(w) = Lap w - 2 e^w + 4 |b|^2 e^{-2w} = 0,

discretized with the 5-point Laplacian on a rectangular grid, Dirichlet
data on the outer rim and around masked cells.  The solver runs damped
Newton from an explicit discrete supersolution, with iterates clamped
between barriers built from the flat candidate log(2^{1/3} |b|^{2/3})
and a hyperbolic comparison factor; the linear systems are symmetric
negative definite and are solved by conjugate gradients with a
red-black Gauss-Seidel preconditioner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_ROOT_THREE = 2.0 * math.sqrt(3.0)
_LOG2_THIRD = math.log(2.0) / 3.0


class NonConvergenceError(RuntimeError):
    pass


class PreconditionError(ValueError):
    """A hypothesis required by a validator fails on the supplied data."""


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Rectangular node grid; mask marks excluded nodes (True = excluded)."""

    origin: complex
    hx: float
    hy: float
    nx: int
    ny: int
    mask: np.ndarray = None

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grids need at least 3 nodes per direction")
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError("grid spacings must be positive")
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool)
            if m.shape != (self.ny, self.nx):
                raise ValueError("mask shape must be (ny, nx)")
            object.__setattr__(self, "mask", m)
        object.__setattr__(self, "origin", complex(self.origin))

    @property
    def xs(self):
        return self.origin.real + self.hx * np.arange(self.nx)

    @property
    def ys(self):
        return self.origin.imag + self.hy * np.arange(self.ny)

    def zmesh(self):
        return self.xs[None, :] + 1j * self.ys[:, None]

    def unmasked(self):
        if self.mask is None:
            return np.ones((self.ny, self.nx), dtype=bool)
        return ~self.mask

    def interior(self):
        """Unknown nodes: unmasked, off the outer rim, all 4 neighbors unmasked."""
        ok = self.unmasked()
        inner = np.zeros_like(ok)
        inner[1:-1, 1:-1] = (
            ok[1:-1, 1:-1]
            & ok[1:-1, 2:]
            & ok[1:-1, :-2]
            & ok[2:, 1:-1]
            & ok[:-2, 1:-1]
        )
        return inner

    def rim(self):
        """Unmasked nodes that carry Dirichlet data."""
        return self.unmasked() & ~self.interior()

    @classmethod
    def square(cls, half_extent, n, center=0j, mask=None):
        h = 2.0 * half_extent / (n - 1)
        origin = complex(center) - half_extent - 1j * half_extent
        return cls(origin=origin, hx=h, hy=h, nx=n, ny=n, mask=mask)

    @classmethod
    def annulus(cls, r_inner, r_outer, n, center=0j):
        """Square box of half-extent r_outer with the inner disk masked."""
        g = cls.square(r_outer, n, center=center)
        mask = np.abs(g.zmesh() - center) < r_inner
        return cls.square(r_outer, n, center=center, mask=mask)

    @classmethod
    def disk(cls, radius, n, center=0j, pad=0.1):
        """Square box slightly larger than the disk, exterior masked."""
        g = cls.square(radius * (1.0 + pad), n, center=center)
        mask = np.abs(g.zmesh() - center) > radius
        return cls.square(radius * (1.0 + pad), n, center=center, mask=mask)


@dataclass
class ScalarField:
    grid: Grid2D
    values: np.ndarray
    role: str = "w"
    diagnostics: dict = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.ny, self.grid.nx):
            raise ValueError("field shape must match the grid")
        self.values = v

    def check_finite(self):
        ok = self.grid.unmasked()
        if not np.all(np.isfinite(self.values[ok])):
            raise ValueError("field has non-finite values on unmasked nodes")

    def interpolator(self):
        from .transport import _FieldSpline

        vals = np.array(self.values, dtype=float)
        bad = ~np.isfinite(vals)
        if bad.any():
            vals[bad] = 0.0
        return _FieldSpline(self.grid, vals)


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-9
    max_newton: int = 60
    damping: float = 1.0
    linear_tol: float = 1e-10
    cg_max_iter: int = 2000
    # iterates are clamped to [w_minus - clamp_slack, w_plus + clamp_slack]:
    # the barriers bracket the continuum solution, but the discrete
    # solution can sit a truncation-sized margin outside them (the flat
    # candidate is itself a barrier on exact-model grids), so a hard
    # clamp at the barrier stalls the last Newton steps
    clamp_slack: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.clamp_slack < 0:
            raise ValueError("clamp_slack must be nonnegative")


def _laplacian(vals, hx, hy):
    out = np.zeros_like(vals)
    out[1:-1, 1:-1] = (
        (vals[1:-1, 2:] + vals[1:-1, :-2] - 2.0 * vals[1:-1, 1:-1]) / hx**2
        + (vals[2:, 1:-1] + vals[:-2, 1:-1] - 2.0 * vals[1:-1, 1:-1]) / hy**2
    )
    return out


def _abs_b_squared(b, grid):
    vals = np.abs(b.evaluate_array(grid.zmesh())) ** 2
    vals[~np.isfinite(vals)] = 0.0
    return vals


def _residual_values(w_vals, absb2, grid):
    interior = grid.interior()
    lap = _laplacian(w_vals, grid.hx, grid.hy)
    with np.errstate(over="ignore"):
        f = lap - 2.0 * np.exp(w_vals) + 4.0 * absb2 * np.exp(-2.0 * w_vals)
    f[~interior] = 0.0
    return f


def wang_residual(w_field, b):
    """Discrete residual field of Wang's equation; zero off the interior."""
    absb2 = _abs_b_squared(b, w_field.grid)
    f = _residual_values(w_field.values, absb2, w_field.grid)
    return ScalarField(w_field.grid, f, role="residual")


def flat_candidate(b, grid):
    """log(2^{1/3} |b|^{2/3}) on the grid nodes; -inf at zeros of b."""
    absb = np.abs(b.evaluate_array(grid.zmesh()))
    with np.errstate(divide="ignore"):
        return _LOG2_THIRD + (2.0 / 3.0) * np.log(absb)


def _hyperbolic_factor(grid, kind):
    z = grid.zmesh()
    r = np.abs(z - grid_center(grid))
    if kind == "plane":
        rad = 4.0 * float(np.max(r)) + 1.0
        return 4.0 * rad**2 / (rad**2 - r**2) ** 2
    if kind == "punctured-plane":
        ok = grid.unmasked()
        rr = r[ok]
        rr = rr[rr > 0]
        logrange = float(np.max(np.abs(np.log(rr))))
        big = 4.0 * max(logrange, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (math.pi / (2.0 * big)) ** 2 / (
                r**2 * np.cos(0.5 * math.pi * np.log(r) / big) ** 2
            )
        g[~np.isfinite(g)] = np.inf
        return g
    if kind == "punctured-disk":
        with np.errstate(divide="ignore", invalid="ignore"):
            g = 1.0 / (r**2 * np.log(r) ** 2)
        g[~np.isfinite(g)] = np.inf
        return g
    raise ValueError(f"unknown hyperbolic comparison kind {kind!r}")


def grid_center(grid):
    return grid.origin + 0.5 * grid.hx * (grid.nx - 1) + 0.5j * grid.hy * (grid.ny - 1)


def _require_masked_poles(b, grid, cells=3):
    """Refuse grids that overlap a pole of b without masking it out.

    |b|^2 blows up at a pole and the flat candidate is unbounded there,
    so every node within `cells` grid spacings of a pole inside the
    covered rectangle must carry the exclusion mask.
    """
    h = max(grid.hx, grid.hy)
    x0, x1 = grid.xs[0], grid.xs[-1]
    y0, y1 = grid.ys[0], grid.ys[-1]
    zm = None
    for p, _m in getattr(b, "poles", ()):
        if not (x0 - h <= p.real <= x1 + h and y0 - h <= p.imag <= y1 + h):
            continue
        if zm is None:
            zm = grid.zmesh()
        near = np.abs(zm - p) <= cells * h
        if grid.mask is None or np.any(near & ~grid.mask):
            raise PreconditionError(
                f"pole at {p} overlaps the grid; mask a disk of at least "
                f"{cells} cells around it before solving"
            )


@dataclass
class BarrierPair:
    w_minus: ScalarField
    w_plus: ScalarField
    lam: float
    verified: bool


def barriers(b, grid, kind="auto", lam_cap=1.0e12):
    """Sub/supersolution pair for the discrete problem.

    w_minus is the pointwise maximum of the flat candidate and the log of
    a hyperbolic comparison metric; w_plus = w_minus + log(lam) with lam
    doubled from 2 until the discrete supersolution inequality holds at
    every interior node.
    """
    if kind == "auto":
        # the differential's declared domain decides the comparison
        # metric: a masked grid may be a round truncation of the plane
        # (polynomial b on a disk), which still wants the plane factor
        kind = b.domain
    _require_masked_poles(b, grid)
    flat = flat_candidate(b, grid)
    hyp = np.log(_hyperbolic_factor(grid, kind))
    wm = np.maximum(flat, hyp)
    ok = grid.unmasked()
    if not np.all(np.isfinite(wm[ok])):
        raise ValueError("barrier is not finite on unmasked nodes")
    absb2 = _abs_b_squared(b, grid)
    interior = grid.interior()
    lam = 2.0
    while lam <= lam_cap:
        wp = wm + math.log(lam)
        f = _residual_values(wp, absb2, grid)
        if float(np.max(f[interior])) <= 0.0:
            return BarrierPair(
                w_minus=ScalarField(grid, wm, role="barrier"),
                w_plus=ScalarField(grid, wp, role="barrier"),
                lam=lam,
                verified=True,
            )
        lam *= 2.0
    raise NonConvergenceError(
        f"no supersolution multiplier up to {lam_cap:g} verifies discretely"
    )


def _sgs_preconditioner(diag, red, black, hx, hy, interior):
    inv_hx2 = 1.0 / hx**2
    inv_hy2 = 1.0 / hy**2

    def neighbor_sum(z):
        s = np.zeros_like(z)
        s[1:-1, 1:-1] = inv_hx2 * (z[1:-1, 2:] + z[1:-1, :-2]) + inv_hy2 * (
            z[2:, 1:-1] + z[:-2, 1:-1]
        )
        return s

    def apply(r):
        z = np.zeros_like(r)
        for color in (red, black, red):
            s = neighbor_sum(z)
            z[color] = (r[color] + s[color]) / diag[color]
        z[~interior] = 0.0
        return z

    return apply


def _pcg(matvec, rhs, precond, interior, rel_tol, max_iter):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = precond(r)
    p = z.copy()
    rz = float(np.sum(r[interior] * z[interior]))
    target = rel_tol * math.sqrt(float(np.sum(rhs[interior] ** 2)))
    for _ in range(max_iter):
        ap = matvec(p)
        pap = float(np.sum(p[interior] * ap[interior]))
        if pap <= 0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if math.sqrt(float(np.sum(r[interior] ** 2))) <= target:
            break
        z = precond(r)
        rz_new = float(np.sum(r[interior] * z[interior]))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def solve(b, grid, boundary=None, cfg=None, barrier_pair=None):
    """Damped Newton solution of the discrete Wang equation.

    boundary supplies Dirichlet values on the rim (default: the flat
    candidate, i.e. zero relative deviation).  Returns the solution as a
    ScalarField with a diagnostics dict; on non-convergence the best
    iterate is returned with diagnostics["converged"] = False.
    """
    cfg = cfg or SolverConfig()
    _require_masked_poles(b, grid)
    bp = barrier_pair or barriers(b, grid)
    wm = bp.w_minus.values
    wp = bp.w_plus.values
    interior = grid.interior()
    rim = grid.rim()
    unmasked = grid.unmasked()

    # start one doubling above the lower barrier rather than at w_plus:
    # lambda can be large on fine grids (the kink of the lower barrier at
    # a zero of b needs 2 lam e^{w_minus} to beat a 1/h^2 Laplacian), and
    # a start at w_plus would spend an iteration per e-fold coming down
    w = np.minimum(wm + math.log(2.0), wp)
    if boundary is not None:
        bvals = boundary.values if isinstance(boundary, ScalarField) else np.asarray(
            boundary, dtype=float
        )
        w[rim] = bvals[rim]
    else:
        flat = flat_candidate(b, grid)
        if not np.all(np.isfinite(flat[rim])):
            raise ValueError("default boundary data hits a zero of b on the rim")
        w[rim] = flat[rim]
    if grid.mask is not None:
        w[~unmasked] = wm[~unmasked] if np.all(np.isfinite(wm[~unmasked])) else 0.0

    absb2 = _abs_b_squared(b, grid)
    parity = (np.add.outer(np.arange(grid.ny), np.arange(grid.nx)) % 2) == 0
    red = interior & parity
    black = interior & ~parity
    inv_hx2 = 1.0 / grid.hx**2
    inv_hy2 = 1.0 / grid.hy**2

    def lap_masked(d):
        out = np.zeros_like(d)
        out[1:-1, 1:-1] = (
            inv_hx2 * (d[1:-1, 2:] + d[1:-1, :-2] - 2.0 * d[1:-1, 1:-1])
            + inv_hy2 * (d[2:, 1:-1] + d[:-2, 1:-1] - 2.0 * d[1:-1, 1:-1])
        )
        out[~interior] = 0.0
        return out

    history = []
    f = _residual_values(w, absb2, grid)
    res = float(np.max(np.abs(f[interior]))) if interior.any() else 0.0
    history.append(res)
    converged = res < cfg.tolerance
    best = w.copy()
    best_res = res

    it = 0
    while not converged and it < cfg.max_newton:
        it += 1
        d = 2.0 * np.exp(w) + 8.0 * absb2 * np.exp(-2.0 * w)
        d[~interior] = 1.0
        diag = d + 2.0 * inv_hx2 + 2.0 * inv_hy2

        def matvec(p):
            out = d * p - lap_masked(p)
            out[~interior] = 0.0
            return out

        precond = _sgs_preconditioner(diag, red, black, grid.hx, grid.hy, interior)
        forcing = max(min(0.1, math.sqrt(res)), cfg.linear_tol)
        rhs = f.copy()
        rhs[~interior] = 0.0
        delta = _pcg(matvec, rhs, precond, interior, forcing, cfg.cg_max_iter)

        alpha = cfg.damping
        accepted = False
        for _ in range(30):
            trial = w + alpha * delta
            np.clip(trial, wm - cfg.clamp_slack, wp + cfg.clamp_slack, out=trial)
            trial[~interior] = w[~interior]
            f_trial = _residual_values(trial, absb2, grid)
            res_trial = float(np.max(np.abs(f_trial[interior])))
            if res_trial < res:
                w = trial
                f = f_trial
                res = res_trial
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        history.append(res)
        if res < best_res:
            best = w.copy()
            best_res = res
        if res < cfg.tolerance:
            converged = True

    out = ScalarField(grid, best, role="w")
    out.diagnostics = {
        "converged": bool(converged),
        "iterations": it,
        "final_residual": best_res,
        "residual_history": history,
        "lambda": bp.lam,
    }
    return out


def u_field(w_field, b):
    """Relative deviation u = w - log(2^{1/3} |b|^{2/3}); nan at zeros of b."""
    flat = flat_candidate(b, w_field.grid)
    with np.errstate(invalid="ignore"):
        u = w_field.values - flat
    u[~np.isfinite(flat)] = np.nan
    out = ScalarField(w_field.grid, u, role="u")
    out.diagnostics = w_field.diagnostics
    return out


# ---------------------------------------------------------------------------
# decay diagnostics
# ---------------------------------------------------------------------------


def fit_exponential_rate(radii, values, radial_power=0.0):
    """Least-squares fit of values ~ C r^{radial_power} e^{-rate r}.

    Returns (rate, amplitude, r_squared).
    """
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 1e-300
    radii, values = radii[keep], values[keep]
    if len(radii) < 3:
        raise InsufficientSamplesError("need at least 3 usable radii for a fit")
    y = np.log(values) - radial_power * np.log(radii)
    slope, intercept = np.polyfit(radii, y, 1)
    pred = slope * radii + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(math.exp(intercept)), float(r2)


def decay_fit(u_fld, center=0j, radii=None, samples=720):
    """Exponential decay rate of sup |u| on circles.

    Fits log(max u) + (1/2) log r against -rate * r, i.e. the interior
    profile u ~ C r^{-1/2} e^{-rate r}.
    """
    if radii is None or len(radii) < 3:
        raise InsufficientSamplesError("need at least 3 radii")
    sp = u_fld.interpolator()
    center = complex(center)
    maxima = []
    for r in radii:
        ang = 2.0 * math.pi * np.arange(samples) / samples
        pts = center + r * np.exp(1j * ang)
        vals = [abs(sp.value(p)) for p in pts]
        maxima.append(max(vals))
    radii = np.asarray(radii, dtype=float)
    maxima = np.asarray(maxima)
    keep = maxima > 1e-14
    if keep.sum() < 3:
        raise InsufficientSamplesError("fewer than 3 circles carry signal above 1e-14")
    return fit_exponential_rate(radii[keep], maxima[keep], radial_power=-0.5)


# ---------------------------------------------------------------------------
# comparison lemmas as executable checks
# ---------------------------------------------------------------------------


def bessel_i0(x):
    """Modified Bessel I_0 by quadrature of (1/pi) int_0^pi e^{x cos t} dt."""
    from scipy.integrate import quad

    val, _ = quad(lambda t: math.exp(x * math.cos(t)), 0.0, math.pi, limit=200)
    return val / math.pi


def bessel_supersolution(r, zeta):
    """Radial barrier v = h - h^2/2 with h = I0(2 sqrt3 |zeta|) / I0(2 sqrt3 r).

    Dominates the chart deviation u on the disk of radius r when the
    boundary data is at most 1/2; equals 1/2 on the boundary circle.
    """
    rho = abs(complex(zeta))
    if rho > r * (1.0 + 1e-12):
        raise PreconditionError("zeta must lie in the closed disk of radius r")
    h = bessel_i0(TWO_ROOT_THREE * rho) / bessel_i0(TWO_ROOT_THREE * r)
    return h - 0.5 * h * h


def disk_center_check(u_fld, lam, r, center=0j, slack=None):
    """Center bound u(0) <= log lam under the two-sided hypothesis
    0 <= u <= log((lam^3 - 1) r^2 / (4 lam) + lam) on the disk of radius r."""
    if lam <= 1.0:
        raise ValueError("lam must exceed 1")
    grid = u_fld.grid
    center = complex(center)
    z = grid.zmesh()
    inside = (np.abs(z - center) <= r) & grid.unmasked()
    if not inside.any():
        raise ValueError("the disk does not meet the grid")
    bound = math.log((lam**3 - 1.0) * r**2 / (4.0 * lam) + lam)
    vals = u_fld.values[inside]
    tol = 1e-8
    if float(np.min(vals)) < -tol or float(np.max(vals)) > bound + tol:
        raise PreconditionError(
            "hypothesis 0 <= u <= log((lam^3-1) r^2 / (4 lam) + lam) fails"
        )
    sp = u_fld.interpolator()
    u0 = sp.value(center)
    if slack is None:
        slack = 1e-6 + 10.0 * max(grid.hx, grid.hy) ** 2
    return u0 <= math.log(lam) + slack


def gradient_bound_check(u_fld, z0, r, samples=720):
    """Interior gradient bound by oscillation plus Laplacian supremum.

    Checks |d_z u(z0)| <= A(r) (osc_{boundary} u + sup |Lap u|) with
    A(r) = max(1/r, r); the constant covers harmonic fields on disks.
    """
    z0 = complex(z0)
    grid = u_fld.grid
    sp = u_fld.interpolator()
    h = grid.hx
    ux = (sp.value(z0 + h) - sp.value(z0 - h)) / (2.0 * h)
    uy = (sp.value(z0 + 1j * h) - sp.value(z0 - 1j * h)) / (2.0 * h)
    lhs = 0.5 * math.hypot(ux, uy)
    ang = 2.0 * math.pi * np.arange(samples) / samples
    ring = [sp.value(z0 + r * complex(math.cos(a), math.sin(a))) for a in ang]
    osc = max(ring) - min(ring)
    lap = _laplacian(u_fld.values, grid.hx, grid.hy)
    disk = (np.abs(grid.zmesh() - z0) <= r) & grid.interior()
    sup_lap = float(np.max(np.abs(lap[disk]))) if disk.any() else 0.0
    amp = max(1.0 / r, r)
    return lhs <= amp * (osc + sup_lap) + 1e-12
