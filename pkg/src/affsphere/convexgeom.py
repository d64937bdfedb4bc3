"""Convex domains, the affine sphere equation, and Hilbert geometry.

The inverse direction of the toolkit: a bounded convex domain Omega
carries the support-function solution of

    det Hess u = u^{-4},   u < 0 in Omega,   u = 0 on the boundary,

whose graph is a hyperbolic affine sphere over Omega.  From u come the
Blaschke metric g = -(1/u) Hess u, its Gauss curvature kappa and the
curvature function f = kappa + 1, and the comparison with the Hilbert
metric of the domain.

The PDE is discretized with Shortley-Weller boundary snapping on a
square grid and solved by a damped Newton iteration; the Hessian
determinant in the residual is projected to the convex cone, while the
Newton linearization uses the raw Hessian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .wangpde import Grid2D, NonConvergenceError, PreconditionError


class ConvexityLossError(RuntimeError):
    """The discrete solution lost convexity at a node (reported inside)."""


# ---------------------------------------------------------------------------
# convex domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexDomain:
    """A bounded convex planar domain: a convex polygon or a round disk.

    Polygons store counterclockwise vertices; the halfplane description
    a_i . x <= c_i with unit outward normals is derived once and feeds
    containment tests, boundary ray intersections, and the support
    function.
    """

    kind: str
    vertices: tuple = ()
    center: tuple = (0.0, 0.0)
    radius: float = 0.0

    def __post_init__(self):
        if self.kind == "polygon":
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                raise ValueError("a polygon needs at least 3 planar vertices")
            area2 = float(
                np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
            )
            if area2 < 0:
                v = v[::-1]
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
            if np.any(cross <= 0):
                raise ValueError("vertices must be in strictly convex position")
            normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
            normals /= np.linalg.norm(normals, axis=1)[:, None]
            offsets = np.sum(normals * v, axis=1)
            object.__setattr__(self, "vertices", tuple(map(tuple, v)))
            object.__setattr__(self, "_normals", normals)
            object.__setattr__(self, "_offsets", offsets)
        elif self.kind == "disk":
            if not self.radius > 0:
                raise ValueError("disk radius must be positive")
            object.__setattr__(self, "center", tuple(map(float, self.center)))
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def from_polygon(cls, points):
        return cls(kind="polygon", vertices=tuple(map(tuple, points)))

    @classmethod
    def regular_polygon(cls, m, circumradius=1.0, center=(0.0, 0.0), phase=None):
        if phase is None:
            phase = math.pi / 2.0
        ang = phase + 2.0 * math.pi * np.arange(m) / m
        pts = np.stack(
            [
                center[0] + circumradius * np.cos(ang),
                center[1] + circumradius * np.sin(ang),
            ],
            axis=1,
        )
        return cls.from_polygon(pts)

    @classmethod
    def triangle(cls, circumradius=1.0, center=(0.0, 0.0)):
        return cls.regular_polygon(3, circumradius=circumradius, center=center)

    @classmethod
    def disk(cls, radius=1.0, center=(0.0, 0.0)):
        return cls(kind="disk", center=tuple(center), radius=float(radius))

    def bounding_box(self):
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            return v.min(axis=0), v.max(axis=0)
        c = np.asarray(self.center)
        r = self.radius
        return c - r, c + r

    def clearance(self, points):
        """Distance to the boundary, positive inside and negative outside."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "polygon":
            slack = self._offsets[None, :] - p @ self._normals.T
            out = slack.min(axis=1)
        else:
            out = self.radius - np.linalg.norm(p - np.asarray(self.center), axis=1)
        return out if out.shape[0] > 1 else float(out[0])

    def contains(self, points, tol=0.0):
        return np.asarray(self.clearance(points)) >= -tol

    def boundary_distance_along(self, p, direction):
        """Distance from an interior point to the boundary along a ray."""
        p = np.asarray(p, dtype=float)
        d = np.asarray(direction, dtype=float)
        nd = float(np.linalg.norm(d))
        if nd == 0:
            raise ValueError("the ray direction must be nonzero")
        d = d / nd
        if self.kind == "polygon":
            dots = self._normals @ d
            slack = self._offsets - self._normals @ p
            if np.any(slack < -1e-12):
                raise ValueError("the base point must lie inside the domain")
            with np.errstate(divide="ignore"):
                ts = np.where(dots > 1e-14, slack / np.where(dots > 1e-14, dots, 1.0), np.inf)
            return float(ts.min())
        c = np.asarray(self.center)
        q = p - c
        beta = float(q @ d)
        gamma = self.radius**2 - float(q @ q)
        if gamma < -1e-12:
            raise ValueError("the base point must lie inside the domain")
        return float(-beta + math.sqrt(max(beta**2 + gamma, 0.0)))

    def chebyshev_center(self):
        """Center and radius of a largest inscribed disk."""
        if self.kind == "disk":
            return np.asarray(self.center, dtype=float), self.radius
        from scipy.optimize import linprog

        a = self._normals
        c = self._offsets
        res = linprog(
            c=[0.0, 0.0, -1.0],
            A_ub=np.hstack([a, np.ones((len(c), 1))]),
            b_ub=c,
            bounds=[(None, None), (None, None), (0.0, None)],
            method="highs",
        )
        if not res.success:
            raise RuntimeError(f"inscribed disk search failed: {res.message}")
        return np.asarray(res.x[:2]), float(res.x[2])

    def circumradius_about(self, point):
        p = np.asarray(point, dtype=float)
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            return float(np.max(np.linalg.norm(v - p, axis=1)))
        return self.radius + float(np.linalg.norm(p - np.asarray(self.center)))

    def support_function(self, thetas):
        """h(theta) = sup over the domain of x . (cos theta, sin theta)."""
        th = np.atleast_1d(np.asarray(thetas, dtype=float))
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            h = (dirs @ v.T).max(axis=1)
        else:
            c = np.asarray(self.center)
            h = dirs @ c + self.radius
        return h if h.shape[0] > 1 else float(h[0])


# ---------------------------------------------------------------------------
# the support-function Dirichlet problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MAConfig:
    tolerance: float = 1e-8
    max_newton: int = 60
    damping: float = 1.0
    collar_factor: float = 3.0
    eigen_floor: float = 1e-10


# convexity audit scope: depth in grid spacings, and how negative the
# smaller Hessian eigenvalue may go relative to the local scale before
# it counts as loss of convexity rather than boundary-layer error
_AUDIT_DEPTH = 8.0
_AUDIT_REL = 0.05


def _shift(a, di, dj):
    """Array whose (i, j) entry is a[i+di, j+dj], zero off the edge."""
    out = np.zeros_like(a)
    src_i = slice(max(di, 0), a.shape[0] + min(di, 0))
    src_j = slice(max(dj, 0), a.shape[1] + min(dj, 0))
    dst_i = slice(max(-di, 0), a.shape[0] + min(-di, 0))
    dst_j = slice(max(-dj, 0), a.shape[1] + min(-dj, 0))
    out[dst_i, dst_j] = a[src_i, src_j]
    return out


@dataclass(eq=False)
class SupportField:
    """Discrete support function: u <= 0, zero outside the inside mask."""

    domain: ConvexDomain
    grid: Grid2D
    inside: np.ndarray
    arms: np.ndarray  # (ny, nx, 8) fractions E, W, N, S, NE, SW, NW, SE
    values: np.ndarray  # zero outside the domain
    diagnostics: dict = field(default_factory=dict)

    def collar(self, factor=3.0):
        h = self.grid.hx
        z = self.grid.zmesh()
        pts = np.stack([z.real.ravel(), z.imag.ravel()], axis=1)
        clear = np.asarray(self.domain.clearance(pts)).reshape(z.shape)
        return self.inside & (clear >= factor * h)

    def value(self, p):
        from scipy.interpolate import RectBivariateSpline

        sp = RectBivariateSpline(self.grid.ys, self.grid.xs, self.values, kx=3, ky=3)
        return float(sp(p[1], p[0])[0, 0])


def _build_geometry(domain, grid_or_n, pad):
    if isinstance(grid_or_n, Grid2D):
        grid = grid_or_n
    else:
        lo, hi = domain.bounding_box()
        c = 0.5 * (lo + hi)
        half = 0.5 * float(np.max(hi - lo)) * (1.0 + pad)
        grid = Grid2D.square(half, int(grid_or_n), center=complex(c[0], c[1]))
    h = grid.hx
    z = grid.zmesh()
    pts = np.stack([z.real.ravel(), z.imag.ravel()], axis=1)
    clear = np.asarray(domain.clearance(pts)).reshape(z.shape)
    # nodes closer to the boundary than half a cell are snapped onto it
    # (value 0, excluded from the unknowns): at such a node u = O(sqrt h)
    # while u^{-4} grows without bound, and keeping it in the system makes
    # the Newton rows arbitrarily stiff for no accuracy gain in the collar
    inside = clear >= 0.45 * h
    if (
        inside[0, :].any()
        or inside[-1, :].any()
        or inside[:, 0].any()
        or inside[:, -1].any()
    ):
        raise ValueError("the domain touches the grid rim; enlarge the grid")
    r = 1.0 / np.sqrt(2.0)
    arms = np.ones(z.shape + (8,))
    steps = [
        (0, 1, (1.0, 0.0), h),
        (0, -1, (-1.0, 0.0), h),
        (1, 0, (0.0, 1.0), h),
        (-1, 0, (0.0, -1.0), h),
        (1, 1, (r, r), np.sqrt(2.0) * h),
        (-1, -1, (-r, -r), np.sqrt(2.0) * h),
        (1, -1, (-r, r), np.sqrt(2.0) * h),
        (-1, 1, (r, -r), np.sqrt(2.0) * h),
    ]
    ii, jj = np.nonzero(inside)
    for i, j in zip(ii, jj):
        p = (z[i, j].real, z[i, j].imag)
        for k, (di, dj, direction, step) in enumerate(steps):
            if not inside[i + di, j + dj]:
                # one-sided arm out to the zero datum on the true boundary
                # along the ray; a snapped neighbor keeps value 0, so the
                # stencil reads the correct Dirichlet value either way.
                # Near-tangential rays exit far away (a chord of the
                # domain), which the 3-point formulas handle: the far
                # datum just gets a small weight.  No upper clamp, or the
                # zero datum would be imposed at an interior point.
                t = domain.boundary_distance_along(p, direction)
                arms[i, j, k] = max(t / step, 0.3)
    return grid, inside, arms, clear


def _stencils(arms, h):
    """Shortley-Weller difference weights for the 8-point neighborhood.

    Axis arms give the usual one-sided second and first differences; the
    diagonal arms give directional second differences along the two
    diagonals at spacing sqrt(2) h, whose half-difference is the mixed
    derivative.  All weights reduce to the uniform 9-point stencil when
    every arm is 1.
    """
    ae, aw, an, as_ = arms[..., 0], arms[..., 1], arms[..., 2], arms[..., 3]
    ane, asw, anw, ase = arms[..., 4], arms[..., 5], arms[..., 6], arms[..., 7]
    h2 = h * h
    s2 = 2.0 * h2
    return dict(
        ce=2.0 / (h2 * ae * (ae + aw)),
        cw=2.0 / (h2 * aw * (ae + aw)),
        cc_x=2.0 / (h2 * ae * aw),
        cn=2.0 / (h2 * an * (an + as_)),
        cs=2.0 / (h2 * as_ * (an + as_)),
        cc_y=2.0 / (h2 * an * as_),
        dne=2.0 / (s2 * ane * (ane + asw)),
        dsw=2.0 / (s2 * asw * (ane + asw)),
        dcd=2.0 / (s2 * ane * asw),
        dnw=2.0 / (s2 * anw * (anw + ase)),
        dse=2.0 / (s2 * ase * (anw + ase)),
        dca=2.0 / (s2 * anw * ase),
        gxe=aw / (ae * (ae + aw) * h),
        gxw=ae / (aw * (ae + aw) * h),
        gxc=(ae - aw) / (ae * aw * h),
        gyn=as_ / (an * (an + as_) * h),
        gys=an / (as_ * (an + as_) * h),
        gyc=(an - as_) / (an * as_ * h),
    )


def _difference_fields(v, inside, st):
    e = _shift(v, 0, 1)
    w = _shift(v, 0, -1)
    nn = _shift(v, 1, 0)
    ss = _shift(v, -1, 0)
    ne = _shift(v, 1, 1)
    sw = _shift(v, -1, -1)
    nw = _shift(v, 1, -1)
    se = _shift(v, -1, 1)
    vxx = st["ce"] * e + st["cw"] * w - st["cc_x"] * v
    vyy = st["cn"] * nn + st["cs"] * ss - st["cc_y"] * v
    d2d = st["dne"] * ne + st["dsw"] * sw - st["dcd"] * v
    d2a = st["dnw"] * nw + st["dse"] * se - st["dca"] * v
    vxy = 0.5 * (d2d - d2a)
    vx = st["gxe"] * e - st["gxw"] * w + st["gxc"] * v
    vy = st["gyn"] * nn - st["gys"] * ss + st["gyc"] * v
    for a in (vxx, vyy, vxy, vx, vy):
        a[~inside] = 0.0
    return vxx, vyy, vxy, vx, vy


def _ma_residual(v, inside, st):
    """Monge-Ampere residual in the squared-depth variable v = u^2.

    Substituting u = -sqrt(v) into det Hess u = u^{-4} gives

        det(M) = 4 / v,    M := Hess v - (grad v x grad v) / (2 v),

    with M = 2 u Hess u negative definite at the solution.  The point of
    the substitution is regularity: u has a sqrt boundary layer whose
    fourth derivatives defeat any fixed stencil near the rim, while v
    vanishes linearly (for a disk it is exactly a quadratic), so the
    same stencils are uniformly accurate.  Returns the residual scaled
    back to the u-equation, f = (det M - 4/v) / (4 v), which equals
    det Hess u - u^{-4} under the transformation, together with the raw
    residual G = det M - 4/v and the difference fields.
    """
    vxx, vyy, vxy, vx, vy = _difference_fields(v, inside, st)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv2v = 0.5 / v
        mxx = vxx - vx**2 * inv2v
        myy = vyy - vy**2 * inv2v
        mxy = vxy - vx * vy * inv2v
        g = mxx * myy - mxy**2 - 4.0 / v
        f = g * inv2v * 0.5
    for a in (g, f, mxx, myy, mxy):
        a[~inside] = 0.0
    return f, g, mxx, myy, mxy, vx, vy


def support_solve(dom, grid=None, cfg=None, n=129, pad=0.05):
    """Newton solution of det Hess u = u^{-4} with zero boundary data.

    grid may be an explicit Grid2D covering the domain; by default a
    square n-by-n grid with relative margin pad is built around it.  The
    equation is discretized in the squared-depth variable v = u^2 (see
    _ma_residual), which removes the sqrt boundary layer of u, and
    solved by damped Newton with Shortley-Weller stencils, starting from
    the Poisson profile with the inscribed disk's constant load (exactly
    the squared-depth solution when the domain is that disk).  Steps
    are accepted on max-norm decrease of the u-equation residual over
    all unknowns; convergence is declared on the collar of nodes at
    least collar_factor spacings inside the boundary.  After convergence
    the discrete Hessian of u is checked for convexity on a deeper
    collar; a genuinely indefinite node raises ConvexityLossError.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.linalg import splu

    cfg = cfg or MAConfig()
    grid, inside, arms, clear = _build_geometry(dom, grid if grid is not None else n, pad)
    h = grid.hx
    center, rho = dom.chebyshev_center()
    z = grid.zmesh()
    st = _stencils(arms, h)

    idx = -np.ones(inside.shape, dtype=int)
    idx[inside] = np.arange(int(inside.sum()))
    m = int(inside.sum())

    def assemble(entries):
        rows, cols, vals = [], [], []
        for (di, dj), coeff in entries:
            nb = _shift(idx, di, dj)
            ok = inside & (nb >= 0) & (np.abs(coeff) > 0)
            rows.append(idx[ok])
            cols.append(nb[ok])
            vals.append(coeff[ok])
        return coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, m),
        ).tocsc()

    # initial iterate: the Shortley-Weller Poisson profile
    # lap v0 = -4 rho^{-2/3}, v0 = 0 on the boundary.  When the domain
    # is the inscribed disk itself this is exactly the squared depth of
    # the known closed-form solution, and for any domain it vanishes
    # linearly at the boundary, which is the correct layer behavior for
    # v; a smooth interior profile with the wrong boundary layer leaves
    # Newton a 100x correction concentrated on the stiffest rows.
    lap = assemble(
        [
            ((0, 1), st["ce"]),
            ((0, -1), st["cw"]),
            ((1, 0), st["cn"]),
            ((-1, 0), st["cs"]),
            ((0, 0), -(st["cc_x"] + st["cc_y"])),
        ]
    )
    psi = splu(lap).solve(np.full(m, -4.0 * rho ** (-2.0 / 3.0)))
    v = np.zeros(z.shape)
    v[inside] = np.maximum(psi, 1e-12)

    collar = inside & (clear >= cfg.collar_factor * h)
    if not collar.any():
        collar = inside

    def collar_norm(f):
        return float(np.max(np.abs(f[collar])))

    def full_norm(f):
        return float(np.max(np.abs(f[inside])))

    # convergence needs the residual small on every unknown, not only in
    # the collar: the boundary condition enters the discrete system only
    # through the ring rows whose stencils reach the zero datum, and any
    # interior solution of the PDE zeroes the collar rows regardless of
    # its boundary values.  The collar norm is reported separately.
    # The line search monitors the l2 norm of G (the system Newton
    # solves, for which the Newton direction is a guaranteed descent
    # direction); f = G/(4v) is not monotone along good steps at ring
    # nodes whose v still has to shrink by a large factor.
    f, g, mxx, myy, mxy, vx, vy = _ma_residual(v, inside, st)
    fmax = full_norm(f)
    merit = float(np.linalg.norm(g[inside]))
    history = [fmax]
    converged = fmax < cfg.tolerance
    it = 0
    while not converged and it < cfg.max_newton:
        it += 1
        rows, cols, vals = [], [], []

        def add(offset, coeff):
            di, dj = offset
            nb = _shift(idx, di, dj)
            ok = inside & (nb >= 0) & (np.abs(coeff) > 0)
            rows.append(idx[ok])
            cols.append(nb[ok])
            vals.append(coeff[ok])

        # Newton linearization of G = det M - 4/v through the chain
        # dG = adj(M) : dM + 4 dv/v^2 with
        # dM = Hess dv - sym(grad dv x grad v)/(2v) + (grad v x grad v) dv/(2v^2).
        # The adjugate in the second-order part is taken from M after
        # projecting its eigenvalues onto (-inf, -floor]: at a locally
        # consistent iterate M is negative definite and the projection
        # is a no-op, while a transient sign flip would otherwise break
        # ellipticity of the linearized operator.
        tr = mxx + myy
        disc = np.sqrt((mxx - myy) ** 2 + 4.0 * mxy**2)
        lam_hi = np.minimum(0.5 * (tr + disc), -cfg.eigen_floor)
        lam_lo = np.minimum(0.5 * (tr - disc), -cfg.eigen_floor)
        safe = np.maximum(disc, 1e-300)
        cth = np.where(disc > 0, (mxx - myy) / safe, 1.0)
        sth = np.where(disc > 0, 2.0 * mxy / safe, 0.0)
        pxx = 0.5 * ((lam_hi + lam_lo) + (lam_hi - lam_lo) * cth)
        pyy = 0.5 * ((lam_hi + lam_lo) - (lam_hi - lam_lo) * cth)
        pxy = 0.5 * (lam_hi - lam_lo) * sth
        axx = pyy
        ayy = pxx
        axy = -2.0 * pxy
        with np.errstate(divide="ignore", invalid="ignore"):
            bx = (-myy * vx + mxy * vy) / v
            by = (-mxx * vy + mxy * vx) / v
            cdiag = (myy * vx**2 + mxx * vy**2 - 2.0 * mxy * vx * vy) / (
                2.0 * v**2
            ) + 4.0 / v**2
        for a in (bx, by, cdiag):
            a[~inside] = 0.0
        add((0, 1), axx * st["ce"] + bx * st["gxe"])
        add((0, -1), axx * st["cw"] - bx * st["gxw"])
        add((1, 0), ayy * st["cn"] + by * st["gyn"])
        add((-1, 0), ayy * st["cs"] - by * st["gys"])
        add((1, 1), 0.5 * axy * st["dne"])
        add((-1, -1), 0.5 * axy * st["dsw"])
        add((1, -1), -0.5 * axy * st["dnw"])
        add((-1, 1), -0.5 * axy * st["dse"])
        add(
            (0, 0),
            -axx * st["cc_x"]
            - ayy * st["cc_y"]
            + 0.5 * axy * (st["dca"] - st["dcd"])
            + bx * st["gxc"]
            + by * st["gyc"]
            + cdiag,
        )
        jac = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, m),
        ).tocsc()
        delta_vec = splu(jac).solve(-g[inside])
        delta = np.zeros_like(v)
        delta[inside] = delta_vec

        alpha = cfg.damping
        accepted = False
        for _ in range(16):
            trial = v + alpha * delta
            np.maximum(trial, 1e-12, out=trial)
            trial[~inside] = 0.0
            f_t, g_t, mxx_t, myy_t, mxy_t, vx_t, vy_t = _ma_residual(
                trial, inside, st
            )
            if float(np.linalg.norm(g_t[inside])) < merit:
                v, f, g = trial, f_t, g_t
                mxx, myy, mxy, vx, vy = mxx_t, myy_t, mxy_t, vx_t, vy_t
                merit = float(np.linalg.norm(g[inside]))
                fmax = full_norm(f)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        history.append(fmax)
        if fmax < cfg.tolerance:
            converged = True

    u = -np.sqrt(np.maximum(v, 0.0))
    u[~inside] = 0.0

    # discrete convexity audit on the recovered u.  Toward edges and
    # corners the smaller Hessian eigenvalue of the true solution tends
    # to zero while finite differences carry an O(1) relative error in
    # the boundary layer, so the audit runs on a deeper collar and flags
    # only eigenvalues that are significantly negative against the local
    # Hessian scale; that is what a genuinely non-convex field looks
    # like.  A stalled iterate is reported through converged=False
    # instead of a spurious convexity error.
    uxx, uyy, uxy, _, _ = _difference_fields(u, inside, st)
    tr = uxx + uyy
    disc = np.sqrt((uxx - uyy) ** 2 + 4.0 * uxy**2)
    lam_min = 0.5 * (tr - disc)
    lam_max = 0.5 * (tr + disc)
    audit = inside & (clear >= _AUDIT_DEPTH * h)
    bad = converged & audit & (lam_min < -_AUDIT_REL * (1.0 + np.abs(lam_max)))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ConvexityLossError(
            f"discrete convexity lost at node ({i}, {j}), "
            f"z = {complex(z[i, j]):.4f}, min eigenvalue {lam_min[i, j]:.3e}"
        )

    return SupportField(
        domain=dom,
        grid=grid,
        inside=inside,
        arms=arms,
        values=u,
        diagnostics={
            "converged": bool(converged),
            "iterations": it,
            "collar_residual": collar_norm(f),
            "full_residual": fmax,
            "residual_history": history,
            "inradius": rho,
            "chebyshev_center": (float(center[0]), float(center[1])),
            "min_hessian_eigenvalue": float(np.min(lam_min[collar])),
        },
    )


def exact_disk_solution(radius, center, grid):
    """u = -rho^{2/3} sqrt(1 - d^2 / rho^2) on the nodes, zero outside."""
    z = grid.zmesh()
    d2 = (z.real - center[0]) ** 2 + (z.imag - center[1]) ** 2
    inside = d2 < radius**2
    u = np.zeros(z.shape)
    u[inside] = -(radius ** (2.0 / 3.0)) * np.sqrt(1.0 - d2[inside] / radius**2)
    return u


def inclusion_bounds_check(sol, slack=None):
    """Monotonicity of the solution under domain inclusion.

    Enlarging the domain deepens the well, so pointwise on Omega the
    solution sits above the exact solution of a circumscribed disk, and
    on an inscribed disk it sits below that disk's exact solution.
    Returns the two worst margins (nonnegative up to discretization).
    """
    grid = sol.grid
    if slack is None:
        slack = 0.05 * grid.hx**0.5
    center, rho = sol.domain.chebyshev_center()
    big = sol.domain.circumradius_about(center)
    u_big = exact_disk_solution(big, center, grid)
    u_small = exact_disk_solution(rho, center, grid)
    z = grid.zmesh()
    d2 = (z.real - center[0]) ** 2 + (z.imag - center[1]) ** 2
    on_small = sol.inside & (d2 < rho**2)
    lower_margin = float(np.min((sol.values - u_big)[sol.inside]))
    upper_margin = float(np.min((u_small - sol.values)[on_small]))
    return {
        "lower_margin": lower_margin,
        "upper_margin": upper_margin,
        "passed": bool(lower_margin > -slack and upper_margin > -slack),
    }


# ---------------------------------------------------------------------------
# Blaschke metric and curvature
# ---------------------------------------------------------------------------


def _erode(mask):
    out = mask.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out &= _shift(mask, di, dj)
    return out


@dataclass(eq=False)
class MetricField:
    """Blaschke metric components with derived curvature fields.

    g11, g12, g22 are valid on `valid` nodes (positive definite there;
    indefinite nodes are masked out); kappa and f_omega = kappa + 1 live
    on the smaller `curvature_valid` set, nan elsewhere.
    """

    grid: Grid2D
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    kappa: np.ndarray
    f_omega: np.ndarray
    valid: np.ndarray
    curvature_valid: np.ndarray

    def det(self):
        d = self.g11 * self.g22 - self.g12**2
        d[~self.valid] = np.nan
        return d


def _det3(rows):
    (a, b, c), (d, e_, f_), (g, h_, i) = rows
    return a * (e_ * i - f_ * h_) - b * (d * i - f_ * g) + c * (d * h_ - e_ * g)


def blaschke_metric(u):
    """Blaschke metric g = -(1/u) Hess u and its curvature fields.

    In the squared-depth variable v = u^2 the metric has the closed form
    g = -M/(2v) with M = Hess v - (grad v x grad v)/(2v), so the
    components are assembled from Shortley-Weller differences of v
    rather than of u, avoiding the square-root boundary layer.  Gauss
    curvature via the Brioschi formula with fourth-order central
    differences of the components, so kappa needs two further rings.
    f_omega = kappa + 1.
    """
    h = u.grid.hx
    v = u.values.astype(float) ** 2
    st = _stencils(u.arms, h)
    vxx, vyy, vxy, vx, vy = _difference_fields(v, u.inside, st)
    core = _erode(u.inside)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv2v = 0.5 / v
        e = -(vxx - vx * vx * inv2v) * inv2v
        g = -(vyy - vy * vy * inv2v) * inv2v
        f_ = -(vxy - vx * vy * inv2v) * inv2v
        posdef = core & (e > 0) & (e * g - f_**2 > 0)
    for a in (e, f_, g):
        a[~posdef] = 0.0

    def dx(a):
        return (
            -_shift(a, 0, 2) + 8.0 * _shift(a, 0, 1) - 8.0 * _shift(a, 0, -1) + _shift(a, 0, -2)
        ) / (12.0 * h)

    def dy(a):
        return (
            -_shift(a, 2, 0) + 8.0 * _shift(a, 1, 0) - 8.0 * _shift(a, -1, 0) + _shift(a, -2, 0)
        ) / (12.0 * h)

    def dxx(a):
        return (
            -_shift(a, 0, 2)
            + 16.0 * _shift(a, 0, 1)
            - 30.0 * a
            + 16.0 * _shift(a, 0, -1)
            - _shift(a, 0, -2)
        ) / (12.0 * h**2)

    def dyy(a):
        return (
            -_shift(a, 2, 0)
            + 16.0 * _shift(a, 1, 0)
            - 30.0 * a
            + 16.0 * _shift(a, -1, 0)
            - _shift(a, -2, 0)
        ) / (12.0 * h**2)

    ex, ey = dx(e), dy(e)
    fx, fy = dx(f_), dy(f_)
    gx, gy = dx(g), dy(g)
    eyy = dyy(e)
    gxx = dxx(g)
    fxy = dx(dy(f_))

    m1 = _det3(
        (
            (-0.5 * eyy + fxy - 0.5 * gxx, 0.5 * ex, fx - 0.5 * ey),
            (fy - 0.5 * gx, e, f_),
            (0.5 * gy, f_, g),
        )
    )
    m2 = _det3(
        (
            (np.zeros_like(e), 0.5 * ey, 0.5 * gx),
            (0.5 * ey, e, f_),
            (0.5 * gx, f_, g),
        )
    )
    det = e * g - f_**2
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (m1 - m2) / det**2
    curvature_valid = _erode(_erode(posdef))
    f_omega = kappa + 1.0
    kappa = kappa.copy()
    kappa[~curvature_valid] = np.nan
    f_omega[~curvature_valid] = np.nan
    out_e, out_f, out_g = e.copy(), f_.copy(), g.copy()
    for a in (out_e, out_f, out_g):
        a[~posdef] = np.nan
    return MetricField(
        grid=u.grid,
        g11=out_e,
        g12=out_f,
        g22=out_g,
        kappa=kappa,
        f_omega=f_omega,
        valid=posdef,
        curvature_valid=curvature_valid,
    )


# ---------------------------------------------------------------------------
# Hilbert geometry
# ---------------------------------------------------------------------------


def hilbert_norm(dom, x, v):
    """Infinitesimal Hilbert norm (1/d_plus + 1/d_minus) |v|.

    d_plus and d_minus are the distances from x to the boundary along
    the chord through v.  Exactly affine invariant: an affine map
    rescales |v|, d_plus, d_minus along the chord by one factor.
    """
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    if nv == 0:
        raise ValueError("the direction must be nonzero")
    if np.asarray(dom.clearance(np.asarray(x, float))).min() <= 0:
        raise ValueError("the base point must be strictly inside the domain")
    d_plus = dom.boundary_distance_along(x, v)
    d_minus = dom.boundary_distance_along(x, -v)
    return (1.0 / d_plus + 1.0 / d_minus) * nv


def hilbert_unit_ball(dom, x, samples=720):
    """Polar samples (theta, r) of the unit ball of the Hilbert norm."""
    th = 2.0 * math.pi * np.arange(samples) / samples
    r = np.empty(samples)
    for k, t in enumerate(th):
        r[k] = 1.0 / hilbert_norm(dom, x, (math.cos(t), math.sin(t)))
    return th, r


def hilbert_area_density(dom, x, samples=720):
    """Busemann density pi / area of the Hilbert unit ball at x."""
    _, r = hilbert_unit_ball(dom, x, samples)
    area = 0.5 * float(np.sum(r**2)) * (2.0 * math.pi / samples)
    return math.pi / area


def blaschke_area_density(sol, x):
    """sqrt(det g) of the Blaschke metric at x, from the nearest valid node."""
    met = blaschke_metric(sol)
    det = met.det()
    z = sol.grid.zmesh()
    dist2 = (z.real - x[0]) ** 2 + (z.imag - x[1]) ** 2
    dist2[~met.valid] = np.inf
    i, j = np.unravel_index(int(np.argmin(dist2)), dist2.shape)
    val = det[i, j]
    if not np.isfinite(val) or val <= 0:
        raise PreconditionError("no valid metric node near the requested point")
    return float(math.sqrt(val))


def density_ratio(sol, x, samples=720):
    """Hilbert area density over Blaschke area density at x."""
    num = hilbert_area_density(sol.domain, x, samples)
    den = blaschke_area_density(sol, x)
    return num / den
