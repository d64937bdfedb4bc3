"""Developing maps, holonomy, and boundary polygons in RP^2.

Orientation convention, stated once and loudly: the moving frame S(t)
solves S' = S A along the path with S(0) = I, so S(t) is the transport
of the REVERSED subpath; the developing map is the projectivization of
S(t) applied to the canonical section (1, 1, 1) of the equilateral
frame.  Holonomies of loops act on developed curves from the left.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .transport import (
    SL3,
    PathSpec,
    _attach_step_params,
    _integrate_legs,
    _legs_of_path,
    parallel_transport,
)

CANONICAL_SECTION = (1.0, 1.0, 1.0)


class ProbeDivergenceError(RuntimeError):
    pass


class DegenerateEdgeError(RuntimeError):
    pass


def proj_point(vec):
    """Canonical representative of a projective point.

    Unit Euclidean length, sign fixed so the first entry that is
    nonzero (beyond 1e-9 of the norm) is positive.
    """
    v = np.asarray(vec, dtype=float)
    n = float(np.linalg.norm(v))
    if not (n > 0) or not np.all(np.isfinite(v)):
        raise ValueError("cannot projectivize a zero or non-finite vector")
    v = v / n
    lead = 0
    while lead < 2 and abs(v[lead]) <= 1e-9:
        lead += 1
    if v[lead] < 0:
        v = -v
    return v


def chordal_distance(p, q):
    """Chordal metric on RP^2: min over signs of |p/|p| -+ q/|q||."""
    pu = np.asarray(p, float)
    qu = np.asarray(q, float)
    pu = pu / np.linalg.norm(pu)
    qu = qu / np.linalg.norm(qu)
    return float(min(np.linalg.norm(pu - qu), np.linalg.norm(pu + qu)))


def sum_chart(points):
    """Affine chart x + y + z = 1, the simplex picture used for figures."""
    pts = np.atleast_2d(np.asarray(points, float))
    s = pts.sum(axis=1)
    if np.any(np.abs(s) < 1e-14 * max(1.0, float(np.abs(pts).max()))):
        raise ValueError("a point lies on the chart hyperplane x + y + z = 0")
    return pts[:, :2] / s[:, None]


def mean_chart(points):
    """Affine chart normal to the mean of the points.

    Projective points carry no preferred sign, so representatives are
    first sign-aligned against the principal direction of the summed
    outer products, which for a cluster spanning a moderate cone is an
    interior direction of that cone.  Returns (n, 2) planar coordinates
    in an orthonormal basis of the chart plane.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    pts = pts / np.linalg.norm(pts, axis=1)[:, None]
    _, vecs = np.linalg.eigh(pts.T @ pts)
    axis = vecs[:, -1]
    signs = np.where(pts @ axis >= 0.0, 1.0, -1.0)
    pts = pts * signs[:, None]
    m = pts.mean(axis=0)
    nm = float(np.linalg.norm(m))
    if nm < 1e-9:
        raise ValueError("points have no common chart (mean direction vanishes)")
    m = m / nm
    # orthonormal basis of the plane orthogonal to m
    seed = np.array([1.0, 0.0, 0.0]) if abs(m[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = seed - (seed @ m) * m
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(m, t1)
    denom = pts @ m
    if np.any(np.abs(denom) < 1e-9):
        raise ValueError("a point is orthogonal to the chart direction")
    aff = pts / denom[:, None]
    return np.stack([aff @ t1, aff @ t2], axis=1)


@dataclass(eq=False)
class DevPath:
    """Developed curve samples: strictly increasing parameters, projective
    points, log-scale history of the frame, and positions in the base."""

    times: np.ndarray
    zs: np.ndarray
    points: np.ndarray  # (N, 3) proj_point rows
    log_scales: np.ndarray
    end_frame: SL3

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("parameters must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def endpoint(self):
        return self.points[-1]

    def successive_distances(self):
        return np.array(
            [
                chordal_distance(self.points[i], self.points[i + 1])
                for i in range(len(self.points) - 1)
            ]
        )

    def affine(self):
        return sum_chart(self.points)


def develop_path(sampler, path, base=None, section=CANONICAL_SECTION):
    """Developed curve of the path, one sample per accepted step.

    The t = 0 sample is the projectivization of the section itself; the
    last sample is proj(T(path reversed) section).
    """
    if base is not None and abs(complex(base) - complex(path.vertices[0])) > 1e-12:
        raise ValueError("path must start at the declared base point")
    sec = np.asarray(section, dtype=float)
    times, zs, rows, scales = [], [], [], []

    def record(t, z, states):
        entries, ls = states[0]
        rows.append(proj_point(entries @ sec))
        scales.append(ls)
        times.append(t)
        zs.append(z)

    _attach_step_params(sampler, path)
    mats, _ = _integrate_legs([sampler], _legs_of_path(path), record=record)
    return DevPath(
        times=np.asarray(times),
        zs=np.asarray(zs),
        points=np.asarray(rows),
        log_scales=np.asarray(scales),
        end_frame=mats[0],
    )


def dev_limit(dp, tol=1e-6, window=0.25):
    """Limit estimate of a developed path.

    Convergence is declared when the successive chordal distances summed
    over the trailing `window` fraction of parameters stay below tol.
    The asymptotic direction is the normalized secant from the trailing
    window to the final point, projected to the tangent plane at the
    limit; None when the path is constant at the sampling scale.
    Returns (point, converged, direction).
    """
    n = len(dp)
    if n < 10:
        raise ValueError("need at least 10 samples for a limit estimate")
    k0 = int(math.floor((1.0 - window) * (n - 1)))
    k0 = min(max(k0, 0), n - 2)
    tail = float(np.sum(dp.successive_distances()[k0:]))
    converged = tail < tol

    # sign-align the trailing points against the final sample
    limit = dp.points[-1].copy()
    anchor = dp.points[k0].copy()
    if np.dot(anchor, limit) < 0:
        anchor = -anchor
    sec = limit - anchor
    sec -= (sec @ limit) * limit
    ns = float(np.linalg.norm(sec))
    direction = None if ns < 1e-12 else sec / ns
    return proj_point(limit), bool(converged), direction


@dataclass(eq=False)
class ComparisonRecord:
    """Samples of the comparison transformation P(t) along a path.

    P(t) multiplies the transport of the reversed exact subpath by the
    forward flat-model transport; each sample is projected back to
    determinant one.  Cauchy tails are the Frobenius norms of
    successive differences.
    """

    times: np.ndarray
    zs: np.ndarray
    samples: list

    def __len__(self):
        return len(self.times)

    @property
    def limit(self):
        return self.samples[-1]

    def successive_norms(self):
        reps = [s.represented() for s in self.samples]
        return np.array(
            [float(np.linalg.norm(reps[i + 1] - reps[i])) for i in range(len(reps) - 1)]
        )

    def tail_to_limit(self):
        reps = [s.represented() for s in self.samples]
        final = reps[-1]
        return np.array([float(np.linalg.norm(r - final)) for r in reps])

    def is_cauchy(self, tol=1e-4, window=0.25):
        n = len(self.samples)
        k0 = min(max(int(math.floor((1.0 - window) * (n - 1))), 0), n - 2)
        return bool(float(np.sum(self.successive_norms()[k0:])) < tol)


def comparison_transform(sampler, flat_sampler, path):
    """Comparison of the exact transport against the flat model.

    Both samplers are integrated jointly with a shared step sequence;
    at each accepted step P = S S0^{-1} is recorded, S being the exact
    frame and S0 the flat-model frame.
    """
    times, zs, samples = [], [], []

    def record(t, z, states):
        (e1, l1), (e0, l0) = states
        p = SL3(e1 @ np.linalg.inv(e0), l1 - l0).det_projected()
        times.append(t)
        zs.append(z)
        samples.append(p)

    _attach_step_params(sampler, path)
    _integrate_legs([sampler, flat_sampler], _legs_of_path(path), record=record)
    return ComparisonRecord(
        times=np.asarray(times), zs=np.asarray(zs), samples=samples
    )


def holonomy_loop(sampler, loop, tol=1e-9):
    """Transport around a closed path; raises if the path does not close."""
    if not loop.is_closed(tol * (1.0 + loop.euclidean_length())):
        raise ValueError("holonomy requires a closed path")
    return parallel_transport(sampler, loop)


def holonomy_eigen_from_residue(residue):
    """Eigenvalues of the counterclockwise circle holonomy at a third
    order pole with the given residue, sorted descending.

    They are exp(-4 pi mu) over the imaginary parts mu of the three cube
    roots of residue / 2; their product is 1.
    """
    c = complex(residue) / 2.0
    if c == 0:
        raise ValueError("the residue must be nonzero")
    rad = abs(c) ** (1.0 / 3.0)
    ang = cmath.phase(c)
    mus = sorted(rad * math.sin((ang + 2.0 * math.pi * k) / 3.0) for k in range(3))
    return np.array([math.exp(-4.0 * math.pi * mu) for mu in mus])


# ---------------------------------------------------------------------------
# conjugacy classification
# ---------------------------------------------------------------------------


def _numeric_rank(m, rel=1e-7):
    s = np.linalg.svd(m, compute_uv=False)
    cut = rel * max(1.0, float(s[0]) if len(s) else 1.0)
    return int(np.sum(s > cut))


def classify_sl3(mat, tol=1e-5):
    """Conjugacy type of a positive-determinant 3x3 matrix, by spectrum.

    Returns one of "hyperbolic", "quasi-hyperbolic", "planar",
    "parabolic", "elliptic-or-other".  Positive real spectra split by
    multiplicity (relative eigenvalue gaps against tol) and by the rank
    of M - lambda I at a repeated eigenvalue: a diagonalizable repeat is
    planar, a double eigenvalue with a Jordan block is quasi-hyperbolic,
    and a unipotent full Jordan block is parabolic.
    """
    if isinstance(mat, SL3):
        eigs = mat.eigenvalues()
        m = mat.represented()
    else:
        m = np.asarray(mat, dtype=float)
        eigs = np.linalg.eigvals(m)
    scale = 1.0 + float(np.max(np.abs(eigs)))
    if np.any(np.abs(eigs.imag) > tol * scale):
        return "elliptic-or-other"
    lams = np.sort(eigs.real)
    if lams[0] <= tol * scale:
        return "elliptic-or-other"
    gaps = np.diff(lams) / lams[:-1]
    if np.all(gaps > tol):
        return "hyperbolic"
    if np.all(gaps <= tol):
        # triple eigenvalue; unimodularity forces it to be 1
        lam = float(np.mean(lams))
        r = _numeric_rank(m - lam * np.eye(3), rel=tol)
        if r == 0:
            return "elliptic-or-other"  # the identity
        if r == 1:
            return "planar"
        return "parabolic"
    lam = float(lams[0] if gaps[0] <= tol else lams[1])
    r = _numeric_rank(m - lam * np.eye(3), rel=tol)
    if r <= 1:
        return "planar"
    return "quasi-hyperbolic"


def classify_end_order3(residue, tol=0.05):
    """Qualitative end geometry at a third order pole from its residue.

    Negative real part: V-end.  Positive real part: geodesic end with
    hyperbolic circle holonomy.  Purely imaginary: geodesic end whose
    holonomy is quasi-hyperbolic or planar.  Residues near the
    imaginary axis (relative to tol) but not on it are ambiguous at
    numerical precision.
    """
    r = complex(residue)
    if r == 0:
        raise ValueError("the residue must be nonzero")
    if r.real == 0.0:
        return "geodesic (quasi-hyperbolic or planar)"
    if abs(r.real) < tol * abs(r):
        return "ambiguous"
    if r.real < 0:
        return "V-end"
    return "geodesic (hyperbolic)"


# ---------------------------------------------------------------------------
# boundary polygons of polynomial differentials
# ---------------------------------------------------------------------------


def _leading_data(b):
    if b.poles or b.domain != "plane":
        raise ValueError("boundary polygons need a polynomial differential")
    d = b.numerator_degree
    lead = b.numerator[-1]
    return d + 3, complex(lead)


def vertex_rays(b):
    """Directions whose developed rays converge to the polygon vertices.

    For degree d with leading coefficient a there are n = d + 3
    vertices; ray k points along theta_k = (2 pi k - arg(a/2)) / n.  The
    tuple keeps the k-order, so edge k of edge_rays runs between
    vertices k and k+1.
    """
    n, lead = _leading_data(b)
    base = -cmath.phase(lead / 2.0)
    return tuple(((base + 2.0 * math.pi * k) / n) % (2.0 * math.pi) for k in range(n))


def edge_rays(b):
    """Directions heading into the open edge between vertices k and k+1."""
    n, lead = _leading_data(b)
    base = -cmath.phase(lead / 2.0)
    return tuple(
        ((base + (2.0 * k + 1.0) * math.pi) / n) % (2.0 * math.pi) for k in range(n)
    )


def radius_for_flat_length(b, flat_length):
    """Modulus |z| where a ray from the origin reaches the given flat
    arclength, in the leading-term approximation |b| ~ |a| |z|^d."""
    n, lead = _leading_data(b)
    amp = abs(lead / 2.0) ** (1.0 / 3.0)
    return (n * flat_length / (3.0 * amp)) ** (3.0 / n)


def _edge_probe_endpoint(b, k, flat_length, offset):
    """z endpoint whose flat coordinate is (flat_length + i offset) times
    the unit direction of wall ray k, leading-term approximation."""
    n, lead = _leading_data(b)
    amp = abs(lead / 2.0) ** (1.0 / 3.0)
    theta = edge_rays(b)[k]
    mag = (n * math.hypot(flat_length, offset) / (3.0 * amp)) ** (3.0 / n)
    ang = theta + (3.0 / n) * math.atan2(offset, flat_length)
    return mag * cmath.exp(1j * ang)


def convex_position(points2d):
    """Certificate that planar points are in strictly convex position.

    Sorts the points by angle about their centroid and checks that every
    consecutive turn is a strict left turn.  Returns (ok, order,
    min_cross).
    """
    pts = np.asarray(points2d, dtype=float)
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
    p = pts[order]
    n = len(p)
    crosses = []
    for i in range(n):
        u = p[(i + 1) % n] - p[i]
        v = p[(i + 2) % n] - p[(i + 1) % n]
        crosses.append(float(u[0] * v[1] - u[1] * v[0]))
    ok = bool(all(x > 0.0 for x in crosses))
    return ok, tuple(int(i) for i in order), min(crosses)


@dataclass(frozen=True)
class PolygonConfig:
    # extreme transverse offsets +-3 land within exp(-2 sqrt(3) * 3) of
    # the adjacent vertices, so the probe fan doubles as an incidence check
    flat_length: float = 12.0
    offsets: tuple = (-3.0, -1.5, 0.0, 1.5, 3.0)
    max_step: float = 0.01
    loop_segments: int = 64
    loop_radius_factor: float = 0.95
    distinct_eps: float = 1e-2
    collinear_tol: float = 1e-2


@dataclass(eq=False)
class PolygonReport:
    n: int
    base: complex
    vertex_rays: tuple
    edge_rays: tuple
    vertices: np.ndarray  # (n, 3) proj_point rows, index k
    edge_offsets: tuple
    edge_samples: list  # per edge k: (len(offsets), 3) rows
    holonomy: SL3
    end_label: str
    separation: float
    convex: bool
    hull_order: tuple
    min_cross: float
    twist_defect: float
    collinearity_defect: float

    def affine_vertices(self):
        return sum_chart(self.vertices)


def polygon_extract(sampler, b, base=0j, cfg=None):
    """Boundary polygon data of a polynomial differential.

    Shoots one developed ray per stable sector center (vertex probes)
    and a fan of rays with transverse flat offsets along each wall
    direction (edge probes), all from the base point out to the
    configured flat arclength.  Checks: vertices pairwise separated,
    edge samples collinear with their two adjacent vertices, vertices in
    strictly convex position in the chart normal to their mean, and the
    circle holonomy permuting the vertex list trivially within one
    period.
    """
    cfg = cfg or PolygonConfig()
    base = complex(base)
    n, _ = _leading_data(b)
    v_rays = vertex_rays(b)
    e_rays = edge_rays(b)
    radius = radius_for_flat_length(b, cfg.flat_length)

    def probe(target):
        path = PathSpec(
            vertices=(base, target), flat_arclength=True, max_step=cfg.max_step
        )
        dp = develop_path(sampler, path)
        if not np.all(np.isfinite(dp.endpoint)):
            raise ProbeDivergenceError(f"probe toward {target} lost finiteness")
        return dp.endpoint

    vertices = np.array([probe(radius * cmath.exp(1j * th)) for th in v_rays])

    edge_samples = []
    collin = 0.0
    for k in range(n):
        rows = np.array(
            [
                probe(base + _edge_probe_endpoint(b, k, cfg.flat_length, s))
                for s in cfg.offsets
            ]
        )
        edge_samples.append(rows)
        va, vb = vertices[k], vertices[(k + 1) % n]
        for r in rows:
            collin = max(collin, abs(float(np.linalg.det(np.stack([va, vb, r])))))
    if collin > cfg.collinear_tol:
        raise DegenerateEdgeError(
            f"edge samples leave the vertex-vertex line by {collin:.2e}"
        )

    sep = min(
        chordal_distance(vertices[i], vertices[j])
        for i in range(n)
        for j in range(i + 1, n)
    )
    if sep < cfg.distinct_eps:
        raise DegenerateEdgeError(f"vertex separation {sep:.2e} below threshold")

    ok, order, min_cross = convex_position(mean_chart(vertices))
    if min_cross <= 0.0:
        raise DegenerateEdgeError("adjacent polygon edges are collinear")

    loop = PathSpec.circle(
        base,
        cfg.loop_radius_factor * radius,
        segments=cfg.loop_segments,
        max_step=cfg.max_step,
    )
    hol = holonomy_loop(sampler, loop, tol=1e-6)
    hrep = hol.represented()
    twist = max(
        chordal_distance(proj_point(hrep @ vertices[k]), vertices[k]) for k in range(n)
    )

    return PolygonReport(
        n=n,
        base=base,
        vertex_rays=v_rays,
        edge_rays=e_rays,
        vertices=vertices,
        edge_offsets=tuple(cfg.offsets),
        edge_samples=edge_samples,
        holonomy=hol,
        end_label=f"broken geodesic ({n} pieces)",
        separation=float(sep),
        convex=ok,
        hull_order=order,
        min_cross=min_cross,
        twist_defect=float(twist),
        collinearity_defect=float(collin),
    )
