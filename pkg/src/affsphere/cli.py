"""Experiment runner.

Each subcommand wraps one stage of the solve -> transport -> develop
pipeline behind a JSON config document, writes a schema-validated JSON
report into the output directory, and optionally CSV field dumps
(--format csv) or an SVG figure (--format svg).  The pipeline is
deterministic: the same config produces byte-identical artifacts, and
--threads never changes results (reductions are single-writer).

Exit codes: 0 success, 2 config or precondition validation, 3 numerical
non-convergence, 4 internal assertion.
"""

from __future__ import annotations

import argparse
import cmath
import math
import sys

import numpy as np

from . import jsonio
from .convexgeom import (
    ConvexityLossError,
    blaschke_metric,
    density_ratio,
    inclusion_bounds_check,
    support_solve,
)
from .cubicdiff import (
    INFINITY,
    CubicDifferential,
    PoleEvaluationError,
    UnsupportedOrderError,
    classify_pole,
    special_sectors,
)
from .develop import (
    DegenerateEdgeError,
    PolygonConfig,
    ProbeDivergenceError,
    classify_end_order3,
    classify_sl3,
    dev_limit,
    develop_path,
    holonomy_eigen_from_residue,
    polygon_extract,
    radius_for_flat_length,
)
from .jsonio import ConfigError
from .transport import (
    ComplexityLeakError,
    ConnectionSampler,
    PathSpec,
    StepUnderflowError,
    parallel_transport,
)
from .wangpde import (
    TWO_ROOT_THREE,
    Grid2D,
    InsufficientSamplesError,
    NonConvergenceError,
    PreconditionError,
    bessel_supersolution,
    disk_center_check,
    fit_exponential_rate,
    flat_candidate,
    gradient_bound_check,
    solve,
    u_field,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INTERNAL = 4


# ---------------------------------------------------------------------------
# small SVG toolkit (the chart x1 + x2 + x3 = 1, drawn as (x1, x2))
# ---------------------------------------------------------------------------

_PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


def _chart2d(points, clip=40.0):
    """Tolerant projection of unit 3-vectors to the x+y+z = 1 chart.

    Returns a list of (x, y) pairs, skipping samples too close to the
    chart hyperplane or outside the clip box.
    """
    out = []
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    for row in pts:
        s = float(row.sum())
        if abs(s) < 1e-6 * max(1.0, float(np.abs(row).max())):
            out.append(None)
            continue
        x, y = row[0] / s, row[1] / s
        if abs(x) > clip or abs(y) > clip:
            out.append(None)
        else:
            out.append((x, y))
    return out


class _SvgCanvas:
    """Fixed-size SVG assembly with a data-to-screen affine map."""

    def __init__(self, xmin, xmax, ymin, ymax, size=640, margin=0.07):
        span = max(xmax - xmin, ymax - ymin, 1e-9)
        pad = margin * span
        self.x0, self.y1 = xmin - pad, ymax + pad
        self.scale = size / (span + 2.0 * pad)
        self.size = size
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>',
        ]

    def map(self, p):
        return (
            (p[0] - self.x0) * self.scale,
            (self.y1 - p[1]) * self.scale,
        )

    def polyline(self, pts, color, width=1.5, dashed=False, closed=False):
        runs, cur = [], []
        for p in pts:
            if p is None:
                if len(cur) > 1:
                    runs.append(cur)
                cur = []
            else:
                cur.append(p)
        if len(cur) > 1:
            runs.append(cur)
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        for run in runs:
            coords = " ".join(
                f"{sx:.2f},{sy:.2f}" for sx, sy in (self.map(p) for p in run)
            )
            tag = "polygon" if closed else "polyline"
            self.parts.append(
                f'<{tag} points="{coords}" fill="none" stroke="{color}" '
                f'stroke-width="{width}"{dash}/>'
            )

    def circle(self, p, r_px, color, fill=True):
        sx, sy = self.map(p)
        style = (
            f'fill="{color}"' if fill else f'fill="none" stroke="{color}" stroke-width="1.5"'
        )
        self.parts.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="{r_px}" {style}/>')

    def text(self, p, label, color="#333333", dx=6, dy=-6):
        sx, sy = self.map(p)
        self.parts.append(
            f'<text x="{sx + dx:.2f}" y="{sy + dy:.2f}" font-family="monospace" '
            f'font-size="13" fill="{color}">{label}</text>'
        )

    def finish(self):
        self.parts.append("</svg>")
        return "\n".join(self.parts) + "\n"


def _bounds(point_lists):
    xs, ys = [], []
    for pts in point_lists:
        for p in pts:
            if p is not None:
                xs.append(p[0])
                ys.append(p[1])
    if not xs:
        return -1.0, 1.0, -1.0, 1.0
    return min(xs), max(xs), min(ys), max(ys)


_SIMPLEX = [(1.0, 0.0), (0.0, 1.0), (0.0, 0.0)]


def _line_plot_svg(xs, series, labels, title):
    """Plain polyline plot (used for radial profiles and decay fits)."""
    pts_all = []
    for ys in series:
        pts_all.append([(x, y) for x, y in zip(xs, ys) if math.isfinite(y)])
    xmin, xmax, ymin, ymax = _bounds(pts_all)
    cv = _SvgCanvas(xmin, xmax, ymin, ymax)
    cv.polyline(
        [(xmin, ymin), (xmax, ymin)], "#999999", width=1.0
    )
    cv.polyline(
        [(xmin, ymin), (xmin, ymax)], "#999999", width=1.0
    )
    for k, pts in enumerate(pts_all):
        color = _PALETTE[k % len(_PALETTE)]
        cv.polyline(pts, color)
        if pts:
            cv.text(pts[-1], labels[k], color=color)
    cv.text((xmin, ymax), title)
    return cv.finish()


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _grid_from_spec(gspec, b):
    """Square grid per the config; poles of b are masked out with a disk
    of maskCells spacings so the solver's pole guard is satisfied."""
    g = Grid2D.square(gspec.truncation_radius, gspec.resolution, center=gspec.center)
    if b is not None and b.poles:
        zm = g.zmesh()
        h = max(g.hx, g.hy)
        mask = np.zeros((g.ny, g.nx), dtype=bool)
        for p, _ in b.poles:
            mask |= np.abs(zm - p) <= gspec.mask_cells * h
        if mask.any():
            g = Grid2D.square(
                gspec.truncation_radius, gspec.resolution, center=gspec.center, mask=mask
            )
    return g


def _cstar_residue(b):
    if b.poles == ((0j, 3),) and b.numerator_degree == 0:
        return b.numerator[0]
    raise ConfigError(
        "probe.sampler: exact_cstar needs a differential R z^-3 "
        "(constant numerator, single pole of order 3 at 0)"
    )


def _solve_stage(cfg, stage):
    """Run the Wang solve for pipeline samplers; non-convergence aborts."""
    cfg.require("grid")
    grid = _grid_from_spec(cfg.grid, cfg.differential)
    w = solve(cfg.differential, grid, cfg=cfg.solver)
    if not w.diagnostics["converged"]:
        raise NonConvergenceError(
            f"{stage}: metric solve stalled at residual "
            f"{w.diagnostics['final_residual']:.3e} "
            f"after {w.diagnostics['iterations']} iterations"
        )
    return w


def _sampler_from_config(cfg, stage):
    mode = cfg.probe.sampler
    b = cfg.differential
    if mode == "model_flat":
        return ConnectionSampler.model_flat(b), None
    if mode == "flat_chart":
        return ConnectionSampler.flat_chart(), None
    if mode == "exact_cstar":
        return ConnectionSampler.exact_cstar(_cstar_residue(b)), None
    w = _solve_stage(cfg, stage)
    return ConnectionSampler.raw_from_field(w, b), w


def _eig_json(matrix):
    eig = sorted(
        (complex(v) for v in matrix.eigenvalues()),
        key=lambda v: (-abs(v), -v.real, -v.imag),
    )
    return [jsonio.complex_pair(v) for v in eig]


# ---------------------------------------------------------------------------
# subcommand handlers; each returns a result dict:
#   kind, payload, fields [(suffix, grid, values)], svg text, exit code
# ---------------------------------------------------------------------------


def _cmd_analyze(cfg, args):
    cfg.require("differential")
    b = cfg.differential
    locations = [p for p, _ in b.poles]
    if b.numerator_degree - b.denominator_degree + 6 > 0:
        locations.append(INFINITY)
    if not locations:
        raise ConfigError("differential: no poles to analyze (add poles or growth)")

    entries = []
    for loc in locations:
        pa = classify_pole(b, loc)
        entry = {
            "location": "infinity" if pa.location == INFINITY else pa.location,
            "order": pa.order,
            "residue": pa.residue,
            "n": pa.n,
            "eigenvalues": None,
            "endLabel": None,
        }
        if pa.order == 3:
            entry["eigenvalues"] = [float(v) for v in holonomy_eigen_from_residue(pa.residue)]
            entry["endLabel"] = classify_end_order3(pa.residue)
        elif pa.order > 3:
            sd = special_sectors(pa.n)
            entry["endLabel"] = f"broken geodesic ({pa.n} pieces)"
            entry["wallRays"] = list(sd.wall_rays)
            entry["unstableRays"] = list(sd.unstable_rays)
        entries.append(entry)

        where = "infinity" if pa.location == INFINITY else f"{pa.location:g}"
        print(f"pole at {where}: order {pa.order}", end="")
        if pa.order == 3:
            ev = ", ".join(f"{v:.6e}" for v in entry["eigenvalues"])
            print(f", residue {pa.residue:.6g}")
            print(f"  predicted holonomy eigenvalues: {ev}")
            print(f"  end type: {entry['endLabel']}")
        elif pa.order > 3:
            print(f", n = {pa.n}, end type: {entry['endLabel']}")
        else:
            print(" (removable or mild)")

    return {"kind": "analysis", "payload": {"poles": entries}}


def _cmd_solve_wang(cfg, args):
    cfg.require("differential", "grid")
    grid = _grid_from_spec(cfg.grid, cfg.differential)
    w = solve(cfg.differential, grid, cfg=cfg.solver)
    diag = dict(w.diagnostics)
    if not diag["converged"]:
        raise NonConvergenceError(
            "solve-wang: Newton stalled at residual "
            f"{diag['final_residual']:.3e} after {diag['iterations']} iterations"
        )
    u = u_field(w, cfg.differential)
    ok = grid.unmasked()
    ufin = u.values[ok & np.isfinite(u.values)]
    payload = {
        "diagnostics": diag,
        "fieldStats": {
            "wMin": float(np.min(w.values[ok])),
            "wMax": float(np.max(w.values[ok])),
            "uMin": float(np.min(ufin)),
            "uMax": float(np.max(ufin)),
            "nodes": int(ok.sum()),
            "spacing": grid.hx,
        },
    }
    print(
        f"solved in {diag['iterations']} Newton steps, residual "
        f"{diag['final_residual']:.3e}, barrier multiplier {diag['lambda']:g}"
    )
    print(
        f"u range [{payload['fieldStats']['uMin']:.3e}, "
        f"{payload['fieldStats']['uMax']:.3e}] on {payload['fieldStats']['nodes']} nodes"
    )

    svg = None
    if args.format == "svg":
        sp = u.interpolator()
        rmax = 0.95 * cfg.grid.truncation_radius
        radii = np.linspace(0.05 * rmax, rmax, 60)
        prof = []
        for r in radii:
            ang = 2.0 * math.pi * np.arange(180) / 180
            vals = [
                abs(sp.value(cfg.grid.center + r * cmath.exp(1j * a))) for a in ang
            ]
            m = max(vals)
            prof.append(math.log10(m) if m > 1e-300 else float("nan"))
        svg = _line_plot_svg(
            list(radii), [prof], ["log10 sup|u|"], "metric deviation profile"
        )

    return {
        "kind": "wang-solution",
        "payload": payload,
        "fields": [("w", grid, w.values), ("u", grid, u.values)],
        "svg": svg,
    }


def _cmd_transport(cfg, args):
    cfg.require("differential")
    if not cfg.probe.paths and not cfg.probe.loops:
        raise ConfigError("probe: transport needs at least one of paths or loops")
    sampler, _ = _sampler_from_config(cfg, "transport")

    transports = []
    for verts in cfg.probe.paths:
        path = PathSpec(vertices=verts, max_step=cfg.probe.max_step)
        mat = parallel_transport(sampler, path)
        transports.append(
            {
                "path": [jsonio.complex_pair(v) for v in verts],
                "matrix": mat.to_json(),
            }
        )
        print(f"path {verts[0]:g} -> {verts[-1]:g}: logScale {mat.log_scale:.4f}")

    loops = []
    for lp in cfg.probe.loops:
        path = PathSpec.circle(
            lp.center, lp.radius, segments=lp.segments, max_step=cfg.probe.max_step
        )
        mat = parallel_transport(sampler, path)
        eig = _eig_json(mat)
        loops.append(
            {
                "center": jsonio.complex_pair(lp.center),
                "radius": lp.radius,
                "segments": lp.segments,
                "matrix": mat.to_json(),
                "eigenvalues": eig,
            }
        )
        mods = ", ".join(f"{complex(e[0], e[1]):.6g}" for e in eig)
        print(f"loop |z - {lp.center:g}| = {lp.radius:g}: eigenvalues {mods}")

    return {
        "kind": "transport",
        "payload": {"transports": transports, "loops": loops},
    }


def _cmd_develop(cfg, args):
    cfg.require("differential")
    if not cfg.probe.rays:
        raise ConfigError("probe.rays: develop needs at least one ray angle")
    if cfg.probe.sampler == "exact_cstar":
        raise ConfigError(
            "probe.rays: rays start at 0, which is singular for exact_cstar; "
            "use loops via the transport command instead"
        )
    sampler, _ = _sampler_from_config(cfg, "develop")
    b = cfg.differential
    try:
        radius = radius_for_flat_length(b, cfg.probe.flat_length)
    except (ValueError, UnsupportedOrderError):
        radius = cfg.probe.flat_length

    rays = []
    curves = []
    for theta in cfg.probe.rays:
        path = PathSpec(
            vertices=(0j, radius * cmath.exp(1j * theta)),
            flat_arclength=True,
            max_step=cfg.probe.max_step,
        )
        dp = develop_path(sampler, path)
        if len(dp) >= 10:
            limit, converged, _ = dev_limit(dp)
        else:
            limit, converged = dp.endpoint, False
        rays.append(
            {
                "theta": theta,
                "limit": [float(v) for v in limit],
                "converged": converged,
                "samples": len(dp),
            }
        )
        curves.append(dp)
        state = "converged" if converged else "not converged"
        print(
            f"ray theta = {theta:.4f}: limit "
            f"[{limit[0]:.4f}, {limit[1]:.4f}, {limit[2]:.4f}] ({state}, "
            f"{len(dp)} samples)"
        )

    svg = None
    if args.format == "svg":
        charted = [_chart2d(dp.points) for dp in curves]
        xmin, xmax, ymin, ymax = _bounds(charted + [_SIMPLEX])
        cv = _SvgCanvas(xmin, xmax, ymin, ymax)
        cv.polyline(_SIMPLEX, "#bbbbbb", width=1.0, dashed=True, closed=True)
        for k, pts in enumerate(charted):
            cv.polyline(pts, _PALETTE[k % len(_PALETTE)])
            if pts and pts[-1] is not None:
                cv.circle(pts[-1], 3.0, _PALETTE[k % len(_PALETTE)])
        svg = cv.finish()

    return {"kind": "develop", "payload": {"rays": rays}, "svg": svg}


def _cmd_polygon(cfg, args):
    cfg.require("differential")
    b = cfg.differential
    if b.poles:
        raise ConfigError(
            "differential: polygon extraction works on polynomial coefficients "
            "(the pole sits at infinity)"
        )
    if cfg.probe.sampler in ("flat_chart", "exact_cstar"):
        raise ConfigError(
            f"probe.sampler: {cfg.probe.sampler} does not carry polygon data"
        )
    w = None
    use_pipeline = cfg.probe.sampler == "pipeline" or cfg.grid is not None
    if use_pipeline:
        if cfg.grid is None:
            raise ConfigError("grid: the pipeline sampler needs a grid section")
        w = _solve_stage(cfg, "polygon")
        sampler = ConnectionSampler.raw_from_field(w, b)
    else:
        sampler = ConnectionSampler.model_flat(b)

    pc = PolygonConfig(
        flat_length=cfg.probe.flat_length,
        offsets=cfg.probe.offsets,
        max_step=cfg.probe.max_step,
    )
    report = polygon_extract(sampler, b, cfg=pc)
    # the plane is simply connected, so the loop holonomy is identity up
    # to integration noise; classify at the measured noise floor
    mclass = classify_sl3(
        report.holonomy, tol=max(1e-5, 10.0 * report.twist_defect)
    )
    payload = {
        "n": report.n,
        "vertices": [[float(v) for v in row] for row in report.vertices],
        "vertexRays": list(report.vertex_rays),
        "edgeRays": list(report.edge_rays),
        "edges": [
            {
                "index": k,
                "offsets": list(report.edge_offsets),
                "samples": [[float(v) for v in row] for row in report.edge_samples[k]],
            }
            for k in range(report.n)
        ],
        "holonomy": report.holonomy.to_json(),
        "classification": {"matrixClass": mclass, "endLabel": report.end_label},
        "separation": report.separation,
        "convex": report.convex,
        "twistDefect": report.twist_defect,
        "collinearityDefect": report.collinearity_defect,
    }
    print(f"n = {report.n} vertices, pairwise separation {report.separation:.3e}")
    for k, row in enumerate(report.vertices):
        print(f"  X{k + 1} = [{row[0]:.6f}, {row[1]:.6f}, {row[2]:.6f}]")
    print(
        f"convex position: {report.convex}, holonomy class: {mclass}, "
        f"end type: {report.end_label}"
    )

    svg = None
    if args.format == "svg":
        verts = _chart2d(report.vertices)
        sample_pts = [_chart2d(rows) for rows in report.edge_samples]
        xmin, xmax, ymin, ymax = _bounds([verts, _SIMPLEX] + sample_pts)
        cv = _SvgCanvas(xmin, xmax, ymin, ymax)
        cv.polyline(_SIMPLEX, "#bbbbbb", width=1.0, dashed=True, closed=True)
        cv.polyline(verts, "#1f77b4", width=2.0, closed=True)
        for k, p in enumerate(verts):
            if p is not None:
                cv.circle(p, 4.0, "#d62728")
                cv.text(p, f"X{k + 1}")
        for rows in sample_pts:
            for p in rows:
                if p is not None:
                    cv.circle(p, 2.0, "#2ca02c")
        svg = cv.finish()

    fields = []
    if w is not None:
        fields.append(("w", w.grid, w.values))
    return {"kind": "polygon-report", "payload": payload, "fields": fields, "svg": svg}


def _cmd_support_fn(cfg, args):
    cfg.require("domain_shape")
    shape = cfg.domain_shape
    sol = support_solve(shape.domain, n=shape.resolution, pad=shape.pad)
    diag = dict(sol.diagnostics)
    if not diag["converged"]:
        raise NonConvergenceError(
            "support-fn: Newton stalled at collar residual "
            f"{diag['collar_residual']:.3e}"
        )
    inclusion = inclusion_bounds_check(sol)
    met = blaschke_metric(sol)
    center, rho = shape.domain.chebyshev_center()
    # curvature statistics over the half-inradius disk about the center:
    # nodes nearer the boundary carry the metric blow-up and would bury
    # the bulk value of f_Omega in truncation noise
    zc = sol.grid.zmesh()
    bulk = met.curvature_valid & (
        (zc.real - center[0]) ** 2 + (zc.imag - center[1]) ** 2 < (0.5 * rho) ** 2
    )
    fomega = None
    if bulk.any():
        f_vals = met.f_omega[bulk]
        fomega = {
            "mean": float(np.mean(f_vals)),
            "min": float(np.min(f_vals)),
            "max": float(np.max(f_vals)),
            "nodes": int(bulk.sum()),
        }
    try:
        ratio = density_ratio(sol, (float(center[0]), float(center[1])))
    except (PreconditionError, ValueError):
        ratio = None

    payload = {
        "diagnostics": diag,
        "inclusion": inclusion,
        "fOmega": fomega,
        "densityRatio": ratio,
        "domain": {
            "kind": shape.domain.kind,
            "inradius": rho,
            "chebyshevCenter": [float(center[0]), float(center[1])],
        },
    }
    print(
        f"support function solved in {diag['iterations']} steps, collar "
        f"residual {diag['collar_residual']:.3e}"
    )
    print(
        f"inclusion margins: lower {inclusion['lower_margin']:.3e}, "
        f"upper {inclusion['upper_margin']:.3e} ({'ok' if inclusion['passed'] else 'violated'})"
    )
    if fomega is not None:
        print(
            f"f_Omega over {fomega['nodes']} nodes: mean {fomega['mean']:.4f}, "
            f"range [{fomega['min']:.4f}, {fomega['max']:.4f}]"
        )
    if ratio is not None:
        print(f"Hilbert/Blaschke area density ratio at the center: {ratio:.4f}")

    svg = None
    if args.format == "svg":
        dom = shape.domain
        if dom.kind == "polygon":
            outline = [tuple(v) for v in dom.vertices]
        else:
            ang = np.linspace(0.0, 2.0 * math.pi, 181)
            outline = [
                (
                    dom.center[0] + dom.radius * math.cos(a),
                    dom.center[1] + dom.radius * math.sin(a),
                )
                for a in ang
            ]
        big = dom.circumradius_about(center)
        ang = np.linspace(0.0, 2.0 * math.pi, 181)
        circ_in = [
            (center[0] + rho * math.cos(a), center[1] + rho * math.sin(a)) for a in ang
        ]
        circ_out = [
            (center[0] + big * math.cos(a), center[1] + big * math.sin(a)) for a in ang
        ]
        from .convexgeom import hilbert_unit_ball

        th, rr = hilbert_unit_ball(dom, (float(center[0]), float(center[1])), 360)
        ball = [
            (center[0] + r * math.cos(t), center[1] + r * math.sin(t))
            for t, r in zip(th, rr)
        ]
        xmin, xmax, ymin, ymax = _bounds([circ_out, outline])
        cv = _SvgCanvas(xmin, xmax, ymin, ymax)
        cv.polyline(outline, "#1f77b4", width=2.0, closed=dom.kind == "polygon")
        cv.polyline(circ_in, "#999999", width=1.0, dashed=True, closed=True)
        cv.polyline(circ_out, "#999999", width=1.0, dashed=True, closed=True)
        cv.polyline(ball, "#d62728", width=1.5, closed=True)
        cv.circle((float(center[0]), float(center[1])), 3.0, "#d62728")
        svg = cv.finish()

    fields = [("support", sol.grid, sol.values)]
    f_dump = np.array(met.f_omega)
    f_dump[~met.curvature_valid] = float("nan")
    fields.append(("fomega", sol.grid, f_dump))
    return {
        "kind": "support-function",
        "payload": payload,
        "fields": fields,
        "svg": svg,
    }


def _cmd_validate_decay(cfg, args):
    dec = cfg.decay
    if len(dec.radii) < 3:
        raise ConfigError("decay.radii: need at least 3 disk radii for the rate fit")
    b2 = CubicDifferential.polynomial(2.0 + 0j)
    lam = math.exp(dec.boundary_value)
    rows = []
    centers = []
    for r in dec.radii:
        half = 1.1 * r
        n = 2 * int(math.floor(half / dec.spacing)) + 1
        grid = Grid2D.disk(r, n)
        w_rim = flat_candidate(b2, grid) + dec.boundary_value
        sol = solve(b2, grid, boundary=w_rim, cfg=cfg.solver)
        if not sol.diagnostics["converged"]:
            raise NonConvergenceError(
                f"validate-decay: solve on the radius-{r:g} disk stalled at "
                f"residual {sol.diagnostics['final_residual']:.3e}"
            )
        u = u_field(sol, b2)
        ci = (grid.ny - 1) // 2
        cj = (grid.nx - 1) // 2
        u0 = float(u.values[ci, cj])
        centers.append(u0)
        slack = 1e-6 + 10.0 * grid.hx**2

        v0 = bessel_supersolution(r, 0j)
        rows.append(
            {
                "name": "bessel-supersolution",
                "radius": r,
                "value": u0,
                "bound": v0,
                "passed": bool(u0 <= v0 + slack),
            }
        )
        rows.append(
            {
                "name": "center-bound",
                "radius": r,
                "value": u0,
                "bound": math.log(lam),
                "passed": bool(disk_center_check(u, lam, r)),
            }
        )
        rows.append(
            {
                "name": "gradient-bound",
                "radius": r,
                "value": None,
                "bound": None,
                "passed": bool(gradient_bound_check(u, 0j, 0.5 * r)),
            }
        )

    rate, _, r2 = fit_exponential_rate(dec.radii, centers, radial_power=0.5)
    target = TWO_ROOT_THREE
    rows.append(
        {
            "name": "decay-rate",
            "radius": None,
            "value": rate,
            "bound": target,
            "passed": bool(abs(rate - target) <= 0.05 * target),
        }
    )

    all_passed = all(row["passed"] for row in rows)
    print(f"{'check':<22}{'radius':>8}{'value':>14}{'bound':>14}  result")
    for row in rows:
        rad = f"{row['radius']:g}" if row["radius"] is not None else "-"
        val = f"{row['value']:.4e}" if row["value"] is not None else "-"
        bnd = f"{row['bound']:.4e}" if row["bound"] is not None else "-"
        verdict = "PASS" if row["passed"] else "FAIL"
        print(f"{row['name']:<22}{rad:>8}{val:>14}{bnd:>14}  {verdict}")
    print(
        f"fitted decay rate {rate:.4f} vs 2*sqrt(3) = {target:.4f} "
        f"(fit r^2 = {r2:.6f})"
    )

    svg = None
    if args.format == "svg":
        logs = [math.log(u0) if u0 > 0 else float("nan") for u0 in centers]
        svg = _line_plot_svg(
            list(dec.radii), [logs], ["log u(0)"], "center value decay"
        )

    return {
        "kind": "decay-validation",
        "payload": {
            "rows": rows,
            "fittedRate": rate,
            "target": target,
            "fitRSquared": r2,
            "centerValues": centers,
            "allPassed": all_passed,
        },
        "svg": svg,
        "exit": EXIT_OK if all_passed else EXIT_NUMERIC,
    }


_HANDLERS = {
    "analyze": _cmd_analyze,
    "solve-wang": _cmd_solve_wang,
    "transport": _cmd_transport,
    "develop": _cmd_develop,
    "polygon": _cmd_polygon,
    "support-fn": _cmd_support_fn,
    "validate-decay": _cmd_validate_decay,
}


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="affsphere",
        description="Affine sphere experiment runner.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config JSON")
    common.add_argument("--out", default=".", help="artifact output directory")
    common.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker budget; results never depend on it",
    )
    common.add_argument(
        "--seed", type=int, default=None, help="reserved (the pipeline is deterministic)"
    )
    common.add_argument(
        "--format",
        choices=("json", "csv", "svg"),
        default="json",
        help="extra artifact beside the JSON report",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "classify poles, residues, and predicted holonomy"),
        ("solve-wang", "solve the metric equation on the configured grid"),
        ("transport", "parallel transport along config paths and loops"),
        ("develop", "develop rays from the origin and estimate limits"),
        ("polygon", "extract the boundary polygon of a polynomial differential"),
        ("support-fn", "solve the support-function problem on a convex domain"),
        ("validate-decay", "run the decay/barrier validator suite on disks"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _write_artifacts(result, cfg, args):
    written = []
    written.append(
        jsonio.write_json_artifact(
            args.out,
            cfg.basename,
            result["kind"],
            args.command,
            cfg.raw,
            result["payload"],
        )
    )
    if args.format == "csv":
        fields = result.get("fields", [])
        if not fields:
            print("note: this command has no field data; CSV skipped")
        for suffix, grid, values in fields:
            written.append(
                jsonio.write_field_csv(args.out, f"{cfg.basename}-{suffix}", grid, values)
            )
    if args.format == "svg":
        if result.get("svg"):
            written.append(jsonio.write_svg(args.out, cfg.basename, result["svg"]))
        else:
            print("note: this command has no figure; SVG skipped")
    return written


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = jsonio.load_config(args.config)
        result = _HANDLERS[args.command](cfg, args)
        written = _write_artifacts(result, cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, UnsupportedOrderError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, ComplexityLeakError) as exc:
        print(f"internal assertion: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (
        NonConvergenceError,
        StepUnderflowError,
        ProbeDivergenceError,
        DegenerateEdgeError,
        ConvexityLossError,
        InsufficientSamplesError,
        PoleEvaluationError,
        ArithmeticError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    for path in written:
        print(f"wrote {path}")
    return result.get("exit", EXIT_OK)


if __name__ == "__main__":
    sys.exit(main())
