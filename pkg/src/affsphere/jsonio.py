"""Experiment configuration parsing and deterministic artifact writers.

One JSON document describes an experiment: the cubic differential, the
grid, solver knobs, probe geometry, and (for the inverse direction) a
convex domain.  Complex numbers are [re, im] pairs and angles are in
radians throughout.  Artifacts are JSON documents validating against a
versioned schema shipped with the package, CSV field dumps with header
x,y,value in row-major node order, and SVG figures.  Serialization is
canonical (sorted keys, no timestamps), so identical configs produce
byte-identical artifacts.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .convexgeom import ConvexDomain
from .cubicdiff import CubicDifferential
from .wangpde import SolverConfig

SCHEMA_ID = "affsphere/artifact/v1"
ARTIFACT_KINDS = (
    "analysis",
    "wang-solution",
    "transport",
    "develop",
    "polygon-report",
    "support-function",
    "decay-validation",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field path."""


def _schema(name):
    text = resources.files("affsphere").joinpath("schemas", name).read_text()
    return json.loads(text)


def _validator(name):
    import jsonschema

    return jsonschema.Draft202012Validator(_schema(name))


def _schema_error_path(err):
    parts = []
    for p in err.absolute_path:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        else:
            parts.append(("." if parts else "") + str(p))
    return "".join(parts) or "(top level)"


def parse_complex(value, path="value"):
    if (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        return complex(float(value[0]), float(value[1]))
    raise ConfigError(f"{path}: expected a complex number as [re, im]")


def complex_pair(z):
    z = complex(z)
    return [float(z.real), float(z.imag)]


# ---------------------------------------------------------------------------
# configuration model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    truncation_radius: float
    resolution: int
    center: complex = 0j
    mask_cells: int = 4


@dataclass(frozen=True)
class LoopSpec:
    center: complex
    radius: float
    segments: int = 64


@dataclass(frozen=True)
class ProbeSpec:
    rays: tuple = ()
    offsets: tuple = (-3.0, -1.5, 0.0, 1.5, 3.0)
    loops: tuple = ()
    flat_length: float = 12.0
    max_step: float = 0.01
    paths: tuple = ()
    sampler: str = "model_flat"


@dataclass(frozen=True)
class DomainShapeSpec:
    domain: ConvexDomain
    resolution: int = 129
    pad: float = 0.05


@dataclass(frozen=True)
class DecaySpec:
    radii: tuple = (3.0, 4.0, 5.0, 6.0)
    spacing: float = 0.05
    boundary_value: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    differential: CubicDifferential = None
    grid: GridSpec = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    domain_shape: DomainShapeSpec = None
    decay: DecaySpec = field(default_factory=DecaySpec)
    basename: str = "experiment"

    def require(self, *sections):
        for s in sections:
            if getattr(self, s if s != "domainShape" else "domain_shape") is None:
                key = "domainShape" if s == "domain_shape" else s
                raise ConfigError(f"{key}: section required by this command")
        return self


def _build_differential(doc):
    num = tuple(
        parse_complex(c, f"differential.numerator[{k}]")
        for k, c in enumerate(doc["numerator"])
    )
    poles = tuple(
        (
            parse_complex(p["location"], f"differential.poles[{k}].location"),
            int(p["order"]),
        )
        for k, p in enumerate(doc.get("poles", []))
    )
    domain = doc.get("domain")
    if domain is None:
        domain = "punctured-plane" if poles else "plane"
    try:
        return CubicDifferential(numerator=num, poles=poles, domain=domain)
    except ValueError as exc:
        raise ConfigError(f"differential: {exc}") from exc


def _build_domain_shape(doc):
    kind = doc["kind"]
    try:
        if kind == "polygon":
            dom = ConvexDomain.from_polygon(doc["vertices"])
        elif kind == "disk":
            dom = ConvexDomain.disk(
                radius=doc["radius"], center=tuple(doc.get("center", (0.0, 0.0)))
            )
        else:
            dom = ConvexDomain.regular_polygon(
                doc["sides"],
                circumradius=doc.get("circumradius", 1.0),
                center=tuple(doc.get("center", (0.0, 0.0))),
                phase=doc.get("phase"),
            )
    except ValueError as exc:
        raise ConfigError(f"domainShape: {exc}") from exc
    return DomainShapeSpec(
        domain=dom,
        resolution=int(doc.get("resolution", 129)),
        pad=float(doc.get("pad", 0.05)),
    )


def _truncation_invariant(b, grid):
    """truncation radius must clear every finite pole and zero by 2."""
    moduli = [abs(p) for p, _ in b.poles]
    moduli.append(b.finite_zero_radius())
    worst = max(moduli, default=0.0)
    if grid.truncation_radius <= worst + 2.0:
        raise ConfigError(
            "grid.truncationRadius: must exceed all finite pole/zero moduli "
            f"plus 2 (largest modulus {worst:g}, radius {grid.truncation_radius:g})"
        )


def parse_config(doc):
    """Validate a config document and build the typed model."""
    if not isinstance(doc, dict):
        raise ConfigError("(top level): expected a JSON object")
    validator = _validator("config-v1.json")
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"{_schema_error_path(err)}: {err.message}")

    b = _build_differential(doc["differential"]) if "differential" in doc else None

    grid = None
    if "grid" in doc:
        g = doc["grid"]
        grid = GridSpec(
            truncation_radius=float(g["truncationRadius"]),
            resolution=int(g["resolution"]),
            center=parse_complex(g.get("center", [0.0, 0.0]), "grid.center"),
            mask_cells=int(g.get("maskCells", 4)),
        )
        if b is not None:
            _truncation_invariant(b, grid)

    solver = SolverConfig()
    if "solver" in doc:
        s = doc["solver"]
        try:
            solver = SolverConfig(
                tolerance=float(s.get("tolerance", 1e-9)),
                max_newton=int(s.get("maxNewton", 60)),
                damping=float(s.get("damping", 1.0)),
                linear_tol=float(s.get("linearTol", 1e-10)),
                cg_max_iter=int(s.get("cgMaxIter", 2000)),
            )
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc

    probe = ProbeSpec()
    if "probe" in doc:
        p = doc["probe"]
        loops = tuple(
            LoopSpec(
                center=parse_complex(
                    l.get("center", [0.0, 0.0]), f"probe.loops[{k}].center"
                ),
                radius=float(l["radius"]),
                segments=int(l.get("segments", 64)),
            )
            for k, l in enumerate(p.get("loops", []))
        )
        paths = tuple(
            tuple(
                parse_complex(v, f"probe.paths[{k}][{j}]")
                for j, v in enumerate(path)
            )
            for k, path in enumerate(p.get("paths", []))
        )
        probe = ProbeSpec(
            rays=tuple(float(t) for t in p.get("rays", [])),
            offsets=tuple(float(s) for s in p.get("offsets", [-3, -1.5, 0, 1.5, 3])),
            loops=loops,
            flat_length=float(p.get("flatLength", 12.0)),
            max_step=float(p.get("maxStep", 0.01)),
            paths=paths,
            sampler=p.get("sampler", "model_flat"),
        )

    shape = _build_domain_shape(doc["domainShape"]) if "domainShape" in doc else None

    decay = DecaySpec()
    if "decay" in doc:
        d = doc["decay"]
        decay = DecaySpec(
            radii=tuple(float(r) for r in d.get("radii", (3.0, 4.0, 5.0, 6.0))),
            spacing=float(d.get("spacing", 0.05)),
            boundary_value=float(d.get("boundaryValue", 0.5)),
        )

    basename = doc.get("output", {}).get("basename", "experiment")
    return ExperimentConfig(
        raw=doc,
        differential=b,
        grid=grid,
        solver=solver,
        probe=probe,
        domain_shape=shape,
        decay=decay,
        basename=basename,
    )


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc)


# ---------------------------------------------------------------------------
# canonical serialization
# ---------------------------------------------------------------------------


def jsonable(x):
    """Recursive conversion to canonical JSON-ready data.

    numpy scalars and arrays become python numbers and lists, complex
    numbers become [re, im], and non-finite floats become None so the
    writer can forbid NaN tokens.
    """
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        z = complex(x)
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            return None
        return [z.real, z.imag]
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    return x


def canonical_json(obj):
    return json.dumps(
        jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False
    ) + "\n"


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def validate_artifact(doc):
    """Check an artifact document against the shipped schema."""
    errors = sorted(
        _validator("artifact-v1.json").iter_errors(doc),
        key=lambda e: list(e.absolute_path),
    )
    if errors:
        err = errors[0]
        raise ValueError(f"artifact invalid at {_schema_error_path(err)}: {err.message}")


def write_json_artifact(out_dir, basename, kind, command, config_raw, payload):
    """Schema-validated JSON artifact; returns the written path."""
    if kind not in ARTIFACT_KINDS:
        raise ValueError(f"unknown artifact kind {kind!r}")
    doc = jsonable(
        {
            "schema": SCHEMA_ID,
            "kind": kind,
            "command": command,
            "config": config_raw,
            "payload": payload,
        }
    )
    validate_artifact(doc)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{basename}.json")
    _atomic_write(path, canonical_json(doc))
    return path


def write_field_csv(out_dir, basename, grid, values):
    """Field dump: header x,y,value, nodes in row-major order."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.ny, grid.nx):
        raise ValueError("field shape must match the grid")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{basename}.csv")
    tmp = f"{path}.tmp"
    xs, ys = grid.xs, grid.ys
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "value"])
        for i in range(grid.ny):
            for j in range(grid.nx):
                writer.writerow([repr(float(xs[j])), repr(float(ys[i])), repr(float(values[i, j]))])
    os.replace(tmp, path)
    return path


def write_svg(out_dir, basename, svg_text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{basename}.svg")
    _atomic_write(path, svg_text)
    return path
