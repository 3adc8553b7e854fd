"""Case files, measurement CSV, legacy VTK output and report tables.

Case files are TOML. Every table and key is checked against a fixed schema;
unknown keys are rejected and errors name the dotted key (``material.k``).
A complete example ships as ``fieldrecon/data/plate.toml``::

    [geometry]        lengths = [Lx, Ly, Lz]   divisions = [nx, ny, nz]   heated_face = "+z"
    [material]        k  rho  cp  h  t_ambient
    [forward]         dt_ref  t_end  [initial_temperature]  [linear_solver = "direct" | "cg"]
    [forward.flux]    slope + intercept (q = slope*t + intercept, W/m^2)  or  times + values
    [noise]           stddev  seed
    [reconstruction]  dt_rec  s_ncg  s_gn  c1  c2  c3
    [reconstruction.layouts]   name = [[x, y, z], ...]   (one CSV per layout)
    [generation]      dt  t_end  t_min  t_max  s_ncg  s_gn  c1  c3  c4 = [...]  seeds = [...]
    [generation.heat_goal]     a + b  (Q = a t^2 + b t, W)  or  samples = [...]
"""
from __future__ import annotations

import csv
import math
import sys
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .assembly import MaterialProperties, assemble_global
from .exceptions import ConfigError
from .forward import MeasurementSeries, TransientSolution, time_grid
from .inverse import LossWeights, ReconstructionConfig
from .mesh import FACE_LABELS, Mesh, build_box_mesh, classify_boundary, nearest_node
from .multichoice import GenerationConfig, HeatGoal

DEFAULT_CASE = Path(__file__).parent / "data" / "plate.toml"

# --------------------------------------------------------------------------- schema helpers


class _Table:
    """Strict accessor over one TOML table; tracks which keys were consumed."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must be a table")
        self.data = data
        self.path = path
        self.used = set()

    def _key(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key) -> bool:
        return key in self.data

    def _get(self, key, default):
        self.used.add(key)
        if key not in self.data:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {self._key(key)}")
            return default
        return self.data[key]

    def number(self, key, default=None, positive=False, nonneg=False):
        v = self._get(key, _REQUIRED if default is None else default)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{self._key(key)} must be a finite number, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(f"{self._key(key)} must be positive, got {v}")
        if nonneg and not v >= 0:
            raise ConfigError(f"{self._key(key)} must be non-negative, got {v}")
        return float(v)

    def integer(self, key, default=None, minimum=None):
        v = self._get(key, _REQUIRED if default is None else default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{self._key(key)} must be an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise ConfigError(f"{self._key(key)} must be at least {minimum}, got {v}")
        return v

    def string(self, key, default=None, choices=None):
        v = self._get(key, _REQUIRED if default is None else default)
        if not isinstance(v, str):
            raise ConfigError(f"{self._key(key)} must be a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConfigError(f"{self._key(key)} must be one of {', '.join(choices)}, got {v!r}")
        return v

    def numbers(self, key, length=None, default=None):
        v = self._get(key, _REQUIRED if default is None else default)
        if not isinstance(v, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in v):
            raise ConfigError(f"{self._key(key)} must be a list of finite numbers")
        if length is not None and len(v) != length:
            raise ConfigError(f"{self._key(key)} must have {length} entries, got {len(v)}")
        return [float(x) for x in v]

    def table(self, key, optional=False):
        v = self._get(key, None if optional else _REQUIRED)
        return None if v is None else _Table(v, self._key(key))

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"unknown key {self._key(extra[0])}")


_REQUIRED = object()

# --------------------------------------------------------------------------- case config


@dataclass(frozen=True)
class Geometry:
    lengths: tuple
    divisions: tuple
    heated_face: str = "+z"


@dataclass(frozen=True)
class FluxSchedule:
    """Uniform inward flux (W/m^2): linear ramp or piecewise-linear samples."""

    slope: float | None = None
    intercept: float = 0.0
    times: tuple | None = None
    values: tuple | None = None

    def __call__(self, t: float) -> float:
        if self.times is None:
            return self.slope * t + self.intercept
        return float(np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class ForwardSettings:
    dt_ref: float
    t_end: float
    flux: FluxSchedule
    initial_temperature: float
    linear_solver: str = "direct"


@dataclass(frozen=True)
class NoiseSettings:
    stddev: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ReconstructionSettings:
    config: ReconstructionConfig
    layouts: dict = field(default_factory=dict)   # name -> tuple of points


@dataclass(frozen=True)
class GenerationSettings:
    dt: float
    t_end: float
    t_min: float
    t_max: float
    c1: float
    c3: float
    c4: tuple
    seeds: tuple
    heat_goal: HeatGoal
    s_ncg: int = 2
    s_gn: int = 1

    def configs(self, seeds=None, c4=None) -> list:
        """One config per (c4, seed) pair, c4 outermost."""
        seeds = self.seeds if seeds is None else tuple(seeds)
        c4 = self.c4 if c4 is None else tuple(c4)
        if not seeds or not c4:
            raise ConfigError("generation needs at least one seed and one c4 value")
        return [GenerationConfig(self.dt, self.t_end, self.t_min, self.t_max, int(s),
                                 LossWeights(c1=self.c1, c2=0.0, c3=self.c3, c4=float(w)),
                                 self.s_ncg, self.s_gn)
                for w in c4 for s in seeds]


@dataclass(frozen=True)
class CaseConfig:
    geometry: Geometry
    material: MaterialProperties
    forward: ForwardSettings
    noise: NoiseSettings
    reconstruction: ReconstructionSettings | None
    generation: GenerationSettings | None

    def build_mesh(self) -> Mesh:
        return build_box_mesh(self.geometry.lengths, self.geometry.divisions)

    def build_system(self, mesh: Mesh | None = None):
        mesh = mesh or self.build_mesh()
        return mesh, assemble_global(mesh, classify_boundary(mesh, self.geometry.heated_face),
                                     self.material)

    def layout_nodes(self, mesh: Mesh) -> dict:
        """Measurement node ids for each layout (nearest node to each point)."""
        out = {}
        for name, pts in (self.reconstruction.layouts if self.reconstruction else {}).items():
            ids = [nearest_node(mesh, p) for p in pts]
            if len(set(ids)) != len(ids):
                raise ConfigError(f"reconstruction.layouts.{name} maps two points to one node")
            out[name] = np.asarray(ids, dtype=np.int64)
        return out


def _parse_geometry(t: _Table) -> Geometry:
    lengths = t.numbers("lengths", 3)
    if any(v <= 0 for v in lengths):
        raise ConfigError("geometry.lengths must be positive")
    div = t._get("divisions", _REQUIRED)
    if (not isinstance(div, list) or len(div) != 3
            or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in div)):
        raise ConfigError("geometry.divisions must be three positive integers")
    geo = Geometry(tuple(lengths), tuple(div), t.string("heated_face", "+z", FACE_LABELS))
    t.finish()
    return geo


def _parse_material(t: _Table) -> MaterialProperties:
    m = MaterialProperties(
        k=t.number("k", positive=True), rho=t.number("rho", positive=True),
        cp=t.number("cp", positive=True), h=t.number("h", nonneg=True),
        t_ambient=t.number("t_ambient"),
    )
    t.finish()
    return m


def _parse_forward(t: _Table, material: MaterialProperties) -> ForwardSettings:
    dt_ref = t.number("dt_ref", positive=True)
    t_end = t.number("t_end", positive=True)
    try:
        time_grid(dt_ref, t_end)
    except ConfigError as exc:
        raise ConfigError(f"forward.t_end: {exc}") from None
    f = t.table("flux")
    if f.has("slope") or f.has("intercept"):
        flux = FluxSchedule(slope=f.number("slope"), intercept=f.number("intercept", 0.0))
    elif f.has("times"):
        times, values = f.numbers("times"), f.numbers("values")
        if len(times) < 2 or len(times) != len(values):
            raise ConfigError("forward.flux.times and forward.flux.values need equal length >= 2")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("forward.flux.times must be strictly increasing")
        if times[0] > 0 or times[-1] < t_end:
            raise ConfigError("forward.flux.times must cover [0, forward.t_end]")
        flux = FluxSchedule(times=tuple(times), values=tuple(values))
    else:
        raise ConfigError("forward.flux needs slope/intercept or times/values")
    f.finish()
    fw = ForwardSettings(dt_ref, t_end, flux,
                         t.number("initial_temperature", material.t_ambient),
                         t.string("linear_solver", "direct", ("direct", "cg")))
    t.finish()
    return fw


def _parse_reconstruction(t: _Table) -> ReconstructionSettings:
    weights = LossWeights(c1=t.number("c1", 1.0, positive=True), c2=t.number("c2", 1.0, positive=True),
                          c3=t.number("c3", 1.0, nonneg=True))
    cfg = ReconstructionConfig(t.number("dt_rec", positive=True), t.integer("s_ncg", 2, 0),
                               t.integer("s_gn", 1, 0), weights)
    layouts = {}
    lt = t.table("layouts", optional=True)
    if lt is not None:
        for name in lt.data:
            pts = lt._get(name, _REQUIRED)
            if (not isinstance(pts, list) or not pts or not all(
                    isinstance(p, list) and len(p) == 3 and all(
                        isinstance(x, (int, float)) and not isinstance(x, bool) for x in p) for p in pts)):
                raise ConfigError(f"reconstruction.layouts.{name} must be a list of [x, y, z] points")
            layouts[name] = tuple(tuple(float(x) for x in p) for p in pts)
        lt.finish()
    t.finish()
    return ReconstructionSettings(cfg, layouts)


def _parse_generation(t: _Table) -> GenerationSettings:
    c4 = t.numbers("c4")
    if not c4 or any(w <= 0 for w in c4):
        raise ConfigError("generation.c4 must be a nonempty list of positive weights")
    seeds = t._get("seeds", _REQUIRED)
    if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError("generation.seeds must be a nonempty list of non-negative integers")
    g = t.table("heat_goal")
    if g.has("samples"):
        goal = HeatGoal(samples=g.numbers("samples"))
    else:
        goal = HeatGoal(a=g.number("a"), b=g.number("b"))
    g.finish()
    gs = GenerationSettings(
        dt=t.number("dt", positive=True), t_end=t.number("t_end", positive=True),
        t_min=t.number("t_min"), t_max=t.number("t_max"),
        c1=t.number("c1", 1.0, positive=True), c3=t.number("c3", 0.1, nonneg=True),
        c4=tuple(c4), seeds=tuple(seeds), heat_goal=goal,
        s_ncg=t.integer("s_ncg", 2, 0), s_gn=t.integer("s_gn", 1, 0),
    )
    if not gs.t_min < gs.t_max:
        raise ConfigError("generation.t_min must be below generation.t_max")
    try:
        time_grid(gs.dt, gs.t_end)
    except ConfigError as exc:
        raise ConfigError(f"generation.t_end: {exc}") from None
    t.finish()
    gs.configs()  # validates the combined settings
    return gs


def parse_case_config(data: dict) -> CaseConfig:
    root = _Table(data, "")
    geometry = _parse_geometry(root.table("geometry"))
    material = _parse_material(root.table("material"))
    forward = _parse_forward(root.table("forward"), material)
    nt = root.table("noise", optional=True)
    noise = NoiseSettings()
    if nt is not None:
        noise = NoiseSettings(nt.number("stddev", 0.0, nonneg=True), nt.integer("seed", 0, 0))
        nt.finish()
    rt = root.table("reconstruction", optional=True)
    gt = root.table("generation", optional=True)
    cfg = CaseConfig(geometry, material, forward, noise,
                     _parse_reconstruction(rt) if rt is not None else None,
                     _parse_generation(gt) if gt is not None else None)
    root.finish()
    return cfg


def read_case_config(path) -> CaseConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"case file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_case_config(data)


# --------------------------------------------------------------------------- VTK


def _fmt(x: float) -> str:
    return "%.9g" % (float(x) + 0.0)   # + 0.0 folds -0.0 into 0


def write_vtk(mesh: Mesh, fields: dict, path, title: str = "fieldrecon output") -> None:
    """Legacy ASCII unstructured grid with one scalar array per entry of ``fields``."""
    for name, values in fields.items():
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"field name {name!r} must be nonempty without whitespace")
        if np.shape(values) != (mesh.n_nodes,):
            raise ValueError(f"field {name!r} must have one value per node ({mesh.n_nodes})")
    n, nh = mesh.n_nodes, mesh.n_hexes
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out.extend(" ".join(_fmt(c) for c in p) for p in mesh.nodes)
    out.append(f"CELLS {nh} {9 * nh}")
    out.extend("8 " + " ".join(str(int(i)) for i in h) for h in mesh.hexes)
    out.append(f"CELL_TYPES {nh}")
    out.extend(["12"] * nh)
    if fields:
        out.append(f"POINT_DATA {n}")
        for name, values in fields.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out.extend(_fmt(v) for v in values)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


# --------------------------------------------------------------------------- measurements

MEASUREMENT_HEADER = ("time_s", "node_id", "temperature_C")


def write_measurements(series: MeasurementSeries, path) -> None:
    order = np.argsort(series.node_ids, kind="stable")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(MEASUREMENT_HEADER) + "\n")
        for j, t in enumerate(series.times):
            for i in order:
                fh.write(f"{float(t)!r},{int(series.node_ids[i])},{float(series.values[i, j])!r}\n")


def read_measurements(path, noise_stddev: float = 0.0) -> MeasurementSeries:
    """Parse a measurement CSV; every node must have a value at every time."""
    entries = {}
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ConfigError(f"measurement file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MEASUREMENT_HEADER:
            raise ConfigError(f"{path}: header must be {','.join(MEASUREMENT_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ConfigError(f"{path}: row {line}: expected 3 columns, got {len(row)}")
            try:
                t, node, value = float(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise ConfigError(f"{path}: row {line}: cannot parse {row!r}") from None
            if not (math.isfinite(t) and math.isfinite(value)):
                raise ConfigError(f"{path}: row {line}: non-finite value")
            if (t, node) in entries:
                raise ConfigError(f"{path}: row {line}: duplicate entry for t={t!r}, node {node}")
            entries[(t, node)] = value
    if not entries:
        raise ConfigError(f"{path}: no measurements")
    times = np.array(sorted({t for t, _ in entries}))
    nodes = np.array(sorted({n for _, n in entries}), dtype=np.int64)
    values = np.empty((len(nodes), len(times)))
    for j, t in enumerate(times):
        for i, node in enumerate(nodes):
            try:
                values[i, j] = entries[(t, node)]
            except KeyError:
                raise ConfigError(f"{path}: node {node} has no value at t={t!r}") from None
    return MeasurementSeries(nodes, times, values, noise_stddev)


# --------------------------------------------------------------------------- reports


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.10g" % (float(v) + 0.0)
    return str(v)


def write_table(rows, path, columns) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[c]) for c in columns) + "\n")


ERROR_COLUMNS = ("avg_rel_pct", "max_rel_pct", "avg_abs_C", "max_abs_C")
ERROR_SERIES_COLUMNS = ("step", "time_s") + ERROR_COLUMNS


def series_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_series" + path.suffix)


def write_report(rows, path, columns=ERROR_COLUMNS, series=None,
                 series_columns=ERROR_SERIES_COLUMNS) -> None:
    """Summary table at ``path``; per-step rows (if given) in ``<stem>_series.csv``."""
    rows = list(rows)
    if rows and columns is None:
        columns = tuple(rows[0])
    write_table(rows, path, columns)
    if series is not None:
        write_table(list(series), series_path(path), series_columns)


def write_fq_csv(solution: TransientSolution, node_ids, path) -> None:
    """Recovered heated-surface loads, one row per (time, node)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,node_id,fq_W\n")
        for t, fq in zip(solution.times, solution.recovered_fq):
            for i in node_ids:
                fh.write(f"{float(t)!r},{int(i)},{_cell(fq[i])}\n")


# --------------------------------------------------------------------------- solutions


def save_solution(solution: TransientSolution, path) -> None:
    """``.npz`` archive with fixed zip timestamps, so equal data gives equal bytes."""
    arrays = {"times": solution.times, "fields": solution.fields}
    if solution.recovered_fq is not None:
        arrays["recovered_fq"] = solution.recovered_fq
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)


def load_solution(path) -> TransientSolution:
    try:
        with np.load(path, allow_pickle=False) as data:
            fq = data["recovered_fq"] if "recovered_fq" in data.files else None
            return TransientSolution(data["times"], data["fields"], fq)
    except FileNotFoundError:
        raise ConfigError(f"solution file not found: {path}") from None
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise ConfigError(f"{path}: not a saved solution ({exc})") from None
