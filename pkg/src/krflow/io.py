"""Run configuration, snapshots, checkpoints and series files.

Every file carries a ``format_version`` ("major.minor"); readers accept
any minor revision of a known major and reject newer majors.  Floats are
written with 17 significant digits, which round-trips IEEE doubles
exactly.
"""

import copy
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import jsonschema
import numpy as np

from .errors import ConfigurationError, FormatError

FORMAT_VERSION = "1.0"
MONITORS = ("certificate", "doubling_time", "pinching_window", "convergence", "continuation")

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["format_version", "manifold"],
    "properties": {
        "format_version": {"type": "string", "pattern": r"^\d+\.\d+$"},
        "manifold": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n"],
            "properties": {"n": {"type": "integer", "minimum": 1}},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nodes": {"type": "integer", "minimum": 16},
                "L": _pos,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["fs", "fs_plus_perturbation"]},
                "amplitude": _number,
                "shape": {"enum": ["sech", "sech2", "random"]},
                "seed": {"type": ["integer", "null"], "minimum": 0},
                "center": _number,
            },
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt_policy": {"enum": ["adaptive", "fixed"]},
                "dt": _pos,
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "t_end": {"type": "number", "minimum": 0},
                "cadence": _pos,
                "record_analysis": {"type": "boolean"},
                "stop_on_convergence": {"type": "boolean"},
                "convergence_floor": _pos,
                "checkpoint_every": {"type": "integer", "minimum": 0},
            },
        },
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "Lambda": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "c_n": _pos,
                "eps_n": _pos,
            },
        },
        "monitors": {"type": "array", "items": {"enum": list(MONITORS)}, "uniqueItems": True},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
            },
        },
    },
}

DEFAULTS = {
    "format_version": FORMAT_VERSION,
    "manifold": {"n": 1},
    "grid": {"nodes": 257, "L": 12.0},
    "initial": {"kind": "fs", "amplitude": 0.0, "shape": "sech", "seed": None, "center": 0.0},
    "flow": {
        "dt_policy": "adaptive",
        "cfl": 0.8,
        "t_end": 1.0,
        "cadence": 0.05,
        "record_analysis": True,
        "stop_on_convergence": False,
        "convergence_floor": 1e-9,
        "checkpoint_every": 1,
    },
    "budget": {"delta": 0.5, "Lambda": None, "c_n": 8.0, "eps_n": 0.1},
    "monitors": ["certificate", "doubling_time", "convergence"],
    "output": {"directory": "run", "formats": ["csv", "json"]},
}


# --------------------------------------------------------------------------
# text encoding


def format_float(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, (str, Fraction)):
        return json.dumps(str(obj))
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent=1):
    """JSON text with every float at 17 significant digits (NaN -> null)."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def check_version(doc, what="file"):
    v = doc.get("format_version") if isinstance(doc, dict) else None
    if not isinstance(v, str):
        raise FormatError(f"{what}: field 'format_version' is missing")
    try:
        major = int(v.split(".")[0])
    except ValueError:
        raise FormatError(f"{what}: field 'format_version' = {v!r} is not 'major.minor'") from None
    if major > int(FORMAT_VERSION.split(".")[0]):
        raise FormatError(f"{what}: format_version {v} is newer than supported {FORMAT_VERSION}")
    return v


def _field_path(err):
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def _validate(doc, schema, what, error):
    v = jsonschema.Draft7Validator(schema)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = "; ".join(f"field '{_field_path(e)}': {e.message}" for e in errors[:5])
        raise error(f"{what}: {msgs}")


# --------------------------------------------------------------------------
# run configuration


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """Schema-validated run configuration with defaults filled in."""

    data: dict

    @classmethod
    def from_dict(cls, doc, what="config"):
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{what}: top level must be an object")
        _validate(doc, RUN_CONFIG_SCHEMA, what, ConfigurationError)
        try:
            check_version(doc, what)
        except FormatError as exc:
            raise ConfigurationError(str(exc)) from None
        return cls(_merge(DEFAULTS, doc))

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc, str(path))

    def override(self, seed=None, nodes=None, t_end=None, directory=None):
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["initial"]["seed"] = int(seed)
        if nodes is not None:
            d["grid"]["nodes"] = int(nodes)
        if t_end is not None:
            d["flow"]["t_end"] = float(t_end)
        if directory is not None:
            d["output"]["directory"] = str(directory)
        return RunConfig.from_dict(d)

    @property
    def n(self):
        return self.data["manifold"]["n"]

    @property
    def monitors(self):
        return list(self.data["monitors"])

    @property
    def hash(self):
        """SHA-256 of the fields that determine the trajectory.

        Output location, monitor list and t_end are excluded so that a run
        can be resumed with a later end time.
        """
        d = {k: v for k, v in self.data.items() if k not in ("output", "monitors")}
        d["flow"] = {k: v for k, v in d["flow"].items() if k not in ("t_end", "checkpoint_every")}
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def flow_config(self):
        from .flow import FlowConfig

        d = self.data
        ini, fl, bud = d["initial"], d["flow"], d["budget"]
        amp = ini["amplitude"] if ini["kind"] == "fs_plus_perturbation" else 0.0
        try:
            return FlowConfig(
                n=self.n,
                nodes=d["grid"]["nodes"],
                t_end=fl["t_end"],
                cadence=fl["cadence"],
                dt_policy=fl["dt_policy"],
                cfl=fl["cfl"],
                dt=fl.get("dt"),
                amplitude=amp,
                shape=ini["shape"],
                seed=ini["seed"],
                center=ini["center"],
                delta=bud["delta"],
                Lambda=bud["Lambda"],
                c_n=bud["c_n"],
                eps_n=bud["eps_n"],
                record_analysis=fl["record_analysis"],
                stop_on_convergence=fl["stop_on_convergence"],
                convergence_floor=fl["convergence_floor"],
            )
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None


# --------------------------------------------------------------------------
# profile snapshots

SNAPSHOT_SCHEMA = {
    "type": "object",
    "required": ["format_version", "kind", "coordinate", "n", "L", "grid", "F", "boundary_model", "metadata"],
    "properties": {
        "format_version": {"type": "string"},
        "kind": {"const": "profile_snapshot"},
        "coordinate": {"enum": ["s", "chart"]},
        "n": {"type": "integer", "minimum": 1},
        "L": {"type": "number", "exclusiveMinimum": 0},
        "t": {"type": ["number", "null"]},
        "grid": {"type": "array", "minItems": 16, "items": {"type": "number"}},
        "F": {"type": "array", "minItems": 16, "items": {"type": "number"}},
        "psi": {"type": "array", "items": {"type": "number"}},
        "boundary_model": {"type": "object"},
        "metadata": {
            "type": "object",
            "required": ["norm_convention", "tolerances"],
            "properties": {"norm_convention": {"type": "string"}, "tolerances": {"type": "object"}},
        },
    },
}


def snapshot_dict(P, t=None, extra=None):
    """Structured form of a RadialProfile or ChartProfile.

    ``coordinate = "s"``: grid is the s-grid, F the potential and psi the
    residual F - F0.  ``coordinate = "chart"``: grid is the Fubini-Study
    momentum x in [0, n + 1] and F holds the residual potential psi(x)
    (F itself is singular at the poles in this chart).
    """
    from .geometry import NORM_CONVENTION, TOL_BC, ChartProfile, RadialProfile

    meta = {"norm_convention": NORM_CONVENTION, "tolerances": {"tol_bc": TOL_BC}}
    if extra:
        meta.update(extra)
    if isinstance(P, ChartProfile):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "profile_snapshot",
            "coordinate": "chart",
            "n": P.n,
            "L": float(P.n + 1),
            "t": t,
            "grid": P.x,
            "F": P.psi,
            "boundary_model": {"kind": "closed_chart", "poles": [0.0, float(P.n + 1)]},
            "metadata": meta,
        }
    if isinstance(P, RadialProfile):
        d = P.snapshot()
        return {
            "format_version": FORMAT_VERSION,
            "kind": "profile_snapshot",
            "coordinate": "s",
            "n": P.n,
            "L": d["L"],
            "t": t,
            "grid": P.grid,
            "F": P.F,
            "psi": P.psi,
            "boundary_model": d["boundary_model"],
            "metadata": meta,
        }
    raise TypeError("unsupported profile type")


def write_snapshot(path, P, t=None, extra=None):
    write_json(path, snapshot_dict(P, t, extra))


def profile_from_snapshot(doc, what="snapshot"):
    """Rebuild the profile; raises FormatError naming the offending field."""
    from .errors import KRFlowError
    from .geometry import ChartProfile, RadialProfile

    check_version(doc, what)
    _validate(doc, SNAPSHOT_SCHEMA, what, FormatError)
    grid = np.array(doc["grid"], dtype=float)
    F = np.array(doc["F"], dtype=float)
    if len(grid) != len(F):
        raise FormatError(f"{what}: field 'F' has {len(F)} values but 'grid' has {len(grid)}")
    if not np.all(np.isfinite(F)):
        raise FormatError(f"{what}: field 'F' contains non-finite values")
    if np.any(np.diff(grid) <= 0):
        raise FormatError(f"{what}: field 'grid' is not strictly increasing")
    n = doc["n"]
    try:
        if doc["coordinate"] == "chart":
            return ChartProfile(n, grid, F)
        psi = doc.get("psi")
        if psi is not None:
            psi = np.array(psi, dtype=float)
            if len(psi) != len(grid):
                raise FormatError(f"{what}: field 'psi' has {len(psi)} values but 'grid' has {len(grid)}")
        return RadialProfile(n, grid, F, psi=psi)
    except FormatError:
        raise
    except KRFlowError as exc:
        raise FormatError(f"{what}: profile data violate an invariant: {exc}") from exc


def read_snapshot(path):
    """(profile, document) from a snapshot file."""
    doc = read_json(path)
    return profile_from_snapshot(doc, str(path)), doc


# --------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path, state, n, config_hash, k):
    """Flow state at cadence tick ``k``; written atomically."""
    from .geometry import ChartProfile

    P = ChartProfile(n, np.linspace(0.0, n + 1, len(state.psi)), state.psi, validate=False)
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "checkpoint",
        "t": state.t,
        "tick": int(k),
        "config_hash": config_hash,
        "snapshot": snapshot_dict(P, state.t),
    }
    tmp = f"{path}.tmp"
    write_json(tmp, doc)
    os.replace(tmp, path)


def read_checkpoint(path, config_hash=None):
    from .flow import FlowState

    doc = read_json(path)
    check_version(doc, str(path))
    if doc.get("kind") != "checkpoint":
        raise FormatError(f"{path}: field 'kind' must be 'checkpoint'")
    if config_hash is not None and doc.get("config_hash") != config_hash:
        raise FormatError(f"{path}: field 'config_hash' does not match the run configuration")
    snap = doc.get("snapshot")
    if not isinstance(snap, dict):
        raise FormatError(f"{path}: field 'snapshot' is missing")
    if not isinstance(doc.get("t"), (int, float)) or not isinstance(doc.get("tick"), int):
        raise FormatError(f"{path}: fields 't' and 'tick' must be numbers")
    P = profile_from_snapshot(snap, f"{path}:snapshot")
    return FlowState(float(doc["t"]), P.psi.copy()), doc


# --------------------------------------------------------------------------
# series files


class SeriesWriter:
    """Append-mode CSV writer with a version header line."""

    def __init__(self, path, columns, kind="series", mode="w"):
        self.path = path
        self.columns = tuple(columns)
        fresh = mode == "w" or not os.path.exists(path)
        self.fh = open(path, "w" if fresh else "a", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        if fresh:
            self.fh.write(f"# krflow {kind} format_version={FORMAT_VERSION}\n")
            self.writer.writerow(self.columns)

    def write(self, row):
        self.writer.writerow([format_float(row[c]) for c in self.columns])
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_series_csv(path, rows, columns, kind="series"):
    with SeriesWriter(path, columns, kind) as w:
        for r in rows:
            w.write(r)


def read_series_csv(path):
    """(columns, list of row dicts) from a series or monitor CSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline()
        if not header.startswith("# krflow") or "format_version=" not in header:
            raise FormatError(f"{path}: missing format_version header line")
        v = header.strip().split("format_version=")[1]
        check_version({"format_version": v}, str(path))
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for i, rec in enumerate(reader, start=3):
            if len(rec) != len(columns):
                raise FormatError(f"{path}: line {i} has {len(rec)} fields, expected {len(columns)}")
            rows.append({c: float(v) for c, v in zip(columns, rec)})
    return columns, rows


def truncate_series(path, columns, t_keep, kind="series"):
    """Rewrite ``path`` keeping rows with t < t_keep (resume support)."""
    _, rows = read_series_csv(path)
    write_series_csv(path, [r for r in rows if r["t"] < t_keep - 1e-12], columns, kind)


# --------------------------------------------------------------------------
# manifest


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir, command, config_hash=None, extra=None):
    """manifest.json listing every file in ``run_dir`` with its digest."""
    files = {}
    for name in sorted(os.listdir(run_dir)):
        p = os.path.join(run_dir, name)
        if name == "manifest.json" or not os.path.isfile(p) or name.endswith(".tmp"):
            continue
        files[name] = {"sha256": sha256_file(p), "bytes": os.path.getsize(p)}
    doc = {"format_version": FORMAT_VERSION, "kind": "manifest", "command": command, "config_hash": config_hash, "files": files}
    if extra:
        doc.update(extra)
    write_json(os.path.join(run_dir, "manifest.json"), doc)
    return doc
