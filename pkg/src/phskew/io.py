"""YAML input files: skew products, iterated function systems and run configs.

Every document carries a ``schema`` tag.  Unknown keys are rejected and all
errors are reported as :class:`ParseError` with the 1-based line and column
of the offending node.  ``*_to_dict`` functions produce the normalized echo
that parses back to an equal object.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError, PhskewError
from .primitives import (Bump, Constant, ConstantField, FieldFlow, FiberMap, Fourier, Inverted,
                         LinearToral, ProfiledField, RotationField, Shear, SphereRotation,
                         SphereTwist, SumField, Translation, TrigField)
from .spectral import ToralAutomorphism, parse_matrix_text

SKEW_SCHEMA = "phskew/skew@1"
IFS_SCHEMA = "phskew/ifs@1"
RUN_SCHEMA = "phskew/run@1"

_REQUIRED = object()


class Doc:
    """Parsed YAML with the source position of every node."""

    def __init__(self, text: str, path=None):
        self.path = None if path is None else str(path)
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            raise ParseError(exc.problem or str(exc),
                             None if mark is None else mark.line + 1,
                             None if mark is None else mark.column + 1, self.path) from None
        if node is None:
            raise ParseError("empty document", 1, 1, self.path)
        self._ctor = yaml.constructor.SafeConstructor()
        self.marks = {}
        self.key_marks = {}
        self.data = self._walk(node, ())

    def _walk(self, node, p):
        self.marks[p] = node.start_mark
        if isinstance(node, yaml.MappingNode):
            out = {}
            for knode, vnode in node.value:
                key = self._ctor.construct_object(knode, deep=True)
                if not isinstance(key, str):
                    self._fail_mark(knode.start_mark, f"keys must be strings, got {key!r}")
                if key in out:
                    self._fail_mark(knode.start_mark, f"duplicate key {key!r}")
                self.key_marks[p + (key,)] = knode.start_mark
                out[key] = self._walk(vnode, p + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._walk(v, p + (i,)) for i, v in enumerate(node.value)]
        return self._ctor.construct_object(node, deep=True)

    def _fail_mark(self, mark, msg):
        raise ParseError(msg, mark.line + 1, mark.column + 1, self.path)

    def fail(self, p, msg, key=False):
        mark = (self.key_marks.get(p) if key else None) or self.marks.get(p)
        while mark is None and p:
            p = p[:-1]
            mark = self.marks.get(p)
        if mark is None:
            raise ParseError(msg, path=self.path)
        self._fail_mark(mark, msg)

    def at(self, p):
        v = self.data
        for k in p:
            v = v[k]
        return v


def _where(p):
    return ".".join(str(k) for k in p) or "<root>"


def _mapping(doc: Doc, p, allowed, required=()):
    v = doc.at(p)
    if not isinstance(v, dict):
        doc.fail(p, f"{_where(p)}: expected a mapping")
    for k in v:
        if k not in allowed:
            doc.fail(p + (k,), f"unknown key {k!r} in {_where(p)}", key=True)
    for k in required:
        if k not in v:
            doc.fail(p, f"{_where(p)}: missing required key {k!r}")
    return v


def _get(doc: Doc, p, key, kind, default=_REQUIRED):
    v = doc.at(p)
    if key not in v:
        if default is _REQUIRED:
            doc.fail(p, f"{_where(p)}: missing required key {key!r}")
        return default
    return convert(doc, p + (key,), kind)


def convert(doc: Doc, p, kind):
    """Typed read of one node; ``kind`` is float|int|bool|str|vec|ivec|pairs|matrix|imatrix."""
    v = doc.at(p)
    name = _where(p)
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            doc.fail(p, f"{name}: expected a number, got {v!r}")
        if not np.isfinite(v):
            doc.fail(p, f"{name}: must be finite")
        return float(v)
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            doc.fail(p, f"{name}: expected an integer, got {v!r}")
        return int(v)
    if kind == "bool":
        if not isinstance(v, bool):
            doc.fail(p, f"{name}: expected true or false, got {v!r}")
        return v
    if kind == "str":
        if not isinstance(v, str):
            doc.fail(p, f"{name}: expected a string, got {v!r}")
        return v
    if kind in ("vec", "ivec"):
        if not isinstance(v, list) or not v:
            doc.fail(p, f"{name}: expected a non-empty list")
        sub = "float" if kind == "vec" else "int"
        return tuple(convert(doc, p + (i,), sub) for i in range(len(v)))
    if kind == "pairs":
        if not isinstance(v, list):
            doc.fail(p, f"{name}: expected a list of [low, high] pairs")
        out = tuple(convert(doc, p + (i,), "vec") for i in range(len(v)))
        if any(len(r) != 2 for r in out):
            doc.fail(p, f"{name}: every entry must have two numbers")
        return out
    if kind in ("matrix", "imatrix"):
        if not isinstance(v, list) or not v:
            doc.fail(p, f"{name}: expected a list of rows")
        sub = "vec" if kind == "matrix" else "ivec"
        rows = tuple(convert(doc, p + (i,), sub) for i in range(len(v)))
        if any(len(r) != len(rows) for r in rows):
            doc.fail(p, f"{name}: matrix must be square")
        return rows
    raise ValueError(kind)


def _build(doc, p, fn):
    # turn constructor validation errors into positioned parse errors
    try:
        return fn()
    except ParseError:
        raise
    except (ValueError, TypeError, PhskewError) as exc:
        doc.fail(p, f"{_where(p)}: {exc}")


# ------------------------------------------------------- primitive parsing

def parse_profile(doc: Doc, p):
    kind = _get(doc, p, "kind", "str") if isinstance(doc.at(p), dict) else None
    if kind == "constant":
        _mapping(doc, p, {"kind", "value"})
        return Constant(_get(doc, p, "value", "float", 1.0))
    if kind == "bump":
        _mapping(doc, p, {"kind", "center", "radius", "amplitude"}, ("center", "radius"))
        return _build(doc, p, lambda: Bump(_get(doc, p, "center", "vec"),
                                           _get(doc, p, "radius", "float"),
                                           _get(doc, p, "amplitude", "float", 1.0)))
    if kind == "fourier":
        _mapping(doc, p, {"kind", "k", "amplitude", "phase", "offset"}, ("k",))
        return Fourier(_get(doc, p, "k", "ivec"), _get(doc, p, "amplitude", "float", 1.0),
                       _get(doc, p, "phase", "float", 0.0), _get(doc, p, "offset", "float", 0.0))
    doc.fail(p, f"{_where(p)}: unknown profile kind {kind!r}")


def parse_field(doc: Doc, p):
    kind = _get(doc, p, "kind", "str") if isinstance(doc.at(p), dict) else None
    if kind == "constant":
        _mapping(doc, p, {"kind", "v"}, ("v",))
        return ConstantField(_get(doc, p, "v", "vec"))
    if kind == "trig":
        _mapping(doc, p, {"kind", "w", "k", "phase"}, ("w", "k"))
        return _build(doc, p, lambda: TrigField(_get(doc, p, "w", "vec"), _get(doc, p, "k", "ivec"),
                                                _get(doc, p, "phase", "float", 0.0)))
    if kind == "rotation":
        _mapping(doc, p, {"kind", "G"}, ("G",))
        return _build(doc, p, lambda: RotationField(_get(doc, p, "G", "matrix")))
    if kind == "profiled":
        _mapping(doc, p, {"kind", "profile", "coef", "field"}, ("profile", "field"))
        return ProfiledField(parse_profile(doc, p + ("profile",)),
                             parse_field(doc, p + ("field",)), _get(doc, p, "coef", "float", 1.0))
    if kind == "sum":
        _mapping(doc, p, {"kind", "terms"}, ("terms",))
        terms = doc.at(p + ("terms",))
        if not isinstance(terms, list) or not terms:
            doc.fail(p + ("terms",), f"{_where(p)}.terms: expected a non-empty list")
        return SumField(tuple(parse_field(doc, p + ("terms", i)) for i in range(len(terms))))
    doc.fail(p, f"{_where(p)}: unknown field kind {kind!r}")


def parse_primitive(doc: Doc, p):
    kind = _get(doc, p, "kind", "str") if isinstance(doc.at(p), dict) else None
    if not isinstance(doc.at(p), dict):
        doc.fail(p, f"{_where(p)}: expected a primitive mapping")
    d = doc.at(p)

    def prof():
        return parse_profile(doc, p + ("profile",)) if "profile" in d else Constant(1.0)

    if kind == "linear":
        _mapping(doc, p, {"kind", "matrix", "euclidean"}, ("matrix",))
        eu = _get(doc, p, "euclidean", "bool", False)
        m = _get(doc, p, "matrix", "matrix")
        return _build(doc, p, lambda: LinearToral(m, eu))
    if kind == "translation":
        _mapping(doc, p, {"kind", "v", "profile", "at_image"}, ("v",))
        return Translation(_get(doc, p, "v", "vec"), prof(), _get(doc, p, "at_image", "bool", False))
    if kind == "shear":
        _mapping(doc, p, {"kind", "axis", "source", "s", "profile", "periodic", "at_image"},
                 ("axis", "source", "s"))
        return _build(doc, p, lambda: Shear(
            _get(doc, p, "axis", "int"), _get(doc, p, "source", "int"), _get(doc, p, "s", "float"),
            prof(), _get(doc, p, "periodic", "bool", True), _get(doc, p, "at_image", "bool", False)))
    if kind == "flow":
        _mapping(doc, p, {"kind", "t", "field", "at_image"}, ("field",))
        return _build(doc, p, lambda: FieldFlow(parse_field(doc, p + ("field",)),
                                                _get(doc, p, "t", "float", 1.0),
                                                _get(doc, p, "at_image", "bool", False)))
    if kind == "sphere_rotation":
        _mapping(doc, p, {"kind", "R"}, ("R",))
        return _build(doc, p, lambda: SphereRotation(_get(doc, p, "R", "matrix")))
    if kind == "sphere_twist":
        _mapping(doc, p, {"kind", "a", "u", "v", "amp"}, ("a", "u", "v", "amp"))
        return _build(doc, p, lambda: SphereTwist(
            _get(doc, p, "a", "vec"), _get(doc, p, "u", "vec"), _get(doc, p, "v", "vec"),
            _get(doc, p, "amp", "float")))
    if kind == "inverse":
        _mapping(doc, p, {"kind", "of"}, ("of",))
        return Inverted(parse_primitive(doc, p + ("of",)))
    doc.fail(p, f"{_where(p)}: unknown primitive kind {kind!r}")


def parse_fiber_map(doc: Doc, p, manifold: str, dim: int, key="maps") -> FiberMap:
    lst = doc.at(p)
    if not isinstance(lst, list):
        doc.fail(p, f"{_where(p)}: expected a list of primitives")
    prims = tuple(parse_primitive(doc, p + (i,)) for i in range(len(lst)))
    fm = _build(doc, p, lambda: FiberMap(prims, manifold, dim))
    # every primitive must act in the declared dimension
    for i, q in enumerate(prims):
        _check_dim(doc, p + (i,), q, fm)
    return fm


def _check_dim(doc, p, q, fm):
    n = fm.ambient_dim
    sizes = []
    if isinstance(q, Inverted):
        return _check_dim(doc, p + ("of",), q.inner, fm)
    if isinstance(q, LinearToral):
        sizes.append(len(q.M))
    elif isinstance(q, Translation):
        sizes.append(len(q.v))
    elif isinstance(q, Shear):
        if not (0 <= q.axis < n and 0 <= q.source < n):
            doc.fail(p, f"{_where(p)}: shear axes out of range for dimension {n}")
    elif isinstance(q, SphereRotation):
        sizes.append(len(q.R))
    elif isinstance(q, SphereTwist):
        sizes.append(len(q.a))
    for s in sizes:
        if s != n:
            doc.fail(p, f"{_where(p)}: acts on R^{s} but the fiber is R^{n}")


def _manifold(doc, p):
    m = _get(doc, p, "manifold", "str", "torus")
    if m not in ("torus", "sphere", "euclidean"):
        doc.fail(p + ("manifold",), f"unknown manifold {m!r}")
    dim = _get(doc, p, "dim", "int", 2)
    if dim < 1:
        doc.fail(p + ("dim",), "dim must be positive")
    return m, dim


def _schema(doc, expect):
    if not isinstance(doc.data, dict):
        doc.fail((), "expected a mapping at top level")
    s = _get(doc, (), "schema", "str")
    if s != expect:
        doc.fail(("schema",), f"schema {s!r} not supported (expected {expect!r})")


# ------------------------------------------------------------ skew files

@dataclass
class SkewConfig:
    F: object
    deformation: dict | None = None
    source: str | None = None


def _read_text(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}", path=str(path)) from None


def _parse_base(doc, p, base_dir):
    b = _mapping(doc, p, {"matrix", "file"})
    if ("matrix" in b) == ("file" in b):
        doc.fail(p, "base needs exactly one of 'matrix' or 'file'")
    if "file" in b:
        f = Path(_get(doc, p, "file", "str"))
        if not f.is_absolute() and base_dir is not None:
            f = base_dir / f
        return parse_matrix_text(_read_text(f), path=str(f))
    m = _get(doc, p, "matrix", "imatrix")
    return _build(doc, p + ("matrix",), lambda: ToralAutomorphism(m))


def _parse_deformation(doc, p):
    _mapping(doc, p, {"sigma", "dictionary_size", "C0", "loops"}, ("sigma", "loops"))
    out = {"sigma": _get(doc, p, "sigma", "float"),
           "dictionary_size": _get(doc, p, "dictionary_size", "int", 1),
           "C0": _get(doc, p, "C0", "float", None), "loops": []}
    if out["sigma"] <= 0:
        doc.fail(p + ("sigma",), "sigma must be positive")
    if out["C0"] is not None and out["C0"] <= 0:
        doc.fail(p + ("C0",), "C0 must be positive")
    if out["dictionary_size"] < 1:
        doc.fail(p + ("dictionary_size",), "dictionary_size must be positive")
    loops = doc.at(p + ("loops",))
    if not isinstance(loops, list) or not loops:
        doc.fail(p + ("loops",), "loops: expected a non-empty list")
    for i in range(len(loops)):
        q = p + ("loops", i)
        _mapping(doc, q, {"y", "t_frac"}, ("y",))
        t = _get(doc, q, "t_frac", "float", 0.5)
        if not 0 <= t <= 1:
            doc.fail(q + ("t_frac",), "t_frac must lie in [0, 1]")
        out["loops"].append({"y": list(_get(doc, q, "y", "vec")), "t_frac": t})
    return out


def parse_skew(text: str, path=None) -> SkewConfig:
    from .skew import SkewProduct

    doc = Doc(text, path)
    _schema(doc, SKEW_SCHEMA)
    _mapping(doc, (), {"schema", "base", "fiber", "volume_preserving", "deformation"},
             ("base", "fiber"))
    base_dir = Path(path).parent if path is not None else None
    A = _parse_base(doc, ("base",), base_dir)
    _mapping(doc, ("fiber",), {"manifold", "dim", "maps"}, ("maps",))
    m, dim = _manifold(doc, ("fiber",))
    g = parse_fiber_map(doc, ("fiber", "maps"), m, dim)
    vp = _get(doc, (), "volume_preserving", "bool", g.volume_preserving)
    F = _build(doc, ("volume_preserving",), lambda: SkewProduct(A, g, vp))
    dfm = _parse_deformation(doc, ("deformation",)) if "deformation" in doc.data else None
    if dfm is not None:
        for i, lp in enumerate(dfm["loops"]):
            if len(lp["y"]) != A.dim:
                doc.fail(("deformation", "loops", i, "y"), f"loop base point must have {A.dim} coordinates")
    return SkewConfig(F, dfm, None if path is None else str(path))


def read_skew(path) -> SkewConfig:
    return parse_skew(_read_text(path), path)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def fiber_to_list(g: FiberMap) -> list:
    return [_plain(p.spec()) for p in g.primitives]


def skew_to_dict(cfg: SkewConfig) -> dict:
    F = cfg.F
    out = {"schema": SKEW_SCHEMA,
           "base": {"matrix": [list(r) for r in F.base.entries]},
           "fiber": {"manifold": F.fiber.manifold, "dim": F.fiber.dim,
                     "maps": fiber_to_list(F.fiber)},
           "volume_preserving": bool(F.volume_preserving)}
    if cfg.deformation is not None:
        out["deformation"] = {k: _plain(v) for k, v in cfg.deformation.items() if v is not None}
    return out


def dump(d: dict) -> str:
    return yaml.safe_dump(d, sort_keys=False, default_flow_style=None)


# ------------------------------------------------------------- IFS files

def parse_ifs(text: str, path=None):
    from .ifs import IFSSpec, build_conjugated_family

    doc = Doc(text, path)
    _schema(doc, IFS_SCHEMA)
    _mapping(doc, (), {"schema", "manifold", "dim", "seed", "maps", "conjugated"})
    m, dim = _manifold(doc, ())
    seed = _get(doc, (), "seed", "int", 0)
    if ("maps" in doc.data) == ("conjugated" in doc.data):
        doc.fail((), "IFS needs exactly one of 'maps' or 'conjugated'")
    if "maps" in doc.data:
        lst = doc.at(("maps",))
        if not isinstance(lst, list) or not lst:
            doc.fail(("maps",), "maps: expected a non-empty list")
        maps = tuple(parse_fiber_map(doc, ("maps", i), m, dim) for i in range(len(lst)))
        return _build(doc, ("maps",), lambda: IFSSpec(maps, m, dim, seed))
    p = ("conjugated",)
    _mapping(doc, p, {"g", "hs", "K"}, ("g", "hs", "K"))
    g = parse_fiber_map(doc, p + ("g",), m, dim)
    hl = doc.at(p + ("hs",))
    if not isinstance(hl, list) or not hl:
        doc.fail(p + ("hs",), "hs: expected a non-empty list")
    hs = [parse_fiber_map(doc, p + ("hs", i), m, dim) for i in range(len(hl))]
    K = _get(doc, p, "K", "int")
    if K < 0:
        doc.fail(p + ("K",), "K must be non-negative")
    return _build(doc, p, lambda: build_conjugated_family(g, hs, K, seed))


def read_ifs(path):
    return parse_ifs(_read_text(path), path)


def ifs_to_dict(spec) -> dict:
    """Normalized echo; a conjugated family is written out map by map."""
    return {"schema": IFS_SCHEMA, "manifold": spec.manifold, "dim": spec.dim,
            "seed": int(spec.seed), "maps": [fiber_to_list(g) for g in spec.maps]}


# ------------------------------------------------------------ run configs

@dataclass
class RunConfig:
    command: str | None
    values: dict          # top-level keys other than schema/command/params
    params: dict
    source: str | None = None


def parse_run_config(text: str, path=None, param_kinds=None) -> RunConfig:
    """Run config; ``param_kinds(command)`` gives {name: kind} for validation."""
    doc = Doc(text, path)
    _schema(doc, RUN_SCHEMA)
    top = {"schema", "command", "input", "fiber_matrix", "seed", "workers", "output", "params"}
    _mapping(doc, (), top)
    command = _get(doc, (), "command", "str", None)
    values = {}
    for k, kind in (("input", "str"), ("fiber_matrix", "str"), ("seed", "int"),
                    ("workers", "int"), ("output", "str")):
        v = _get(doc, (), k, kind, None)
        if v is not None:
            values[k] = v
    if values.get("workers", 1) < 1:
        doc.fail(("workers",), "workers must be at least 1")
    params = {}
    if "params" in doc.data:
        kinds = param_kinds(command) if param_kinds is not None else None
        raw = _mapping(doc, ("params",), set(kinds) if kinds is not None else set(doc.at(("params",))))
        for k in raw:
            params[k] = convert(doc, ("params", k), kinds[k]) if kinds is not None else raw[k]
    return RunConfig(command, values, params, None if path is None else str(path))


def read_run_config(path, param_kinds=None) -> RunConfig:
    return parse_run_config(_read_text(path), path, param_kinds)


__all__ = ["Doc", "SkewConfig", "RunConfig", "parse_skew", "read_skew", "skew_to_dict",
           "parse_ifs", "read_ifs", "ifs_to_dict", "parse_run_config", "read_run_config",
           "parse_primitive", "parse_profile", "parse_field", "parse_fiber_map", "dump",
           "fiber_to_list", "convert", "SKEW_SCHEMA", "IFS_SCHEMA", "RUN_SCHEMA"]
