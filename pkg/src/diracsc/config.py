"""Run configuration: TOML parsing, validation and serialisation.

A configuration has a ``[particle]`` table, optional ``[tolerances]``,
an array of ``[[field]]`` components, a top-level ``seed`` and one table per
command. Unknown keys are rejected with their key path; syntax errors carry
line and column.
"""
from __future__ import annotations

import hashlib
import math
import re
import sys
from dataclasses import dataclass
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import CONNECTIONS, DEFAULT_SPIN, HAMILTONIANS, Tolerances
from .errors import ConfigError
from .fields import FieldConfig, ParticleParams

HAM_KINDS = tuple(HAMILTONIANS)
FIELD_TYPES = ("none", "uniform-B", "uniform-E", "harmonic", "coulomb", "polynomial",
               "quadrupole", "mirror")
ORACLE_MODELS = ("pauli-landau", "harmonic", "hydrogenic", "file")


# ---------------------------------------------------------------- validators

def _num(v, path, positive=False, nonneg=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", key=path)
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError("expected an integer", key=path)
        v = int(v)
    else:
        v = float(v)
    if not math.isfinite(v):
        raise ConfigError("value must be finite", key=path)
    if positive and not v > 0:
        raise ConfigError("value must be positive", key=path)
    if nonneg and v < 0:
        raise ConfigError("value must be nonnegative", key=path)
    return v


def _vec(v, path, n=3):
    if not isinstance(v, list) or len(v) != n:
        raise ConfigError(f"expected a list of {n} numbers", key=path)
    return [_num(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _choice(v, path, options):
    if not isinstance(v, str) or v not in options:
        raise ConfigError(f"expected one of {', '.join(options)}", key=path)
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError("expected a string", key=path)
    return v


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError("expected true or false", key=path)
    return v


def _vec_list(v, path):
    if not isinstance(v, list):
        raise ConfigError("expected a list of 3-vectors", key=path)
    return [_vec(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _num_list(v, path, positive=False):
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a nonempty list of numbers", key=path)
    return [_num(x, f"{path}[{i}]", positive=positive) for i, x in enumerate(v)]


def _table(raw, path, spec, required=()):
    """Validate a table against ``spec = {key: (validator, default)}``."""
    if not isinstance(raw, dict):
        raise ConfigError("expected a table", key=path)
    for k in raw:
        if k not in spec:
            raise ConfigError("unknown key", key=f"{path}.{k}" if path else k)
    out = {}
    for k, (fn, default) in spec.items():
        kp = f"{path}.{k}" if path else k
        if k in raw:
            out[k] = fn(raw[k], kp)
        elif k in required:
            raise ConfigError("missing required key", key=kp)
        elif default is not None:
            out[k] = default
    return out


P = lambda **kw: (lambda v, p: _num(v, p, **kw))  # noqa: E731

PARTICLE = {"m": (P(positive=True), 1.0), "e": (P(), 1.0), "c": (P(positive=True), 1.0),
            "hbar": (P(positive=True), 1.0)}
TOLS = {"rtol": (P(positive=True), 1e-10), "atol": (P(positive=True), 1e-12),
        "max_steps": (P(positive=True, integer=True), 2_000_000)}
UNITS = {"system": (lambda v, p: _choice(v, p, ("natural", "gaussian")), "natural")}


def _field(raw, path):
    if not isinstance(raw, dict) or "type" not in raw:
        raise ConfigError("field component needs a type", key=f"{path}.type")
    t = _choice(raw["type"], f"{path}.type", FIELD_TYPES)
    typ = {"type": (lambda v, p: v, None)}
    vec0 = [0.0, 0.0, 0.0]
    specs = {
        "none": {},
        "uniform-B": {"B": (_vec, None)},
        "uniform-E": {"E": (_vec, None)},
        "harmonic": {"omega": (P(positive=True), None), "center": (_vec, vec0)},
        "coulomb": {"Z": (P(), None), "a": (P(positive=True), None), "center": (_vec, vec0)},
        "polynomial": {"phi": (lambda v, p: [_vec(x, f"{p}[{i}]", 4) for i, x in enumerate(v)],
                               []),
                       "A": (lambda v, p: [_vec(x, f"{p}[{i}]", 5) for i, x in enumerate(v)],
                             [])},
        "quadrupole": {"g": (P(), 1.0)},
        "mirror": {"B0": (P(), None), "b": (P(), None)},
    }[t]
    req = [k for k, (_, d) in specs.items() if d is None]
    return _table(raw, path, {**typ, **specs}, required=req)


def _kind(v, p):
    return _choice(v, p, HAM_KINDS)


def _conn(v, p):
    return _choice(v, p, tuple(CONNECTIONS))


SPIN_TRANSPORT = {"kind": (_kind, "plus"), "connection": (_conn, None),
                  "p": (_vec, None), "x": (_vec, None), "T": (P(positive=True), None),
                  "samples": (P(positive=True, integer=True), 101),
                  "s0": (_vec, [0.0, 0.0, 1.0]), "mu": (P(), None)}
ORBIT = {"kind": (_kind, "pauli0"), "E": (P(), None), "p": (_vec, None), "x": (_vec, None),
         "T": (P(positive=True), None), "mu": (P(), None),
         "repetitions": (P(positive=True, integer=True), 1),
         "database": (_str, "orbits.toml")}
WEYL = {"kind": (_kind, "pauli0"), "energies": (_num_list, None),
        "samples": (P(positive=True, integer=True), 1_000_000),
        "box": (P(positive=True), None), "delta": (P(positive=True), None),
        "mu": (P(), None)}
ORACLE = {"model": (lambda v, p: _choice(v, p, ORACLE_MODELS), None),
          "B": (P(), None), "omega": (P(positive=True), None), "kappa": (P(), None),
          "spin": (_bool, True), "path": (_str, None), "cutoff": (P(), None)}
CHI = {"E_a": (P(), None), "E_b": (P(), None), "plateau_a": (P(), None),
       "plateau_b": (P(), None)}
GRID = {"start": (P(), None), "stop": (P(), None), "num": (P(positive=True, integer=True), 11)}
TRACE = {"oracle": (lambda v, p: _table(v, p, ORACLE, required=("model",)), None),
         "T_max": (P(positive=True), None),
         "shape": (lambda v, p: _choice(v, p, ("bump", "bump4")), "bump"),
         "chi": (lambda v, p: _table(v, p, CHI, required=tuple(CHI)), None),
         "energies": (lambda v, p: _table(v, p, GRID, required=("start", "stop")), None),
         "dim": (P(positive=True, integer=True), 3),
         "weyl": (lambda v, p: _choice(v, p, ("auto", "mc")), "auto"),
         "kind": (_kind, "pauli0"),
         "samples": (P(positive=True, integer=True), 1_000_000),
         "box": (P(positive=True), None),
         "orbit_database": (_str, None)}
KERNEL = {"type": (lambda v, p: _choice(v, p, ("dirac", "pauli", "strong")), "dirac"),
          "x": (_vec, None), "y": (_vec, None), "t": (P(positive=True), None),
          "seeds": (_vec_list, []), "mu": (P(), None), "hbar": (P(positive=True), None)}
ENDPOINTS = {"y": (_vec, None), "x": (_vec, None)}
INITIAL = {"p": (_vec, None), "x": (_vec, None)}
LIMITS = {"t": (P(positive=True), None),
          "c_values": (lambda v, p: _num_list(v, p, positive=True), [10.0, 20.0, 40.0]),
          "endpoints": (lambda v, p: _table(v, p, ENDPOINTS, required=("y", "x")), None),
          "initial": (lambda v, p: _table(v, p, INITIAL, required=("p", "x")), None),
          "expected_order": (P(positive=True), 1.0)}
FIELDS_CHECK = {"points": (P(positive=True, integer=True), 64),
                "tol": (P(positive=True), 1e-6), "scale": (P(positive=True), 1.0)}

SECTIONS = {
    "spin_transport": (SPIN_TRANSPORT, ("p", "x", "T")),
    "orbit": (ORBIT, ("E", "p", "x", "T")),
    "weyl": (WEYL, ("energies",)),
    "trace": (TRACE, ("oracle", "T_max", "chi", "energies")),
    "kernel": (KERNEL, ("x", "y", "t")),
    "limits": (LIMITS, ("t",)),
    "fields_check": (FIELDS_CHECK, ()),
}
COMMAND_SECTION = {"spin-transport": "spin_transport", "orbit-find": "orbit", "weyl": "weyl",
                   "trace-compare": "trace", "kernel-eval": "kernel",
                   "limits-compare": "limits", "fields-check": "fields_check"}
MC_SECTIONS = ("weyl",)


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` is the normalised TOML document."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    @property
    def params(self) -> ParticleParams:
        return ParticleParams(**self.data["particle"])

    @property
    def tolerances(self) -> Tolerances:
        t = self.data["tolerances"]
        return Tolerances(rtol=t["rtol"], atol=t["atol"], max_steps=t["max_steps"])

    @property
    def seed(self) -> int | None:
        return self.data.get("seed")

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    @property
    def field(self) -> FieldConfig:
        return build_field(self.data["field"], self.params)

    def dumps(self) -> str:
        return tomli_w.dumps(self.data)

    def sha256(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig({**self.data, "seed": int(seed)})


def build_field(components: list, params: ParticleParams) -> FieldConfig:
    cfg = FieldConfig.none()
    for comp in components:
        t = comp["type"]
        if t == "none":
            continue
        if t == "uniform-B":
            cfg = cfg + FieldConfig.uniform_b(comp["B"])
        elif t == "uniform-E":
            cfg = cfg + FieldConfig.uniform_e(comp["E"])
        elif t == "harmonic":
            cfg = cfg + FieldConfig.harmonic(comp["omega"], params, comp["center"])
        elif t == "coulomb":
            cfg = cfg + FieldConfig.coulomb(comp["Z"], comp["a"], comp["center"])
        elif t == "polynomial":
            phi = [(c, (int(i), int(j), int(k))) for c, i, j, k in comp["phi"]]
            A = [(int(a), c, (int(i), int(j), int(k))) for a, c, i, j, k in comp["A"]]
            cfg = cfg + FieldConfig.polynomial(phi, A)
        elif t == "quadrupole":
            cfg = cfg + FieldConfig.quadrupole(comp["g"])
        elif t == "mirror":
            cfg = cfg + FieldConfig.mirror(comp["B0"], comp["b"])
    return cfg


_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")
_END = re.compile(r"\(at end of document\)")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML configuration.

    Raises
    ------
    ConfigError
        Syntax errors carry line and column; semantic errors the key path.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        msg = _LOC.sub("", str(exc)).strip()
        if m:
            raise ConfigError(f"syntax error: {msg}", line=int(m.group(1)),
                              column=int(m.group(2))) from None
        if "end of document" in msg:
            lines = text.splitlines() or [""]
            raise ConfigError(f"syntax error: {_END.sub('', msg).strip()}",
                              line=len(lines), column=len(lines[-1]) + 1) from None
        raise ConfigError(f"syntax error: {msg}") from None
    try:
        return RunConfig(_normalise(raw))
    except ConfigError as exc:
        if exc.key is not None and exc.line is None:
            line = _key_line(text, exc.key)
            if line is not None:
                raise ConfigError(str(exc).rsplit(" (", 1)[0], line=line,
                                  key=exc.key) from None
        raise


def _key_line(text: str, key: str):
    """Best-effort line of the last component of a dotted key path."""
    leaf = re.sub(r"\[\d+\]", "", key).split(".")[-1]
    pat = re.compile(rf"^\s*{re.escape(leaf)}\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return n
    return None


def _normalise(raw: dict) -> dict:
    known = {"particle", "tolerances", "units", "field", "seed", *SECTIONS}
    for k in raw:
        if k not in known:
            raise ConfigError("unknown key", key=k)
    out: dict[str, Any] = {
        "particle": _table(raw.get("particle", {}), "particle", PARTICLE),
        "tolerances": _table(raw.get("tolerances", {}), "tolerances", TOLS),
        "units": _table(raw.get("units", {}), "units", UNITS),
    }
    fields = raw.get("field", [])
    if isinstance(fields, dict):
        fields = [fields]
    if not isinstance(fields, list):
        raise ConfigError("expected an array of field tables", key="field")
    out["field"] = [_field(f, f"field[{i}]") for i, f in enumerate(fields)]
    if "seed" in raw:
        out["seed"] = _num(raw["seed"], "seed", nonneg=True, integer=True)
    for name, (spec, req) in SECTIONS.items():
        if name in raw:
            out[name] = _table(raw[name], name, spec, required=req)
    st = out.get("spin_transport")
    if st is not None and "connection" not in st:
        st["connection"] = DEFAULT_SPIN[st["kind"]]
    lim = out.get("limits")
    if lim is not None and ("endpoints" in lim) == ("initial" in lim):
        raise ConfigError("give exactly one of endpoints or initial", key="limits")
    tr = out.get("trace")
    if tr is not None:
        c = tr["chi"]
        if not c["E_a"] <= c["plateau_a"] <= c["plateau_b"] <= c["E_b"]:
            raise ConfigError("need E_a <= plateau_a <= plateau_b <= E_b", key="trace.chi")
        o = tr["oracle"]
        need = {"pauli-landau": ("B", "cutoff"), "harmonic": ("omega", "cutoff"),
                "hydrogenic": ("kappa", "cutoff"), "file": ("path",)}[o["model"]]
        for k in need:
            if k not in o:
                raise ConfigError("missing required key", key=f"trace.oracle.{k}")
    return out


def require_seed(cfg: RunConfig, section: str) -> int:
    if cfg.seed is None:
        raise ConfigError("an RNG seed is required for Monte-Carlo runs", key="seed")
    return cfg.seed
