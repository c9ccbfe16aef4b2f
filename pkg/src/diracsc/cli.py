"""Command-line interface.

``diracsc COMMAND --config run.toml [--out DIR] [--seed N] [--threads N] [--verbose]``

Every command writes CSV files whose first lines are ``#`` comments with the
tool version, command, configuration hash and seed, followed by a header
row. A single JSON summary line is printed on stdout. Exit status: 0 on
success, 2 for configuration errors, 3 for numerical failures and 4 for
rejected (degenerate) input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .config import COMMAND_SECTION, SECTIONS, RunConfig, _table, parse_config, require_seed
from .dynamics import flow
from .errors import ConfigError, DiracSCError
from .fields import Harmonic, consistency_check
from .kernel import contributions_csv, dirac_kernel, pauli_kernel, strong_coupling_kernel
from .orbits import find_periodic, repeat
from .pauli import compare_limits
from .spin import eta_phase, hopf_columns
from .trace import (OrbitTerm, SpectrumOracle, Truncation, coulomb_shell_volume,
                    ho_weyl_reference, lhs_sum, make_test_pair, rhs_sum, weyl_volume)

log = logging.getLogger("diracsc")

SCHEMA_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


class Output:
    """Writes result files with the provenance comment block."""

    def __init__(self, out_dir: Path, command: str, cfg: RunConfig):
        self.dir = out_dir
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def header(self) -> str:
        return (f"# diracsc {__version__}\n# command: {self.command}\n"
                f"# config_sha256: {self.cfg.sha256()}\n"
                f"# seed: {'none' if self.cfg.seed is None else self.cfg.seed}\n")

    def table(self, name: str, columns, rows) -> Path:
        path = self.dir / name
        lines = [",".join(columns)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        path.write_text(self.header() + "\n".join(lines) + "\n")
        self.files.append(str(path))
        return path

    def raw(self, name: str, body: str) -> Path:
        path = self.dir / name
        path.write_text(self.header() + body)
        self.files.append(str(path))
        return path


# ----------------------------------------------------------------- commands

def cmd_spin_transport(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    if sec["connection"] == "none":
        raise ConfigError("spin transport needs a connection other than none",
                          key="spin_transport.connection")
    z0 = np.concatenate([sec["p"], sec["x"]])
    traj = flow(cfg.params, cfg.field, sec["kind"], z0, sec["T"], cfg.tolerances,
                spin=sec["connection"], mu=sec.get("mu"), s0=sec["s0"])
    ts = np.linspace(0.0, sec["T"], sec["samples"])
    d = traj.d(ts)
    s_h = hopf_columns(d)
    s_b = traj.s(ts)
    north = np.allclose(sec["s0"], [0.0, 0.0, 1.0])
    eta = eta_phase(traj) if north else None
    rows = []
    for i, t in enumerate(ts):
        row = [t]
        for v in d[i].ravel():
            row += [v.real, v.imag]
        row += list(s_h[i]) + list(s_b[i])
        row.append(eta.eta(t) if eta is not None else float("nan"))
        rows.append(row)
    cols = ["t"] + [f"d{i}{j}_{p}" for i in range(2) for j in range(2) for p in ("re", "im")]
    cols += ["sh_x", "sh_y", "sh_z", "s_x", "s_y", "s_z", "eta"]
    out.table("spin_transport.csv", cols, rows)
    unit = np.max(np.linalg.norm(np.conj(np.swapaxes(d, -1, -2)) @ d - np.eye(2), axis=(1, 2)))
    return {"unitarity_defect": float(unit),
            "det_defect": float(np.max(np.abs(np.linalg.det(d) - 1))),
            "hopf_bmt_distance": float(np.max(np.abs(s_h - s_b))) if north else None,
            "energy_drift": traj.energy_drift(), "steps": len(traj.ts) - 1}


ORBIT_COLUMNS = ["kind", "E", "T", "T_primitive", "k", "S", "maslov", "theta", "eta",
                 "spin_weight", "det_M_minus_1", "degenerate"]


def _append_orbit(path: Path, record: dict):
    """Append one ``[[orbit]]`` record; creates the file with its schema version."""
    new = not path.exists()
    with path.open("a") as fh:
        if new:
            fh.write(f"schema_version = {SCHEMA_VERSION}\n\n")
        fh.write(tomli_w.dumps({"orbit": [record]}))
        fh.write("\n")


def load_orbit_database(path) -> list[dict]:
    data = tomllib.loads(Path(path).read_text())
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"orbit database {path} has unsupported schema",
                          key="schema_version")
    return data.get("orbit", [])


def cmd_orbit_find(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    z0 = np.concatenate([sec["p"], sec["x"]])
    orb = find_periodic(cfg.params, cfg.field, sec["kind"], sec["E"], z0, sec["T"],
                        cfg.tolerances, sec.get("mu"))
    if sec["repetitions"] > 1:
        orb = repeat(orb, sec["repetitions"], cfg.params, cfg.field, sec.get("mu"))
    row = [orb.kind, orb.E, orb.T, orb.T_primitive, orb.k, orb.S, orb.maslov, orb.theta,
           orb.eta, orb.spin_weight, orb.det_M_minus_1(), orb.degenerate]
    out.table("orbit.csv", ORBIT_COLUMNS, [row])
    rec = orb.to_record()
    rec.update({"schema_version": SCHEMA_VERSION, "tool_version": __version__,
                "config_sha256": cfg.sha256(), "max_steps": cfg.tolerances.max_steps})
    db = Path(sec["database"])
    db = db if db.is_absolute() else out.dir / db
    _append_orbit(db, rec)
    return {"T": orb.T, "S": orb.S, "maslov": orb.maslov, "degenerate": orb.degenerate,
            "det_M_minus_1": orb.det_M_minus_1(), "database": str(db)}


def _harmonic_reference(cfg: RunConfig, kind: str):
    comps = cfg.field.components
    if kind == "pauli0" and len(comps) == 1 and isinstance(comps[0], Harmonic) \
            and comps[0].center == (0.0, 0.0, 0.0):
        p = cfg.params
        return math.sqrt(comps[0].strength * p.e / p.m)
    return None


def cmd_weyl(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    seed = require_seed(cfg, "weyl")
    omega = _harmonic_reference(cfg, sec["kind"])
    rows, summary = [], []
    for E in sec["energies"]:
        est = weyl_volume(cfg.params, cfg.field, sec["kind"], E, sec["samples"], seed,
                          box=sec.get("box"), delta=sec.get("delta"), mu=sec.get("mu"),
                          threads=args.threads)
        ref = ho_weyl_reference(E, omega) if omega is not None and E > 0 else float("nan")
        z = (est.vol - ref) / est.stderr if est.stderr > 0 and not math.isnan(ref) \
            else float("nan")
        rows.append([E, est.vol, est.stderr, ref, z, est.delta, est.hits])
        summary.append({"E": E, "vol": est.vol, "stderr": est.stderr,
                        "reference": None if math.isnan(ref) else ref})
        print(f"E={E:g}  vol={est.vol:.6g} +/- {est.stderr:.3g}"
              + ("" if math.isnan(ref) else f"  analytic={ref:.6g}"), file=sys.stderr)
    out.table("weyl.csv", ["E", "vol", "stderr", "reference", "z_score", "delta", "hits"],
              rows)
    return {"results": summary}


def _oracle(cfg: RunConfig, o: dict) -> SpectrumOracle:
    p = cfg.params
    if o["model"] == "pauli-landau":
        return SpectrumOracle.pauli_landau(o["B"], p, o["cutoff"], spin=o["spin"])
    if o["model"] == "harmonic":
        return SpectrumOracle.harmonic(o["omega"], p, o["cutoff"], B=o.get("B", 0.0),
                                       spin=o["spin"])
    if o["model"] == "hydrogenic":
        return SpectrumOracle.hydrogenic(o["kappa"], p, o["cutoff"])
    return SpectrumOracle.from_file(o["path"], o.get("cutoff"))


def _weyl_volumes(cfg: RunConfig, sec: dict, E: float, args) -> tuple[list, int]:
    """Shell volumes per branch and the number of spin channels."""
    o = sec["oracle"]
    p = cfg.params
    spin = 2 if o.get("spin", True) else 1
    if sec["weyl"] == "auto":
        if o["model"] == "pauli-landau":
            if sec["dim"] != 2:
                raise ConfigError("the Landau oracle is planar; set dim = 2", key="trace.dim")
            return [2 * math.pi * p.m], spin
        if o["model"] == "harmonic":
            return [ho_weyl_reference(E, o["omega"]) if E > 0 else 0.0], spin
        if o["model"] == "hydrogenic":
            return [coulomb_shell_volume(E, o["kappa"], p)], 2
    seed = require_seed(cfg, "trace")
    est = weyl_volume(p, cfg.field, sec["kind"], E, sec["samples"], seed,
                      box=sec.get("box"), threads=args.threads)
    return [est.vol], spin


def _orbit_terms(sec: dict, E: float) -> list:
    path = sec.get("orbit_database")
    if not path:
        return []
    terms = []
    for i, r in enumerate(load_orbit_database(path)):
        # first-order continuation in energy: dS/dE = T
        S = r["S"] + r["T"] * (E - r["E"])
        terms.append(OrbitTerm(r["T"], S, r["T_primitive"], np.asarray(r["monodromy"]),
                               int(r["maslov"]), r["spin_weight"], f"orbit{i}",
                               bool(r["degenerate"])))
    return terms


def cmd_trace_compare(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    oracle = _oracle(cfg, sec["oracle"])
    pair = make_test_pair(sec["T_max"], sec["shape"])
    c = sec["chi"]
    chi = Truncation(c["E_a"], c["E_b"], c["plateau_a"], c["plateau_b"])
    g = sec["energies"]
    hbar = cfg.params.hbar
    rows, worst, labels = [], 0.0, None
    for E in np.linspace(g["start"], g["stop"], g["num"]):
        lhs = lhs_sum(oracle, chi, pair, float(E), hbar)
        vols, spin = _weyl_volumes(cfg, sec, float(E), args)
        rhs = rhs_sum(vols, _orbit_terms(sec, float(E)), chi, pair, float(E), hbar,
                      dim=sec["dim"], spin=spin)
        labels = labels or [t[0] for t in rhs.terms]
        dev = (lhs.value - rhs.value) / rhs.value if rhs.value != 0 else float("nan")
        if not math.isnan(dev):
            worst = max(worst, abs(dev))
        rows.append([float(E), lhs.value, rhs.weyl, rhs.orbit_sum, rhs.value, dev,
                     lhs.tail_bound] + [t[2] for t in rhs.terms])
    cols = ["E", "lhs", "weyl", "orbit_sum", "rhs", "rel_dev", "tail_bound"]
    cols += [f"orbit_{lab}" for lab in (labels or [])]
    out.table("trace_compare.csv", cols, rows)
    return {"max_rel_dev": worst, "levels": int(oracle.energies.size)}


def cmd_kernel_eval(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    p = cfg.params
    common = dict(seeds=sec["seeds"], hbar=sec.get("hbar"), tol=cfg.tolerances)
    if sec["type"] == "dirac":
        res = dirac_kernel(p, cfg.field, sec["x"], sec["y"], sec["t"], **common)
    elif sec["type"] == "pauli":
        res = pauli_kernel(p, cfg.field, sec["x"], sec["y"], sec["t"], **common)
    else:
        mu = sec.get("mu", p.magneton)
        res = strong_coupling_kernel(p, cfg.field, mu, sec["x"], sec["y"], sec["t"],
                                     **common)
    out.raw("kernel_ledger.csv", contributions_csv(res.contributions))
    K = res.matrix
    out.table("kernel_matrix.csv", ["row", "col", "re", "im"],
              [[i, j, K[i, j].real, K[i, j].imag] for i in range(K.shape[0])
               for j in range(K.shape[1])])
    return {"contributions": len(res.contributions), "rejected": len(res.rejected),
            "norm": float(np.linalg.norm(K))}


def cmd_limits_compare(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    kw = {}
    if "endpoints" in sec:
        kw["endpoints"] = (sec["endpoints"]["y"], sec["endpoints"]["x"])
    else:
        kw["initial"] = (sec["initial"]["p"], sec["initial"]["x"])
    lc = compare_limits(cfg.params, cfg.field, sec["t"], sec["c_values"],
                        tol=cfg.tolerances, expected_order=sec["expected_order"], **kw)
    out.raw("limits.csv", lc.to_csv())
    return {"distances": [float(d) for d in lc.distances],
            "orders": None if lc.orders is None else [float(o) for o in lc.orders],
            "accepted": lc.accepted, "notes": lc.notes}


def cmd_fields_check(cfg: RunConfig, sec: dict, out: Output, args) -> dict:
    worst = consistency_check(cfg.field, sec["points"], cfg.seed or 0, sec["scale"])
    ok = worst <= sec["tol"]
    out.table("fields_check.csv", ["points", "worst_rel_error", "tol", "pass"],
              [[sec["points"], worst, sec["tol"], ok]])
    return {"worst_rel_error": worst, "pass": ok, "_exit": 0 if ok else 3}


COMMANDS = {
    "spin-transport": cmd_spin_transport,
    "orbit-find": cmd_orbit_find,
    "weyl": cmd_weyl,
    "trace-compare": cmd_trace_compare,
    "kernel-eval": cmd_kernel_eval,
    "limits-compare": cmd_limits_compare,
    "fields-check": cmd_fields_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diracsc",
                                 description="Semiclassical Dirac/Pauli spin-orbit toolkit")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sampling")
    ap.add_argument("--verbose", action="store_true", help="debug logging")
    ap.add_argument("--version", action="version", version=f"diracsc {__version__}")
    return ap


def _summary(command, status, code, t0, extra):
    rec = {"command": command, "status": status, "exit_code": code,
           "wall_time_s": round(time.perf_counter() - t0, 6)}
    rec.update(extra)
    print(json.dumps(rec, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def run_command(name: str, cfg: RunConfig, out_dir: Path, args=None) -> tuple[int, dict]:
    """Run one command; returns (exit status, summary scalars)."""
    args = args or argparse.Namespace(threads=1)
    section = COMMAND_SECTION[name]
    sec = cfg.section(section)
    if not sec:
        spec, req = SECTIONS[section]
        if req:
            raise ConfigError(f"command {name} needs a [{section}] table", key=section)
        sec = _table({}, section, spec)
    out = Output(out_dir, name, cfg)
    res = COMMANDS[name](cfg, sec, out, args)
    code = res.pop("_exit", 0)
    res["files"] = out.files
    return code, res


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        code, res = run_command(args.command, cfg, args.out, args)
    except DiracSCError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        _summary(args.command, "error", exc.exit_code, t0,
                 {"module": exc.module, "message": str(exc)})
        return exc.exit_code
    except ValueError as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        _summary(args.command, "error", 4, t0, {"message": str(exc)})
        return 4
    _summary(args.command, "ok" if code == 0 else "fail", code, t0, res)
    return code


if __name__ == "__main__":
    sys.exit(main())
