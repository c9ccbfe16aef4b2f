"""Configuration parsing, CLI commands, exit codes and determinism."""
import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracsc.cli import load_orbit_database, main
from diracsc.config import RunConfig, parse_config
from diracsc.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    lines = [ln for ln in out.out.splitlines() if ln.startswith("{")]
    return code, json.loads(lines[-1]), out.err


# ------------------------------------------------------------ config

@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_sample_configs_parse(path):
    cfg = parse_config(path.read_text())
    assert parse_config(cfg.dumps()) == cfg


@given(m=st.floats(0.1, 10), c=st.floats(1, 300), hbar=st.floats(1e-3, 1),
       seed=st.integers(0, 2 ** 40), B=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_config_round_trip(m, c, hbar, seed, B):
    cfg = parse_config(f"seed = {seed}\n[particle]\nm = {m!r}\nc = {c!r}\nhbar = {hbar!r}\n"
                       f"[[field]]\ntype = \"uniform-B\"\nB = {B!r}\n")
    again = parse_config(cfg.dumps())
    assert again == cfg and again.sha256() == cfg.sha256()
    assert cfg.params.m == m and cfg.seed == seed


def test_config_errors_locate_the_problem():
    with pytest.raises(ConfigError) as exc:
        parse_config("[particle]\nm = 1.0\nmass = 2.0\n")
    assert exc.value.key == "particle.mass" and exc.value.line == 3
    with pytest.raises(ConfigError) as exc:
        parse_config("[particle]\nm = = 1\n")
    assert exc.value.line == 2 and exc.value.column is not None
    with pytest.raises(ConfigError) as exc:
        parse_config("[particle]\nm = -1.0\n")
    assert exc.value.key == "particle.m"
    with pytest.raises(ConfigError):
        parse_config("[[field]]\ntype = \"vortex\"\n")
    with pytest.raises(ConfigError):
        parse_config("[limits]\nt = 1.0\n")


def test_with_seed_changes_hash():
    cfg = parse_config("seed = 1\n")
    assert cfg.with_seed(2).seed == 2
    assert cfg.with_seed(2).sha256() != cfg.sha256()
    assert isinstance(cfg, RunConfig)


# ------------------------------------------------------------ commands

def test_fields_check(tmp_path, capsys):
    code, summary, _ = run(["fields-check", "--config", CONFIGS / "fields_check.toml",
                            "--out", tmp_path], capsys)
    assert code == 0 and summary["pass"]
    text = (tmp_path / "fields_check.csv").read_text().splitlines()
    assert text[0] == "# diracsc 0.1.0" and text[1] == "# command: fields-check"
    assert text[2].startswith("# config_sha256: ") and text[3] == "# seed: none"
    assert text[4] == "points,worst_rel_error,tol,pass"


def test_spin_transport(tmp_path, capsys):
    code, s, _ = run(["spin-transport", "--config", CONFIGS / "spin_transport.toml",
                      "--out", tmp_path], capsys)
    assert code == 0
    assert s["unitarity_defect"] < 1e-10 and s["hopf_bmt_distance"] < 1e-6


def test_orbit_find_database(tmp_path, capsys):
    for _ in range(2):
        code, s, _ = run(["orbit-find", "--config", CONFIGS / "orbit.toml", "--out", tmp_path],
                         capsys)
        assert code == 0
    recs = load_orbit_database(tmp_path / "orbits.toml")
    assert len(recs) == 2 and recs[0]["maslov"] == 2
    assert recs[0]["config_sha256"] == recs[1]["config_sha256"]


def test_trace_compare_landau(tmp_path, capsys):
    code, s, _ = run(["trace-compare", "--config", CONFIGS / "landau_trace.toml",
                      "--out", tmp_path], capsys)
    assert code == 0 and s["max_rel_dev"] < 0.02


def test_trace_compare_with_orbit_database(tmp_path, capsys):
    run(["orbit-find", "--config", CONFIGS / "orbit.toml", "--out", tmp_path], capsys)
    cfg = tmp_path / "t.toml"
    cfg.write_text(f"""
[particle]
hbar = 0.1
[trace]
T_max = 8.0
dim = 3
energies = {{ start = 0.5, stop = 0.6, num = 2 }}
chi = {{ E_a = 0.0, E_b = 3.0, plateau_a = 0.2, plateau_b = 2.5 }}
orbit_database = "{tmp_path / 'orbits.toml'}"
[trace.oracle]
model = "harmonic"
omega = 1.0
cutoff = 4.0
""")
    code, s, _ = run(["trace-compare", "--config", cfg, "--out", tmp_path / "tc"], capsys)
    assert code == 0
    header = (tmp_path / "tc" / "trace_compare.csv").read_text().splitlines()[4]
    assert header.endswith("orbit_orbit0")


def test_kernel_and_limits(tmp_path, capsys):
    code, s, _ = run(["kernel-eval", "--config", CONFIGS / "kernel.toml", "--out", tmp_path],
                     capsys)
    assert code == 0 and s["contributions"] == 2
    code, s, _ = run(["limits-compare", "--config", CONFIGS / "limits.toml", "--out", tmp_path],
                     capsys)
    assert code == 0 and len(s["distances"]) == 3


# ------------------------------------------------------------ exit codes

def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[particle]\nm = [1, 2\n")
    code, s, err = run(["fields-check", "--config", bad, "--out", tmp_path], capsys)
    assert code == 2 and s["status"] == "error" and "line" in err
    code, _, _ = run(["weyl", "--config", CONFIGS / "ho_weyl.toml", "--out", tmp_path,
                      "--threads", "0"], capsys)
    assert code == 2
    code, _, _ = run(["fields-check", "--config", tmp_path / "missing.toml"], capsys)
    assert code == 2


def test_exit_code_missing_seed(tmp_path, capsys):
    cfg = tmp_path / "w.toml"
    cfg.write_text("[[field]]\ntype = \"harmonic\"\nomega = 1.0\n[weyl]\nenergies = [1.0]\n")
    code, s, err = run(["weyl", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2 and "seed" in err


def test_exit_code_numerical_failure(tmp_path, capsys):
    cfg = tmp_path / "s.toml"
    text = (CONFIGS / "spin_transport.toml").read_text().replace(
        "atol = 1e-14", "atol = 1e-14\nmax_steps = 5")
    cfg.write_text(text)
    code, s, err = run(["spin-transport", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 3 and s["module"] == "dynamics"


def test_exit_code_degenerate_input(tmp_path, capsys):
    cfg = tmp_path / "u.toml"
    cfg.write_text("seed = 1\n[[field]]\ntype = \"uniform-E\"\nE = [1.0, 0.0, 0.0]\n"
                   "[weyl]\nenergies = [1.0]\nsamples = 10000\n")
    code, s, err = run(["weyl", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 4 and "error [trace]" in err


def test_determinism(tmp_path, capsys):
    outs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        code, _, _ = run(["weyl", "--config", CONFIGS / "ho_weyl.toml", "--out", d,
                          "--seed", "7", "--threads", str(1 + 2 * i)], capsys)
        assert code == 0
        outs.append((d / "weyl.csv").read_bytes())
    assert outs[0] == outs[1]
    assert b"# seed: 7" in outs[0]
