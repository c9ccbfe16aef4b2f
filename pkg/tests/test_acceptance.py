"""Acceptance criteria 1-14 at their stated tolerances.

Each test prints one ``[PASS]``/``[FAIL]`` line (visible with ``-s``) and the
collected lines are repeated in the pytest terminal summary. Run on its own
with::

    pytest tests/test_acceptance.py -s
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from conftest import ACCEPTANCE, random_smooth_field, random_su2
from diracsc import (FieldConfig, ParticleParams, Tolerances, bmt, connect, eta_phase,
                     find_periodic, flow, transport_spin)
from diracsc.cli import main
from diracsc.kernel import action_relation_defect
from diracsc.pauli import berry_phase, compare_limits, cone_path, eta_phase_pauli
from diracsc.spin import (connection, hopf_columns, noname_from_bracket, precession_vector,
                          repetition_trace)
from diracsc.trace import (OrbitTerm, SpectrumOracle, Truncation, harmonic_ratios,
                           ho_phase_volume, ho_weyl_reference, make_test_pair, rhs_sum,
                           smoothed_count, weyl_volume)

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TIGHT = Tolerances(rtol=1e-12, atol=1e-12)


def record(n: int, name: str, ok: bool, detail: str):
    status = "PASS" if ok else "FAIL"
    line = f"[{status}] criterion {n:2d} {name}: {detail}"
    print(line)
    ACCEPTANCE[n] = (status, name, detail)
    assert ok, line


# ------------------------------------------------------------------ 1

def test_01_unitarity():
    rng = np.random.default_rng(101)
    worst_u = worst_d = 0.0
    for i in range(100):
        cfg = random_smooth_field(rng)
        kind, conn = (("plus", "plus"), ("pauli0", "pauli"))[i % 2]
        z0 = np.concatenate([rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)])
        T = float(rng.uniform(1.0, 50.0))
        tr = flow(ParticleParams(), cfg, kind, z0, T, TIGHT)
        u, d = transport_spin(tr, conn, check=1.0).unitarity_defect()
        worst_u, worst_d = max(worst_u, u), max(worst_d, d)
    record(1, "spin-transport unitarity", worst_u < 1e-10 and worst_d < 1e-10,
           f"max ||d^+d - 1|| = {worst_u:.2e}, max |det d - 1| = {worst_d:.2e} (100 fields)")


# ------------------------------------------------------------------ 2

def test_02_reconstruction():
    rng = np.random.default_rng(202)
    worst, south, cases = 0.0, 0, 0
    while south < 12 and cases < 40:
        cases += 1
        B = rng.normal(size=3)
        B[2] *= 0.3
        cfg = FieldConfig.uniform_b(B) + FieldConfig.harmonic(0.5) \
            + FieldConfig.uniform_e(rng.uniform(-0.1, 0.1, 3))
        z0 = np.concatenate([rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)])
        tr = flow(ParticleParams(), cfg, "plus", z0, 10.0, TIGHT)
        ep = eta_phase(tr)
        t = np.linspace(0.0, 10.0, 21)
        if tr.s(t)[:, 2].min() < 0:
            south += 1
        for ti in t:
            worst = max(worst, float(np.linalg.norm(ep.reconstruct(ti) - tr.d(ti))))
    record(2, "reconstruction equivalence", worst < 1e-6 and south >= 10,
           f"max Frobenius distance {worst:.2e} over {cases} trajectories, "
           f"{south} entering the southern hemisphere")


# ------------------------------------------------------------------ 3

def test_03_bmt_hopf():
    rng = np.random.default_rng(303)
    worst, drift = 0.0, 0.0
    for i in range(6):
        cfg = random_smooth_field(rng)
        kind, conn = (("plus", "plus"), ("pauli0", "pauli"))[i % 2]
        z0 = np.concatenate([rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)])
        tr = flow(ParticleParams(), cfg, kind, z0, 20.0, TIGHT)
        p = tr.params

        def R(t):
            return precession_vector(conn, p, cfg, tr.P(t), tr.X(t))

        # independent BMT integration with a different scheme
        sol = integrate.solve_ivp(lambda t, s: np.cross(R(t), s), (0.0, 20.0), [0, 0, 1.0],
                                  method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
        t = np.linspace(0.0, 20.0, 81)
        worst = max(worst, float(np.max(np.abs(hopf_columns(tr.d(t)) - sol.sol(t).T))))
        drift = max(drift, bmt(tr, [0, 0, 1.0], conn, check=1.0).norm_drift())
    record(3, "BMT/Hopf consistency", worst < 1e-6 and drift < 1e-8,
           f"sup |pi_H(d) - s| = {worst:.2e}, |s| drift {drift:.2e}")


# ------------------------------------------------------------------ 4

def test_04_connection_identity():
    rng = np.random.default_rng(404)
    cfg = FieldConfig.mirror(1.0, 0.3) + FieldConfig.coulomb(1.0, 0.5) \
        + FieldConfig.uniform_e([0.2, -0.1, 0.3]) \
        + FieldConfig.polynomial(phi=[(0.2, (1, 1, 0))], A=[(0, 0.3, (0, 1, 1))])
    params = ParticleParams()
    an = fd = 0.0
    for _ in range(1000):
        p, x = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        Mp = connection("plus", params, cfg, p, x).M
        MB = connection("berry_term", params, cfg, p, x).M
        an = max(an, float(np.linalg.norm(Mp - MB - noname_from_bracket(params, cfg, p, x))))
        fd = max(fd, float(np.linalg.norm(
            Mp - MB - noname_from_bracket(params, cfg, p, x, "finite-difference"))))
    record(4, "connection identity M+ = M_B + M_C", an < 1e-10 and fd < 1e-6,
           f"analytic residual {an:.2e}, finite-difference residual {fd:.2e} (1000 points)")


# ------------------------------------------------------------------ 5

def test_05_nonrelativistic_order():
    c = [10.0, 20.0, 40.0]
    tol = Tolerances(rtol=1e-12, atol=1e-14)
    cases = {
        "constant field": FieldConfig.uniform_b([0.0, 0.0, 1.0])
        + FieldConfig.uniform_e([0.1, 0.0, 0.05]),
        "smooth field": FieldConfig.mirror(1.0, 0.3) + FieldConfig.harmonic(1.0),
    }
    ok, parts = True, []
    for name, cfg in cases.items():
        lc = compare_limits(ParticleParams(), cfg, 1.0, c,
                            initial=([0.3, 0.2, 0.1], [0.1, 0.0, 0.2]), tol=tol)
        ok &= lc.accepted
        orders = "none" if lc.orders is None else ", ".join(f"{o:.3f}" for o in lc.orders)
        parts.append(f"{name}: distances {', '.join(f'{d:.2e}' for d in lc.distances)}; "
                     f"orders {orders}")
    record(5, "nonrelativistic limit order 1 +/- 25%", ok, " | ".join(parts))


# ------------------------------------------------------------------ 6

def test_06_repetition_identity():
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(200):
        d = random_su2(rng)
        chi = math.acos(max(-1.0, min(1.0, np.trace(d).real / 2)))
        for k in range(1, 9):
            worst = max(worst, abs(repetition_trace(d, k) - 2 * math.cos(k * chi)))
    record(6, "repetition identity", worst < 1e-9, f"max error {worst:.2e} (200 x k<=8)")


# ------------------------------------------------------------------ 7

def test_07_free_connect():
    conns = connect(ParticleParams(), FieldConfig.none(), "plus", [0, 0, 0], [0.6, 0, 0], 1.0,
                    tol=Tolerances(rtol=1e-12, atol=1e-14))
    xi, tr = conns[0]
    e_xi = float(np.max(np.abs(xi - [0.75, 0, 0])))
    e_R = abs(float(tr.action(1.0)) + 0.8)
    record(7, "free-particle connect", len(conns) == 1 and e_xi < 1e-10 and e_R < 1e-8,
           f"|xi - (0.75,0,0)| = {e_xi:.2e}, |R + 0.8| = {e_R:.2e}")


# ------------------------------------------------------------------ 8

def test_08_kepler():
    a = 1e-3
    E = 0.5 - 1 / math.sqrt(1 + a * a)
    o = find_periodic(ParticleParams(), FieldConfig.coulomb(1.0, a), "pauli0", E,
                      np.array([0, 1.0, 0, 1.0, 0, 0]), 6.2,
                      Tolerances(rtol=1e-12, atol=1e-14))
    eT, eS = abs(o.T - 2 * math.pi), abs(o.S - 2 * math.pi)
    eM = abs(float(np.linalg.det(o.monodromy)) - 1)
    record(8, "circular Kepler orbit", eT < 1e-4 and eS < 1e-4 and eM < 1e-6,
           f"|T - 2pi| = {eT:.2e}, |S - 2pi| = {eS:.2e}, |det M - 1| = {eM:.2e}")


# ------------------------------------------------------------------ 9

def test_09_weyl_volume():
    est = weyl_volume(ParticleParams(), FieldConfig.harmonic(1.0), "pauli0", 1.0,
                      N=10 ** 7, seed=20240611, box=1.6, threads=4)
    ref = ho_weyl_reference(1.0)
    z = (est.vol - ref) / est.stderr
    h = 0.05
    o = SpectrumOracle.harmonic(1.0, ParticleParams(hbar=h), 2.0)
    n = float(smoothed_count(o, 1.0, 0.5 * h)[0])
    w = ho_phase_volume(1.0) / (2 * math.pi * h) ** 3
    rel = abs(n / w - 1)
    record(9, "Weyl volume", abs(z) < 3 and rel < 0.02,
           f"MC {est.vol:.4f} +/- {est.stderr:.4f} vs 4pi^3 = {ref:.4f} (z = {z:+.2f}); "
           f"smoothed count {n:.2f} vs {w:.2f} (rel {rel:.1e})")


# ------------------------------------------------------------------ 10

def test_10_landau_spin_modulation():
    p = ParticleParams()
    T = 2 * math.pi
    tr = flow(p, FieldConfig.uniform_b([0, 0, 1.0]), "pauli0", [0.3, 0, 0, 0, 0, 0], T,
              Tolerances(rtol=1e-12, atol=1e-14))
    eta = eta_phase_pauli(tr).evaluate(T)["eta"]
    ph = ParticleParams(hbar=0.05)
    r = harmonic_ratios(SpectrumOracle.pauli_landau(1.0, ph, 4.0),
                        SpectrumOracle.pauli_landau(1.0, ph, 4.0, spin=False),
                        0.05, (1.0, 2.0), 0.01)
    signs = [int(np.sign(v.real)) for v in r]
    expect = [int(np.sign(2 * math.cos(k * eta))) for k in range(1, 5)]
    ok = abs(eta - math.pi) < 1e-6 and signs == expect == [(-1) ** k for k in range(1, 5)]
    record(10, "Pauli-Landau spin modulation", ok,
           f"|eta - pi| = {abs(eta - math.pi):.2e}; harmonic ratios "
           f"{', '.join(f'{v.real:+.3f}' for v in r)} vs 2cos(k eta) signs {expect}")


# ------------------------------------------------------------------ 11

def test_11_cone_geometric_phase():
    alpha = math.pi / 3
    worst = 0.0
    for omega in (0.5, 1.0, 2.0, 5.0):
        b, db = cone_path(alpha, omega)
        phase = -0.5 * berry_phase(b, db, 2 * math.pi / omega)
        worst = max(worst, abs(phase + math.pi / 2))
    record(11, "strong-coupling geometric phase", worst < 1e-8,
           f"max |phase + pi/2| = {worst:.2e} over speeds 0.5..5")


# ------------------------------------------------------------------ 12

def test_12_action_relation():
    rng = np.random.default_rng(1212)
    worst = 0.0
    for cfg in (FieldConfig.mirror(1.0, 0.3), FieldConfig.mirror(2.0, 0.2)
                + FieldConfig.harmonic(0.7)):
        for kind in ("strong_plus", "strong_minus"):
            for _ in range(4):
                z0 = np.concatenate([rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)])
                tr = flow(ParticleParams(), cfg, kind, z0, float(rng.uniform(1, 10)), TIGHT,
                          mu=float(rng.uniform(0.05, 0.5)))
                worst = max(worst, abs(action_relation_defect(tr)))
    record(12, "action relation R' - R = +/- mu int|B|", worst < 1e-8,
           f"max defect {worst:.2e} (16 trajectories)")


# ------------------------------------------------------------------ 13

def test_13_trace_plumbing():
    pair = make_test_pair(3.0)
    chi = Truncation(-2.0, 4.0, -1.0, 3.0)
    E, h, T, S0, Tp, mu, w = 0.7, 0.08, 2.2, 1.9, 1.1, 3, 0.6
    M = np.array([[2.0, 0.5, 0, 0], [0.5, 0.625, 0, 0], [0, 0, -1.5, 0], [0, 0, 0, -2 / 3]])

    def S(E_):
        return S0 + T * (E_ - 0.5)

    term = OrbitTerm(T, S(E), Tp, M, mu, w, "hand")
    res = rhs_sum([3.0], [term], chi, pair, E, h)
    det = abs(np.linalg.det(M - np.eye(4)))
    A = Tp * w / math.sqrt(det) * complex(math.cos(-1.5 * math.pi), math.sin(-1.5 * math.pi))
    hand = 2 * (float(chi(E)) * float(pair.rho_tilde(T)) / (2 * math.pi) * A
                * complex(math.cos(S(E) / h), math.sin(S(E) / h))).real
    err = abs(res.orbit_sum - hand)
    empty = rhs_sum([3.0], [], chi, pair, E, h)
    out = rhs_sum([3.0], [OrbitTerm(3.5, 1.0, 3.5, M, 0, 2.0)], chi, pair, E, h)
    ok = err < 1e-12 and empty.value == empty.weyl and out.value == out.weyl \
        and empty.weyl == res.weyl
    record(13, "trace-formula plumbing", ok,
           f"|term - hand| = {err:.1e}; empty and out-of-support return the Weyl term exactly")


# ------------------------------------------------------------------ 14

def test_14_determinism(tmp_path, capsys):
    runs = [("weyl", "ho_weyl.toml"), ("trace-compare", "landau_trace.toml"),
            ("orbit-find", "orbit.toml"), ("spin-transport", "spin_transport.toml"),
            ("kernel-eval", "kernel.toml")]
    identical, nfiles = True, 0
    for cmd, cfg in runs:
        blobs = []
        for i in range(2):
            d = tmp_path / f"{cmd}-{i}"
            assert main([cmd, "--config", str(CONFIGS / cfg), "--out", str(d),
                         "--threads", str(1 + i)]) == 0
            blobs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
        identical &= blobs[0] == blobs[1]
        nfiles += len(blobs[0])
    capsys.readouterr()
    record(14, "determinism", identical,
           f"{nfiles} output files byte-identical across repeated runs")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
