"""Test functions, truncation, spectrum oracles, Weyl volumes and orbit sums."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from diracsc import FieldConfig, ParticleParams
from diracsc.errors import DegenerateOrbitError, DomainError, InsufficientSpectrumError
from diracsc.trace import (OrbitTerm, SpectrumOracle, Truncation, check_clean,
                           coulomb_shell_volume, harmonic_ratios, ho_phase_volume,
                           ho_weyl_reference, lhs_sum, make_test_pair, rhs_sum, smooth_step,
                           smoothed_count, weyl_term, weyl_volume)


@pytest.fixture(scope="module")
def pair():
    return make_test_pair(2.0)


# ------------------------------------------------------------ test functions

def test_rho_tilde_support(pair):
    assert pair.rho_tilde(2.0) == 0.0 and pair.rho_tilde(-2.5) == 0.0
    assert pair.rho_tilde(0.0) == pytest.approx(math.exp(-1.0))
    assert pair.rho_tilde(0.7) == pair.rho_tilde(-0.7)


@pytest.mark.parametrize("shape", ["bump", "bump4"])
@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_rho_against_adaptive_quadrature(shape):
    pr = make_test_pair(1.5, shape, amplitude=2.0, sharpness=0.5)
    for E in (0.0, 0.7, 3.0, 11.0):
        ref, _ = integrate.quad(lambda t: float(pr.rho_tilde(t)) * math.cos(E * t), 0, 1.5,
                                epsabs=1e-13, epsrel=1e-11, limit=200)
        assert pr.rho(E) == pytest.approx(ref / math.pi, abs=1e-10 * pr.rho_zero)


def test_rho_is_real_and_even(pair):
    E = np.linspace(-8, 8, 17)
    np.testing.assert_allclose(pair.rho(E), pair.rho(-E), atol=0)
    assert pair.rho_complex_residual(E) < 1e-14


def test_fourier_round_trip(pair):
    t = np.linspace(-2.5, 2.5, 41)
    np.testing.assert_allclose(pair.retransform(t), pair.rho_tilde(t), atol=1e-9)


def test_make_test_pair_validation():
    with pytest.raises(ValueError):
        make_test_pair(0.0)
    with pytest.raises(ValueError):
        make_test_pair(1.0, "gauss")
    with pytest.raises(ValueError):
        make_test_pair(1.0, sharpness=0.0)


# ------------------------------------------------------------ truncation

@given(st.floats(-5, 5))
def test_smooth_step_symmetry(x):
    s = float(smooth_step(x))
    assert 0.0 <= s <= 1.0
    assert s + float(smooth_step(1 - x)) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-3, 3))
def test_truncation_bounds(E):
    chi = Truncation(-1.0, 1.0, -0.5, 0.5)
    v = float(chi(E))
    assert 0.0 <= v <= 1.0
    if abs(E) >= 1.0:
        assert v == 0.0
    if abs(E) <= 0.5:
        assert v == 1.0


def test_truncation_edge_cases():
    assert Truncation(1.0, 1.0, 1.0, 1.0).empty
    with pytest.raises(ValueError):
        Truncation(0.0, 1.0, 0.8, 0.2)
    w = Truncation.window(0.0, 1.0, 0.25)
    assert (w.plateau_a, w.plateau_b) == (0.25, 0.75)


# ------------------------------------------------------------ oracles

def test_landau_oracle_weights():
    p = ParticleParams(hbar=0.05)
    o = SpectrumOracle.pauli_landau(1.0, p, 1.0)
    g0 = 1.0 / (2 * math.pi * 0.05)
    np.testing.assert_allclose(o.energies[:3], [0.0, 0.05, 0.1], atol=1e-15)
    np.testing.assert_allclose(o.weights[:3], [g0, 2 * g0, 2 * g0])
    s = SpectrumOracle.pauli_landau(1.0, p, 1.0, spin=False)
    np.testing.assert_allclose(s.energies[:2], [0.025, 0.075])
    with pytest.raises(ValueError):
        SpectrumOracle.pauli_landau(0.0, p, 1.0)


def test_oscillator_degeneracies():
    o = SpectrumOracle.harmonic(1.0, ParticleParams(), 6.0)
    # E = n + 3/2 with multiplicity (n+1)(n+2)/2
    n = np.arange(5)
    np.testing.assert_allclose(o.energies, n + 1.5)
    np.testing.assert_allclose(o.weights, (n + 1) * (n + 2) / 2)
    so = SpectrumOracle.harmonic(1.0, ParticleParams(), 6.0, spin=True)
    np.testing.assert_allclose(so.weights, (n + 1) * (n + 2))


def test_hydrogenic_levels():
    p = ParticleParams(c=10.0)
    o = SpectrumOracle.hydrogenic(1.0, p, 99.99)
    g = 0.1
    # 1s1/2: m c^2 sqrt(1 - g^2), multiplicity 2
    assert o.energies[0] == pytest.approx(100 * math.sqrt(1 - g * g), rel=1e-14)
    assert o.weights[0] == 2.0
    # n = 2: 2s1/2 and 2p1/2 degenerate (4 states), 2p3/2 (4 states)
    assert o.weights[1] + o.weights[2] == 8.0
    with pytest.raises(DomainError):
        SpectrumOracle.hydrogenic(20.0, p, 99.0)


def test_oracle_from_file(tmp_path):
    f = tmp_path / "levels.txt"
    f.write_text("# E g\n1.5 2\n0.5\n\n2.5 1  # top\n")
    o = SpectrumOracle.from_file(f)
    np.testing.assert_allclose(o.energies, [0.5, 1.5, 2.5])
    np.testing.assert_allclose(o.weights, [1, 2, 1])
    f.write_text("abc\n")
    with pytest.raises(ValueError):
        SpectrumOracle.from_file(f)


# ------------------------------------------------------------ lhs

def test_lhs_direct_sum(pair):
    o = SpectrumOracle.from_levels([0.2, 0.5, 0.9], [1, 2, 1], cutoff=5.0)
    chi = Truncation(-1.0, 2.0, -0.5, 1.5)
    r = lhs_sum(o, chi, pair, 0.4, 0.1)
    ref = sum(g * float(pair.rho((e - 0.4) / 0.1)) for e, g in ((0.2, 1), (0.5, 2), (0.9, 1)))
    assert r.value == pytest.approx(ref, rel=1e-13)
    assert r.tail_bound == 0.0 and r.n_terms == 3
    assert lhs_sum(o, Truncation(1.0, 1.0, 1.0, 1.0), pair, 0.4, 0.1).value == 0.0


def test_lhs_insufficient_spectrum(pair):
    o = SpectrumOracle.from_levels(np.linspace(0, 1, 11), cutoff=1.0)
    chi = Truncation(-1.0, 3.0, -0.5, 2.5)
    with pytest.raises(InsufficientSpectrumError):
        lhs_sum(o, chi, pair, 0.95, 0.1)


# ------------------------------------------------------------ Weyl volumes

def test_weyl_volume_oscillator():
    est = weyl_volume(ParticleParams(), FieldConfig.harmonic(1.0), "pauli0", 1.0,
                      N=400_000, seed=3, box=1.6)
    ref = ho_weyl_reference(1.0)
    assert abs(est.vol - ref) < 4 * est.stderr
    assert est.box[0] == (-1.6, -1.6, -1.6)


def test_weyl_volume_thread_independent():
    args = (ParticleParams(), FieldConfig.harmonic(1.0), "pauli0", 1.0)
    a = weyl_volume(*args, N=300_000, seed=9, shard_size=65536)
    b = weyl_volume(*args, N=300_000, seed=9, shard_size=65536, threads=3)
    assert a == b


def test_weyl_volume_below_minimum_is_zero():
    est = weyl_volume(ParticleParams(), FieldConfig.harmonic(1.0), "pauli0", -0.5,
                      N=1000, box=2.0)
    assert est.vol == 0.0


def test_weyl_volume_unbounded_shell():
    with pytest.raises(DomainError):
        weyl_volume(ParticleParams(), FieldConfig.uniform_e([1.0, 0, 0]), "pauli0", 1.0,
                    N=10000)
    with pytest.raises(DomainError):
        weyl_volume(ParticleParams(), FieldConfig.harmonic(1.0), "pauli0", 1.0, N=20000,
                    box=0.5)


def test_coulomb_shell_nonrelativistic_limit():
    c = 200.0
    p = ParticleParams(c=c)
    # Kepler: vol = (2 pi)^3 (-2E)^(-5/2) for m = kappa = 1
    vol = coulomb_shell_volume(c * c - 0.5, 1.0, p)
    assert vol == pytest.approx(8 * math.pi ** 3, rel=1e-3)
    with pytest.raises(DomainError):
        coulomb_shell_volume(c * c + 1.0, 1.0, p)


def test_oscillator_smoothed_count():
    h = 0.05
    o = SpectrumOracle.harmonic(1.0, ParticleParams(hbar=h), 2.0)
    n = smoothed_count(o, 1.0, 0.5 * h)[0]
    assert n == pytest.approx(ho_phase_volume(1.0) / (2 * math.pi * h) ** 3, rel=1e-3)


def test_landau_harmonic_signs():
    p = ParticleParams(hbar=0.05)
    spin = SpectrumOracle.pauli_landau(1.0, p, 4.0)
    ref = SpectrumOracle.pauli_landau(1.0, p, 4.0, spin=False)
    r = harmonic_ratios(spin, ref, 0.05, (1.0, 2.0), 0.01)
    np.testing.assert_allclose(r.real, [-2, 2, -2, 2], rtol=1e-6)


# ------------------------------------------------------------ rhs

def _term(T=1.3, S=2.1, mu=1, w=1.5):
    M = np.diag([3.0, 1 / 3.0, 2.0, 0.5])
    return OrbitTerm(T, S, T, M, mu, w, "synthetic")


def test_weyl_term_formula(pair):
    h = 0.1
    v = weyl_term([2.0, 3.0], 0.5, pair, h, dim=3, spin=2)
    ref = 0.5 * math.exp(-1) / (2 * math.pi) * 2 * 5.0 / (2 * math.pi * h) ** 2
    assert v == pytest.approx(ref, rel=1e-15)
    assert weyl_term({"plus": 1.0}, 1.0, pair, h, dim=2, spin=1) == \
        pytest.approx(math.exp(-1) / (2 * math.pi) / (2 * math.pi * h))


def test_rhs_single_orbit(pair):
    chi = Truncation(-5, 5, -4, 4)
    h, E = 0.1, 0.3
    t = _term()
    res = rhs_sum([1.0], [t], chi, pair, E, h)
    det = abs((3 - 1) * (1 / 3 - 1) * (2 - 1) * (0.5 - 1))
    A = 1.3 * 1.5 / math.sqrt(det) * np.exp(-0.5j * math.pi)
    ref = 2 * (float(pair.rho_tilde(1.3)) / (2 * math.pi) * A * np.exp(1j * 2.1 / h)).real
    assert res.orbit_sum == pytest.approx(ref, abs=1e-12)
    assert res.value == res.weyl + res.orbit_sum


def test_orbit_repetition_weight():
    t = _term(w=2 * math.cos(0.4)).repeated(3)
    assert t.spin_weight == pytest.approx(2 * math.cos(1.2), abs=1e-14)
    assert t.maslov == 3 and t.T == pytest.approx(3.9)
    np.testing.assert_allclose(t.monodromy, np.diag([27.0, 1 / 27, 8.0, 0.125]))


def test_degenerate_orbit_rejected(pair):
    t = OrbitTerm(1.0, 1.0, 1.0, np.eye(4), 0, 2.0)
    with pytest.raises(DegenerateOrbitError):
        rhs_sum([1.0], [t], Truncation(-1, 1, -0.5, 0.5), pair, 0.0, 0.1)


def test_check_clean():
    assert check_clean([1.0, 1.0 + 1e-8, 2.0, 5.0], 3.0) == [(1.0, 1.0 + 1e-8)]
    assert check_clean([1.0, 2.0], 3.0) == []
