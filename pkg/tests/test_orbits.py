"""Periodic-orbit search, monodromy, Maslov index and orbit amplitudes."""
import math

import numpy as np
import pytest

from diracsc import FieldConfig, ParticleParams, Tolerances, find_periodic, orbit_amplitude
from diracsc.errors import ConvergenceError, DegenerateOrbitError
from diracsc.orbits import (deduplicate, orbit_from_point, primitive_count,
                            primitive_decompose, reduced_monodromy, repeat)
from diracsc.dynamics import flow

SADDLE = FieldConfig.polynomial(phi=[(0.5, (2, 0, 0)), (-0.5, (0, 2, 0)), (-0.5, (0, 0, 2))])


@pytest.fixture(scope="module")
def saddle_orbit():
    return find_periodic(ParticleParams(), SADDLE, "pauli0", 0.5,
                         np.array([1.0, 0, 0, 0, 0, 0]), 6.3)


def test_saddle_orbit_data(saddle_orbit):
    o = saddle_orbit
    # x oscillates with unit frequency; y and z are inverted oscillators
    assert o.T == pytest.approx(2 * math.pi, abs=1e-9)
    # S = closed-loop integral of p dx = 2 pi E / omega
    assert o.S == pytest.approx(math.pi, abs=1e-9)
    ref = (2 - 2 * math.cosh(2 * math.pi)) ** 2
    assert o.det_M_minus_1() == pytest.approx(ref, rel=1e-8)
    ev = np.sort(np.abs(np.linalg.eigvals(o.monodromy)))
    np.testing.assert_allclose(ev, [math.exp(-2 * math.pi)] * 2 + [math.exp(2 * math.pi)] * 2,
                               rtol=1e-7)
    assert not o.degenerate
    assert o.k == 1
    assert o.maslov == 2
    assert o.spin_weight == pytest.approx(2.0)


def test_saddle_amplitude(saddle_orbit):
    o = saddle_orbit
    A = orbit_amplitude(o)
    ref = 2 * math.pi * 2.0 / abs(2 - 2 * math.cosh(2 * math.pi)) * np.exp(-1j * math.pi)
    assert abs(A - ref) < 1e-8 * abs(ref)


def test_repetition(saddle_orbit):
    p = ParticleParams()
    o2 = repeat(saddle_orbit, 2, p, SADDLE)
    assert o2.k == 2 and o2.T_primitive == pytest.approx(saddle_orbit.T)
    M = saddle_orbit.monodromy
    np.testing.assert_allclose(o2.monodromy, M @ M, rtol=1e-8, atol=1e-6)
    assert o2.maslov == 2 * saddle_orbit.maslov
    prim, k = primitive_decompose(o2, p, SADDLE)
    assert k == 2 and prim.T == pytest.approx(saddle_orbit.T)
    tr = flow(p, SADDLE, "pauli0", o2.z0, o2.T)
    assert primitive_count(tr) == 2


def test_deduplicate_shifted_start(saddle_orbit):
    p = ParticleParams()
    tr = flow(p, SADDLE, "pauli0", saddle_orbit.z0, 1.0)
    other = orbit_from_point(p, SADDLE, "pauli0", tr.state(1.0)[0:6], saddle_orbit.T)
    kept = deduplicate([saddle_orbit, other], p, SADDLE)
    assert len(kept) == 1


def test_oscillator_orbit_is_degenerate():
    p = ParticleParams()
    o = find_periodic(p, FieldConfig.harmonic(1.0), "pauli0", 0.5,
                      np.array([1.0, 0, 0, 0, 0, 0]), 6.0)
    assert o.T == pytest.approx(2 * math.pi, abs=1e-8)
    assert o.degenerate
    with pytest.raises(DegenerateOrbitError) as exc:
        orbit_amplitude(o)
    assert exc.value.exit_code == 4


def test_kepler_circular_orbit():
    p = ParticleParams()
    a = 1e-3
    E = 0.5 - 1 / math.sqrt(1 + a * a)
    o = find_periodic(p, FieldConfig.coulomb(1.0, a), "pauli0", E,
                      np.array([0, 1.0, 0, 1.0, 0, 0]), 6.2, Tolerances(1e-12, 1e-14))
    assert abs(o.T - 2 * math.pi) < 1e-4
    assert abs(o.S - 2 * math.pi) < 1e-4
    assert abs(np.linalg.det(o.monodromy) - 1) < 1e-6


def test_reduced_monodromy_is_symplectic(saddle_orbit):
    M = saddle_orbit.monodromy
    Om = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    assert np.max(np.abs(M.T @ Om @ M - Om)) < 1e-6 * np.max(np.abs(M)) ** 2
    assert reduced_monodromy(saddle_orbit.monodromy_full,
                             np.array([0, 0, 0, 1.0, 0, 0])).shape == (4, 4)


def test_nonconvergent_search():
    with pytest.raises(ConvergenceError):
        find_periodic(ParticleParams(), FieldConfig.uniform_e([1.0, 0, 0]), "pauli0", 1.0,
                      np.array([1.0, 0, 0, 0, 0, 0]), 3.0, max_iter=5)


def test_record_roundtrip(saddle_orbit):
    rec = saddle_orbit.to_record()
    assert rec["maslov"] == 2 and len(rec["monodromy"]) == 4
    assert rec["T"] == saddle_orbit.T
