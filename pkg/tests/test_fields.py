"""Field components, Dirac symbol frames and Pauli symbols."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracsc import FieldConfig, ParticleParams, eval_fields, pauli_symbols, symbol_dirac
from diracsc.errors import FieldConfigError, ModeConversionError
from diracsc.fields import SIGMA, field_eigenvectors, potentials_batch, sigma_dot
from diracsc.fields import consistency_check

vec3 = st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3).map(np.array)


def test_uniform_b_potential_and_field():
    B = np.array([0.3, -0.2, 1.1])
    x = np.array([0.5, 1.0, -0.7])
    rec = eval_fields(FieldConfig.uniform_b(B), x)
    # symmetric gauge A = B x x / 2  [DERIVED]
    np.testing.assert_allclose(rec.A, 0.5 * np.cross(B, x), atol=1e-15)
    np.testing.assert_allclose(rec.B, B, atol=1e-15)
    np.testing.assert_allclose(rec.E, 0.0, atol=0)


def test_uniform_e_and_harmonic_potentials():
    E = np.array([0.1, 0.0, -0.4])
    x = np.array([1.0, 2.0, 3.0])
    rec = eval_fields(FieldConfig.uniform_e(E), x)
    np.testing.assert_allclose(rec.E, E, atol=1e-15)
    assert rec.phi == pytest.approx(-E @ x, abs=1e-15)
    p = ParticleParams(m=2.0, e=0.5)
    rec = eval_fields(FieldConfig.harmonic(1.5, p), x)
    # e phi = m omega^2 |x|^2 / 2
    assert p.e * rec.phi == pytest.approx(0.5 * 2.0 * 1.5 ** 2 * (x @ x), rel=1e-14)


def test_soft_coulomb_and_quadrupole():
    rec = eval_fields(FieldConfig.coulomb(2.0, 0.1), [3.0, 4.0, 0.0])
    # phi = -Z / sqrt(r^2 + a^2)
    assert rec.phi == pytest.approx(-2.0 / math.sqrt(25.01), rel=1e-14)
    rec = eval_fields(FieldConfig.quadrupole(0.7), [0.4, -0.3, 2.0])
    np.testing.assert_allclose(rec.B, 0.7 * np.array([0.4, 0.3, 0.0]), atol=1e-15)


def test_mirror_field_is_divergence_free():
    cfg = FieldConfig.mirror(1.0, 0.3)
    rec = eval_fields(cfg, [0.2, -0.1, 0.5])
    np.testing.assert_allclose(rec.B, [0.06, -0.03, 1.0 - 0.3], atol=1e-14)
    assert abs(np.trace(rec.dB)) < 1e-14


@pytest.mark.parametrize("cfg", [
    FieldConfig.mirror(1.0, 0.3),
    FieldConfig.coulomb(1.0, 0.2),
    FieldConfig.quadrupole(1.3),
    FieldConfig.polynomial(phi=[(0.3, (1, 2, 0))], A=[(0, 0.2, (0, 1, 2)), (2, -0.4, (1, 1, 1))]),
])
def test_fields_match_finite_differences(cfg):
    assert consistency_check(cfg, points=16) < 1e-6


def test_nonfinite_input_rejected():
    with pytest.raises(FieldConfigError):
        FieldConfig.uniform_b([np.nan, 0.0, 1.0])
    with pytest.raises(ValueError):
        eval_fields(FieldConfig.none(), [np.inf, 0.0, 0.0])


def test_particle_params_validation():
    with pytest.raises(ValueError):
        ParticleParams(m=0.0)
    with pytest.raises(ValueError):
        ParticleParams(c=-1.0)
    assert ParticleParams(e=2.0, hbar=0.5, m=1.0, c=4.0).magneton == pytest.approx(0.125)


def test_potentials_batch_matches_pointwise(rng):
    cfg = FieldConfig.mirror(1.0, 0.3) + FieldConfig.coulomb(1.0, 0.2) \
        + FieldConfig.uniform_e([0.1, 0.2, 0.3])
    X = rng.uniform(-1, 1, size=(20, 3))
    phi, A, B = potentials_batch(cfg, X, need_B=True)
    for i, x in enumerate(X):
        rec = eval_fields(cfg, x)
        assert phi[i] == pytest.approx(rec.phi, abs=1e-13)
        np.testing.assert_allclose(A[i], rec.A, atol=1e-13)
        np.testing.assert_allclose(B[i], rec.B, atol=1e-13)


@given(p=vec3, x=vec3)
def test_dirac_symbol_frames(p, x):
    params = ParticleParams(c=3.0)
    cfg = FieldConfig.mirror(1.0, 0.3) + FieldConfig.coulomb(1.0, 0.5)
    f = symbol_dirac(params, cfg, p, x)
    w = np.linalg.eigvalsh(f.HD)
    np.testing.assert_allclose(w, [f.Hminus] * 2 + [f.Hplus] * 2, atol=1e-10)
    np.testing.assert_allclose(f.V.conj().T @ f.V, np.eye(2), atol=1e-13)
    np.testing.assert_allclose(f.W.conj().T @ f.W, np.eye(2), atol=1e-13)
    np.testing.assert_allclose(f.V.conj().T @ f.W, 0, atol=1e-13)
    np.testing.assert_allclose(f.HD @ f.V, f.Hplus * f.V, atol=1e-10)
    np.testing.assert_allclose(f.Pplus @ f.Pplus, f.Pplus, atol=1e-12)
    np.testing.assert_allclose(f.Pplus + f.Pminus, np.eye(4), atol=1e-13)
    np.testing.assert_allclose(f.Pplus, f.V @ f.V.conj().T, atol=1e-12)


def test_free_rest_frame_is_upper_spinor():
    f = symbol_dirac(ParticleParams(), FieldConfig.none(), [0, 0, 0], [0, 0, 0])
    np.testing.assert_allclose(f.V, np.vstack([np.eye(2), np.zeros((2, 2))]), atol=0)
    assert f.Hplus == 1.0 and f.Hminus == -1.0


@given(b=vec3.filter(lambda v: np.linalg.norm(v) > 1e-3 and
                     (v / np.linalg.norm(v))[2] > -0.99))
def test_field_eigenvectors(b):
    n = b / np.linalg.norm(b)
    vp, vm = field_eigenvectors(n)
    S = sigma_dot(n)
    np.testing.assert_allclose(S @ vp, vp, atol=1e-12)
    np.testing.assert_allclose(S @ vm, -vm, atol=1e-12)
    assert abs(np.vdot(vp, vm)) < 1e-12


def test_pauli_symbols_and_strong_branches():
    params = ParticleParams(c=2.0)
    cfg = FieldConfig.mirror(1.0, 0.3) + FieldConfig.harmonic(1.0)
    p, x = np.array([0.2, 0.1, -0.3]), np.array([0.3, 0.1, 0.2])
    ps = pauli_symbols(params, cfg, p, x, mu=0.4)
    rec = eval_fields(cfg, x)
    pi = p - rec.A / 2.0
    assert ps.H0 == pytest.approx(pi @ pi / 2 + rec.phi, rel=1e-14)
    nb = np.linalg.norm(rec.B)
    assert ps.Hprime_plus == pytest.approx(ps.H0 - 0.4 * nb)
    assert ps.Hprime_minus == pytest.approx(ps.H0 + 0.4 * nb)
    np.testing.assert_allclose(ps.H1, -0.25 * np.einsum("i,ijk->jk", rec.B, SIGMA), atol=1e-15)


def test_mode_conversion_at_zero_field():
    ps = pauli_symbols(ParticleParams(), FieldConfig.quadrupole(1.0), [0, 0, 0], [0, 0, 1.0])
    assert ps.degenerate
    with pytest.raises(ModeConversionError):
        ps.v_plus
