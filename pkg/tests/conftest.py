"""Shared fixtures and the acceptance summary hook."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diracsc import FieldConfig, ParticleParams

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (PASS/FAIL, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def random_su2(rng) -> np.ndarray:
    """Haar-random SU(2) matrix from a uniform unit quaternion."""
    q = rng.normal(size=4)
    a, b, c, d = q / np.linalg.norm(q)
    return np.array([[complex(a, b), complex(c, d)], [complex(-c, d), complex(a, -b)]])


def random_smooth_field(rng) -> FieldConfig:
    """Confining oscillator plus random uniform E, B and quadratic vector potential."""
    cfg = FieldConfig.harmonic(rng.uniform(0.3, 1.0))
    cfg = cfg + FieldConfig.uniform_b(rng.uniform(-1.0, 1.0, 3))
    cfg = cfg + FieldConfig.uniform_e(rng.uniform(-0.1, 0.1, 3))
    terms = []
    for comp in range(3):
        pw = [0, 0, 0]
        pw[rng.integers(3)] += 1
        pw[rng.integers(3)] += 1
        terms.append((comp, float(rng.uniform(-0.1, 0.1)), tuple(pw)))
    return cfg + FieldConfig.polynomial(A=terms)


@pytest.fixture
def params():
    return ParticleParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] {n:2d} {name}: {detail}")


def close(a, b, tol) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
