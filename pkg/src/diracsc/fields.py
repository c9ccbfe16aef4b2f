"""Particle parameters, static electromagnetic fields and pointwise symbols.

Fields are declared as a sum of components (uniform B in the symmetric gauge,
uniform E, isotropic harmonic scalar potential, softened Coulomb, polynomial)
and compiled into flat arrays consumed by the numerical core. Everything here
is a pure function of immutable inputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ._backend import core
from .errors import FieldConfigError, ModeConversionError

log = logging.getLogger(__name__)

SIGMA = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)
ID2 = np.eye(2, dtype=complex)
BETA = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
ALPHA = np.array([np.block([[np.zeros((2, 2)), s], [s, np.zeros((2, 2))]])
                  for s in SIGMA])


def sigma_dot(v) -> np.ndarray:
    """Return the 2x2 matrix v.sigma."""
    return np.einsum("i,ijk->jk", np.asarray(v, dtype=complex), SIGMA)


@dataclass(frozen=True)
class ParticleParams:
    """Mass, charge, light speed and Planck constant (natural units by default)."""

    m: float = 1.0
    e: float = 1.0
    c: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("m", "c", "hbar"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if not math.isfinite(self.e):
            raise ValueError("e must be finite")

    @property
    def magneton(self) -> float:
        """Spin magnetic moment mu = e hbar / (2 m c)."""
        return self.e * self.hbar / (2.0 * self.m * self.c)

    def core_params(self, mu: float | None = None) -> np.ndarray:
        return np.array([self.m, self.e, self.c,
                         self.magneton if mu is None else float(mu)])


# ---------------------------------------------------------------- components

def _vec3(v, name) -> tuple:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.size != 3 or not np.all(np.isfinite(a)):
        raise FieldConfigError(f"{name} must be a finite 3-vector")
    return tuple(float(t) for t in a)


@dataclass(frozen=True)
class UniformB:
    """Uniform magnetic field, symmetric gauge A = B x r / 2."""

    B: tuple
    kind = "uniform-B"

    def __post_init__(self):
        object.__setattr__(self, "B", _vec3(self.B, "B"))

    def terms(self):
        Bx, By, Bz = self.B
        # A = (By z - Bz y, Bz x - Bx z, Bx y - By x) / 2
        return [], [(0, 0.5 * By, (0, 0, 1)), (0, -0.5 * Bz, (0, 1, 0)),
                    (1, 0.5 * Bz, (1, 0, 0)), (1, -0.5 * Bx, (0, 0, 1)),
                    (2, 0.5 * Bx, (0, 1, 0)), (2, -0.5 * By, (1, 0, 0))], []


@dataclass(frozen=True)
class UniformE:
    """Uniform electric field, phi = -E.x."""

    E: tuple
    kind = "uniform-E"

    def __post_init__(self):
        object.__setattr__(self, "E", _vec3(self.E, "E"))

    def terms(self):
        Ex, Ey, Ez = self.E
        return [(-Ex, (1, 0, 0)), (-Ey, (0, 1, 0)), (-Ez, (0, 0, 1))], [], []


@dataclass(frozen=True)
class Harmonic:
    """Isotropic harmonic scalar potential phi = k/2 |x - x0|^2, k = m omega^2 / e.

    ``strength`` is the coefficient k so that e*phi = m omega^2 |x|^2 / 2 when
    built through :meth:`FieldConfig.harmonic`.
    """

    strength: float
    center: tuple = (0.0, 0.0, 0.0)
    kind = "harmonic"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if not math.isfinite(self.strength):
            raise FieldConfigError("harmonic strength must be finite")

    def terms(self):
        k = 0.5 * self.strength
        out = []
        for i in range(3):
            c0 = self.center[i]
            p2 = [0, 0, 0]
            p2[i] = 2
            p1 = [0, 0, 0]
            p1[i] = 1
            out += [(k, tuple(p2)), (-2 * k * c0, tuple(p1)), (k * c0 * c0, (0, 0, 0))]
        return out, [], []


@dataclass(frozen=True)
class SoftCoulomb:
    """Softened Coulomb potential phi = -Z / sqrt(|x - x0|^2 + a^2)."""

    Z: float
    a: float
    center: tuple = (0.0, 0.0, 0.0)
    kind = "coulomb"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if not (self.a > 0 and math.isfinite(self.a)):
            raise FieldConfigError("Coulomb softening a must be positive")

    def terms(self):
        return [], [], [(self.Z, self.a) + tuple(self.center)]


@dataclass(frozen=True)
class Polynomial:
    """Polynomial potentials.

    ``phi`` is a sequence of ``(coef, (i, j, k))`` meaning coef*x^i y^j z^k;
    ``A`` is a sequence of ``(component, coef, (i, j, k))``.
    """

    phi: tuple = ()
    A: tuple = ()
    kind = "polynomial"

    def __post_init__(self):
        phi = tuple((float(c), tuple(int(q) for q in pw)) for c, pw in self.phi)
        A = tuple((int(i), float(c), tuple(int(q) for q in pw)) for i, c, pw in self.A)
        for _, pw in phi:
            if len(pw) != 3 or min(pw) < 0:
                raise FieldConfigError("monomial powers must be 3 nonnegative integers")
        for i, _, pw in A:
            if i not in (0, 1, 2) or len(pw) != 3 or min(pw) < 0:
                raise FieldConfigError("vector-potential term needs component 0..2 and 3 powers")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "A", A)

    def terms(self):
        return list(self.phi), list(self.A), []


@dataclass
class FieldArrays:
    """Flat arrays describing a field for the numerical core."""

    phi_coef: np.ndarray
    phi_pow: np.ndarray
    a_coef: np.ndarray
    a_pow: np.ndarray
    a_comp: np.ndarray
    coulomb: np.ndarray
    _compiled: object = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class FieldConfig:
    """Static electromagnetic configuration as a sum of components."""

    components: tuple = ()

    @property
    def kind(self) -> str:
        kinds = {c.kind for c in self.components}
        if not kinds:
            return "none"
        return kinds.pop() if len(kinds) == 1 else "combined"

    def __add__(self, other: "FieldConfig") -> "FieldConfig":
        return FieldConfig(tuple(self.components) + tuple(other.components))

    @classmethod
    def none(cls) -> "FieldConfig":
        return cls(())

    @classmethod
    def uniform_b(cls, B) -> "FieldConfig":
        return cls((UniformB(B),))

    @classmethod
    def uniform_e(cls, E) -> "FieldConfig":
        return cls((UniformE(E),))

    @classmethod
    def harmonic(cls, omega: float, params: ParticleParams | None = None,
                 center=(0.0, 0.0, 0.0)) -> "FieldConfig":
        """Isotropic oscillator potential with e*phi = m omega^2 |x - x0|^2 / 2."""
        params = params or ParticleParams()
        return cls((Harmonic(params.m * omega ** 2 / params.e, center),))

    @classmethod
    def coulomb(cls, Z: float, a: float, center=(0.0, 0.0, 0.0)) -> "FieldConfig":
        return cls((SoftCoulomb(Z, a, center),))

    @classmethod
    def polynomial(cls, phi: Sequence = (), A: Sequence = ()) -> "FieldConfig":
        return cls((Polynomial(tuple(phi), tuple(A)),))

    @classmethod
    def quadrupole(cls, g: float = 1.0) -> "FieldConfig":
        """Magnetic quadrupole B = g (x, -y, 0) from A = (0, 0, g x y)."""
        return cls.polynomial(A=[(2, g, (1, 1, 0))])

    @classmethod
    def mirror(cls, B0: float, b: float) -> "FieldConfig":
        """Axisymmetric bottle B = (b x, b y, B0 - 2 b z)."""
        return cls((UniformB((0.0, 0.0, B0)),
                    Polynomial(A=((0, b, (0, 1, 1)), (1, -b, (1, 0, 1))))))

    @cached_property
    def arrays(self) -> FieldArrays:
        phi_t, a_t, c_t = [], [], []
        for comp in self.components:
            p, a, c = comp.terms()
            phi_t += p
            a_t += a
            c_t += c
        phi_t = [t for t in phi_t if t[0] != 0.0]
        a_t = [t for t in a_t if t[1] != 0.0]
        return FieldArrays(
            phi_coef=np.array([t[0] for t in phi_t], dtype=float),
            phi_pow=np.array([t[1] for t in phi_t], dtype=np.intc).reshape(-1, 3),
            a_coef=np.array([t[1] for t in a_t], dtype=float),
            a_pow=np.array([t[2] for t in a_t], dtype=np.intc).reshape(-1, 3),
            a_comp=np.array([t[0] for t in a_t], dtype=np.intc),
            coulomb=np.array(c_t, dtype=float).reshape(-1, 5),
        )


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class FieldRecord:
    """Potentials and fields at one point.

    ``dA[j, i]`` is d_j A_i, ``dB[j, i]`` is d_j B_i and ``d2A[j, l, i]`` is
    d_j d_l A_i.
    """

    phi: float
    A: np.ndarray
    E: np.ndarray
    B: np.ndarray
    dphi: np.ndarray
    dA: np.ndarray
    dB: np.ndarray
    hess_phi: np.ndarray
    d2A: np.ndarray


_LEVI = np.zeros((3, 3, 3))
_LEVI[0, 1, 2] = _LEVI[1, 2, 0] = _LEVI[2, 0, 1] = 1.0
_LEVI[0, 2, 1] = _LEVI[2, 1, 0] = _LEVI[1, 0, 2] = -1.0


def _finite_point(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 3 or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be a finite 3-vector")
    return x


def eval_fields(config: FieldConfig, x) -> FieldRecord:
    """Evaluate potentials, fields and their derivatives at ``x``.

    Raises
    ------
    FieldConfigError
        If any returned quantity is not finite.
    """
    x = _finite_point(x)
    phi, dphi, d2phi, A, dA, d2A, _ = core.field_derivs(config.arrays, x)
    B = np.einsum("ijk,jk->i", _LEVI, dA)
    dB = np.einsum("ijk,ljk->li", _LEVI, d2A)
    rec = FieldRecord(phi=float(phi), A=A, E=-dphi, B=B, dphi=dphi, dA=dA,
                      dB=dB, hess_phi=d2phi, d2A=d2A)
    if not all(np.all(np.isfinite(v)) for v in (phi, A, dphi, dA, d2phi, d2A)):
        raise FieldConfigError(f"non-finite field values at x={x.tolist()}")
    return rec


def consistency_check(config: FieldConfig, points: int = 64, seed: int = 0,
                      scale: float = 1.0, h: float = 1e-5) -> float:
    """Compare E and B with central differences of phi and A at random points.

    Returns the worst relative error; the self-test passes below 1e-6.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in rng.uniform(-scale, scale, size=(points, 3)):
        rec = eval_fields(config, x)
        gphi = np.zeros(3)
        jac = np.zeros((3, 3))
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = h
            rp = eval_fields(config, x + dx)
            rm = eval_fields(config, x - dx)
            gphi[j] = (rp.phi - rm.phi) / (2 * h)
            jac[j] = (rp.A - rm.A) / (2 * h)
        Bfd = np.einsum("ijk,jk->i", _LEVI, jac)
        for exact, approx in ((rec.E, -gphi), (rec.B, Bfd)):
            err = np.linalg.norm(exact - approx) / max(1.0, np.linalg.norm(exact))
            worst = max(worst, err)
    log.debug("field consistency worst relative error %.3e", worst)
    return worst


# ---------------------------------------------------------------- symbols

@dataclass(frozen=True)
class SymbolFrame:
    """Dirac symbol matrix with its eigenvalues, eigenframes and projectors."""

    HD: np.ndarray
    Hplus: float
    Hminus: float
    eps: float
    V: np.ndarray
    W: np.ndarray
    Pplus: np.ndarray
    Pminus: np.ndarray


def kinetic_momentum(params: ParticleParams, config: FieldConfig, p, x) -> np.ndarray:
    rec = eval_fields(config, x)
    return np.asarray(p, dtype=float) - (params.e / params.c) * rec.A


def symbol_dirac(params: ParticleParams, config: FieldConfig, p, x) -> SymbolFrame:
    """Dirac symbol H_D(p, x) = c alpha.pi + beta m c^2 + e phi and its eigenframes."""
    p = _finite_point(p, "p")
    rec = eval_fields(config, x)
    m, e, c = params.m, params.e, params.c
    pi = p - (e / c) * rec.A
    mc2 = m * c * c
    eps = math.sqrt(c * c * float(pi @ pi) + mc2 * mc2)
    HD = c * np.einsum("i,ijk->jk", pi.astype(complex), ALPHA) + mc2 * BETA \
        + e * rec.phi * np.eye(4)
    norm = math.sqrt(2.0 * eps * (eps + mc2))
    sp = sigma_dot(c * pi)
    V = np.vstack([(eps + mc2) * ID2, sp]) / norm
    W = np.vstack([sp, -(eps + mc2) * ID2]) / norm
    K = (HD - e * rec.phi * np.eye(4)) / eps
    Pp = 0.5 * (np.eye(4) + K)
    Pm = 0.5 * (np.eye(4) - K)
    return SymbolFrame(HD=HD, Hplus=e * rec.phi + eps, Hminus=e * rec.phi - eps,
                       eps=eps, V=V, W=W, Pplus=Pp, Pminus=Pm)


def field_eigenvectors(b) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors of b.sigma for unit b in the gauge regular at b = +z."""
    bx, by, bz = b
    n = math.sqrt(2.0 * (1.0 + bz))
    if n < 1e-12:
        raise ModeConversionError("field direction at the gauge singularity b = -z")
    vp = np.array([1.0 + bz, complex(bx, by)]) / n
    vm = np.array([-complex(bx, -by), 1.0 + bz]) / n
    return vp, vm


@dataclass(frozen=True)
class PauliSymbols:
    """Principal and subprincipal Pauli symbols and strong-coupling branches."""

    H0: float
    H1: np.ndarray
    Hprime_plus: float
    Hprime_minus: float
    B: np.ndarray
    mu: float

    @property
    def degenerate(self) -> bool:
        return float(np.linalg.norm(self.B)) == 0.0

    def _vecs(self):
        nb = float(np.linalg.norm(self.B))
        if nb == 0.0:
            raise ModeConversionError("|B| = 0: eigenvectors of sigma.B undefined")
        return field_eigenvectors(self.B / nb)

    @property
    def v_plus(self) -> np.ndarray:
        return self._vecs()[0]

    @property
    def v_minus(self) -> np.ndarray:
        return self._vecs()[1]


def pauli_symbols(params: ParticleParams, config: FieldConfig, p, x,
                  mu: float | None = None) -> PauliSymbols:
    """Pauli symbols H0, H1 and the strong-coupling energies H0 -/+ mu|B|.

    ``mu`` defaults to e hbar / 2mc and is otherwise used as supplied. The
    eigenvectors ``v_plus``/``v_minus`` raise :class:`ModeConversionError`
    on access when |B| = 0.
    """
    p = _finite_point(p, "p")
    rec = eval_fields(config, x)
    m, e, c = params.m, params.e, params.c
    pi = p - (e / c) * rec.A
    H0 = float(pi @ pi) / (2.0 * m) + e * rec.phi
    mu = params.magneton if mu is None else float(mu)
    nb = float(np.linalg.norm(rec.B))
    return PauliSymbols(H0=H0, H1=-(e / (2.0 * m * c)) * sigma_dot(rec.B),
                        Hprime_plus=H0 - mu * nb, Hprime_minus=H0 + mu * nb,
                        B=rec.B, mu=mu)


def potentials_batch(config: FieldConfig, X: np.ndarray, need_B: bool = False):
    """Vectorised phi(X), A(X) and optionally B(X) for points of shape (n, 3)."""
    fa = config.arrays
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    phi = np.zeros(n)
    for coef, pw in zip(fa.phi_coef, fa.phi_pow):
        phi += coef * np.prod(X ** pw, axis=1)
    for Z, a, cx, cy, cz in fa.coulomb:
        r2 = np.sum((X - np.array([cx, cy, cz])) ** 2, axis=1)
        phi -= Z / np.sqrt(r2 + a * a)
    A = np.zeros((n, 3))
    dA = np.zeros((n, 3, 3)) if need_B else None
    for i, coef, pw in zip(fa.a_comp, fa.a_coef, fa.a_pow):
        A[:, i] += coef * np.prod(X ** pw, axis=1)
        if need_B:
            for j in range(3):
                if pw[j] == 0:
                    continue
                q = pw.copy()
                q[j] -= 1
                dA[:, j, i] += coef * pw[j] * np.prod(X ** q, axis=1)
    if not need_B:
        return phi, A
    B = np.einsum("ijk,njk->ni", _LEVI, dA)
    return phi, A, B
