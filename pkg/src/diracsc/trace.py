"""Regularised trace formula.

Test-function pair (rho, rho~), smooth energy truncation chi, analytic
spectrum oracles for the spectral side, Monte-Carlo Weyl volumes and the
periodic-orbit side assembled from orbit amplitudes.

Conventions: rho~ is compactly supported and even, and
``rho(E) = (1/2 pi) int rho~(t) exp(-i E t) dt = (1/pi) int_0^T rho~(t) cos(E t) dt``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate, special

from .dynamics import RELATIVISTIC
from .errors import (ConvergenceError, DegenerateOrbitError, DomainError,
                     InsufficientSpectrumError)
from .fields import FieldConfig, ParticleParams, potentials_batch
from .orbits import PeriodicOrbit

log = logging.getLogger(__name__)

QUAD_TOL = 1e-10
TAIL_TOL = 1e-8


# ------------------------------------------------------------ test functions

@lru_cache(maxsize=16)
def _clenshaw_curtis(n: int):
    """Clenshaw-Curtis nodes and weights on [-1, 1] with n + 1 points (n even)."""
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    k = np.arange(1, n // 2 + 1)
    b = np.where(k == n // 2, 1.0, 2.0)
    c = np.where((j == 0) | (j == n), 1.0, 2.0)
    s = np.cos(2.0 * np.outer(j, k) * np.pi / n) @ (b / (4.0 * k * k - 1.0))
    w = c / n * (1.0 - s)
    return x, w


def _bump(s, sharpness: float, power: int):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-sharpness / (1.0 - s[inside] ** power))
    return out


@dataclass(frozen=True)
class TestFunctionPair:
    """Compactly supported even rho~(t) and its transform rho(E).

    Parameters
    ----------
    T_max : float
        Support half-width of rho~.
    shape : str
        ``"bump"`` for exp(-a/(1 - s^2)) or ``"bump4"`` for exp(-a/(1 - s^4)),
        with s = t / T_max.
    amplitude, sharpness : float
        Overall factor and the constant a.
    """

    __test__ = False

    T_max: float
    shape: str = "bump"
    amplitude: float = 1.0
    sharpness: float = 1.0
    n_min: int = 64
    n_max: int = 1 << 15

    @property
    def _power(self) -> int:
        return {"bump": 2, "bump4": 4}[self.shape]

    def rho_tilde(self, t):
        """rho~(t), exactly zero for |t| >= T_max."""
        t = np.asarray(t, dtype=float)
        return self.amplitude * _bump(t / self.T_max, self.sharpness, self._power)

    def _rho_n(self, E: np.ndarray, n: int) -> np.ndarray:
        x, w = _clenshaw_curtis(n)
        t = 0.5 * self.T_max * (x + 1.0)
        f = self.rho_tilde(t) * w * (0.5 * self.T_max / math.pi)
        out = np.empty(E.shape)
        for i in range(0, E.size, 4096):
            chunk = E.flat[i:i + 4096]
            out.flat[i:i + 4096] = np.cos(np.outer(chunk, t)) @ f
        return out

    def rho(self, E, return_nodes: bool = False):
        """rho(E) by Clenshaw-Curtis quadrature, doubled until converged to 1e-10.

        Raises
        ------
        ConvergenceError
            If the node count exceeds ``n_max`` before convergence.
        """
        E = np.asarray(E, dtype=float)
        scalar = E.ndim == 0
        E = np.atleast_1d(E)
        # resolve the oscillation cos(E t) before testing convergence
        n = max(self.n_min, 2 * int(np.max(np.abs(E), initial=0.0) * self.T_max / 4 + 1))
        n += n % 2
        prev = self._rho_n(E, n)
        scale = max(abs(self.rho_zero), 1e-300)
        while True:
            n *= 2
            if n > self.n_max:
                raise ConvergenceError(f"rho quadrature not converged with {n // 2} nodes",
                                       module="trace")
            cur = self._rho_n(E, n)
            if np.max(np.abs(cur - prev)) <= QUAD_TOL * scale:
                break
            prev = cur
        out = cur[0] if scalar else cur
        return (out, n) if return_nodes else out

    @property
    def rho_zero(self) -> float:
        """rho(0) = (1/pi) int_0^T rho~ dt, on a fine fixed rule."""
        return float(self._rho_n(np.zeros(1), 2048)[0])

    def rho_complex_residual(self, E) -> float:
        """Largest |Im| of the full-line transform, which vanishes for even rho~."""
        E = np.atleast_1d(np.asarray(E, dtype=float))
        x, w = _clenshaw_curtis(2048)
        t = self.T_max * x
        f = self.rho_tilde(t) * w * (self.T_max / (2 * math.pi))
        return float(np.max(np.abs(np.sin(np.outer(E, t)) @ f)))

    def energy_cutoff(self, tol: float = 1e-14) -> float:
        """An argument beyond which |rho| stays below ``tol * rho(0)``."""
        u = 1.0 / self.T_max
        grid = np.linspace(0.0, 4096.0 / self.T_max, 8193)
        env = np.maximum.accumulate(np.abs(self.rho(grid))[::-1])[::-1]
        below = np.nonzero(env < tol * self.rho_zero)[0]
        if below.size == 0:
            return float(grid[-1])
        return float(max(grid[below[0]], u))

    def envelope(self, u) -> np.ndarray:
        """Monotone envelope sup_{|v| >= |u|} |rho(v)|."""
        U = self.energy_cutoff()
        grid = np.linspace(0.0, U, 4097)
        env = np.maximum.accumulate(np.abs(self.rho(grid))[::-1])[::-1]
        u = np.abs(np.asarray(u, dtype=float))
        return np.where(u >= U, 0.0, np.interp(u, grid, env))

    def retransform(self, t, E_max: float | None = None) -> np.ndarray:
        """rho~(t) recovered as 2 int_0^inf rho(E) cos(E t) dE.

        Uses the trapezoid rule with spacing below pi / T_max, which is exact
        for band-limited rho up to the truncation at ``E_max``.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        E_max = E_max or self.energy_cutoff()
        h = 0.5 * math.pi / self.T_max
        n = int(math.ceil(E_max / h))
        E = h * np.arange(n + 1)
        r = self.rho(E)
        w = np.full(n + 1, h)
        w[0] = 0.5 * h
        return 2.0 * np.cos(np.outer(t, E)) @ (w * r)


def make_test_pair(T_max: float, shape: str = "bump", amplitude: float = 1.0,
                   sharpness: float = 1.0) -> TestFunctionPair:
    """Build a test-function pair with rho~ supported on [-T_max, T_max]."""
    if not (T_max > 0 and math.isfinite(T_max)):
        raise ValueError("T_max must be positive")
    if shape not in ("bump", "bump4"):
        raise ValueError(f"unknown test-function shape {shape!r}")
    if not sharpness > 0:
        raise ValueError("sharpness must be positive")
    return TestFunctionPair(float(T_max), shape, float(amplitude), float(sharpness))


# ---------------------------------------------------------------- truncation

def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    f = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    g = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return f / (f + g)


@dataclass(frozen=True)
class Truncation:
    """Smooth window chi: 0 outside (E_a, E_b), 1 on [plateau_a, plateau_b]."""

    E_a: float
    E_b: float
    plateau_a: float
    plateau_b: float

    def __post_init__(self):
        if not self.E_a <= self.plateau_a <= self.plateau_b <= self.E_b:
            if not (self.E_a == self.E_b):
                raise ValueError("need E_a <= plateau_a <= plateau_b <= E_b")

    @classmethod
    def window(cls, E_a: float, E_b: float, ramp: float) -> "Truncation":
        return cls(E_a, E_b, E_a + ramp, E_b - ramp)

    @property
    def empty(self) -> bool:
        return self.E_a >= self.E_b

    def __call__(self, E):
        E = np.asarray(E, dtype=float)
        if self.empty:
            return np.zeros_like(E)
        up = (smooth_step((E - self.E_a) / (self.plateau_a - self.E_a))
              if self.plateau_a > self.E_a else (E > self.E_a).astype(float))
        dn = (smooth_step((self.E_b - E) / (self.E_b - self.plateau_b))
              if self.E_b > self.plateau_b else (E < self.E_b).astype(float))
        return up * dn


# ----------------------------------------------------------- spectrum oracle

@dataclass(frozen=True)
class SpectrumOracle:
    """Exact eigenvalues and multiplicities below ``cutoff``.

    Multiplicities are real weights so that per-area Landau degeneracies
    can be represented.
    """

    model: str
    params: Mapping
    energies: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    cutoff: float

    def __post_init__(self):
        E = np.asarray(self.energies, dtype=float)
        g = np.asarray(self.weights, dtype=float)
        if E.shape != g.shape or not np.all(np.isfinite(E)):
            raise ValueError("energies must be finite and match the weights")
        if np.any(g <= 0):
            raise ValueError("multiplicities must be positive")
        order = np.argsort(E, kind="stable")
        object.__setattr__(self, "energies", E[order])
        object.__setattr__(self, "weights", g[order])

    def levels(self, lo: float = -np.inf, hi: float = np.inf):
        sel = (self.energies >= lo) & (self.energies <= hi)
        return self.energies[sel], self.weights[sel]

    @classmethod
    def from_levels(cls, energies, weights=None, cutoff: float | None = None,
                    model: str = "user") -> "SpectrumOracle":
        E = np.asarray(energies, dtype=float)
        g = np.ones_like(E) if weights is None else np.asarray(weights, dtype=float)
        return cls(model, {}, E, g, float(np.max(E) if cutoff is None else cutoff))

    @classmethod
    def from_file(cls, path, cutoff: float | None = None) -> "SpectrumOracle":
        """Read "energy multiplicity" pairs, one per line, ``#`` comments."""
        E, g = [], []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                E.append(float(parts[0]))
                g.append(float(parts[1]) if len(parts) > 1 else 1.0)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: bad spectrum line") from exc
        o = cls.from_levels(E, g, cutoff, model="file")
        return cls("file", {"path": str(path)}, o.energies, o.weights, o.cutoff)

    @classmethod
    def pauli_landau(cls, B: float, params: ParticleParams, cutoff: float,
                     spin: bool = True) -> "SpectrumOracle":
        """Planar Landau levels per unit area.

        With spin the Pauli levels are hbar w_c k (weight 1 for k = 0, 2 above);
        without spin the ladder is hbar w_c (n + 1/2).
        """
        wc = abs(params.e * B) / (params.m * params.c)
        if wc <= 0:
            raise ValueError("Landau oracle needs a nonzero field")
        g0 = abs(params.e * B) / (2 * math.pi * params.hbar * params.c)
        n = int(math.floor(cutoff / (params.hbar * wc))) + 1
        k = np.arange(max(n, 0) + 1)
        if spin:
            E = params.hbar * wc * k
            g = np.where(k == 0, g0, 2 * g0)
        else:
            E = params.hbar * wc * (k + 0.5)
            g = np.full(k.shape, g0)
        keep = E <= cutoff
        return cls("pauli-landau", {"B": B, "spin": spin, "hbar": params.hbar},
                   E[keep], g[keep], float(cutoff))

    @classmethod
    def harmonic(cls, omega: float, params: ParticleParams, cutoff: float,
                 B: float = 0.0, spin: bool = False) -> "SpectrumOracle":
        """3D isotropic oscillator, optionally in a uniform field along z.

        Levels hbar W (2 n_r + |l| + 1) - hbar w_c l / 2 + hbar w (n_z + 1/2),
        W = sqrt(w^2 + w_c^2 / 4), with Zeeman shifts -/+ hbar w_c / 2 when
        ``spin`` is set; without spin a single channel is returned.
        """
        if omega <= 0:
            raise ValueError("oscillator frequency must be positive")
        h = params.hbar
        wc = params.e * B / (params.m * params.c)
        W = math.sqrt(omega ** 2 + 0.25 * wc ** 2)
        spins = (-1.0, 1.0) if spin else (0.0,)
        E, g = [], []
        lmax = int(cutoff / (h * (W - 0.5 * abs(wc)))) + 2 if W > 0.5 * abs(wc) else 0
        for nz in range(int(cutoff / (h * omega)) + 1):
            ez = h * omega * (nz + 0.5)
            for l in range(-lmax, lmax + 1):
                el = h * W * (abs(l) + 1) - 0.5 * h * wc * l
                nr = 0
                while True:
                    base = ez + el + 2 * h * W * nr
                    if base - 0.5 * h * abs(wc) * bool(spin) > cutoff:
                        break
                    for s in spins:
                        En = base - 0.5 * s * h * wc
                        if En <= cutoff:
                            E.append(En)
                            g.append(1.0)
                    nr += 1
        E = np.asarray(E)
        # merge exact degeneracies
        key = np.round(E / (h * omega), 9)
        uniq, inv = np.unique(key, return_inverse=True)
        Eu = np.zeros(uniq.size)
        gu = np.zeros(uniq.size)
        np.add.at(gu, inv, g)
        np.maximum.at(Eu, inv, E)
        return cls("harmonic", {"omega": omega, "B": B, "spin": spin, "hbar": h},
                   Eu, gu, float(cutoff))

    @classmethod
    def hydrogenic(cls, kappa: float, params: ParticleParams,
                   cutoff: float) -> "SpectrumOracle":
        """Sommerfeld fine-structure levels for e*phi = -kappa / r.

        E = m c^2 [1 + (g / (n - d_j))^2]^(-1/2), g = kappa / (hbar c),
        d_j = j + 1/2 - sqrt((j + 1/2)^2 - g^2); multiplicity (2j + 1) for
        each orbital l = j -/+ 1/2 allowed below n.
        """
        g = kappa / (params.hbar * params.c)
        mc2 = params.m * params.c ** 2
        if not 0 < g < 1:
            raise DomainError("hydrogenic oracle needs 0 < kappa/(hbar c) < 1", module="trace")
        if cutoff >= mc2:
            raise InsufficientSpectrumError("levels accumulate at m c^2; choose cutoff below it",
                                            module="trace")
        E, w = [], []
        n = 1
        while True:
            lowest = None
            for twoj in range(1, 2 * n, 2):
                k = 0.5 * (twoj + 1)
                d = k - math.sqrt(k * k - g * g)
                En = mc2 / math.sqrt(1.0 + (g / (n - d)) ** 2)
                lowest = En if lowest is None else min(lowest, En)
                mult = (twoj + 1) * (2 if twoj < 2 * n - 1 else 1)
                if En <= cutoff:
                    E.append(En)
                    w.append(float(mult))
            if lowest > cutoff:
                break
            n += 1
        return cls("hydrogenic", {"kappa": kappa, "hbar": params.hbar},
                   np.asarray(E), np.asarray(w), float(cutoff))


# ----------------------------------------------------------------- lhs side

@dataclass(frozen=True)
class LhsResult:
    value: float
    tail_bound: float
    n_terms: int


def lhs_sum(oracle: SpectrumOracle, chi: Truncation, pair: TestFunctionPair,
            E: float, hbar: float) -> LhsResult:
    """Sum_n g_n chi(E_n) rho((E_n - E) / hbar) with a tail bound.

    Raises
    ------
    InsufficientSpectrumError
        If levels beyond the oracle cutoff could contribute more than 1e-8
        relative to the value.
    """
    if chi.empty:
        return LhsResult(0.0, 0.0, 0)
    En, g = oracle.levels(chi.E_a, chi.E_b)
    w = g * chi(En)
    keep = w != 0
    value = float(np.sum(w[keep] * pair.rho((En[keep] - E) / hbar))) if keep.any() else 0.0
    tail = 0.0
    if oracle.cutoff < chi.E_b:
        # extrapolate the level density over the missing window
        Eall, gall = oracle.levels(chi.E_a, oracle.cutoff)
        span = max(oracle.cutoff - chi.E_a, hbar)
        density = 10.0 * max(float(np.sum(gall)), 1.0) / span
        grid = np.linspace(oracle.cutoff, chi.E_b, 257)
        env = pair.envelope((grid - E) / hbar) * chi(grid)
        tail = float(density * integrate.trapezoid(env, grid))
        if tail > TAIL_TOL * max(abs(value), 1e-300):
            raise InsufficientSpectrumError(
                f"spectrum cutoff {oracle.cutoff:g} below the window edge {chi.E_b:g}; "
                f"tail bound {tail:.3e} vs value {value:.3e}", module="trace")
    return LhsResult(value, tail, int(np.count_nonzero(keep)))


def spectral_density_hist(oracle: SpectrumOracle, chi: Truncation, width: float,
                          grid=None, n: int = 4096):
    """Gaussian-smoothed chi-weighted density on a uniform grid.

    Returns
    -------
    (E_grid, d) : tuple of ndarray
    """
    if not width > 0:
        raise ValueError("width must be positive")
    if grid is None:
        lo = chi.E_a - 6 * width
        hi = chi.E_b + 6 * width
        grid = np.linspace(lo, hi, n)
    grid = np.asarray(grid, dtype=float)
    En, g = oracle.levels(chi.E_a, chi.E_b)
    w = g * chi(En)
    d = np.zeros_like(grid)
    norm = 1.0 / (math.sqrt(2 * math.pi) * width)
    for Ei, wi in zip(En, w):
        if wi:
            d += wi * norm * np.exp(-0.5 * ((grid - Ei) / width) ** 2)
    return grid, d


def smoothed_count(oracle: SpectrumOracle, E, width: float):
    """Counting function sum_n g_n Phi((E - E_n) / width)."""
    E = np.atleast_1d(np.asarray(E, dtype=float))
    En, g = oracle.levels()
    z = (E[:, None] - En[None, :]) / width
    return special.ndtr(z) @ g


def harmonic_ratios(oracle: SpectrumOracle, reference: SpectrumOracle,
                    spacing: float, window: tuple, width: float, kmax: int = 4):
    """Ratios of Fourier harmonics k of two smoothed densities.

    Both densities are sampled on a grid covering an integer number of
    periods ``spacing`` inside ``window``; harmonic k sits exactly on FFT bin
    (number of periods) * k, so there is no leakage.
    """
    lo, hi = window
    periods = int((hi - lo) // spacing)
    per = 64
    grid = lo + spacing * np.arange(periods * per) / per
    chi = Truncation(lo - 20 * width - spacing, hi + 20 * width + spacing,
                     lo - 20 * width, hi + 20 * width)
    out = []
    spectra = []
    for o in (oracle, reference):
        _, d = spectral_density_hist(o, chi, width, grid=grid)
        spectra.append(np.fft.rfft(d - d.mean()))
    for k in range(1, kmax + 1):
        out.append(spectra[0][periods * k] / spectra[1][periods * k])
    return np.asarray(out)


# ------------------------------------------------------------- Weyl volumes

@dataclass(frozen=True)
class WeylEstimate:
    vol: float
    stderr: float
    delta: float
    N: int
    hits: int
    box: tuple
    p_radius: float


def _kin_energy(kind: str, params: ParticleParams, pi2):
    if kind in RELATIVISTIC:
        return np.sqrt(params.c ** 2 * pi2 + params.m ** 2 * params.c ** 4)
    return pi2 / (2 * params.m)


def _potential_part(kind, params, config, X, mu):
    """e*phi plus the spin-split term for the strong-coupling kinds."""
    if kind.startswith("strong"):
        phi, _, B = potentials_batch(config, X, need_B=True)
        sig = 1.0 if kind == "strong_plus" else -1.0
        return params.e * phi - sig * mu * np.linalg.norm(B, axis=1)
    phi, _ = potentials_batch(config, X)
    return params.e * phi


def _h_range(kind, params, V):
    """Lowest H over momenta at each point (highest for the minus branch)."""
    if kind == "minus":
        return V - params.m * params.c ** 2
    rest = params.m * params.c ** 2 if kind == "plus" else 0.0
    return V + rest


def _allowed(kind, params, V, E, delta):
    h = _h_range(kind, params, V)
    return h >= E - delta if kind == "minus" else h <= E + delta


def _auto_box(kind, params, config, E, delta, mu, rng, L0=1.0, max_doublings=12):
    L = L0
    for _ in range(max_doublings):
        pts = rng.uniform(-L, L, size=(4096, 3))
        face = rng.integers(0, 3, 4096)
        pts[np.arange(4096), face] = np.where(rng.random(4096) < 0.5, -L, L)
        V = _potential_part(kind, params, config, pts, mu)
        if not np.any(_allowed(kind, params, V, E, delta)):
            return 1.1 * L
        L *= 2.0
    raise DomainError("energy shell is unbounded in position; provide a bounded sampling box",
                      module="trace")


def _p_radius(kind, params, V, E, delta):
    """Kinetic momentum radius enclosing the shell E +/- delta."""
    if kind == "minus":
        eps = np.max(V) - (E - delta)
    elif kind == "plus":
        eps = E + delta - np.min(V)
    else:
        eps = E + delta - np.min(V)
    if kind in RELATIVISTIC:
        pi2 = max(eps * eps - params.m ** 2 * params.c ** 4, 0.0) / params.c ** 2
    else:
        pi2 = max(2 * params.m * eps, 0.0)
    return math.sqrt(pi2)


def _shard_counts(args):
    (kind, params, config, mu, seed, shard, n, lo, hi, P, E, delta) = args
    rng = np.random.default_rng([seed, shard])
    X = rng.uniform(lo, hi, size=(n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = P * np.cbrt(rng.random(n))
    V = _potential_part(kind, params, config, X, mu)
    kin = _kin_energy(kind, params, r * r)
    H = V - kin if kind == "minus" else V + kin
    below = H < E - delta
    shell = (~below) & (H < E + delta)
    edge_x = np.any((X - lo < 0.01 * (hi - lo)) | (hi - X < 0.01 * (hi - lo)), axis=1)
    edge_p = r > 0.99 * P
    return (int(below.sum()), int(shell.sum()),
            int(np.sum(shell & edge_x)), int(np.sum(shell & edge_p)))


def weyl_volume(params: ParticleParams, config: FieldConfig, kind: str, E: float,
                N: int = 10 ** 6, seed: int = 0, box=None, delta: float | None = None,
                mu: float | None = None, threads: int = 1,
                shard_size: int = 1 << 20) -> WeylEstimate:
    """Monte-Carlo estimate of vol = int int delta(H - E) d^3p d^3x.

    Uses the symmetric difference (vol{H < E + d} - vol{H < E - d}) / 2d with
    x uniform in a box and kinetic momentum uniform in a ball; the shift
    p -> pi is volume preserving at fixed x.

    Parameters
    ----------
    box : float or (lo, hi), optional
        Sampling box half-width about the origin, or explicit corners.
        Detected automatically when omitted.
    delta : float, optional
        Shell half-width; defaults to 1e-2 of the distance from E to the
        bottom of the accessible H range.

    Raises
    ------
    DomainError
        If the shell touches the sampling box or is unbounded.
    """
    mu = params.magneton if mu is None else mu
    rng0 = np.random.default_rng([seed, 2 ** 31 - 1])
    if box is None:
        Lb = _auto_box(kind, params, config, E, 0.0, mu, rng0)
        lo, hi = np.full(3, -Lb), np.full(3, Lb)
    elif np.ndim(box) == 0:
        lo, hi = np.full(3, -float(box)), np.full(3, float(box))
    else:
        lo, hi = (np.asarray(b, dtype=float) * np.ones(3) for b in box)
    pilot = rng0.uniform(lo, hi, size=(65536, 3))
    Vp = _potential_part(kind, params, config, pilot, mu)
    hr = _h_range(kind, params, Vp)
    E_scale = (np.max(hr) - E) if kind == "minus" else (E - np.min(hr))
    if E_scale <= 0:
        log.info("energy %g outside the accessible range, empty shell", E)
        return WeylEstimate(0.0, 0.0, 0.0, N, 0, (tuple(lo), tuple(hi)), 0.0)
    if delta is None:
        delta = 1e-2 * E_scale
    P = 1.25 * _p_radius(kind, params, Vp, E, delta)
    nshard = max(1, -(-N // shard_size))
    sizes = [shard_size] * (nshard - 1) + [N - shard_size * (nshard - 1)]
    jobs = [(kind, params, config, mu, seed, s, sizes[s], lo, hi, P, E, delta)
            for s in range(nshard)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(_shard_counts, jobs))
    else:
        res = [_shard_counts(j) for j in jobs]
    below, shell, ex_x, ex_p = (sum(r[i] for r in res) for i in range(4))
    if ex_x:
        raise DomainError(f"{ex_x} shell samples on the sampling-box boundary; "
                          "the shell is unbounded or the box too small", module="trace")
    if ex_p:
        raise DomainError("shell reaches the momentum sampling radius", module="trace")
    Vs = float(np.prod(hi - lo)) * 4.0 / 3.0 * math.pi * P ** 3
    frac = shell / N
    vol = Vs * frac / (2 * delta)
    err = Vs * math.sqrt(frac * (1 - frac) / N) / (2 * delta)
    log.info("weyl E=%g N=%d hits=%d vol=%.6g +/- %.2g", E, N, shell, vol, err)
    return WeylEstimate(vol, err, float(delta), int(N), int(shell),
                        (tuple(lo), tuple(hi)), float(P))


def ho_weyl_reference(E: float, omega: float = 1.0, m: float = 1.0) -> float:
    """Shell volume 4 pi^3 E^2 / omega^3 of the 3D isotropic oscillator."""
    return 4 * math.pi ** 3 * E ** 2 / omega ** 3


def ho_phase_volume(E: float, omega: float = 1.0) -> float:
    """vol{H < E} = (2 pi)^3 E^3 / (6 omega^3) for the 3D isotropic oscillator."""
    return (2 * math.pi) ** 3 * E ** 3 / (6 * omega ** 3)


def coulomb_shell_volume(E: float, kappa: float, params: ParticleParams) -> float:
    """Shell volume of H+ = eps(p) - kappa / r at a bound energy E < m c^2.

    vol = (16 pi^2 / c^2) int_0^{r_max} r^2 p(r) eps(r) dr with
    eps = E + kappa / r, c p = sqrt(eps^2 - m^2 c^4), r_max = kappa / (m c^2 - E).
    """
    m, c = params.m, params.c
    mc2 = m * c * c
    if not (kappa > 0 and E < mc2):
        raise DomainError("Coulomb shell is bounded only for kappa > 0 and E < m c^2",
                          module="trace")
    r_max = kappa / (mc2 - E)

    def f(r):
        eps = E + kappa / r
        return r * r * math.sqrt(max(eps * eps - mc2 * mc2, 0.0)) / c * eps

    val, _ = integrate.quad(f, 0.0, r_max, epsabs=0.0, epsrel=1e-12, limit=200)
    return 16 * math.pi ** 2 / (c * c) * val


# ----------------------------------------------------------------- rhs side

@dataclass(frozen=True)
class OrbitTerm:
    """Classical data of one periodic orbit as it enters the orbit sum."""

    T: float
    S: float
    T_primitive: float
    monodromy: np.ndarray
    maslov: int
    spin_weight: float
    label: str = ""
    degenerate: bool = False

    @classmethod
    def from_orbit(cls, orbit: PeriodicOrbit, label: str = "") -> "OrbitTerm":
        return cls(orbit.T, orbit.S, orbit.T_primitive, orbit.monodromy, orbit.maslov,
                   orbit.spin_weight, label or f"{orbit.kind}:T={orbit.T:.6g}",
                   orbit.degenerate)

    def amplitude(self) -> complex:
        det = abs(float(np.linalg.det(np.asarray(self.monodromy) - np.eye(4))))
        if self.degenerate or det < 1e-10:
            raise DegenerateOrbitError(
                f"orbit {self.label or self.T} is degenerate (|det(M-1)|={det:.3e}); "
                "the isolated-orbit amplitude does not apply", module="trace")
        return complex(self.T_primitive * self.spin_weight / math.sqrt(det)
                       * np.exp(-0.5j * math.pi * self.maslov))

    def repeated(self, k: int) -> "OrbitTerm":
        """k-fold repetition; the spin weight follows tr(d^k) = 2 cos(k chi)."""
        chi = math.acos(max(-1.0, min(1.0, 0.5 * self.spin_weight)))
        return OrbitTerm(k * self.T, k * self.S, self.T_primitive,
                         np.linalg.matrix_power(np.asarray(self.monodromy), k),
                         k * self.maslov, 2 * math.cos(k * chi),
                         f"{self.label}^{k}", self.degenerate)


@dataclass(frozen=True)
class RhsResult:
    value: float
    weyl: float
    orbit_sum: float
    terms: tuple


def weyl_term(volumes, chi_E: float, pair: TestFunctionPair, hbar: float,
              dim: int = 3, spin: int = 2) -> float:
    """chi(E) rho~(0) / 2pi * sum_b spin vol_b / (2 pi hbar)^(dim - 1).

    ``spin`` is the number of spin channels per branch (2 for spin 1/2,
    1 when comparing against a single-channel spectrum).
    """
    vols = list(volumes.values()) if isinstance(volumes, Mapping) else \
        list(np.atleast_1d(volumes))
    total = sum(spin * float(v) for v in vols)
    return float(chi_E * float(pair.rho_tilde(0.0)) / (2 * math.pi)
                 * total / (2 * math.pi * hbar) ** (dim - 1))


def rhs_sum(volumes, orbits: Iterable, chi: Truncation, pair: TestFunctionPair,
            E: float, hbar: float, dim: int = 3, spin: int = 2) -> RhsResult:
    """Weyl term plus 2 Re of each orbit term chi(E) rho~(T)/2pi A e^{iS/hbar}.

    Parameters
    ----------
    volumes : float, sequence or mapping
        Shell volume per branch.
    orbits : iterable of OrbitTerm or PeriodicOrbit

    Raises
    ------
    DegenerateOrbitError
        If any orbit in the list is degenerate.
    """
    chi_E = float(chi(E))
    w = weyl_term(volumes, chi_E, pair, hbar, dim, spin)
    terms = []
    total = 0.0
    for o in orbits:
        term = o if isinstance(o, OrbitTerm) else OrbitTerm.from_orbit(o)
        A = term.amplitude()
        rt = float(pair.rho_tilde(term.T))
        val = 2.0 * (chi_E * rt / (2 * math.pi) * A * np.exp(1j * term.S / hbar)).real
        terms.append((term.label, term.T, float(val)))
        total += val
    return RhsResult(w + total, w, float(total), tuple(terms))


def check_clean(periods: Sequence[float], T_max: float, gap: float = 1e-6) -> list:
    """Report pairs of distinct periods below T_max closer than ``gap``."""
    T = np.sort(np.asarray([t for t in periods if t < T_max], dtype=float))
    bad = []
    for a, b in zip(T[:-1], T[1:]):
        if 0 < b - a < gap:
            bad.append((float(a), float(b)))
    if bad:
        log.warning("periods accumulate below T_max: %s", bad)
    return bad
