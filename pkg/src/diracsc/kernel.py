"""Semiclassical time-evolution kernels.

Each kernel is a sum over classical trajectories from y to x in time t of

    (2 pi i hbar)^(-3/2) A_gamma D_gamma exp(i R_gamma / hbar - i pi nu_gamma / 2)

with A_gamma the spin amplitude matrix of the branch: V_t d+ V_0^dagger (4x4)
for the positive Dirac branch, W_t d- W_0^dagger for the negative one, d_P for
Pauli and v(x) v(y)^dagger d' for the strong-coupling branches. The branch of
(2 pi i hbar)^(-3/2) is the principal one, i = exp(i pi / 2).
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .dynamics import Tolerances, Trajectory, connect, morse_index, vanvleck
from .errors import ConjugatePointError
from .fields import FieldConfig, ParticleParams, eval_fields, field_eigenvectors, symbol_dirac

log = logging.getLogger(__name__)

ACTION_TOL = 1e-8


def prefactor(hbar: float) -> complex:
    """(2 pi i hbar)^(-3/2) on the principal branch."""
    return (2 * math.pi * hbar) ** -1.5 * complex(np.exp(-0.75j * math.pi))


@dataclass
class KernelContribution:
    """One stationary-phase term of a kernel."""

    branch: str
    xi: np.ndarray
    trajectory: Trajectory = field(repr=False)
    R: float
    nu: int
    D: float
    spin_factor: np.ndarray
    amplitude: np.ndarray
    energy: float
    chi: float
    hbar: float
    extra: dict = field(default_factory=dict)

    @property
    def phase(self) -> float:
        """R / hbar - pi nu / 2."""
        return self.R / self.hbar - 0.5 * math.pi * self.nu

    @property
    def value(self) -> np.ndarray:
        return (prefactor(self.hbar) * self.chi * self.D * np.exp(1j * self.phase)
                * self.amplitude)

    @property
    def spin_trace(self) -> complex:
        return complex(np.trace(self.amplitude))


@dataclass
class KernelResult:
    """Kernel matrix with its per-trajectory ledger and rejected terms."""

    matrix: np.ndarray
    contributions: list
    rejected: list

    def table(self) -> str:
        """CSV ledger with one row per contribution."""
        return contributions_csv(self.contributions)


def contributions_csv(contribs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = 0 if not contribs else contribs[0].spin_factor.shape[0]
    head = ["branch", "xi_x", "xi_y", "xi_z", "R", "nu", "D", "energy", "chi"]
    for i in range(n):
        for j in range(n):
            head += [f"d{i}{j}_re", f"d{i}{j}_im"]
    w.writerow(head)
    for c in contribs:
        row = [c.branch, *(repr(float(v)) for v in c.xi), repr(float(c.R)), c.nu,
               repr(float(c.D)), repr(float(c.energy)), repr(float(c.chi))]
        for v in np.asarray(c.spin_factor).ravel():
            row += [repr(float(v.real)), repr(float(v.imag))]
        w.writerow(row)
    return buf.getvalue()


def _check_time(t):
    if not (math.isfinite(t) and t > 0):
        raise ValueError("kernel time must be positive and finite")


def _stationary_terms(params, config, kind, spin, x, y, t, seeds, tol, mu, rejected):
    """Connections with their Van Vleck factor and Morse index."""
    out = []
    for conn in connect(params, config, kind, y, x, t, seeds, tol, mu=mu, spin=spin):
        traj = conn.trajectory
        try:
            D = vanvleck(traj)
            nu = morse_index(traj)
        except ConjugatePointError as exc:
            log.warning("%s trajectory xi=%s dropped: %s", kind, conn.xi.tolist(), exc)
            rejected.append({"branch": kind, "xi": conn.xi, "reason": str(exc)})
            continue
        out.append((conn.xi, traj, D, nu))
    return out


def _chi_weight(chi, E):
    return 1.0 if chi is None else float(chi(E))


def dirac_kernel(params: ParticleParams, config: FieldConfig, x, y, t: float,
                 seeds=None, hbar: float | None = None, chi=None,
                 tol: Tolerances | None = None) -> KernelResult:
    """4x4 semiclassical Dirac kernel K(x, y, t).

    Parameters
    ----------
    seeds : sequence of initial momenta, optional
        Extra Newton seeds; the straight-line guess is always tried.
    chi : callable, optional
        Energy truncation applied per trajectory energy.
    """
    _check_time(t)
    hbar = params.hbar if hbar is None else hbar
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    contribs, rejected = [], []
    for kind in ("plus", "minus"):
        for xi, traj, D, nu in _stationary_terms(params, config, kind, kind, x, y, t,
                                                 seeds, tol, None, rejected):
            d = traj.d(t)
            f0 = symbol_dirac(params, config, xi, y)
            f1 = symbol_dirac(params, config, traj.P(t), traj.X(t))
            U0, U1 = (f0.V, f1.V) if kind == "plus" else (f0.W, f1.W)
            amp = U1 @ d @ U0.conj().T
            E = traj.E0
            contribs.append(KernelContribution(kind, xi, traj, float(traj.action(t)), nu,
                                               D, d, amp, E, _chi_weight(chi, E), hbar))
    return _assemble(contribs, rejected, 4, "dirac")


def pauli_kernel(params: ParticleParams, config: FieldConfig, x, y, t: float,
                 seeds=None, hbar: float | None = None, chi=None,
                 tol: Tolerances | None = None) -> KernelResult:
    """2x2 semiclassical Pauli kernel from H0 trajectories and d_P."""
    _check_time(t)
    hbar = params.hbar if hbar is None else hbar
    contribs, rejected = [], []
    for xi, traj, D, nu in _stationary_terms(params, config, "pauli0", "pauli",
                                             np.asarray(x, float), np.asarray(y, float),
                                             t, seeds, tol, None, rejected):
        d = traj.d(t)
        E = traj.E0
        contribs.append(KernelContribution("pauli0", xi, traj, float(traj.action(t)), nu,
                                           D, d, d, E, _chi_weight(chi, E), hbar))
    return _assemble(contribs, rejected, 2, "pauli")


def _unit_field(config, x):
    B = eval_fields(config, x).B
    return B / np.linalg.norm(B)


def strong_coupling_kernel(params: ParticleParams, config: FieldConfig, mu: float,
                           x, y, t: float, seeds=None, hbar: float | None = None,
                           chi=None, tol: Tolerances | None = None,
                           threshold: float = 1e-6) -> KernelResult:
    """2x2 strong-coupling kernel from the flows of H0 -/+ mu |B|.

    Each contribution carries v(x) v(y)^dagger d' with the U(1) factor
    d'_+ = exp(-i G / 2), d'_- = exp(+i G / 2) and G the line integral of the
    adiabatic connection. Trajectories passing within ``threshold`` of |B| = 0
    are rejected with the crossing times recorded.
    """
    _check_time(t)
    hbar = params.hbar if hbar is None else hbar
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    contribs, rejected = [], []
    for kind, sig in (("strong_plus", 1.0), ("strong_minus", -1.0)):
        for xi, traj, D, nu in _stationary_terms(params, config, kind, "none", x, y, t,
                                                 seeds, tol, mu, rejected):
            events = mode_conversion_scan(traj, threshold)
            if events:
                log.warning("%s trajectory breaks down at mode conversion, t=%s",
                            kind, events)
                rejected.append({"branch": kind, "xi": xi, "reason": "mode conversion",
                                 "times": events})
                continue
            G = float(traj.berry_integral(t))
            dprime = np.exp(-0.5j * sig * G)
            vx = field_eigenvectors(_unit_field(config, x))[0 if sig > 0 else 1]
            vy = field_eigenvectors(_unit_field(config, y))[0 if sig > 0 else 1]
            amp = np.outer(vx, vy.conj()) * dprime
            R_prime = float(traj.action(t))
            R_h0 = float(traj.action_h0(t))
            defect = R_prime - R_h0 - sig * traj.mu * float(traj.field_integral(t))
            E = traj.E0
            contribs.append(KernelContribution(
                kind, xi, traj, R_prime, nu, D, np.array([[dprime]]), amp, E,
                _chi_weight(chi, E), hbar,
                extra={"berry": G, "R_h0": R_h0, "action_defect": defect}))
    return _assemble(contribs, rejected, 2, "strong-coupling")


def action_relation_defect(traj: Trajectory) -> float:
    """R' - R -/+ mu int |B| dt along a strong-coupling trajectory."""
    sig = {"strong_plus": 1.0, "strong_minus": -1.0}[traj.kind]
    t = traj.T
    return float(traj.action(t) - traj.action_h0(t) - sig * traj.mu * traj.field_integral(t))


def _assemble(contribs, rejected, n, name) -> KernelResult:
    K = np.zeros((n, n), dtype=complex)
    for c in contribs:
        K += c.value
    if not contribs:
        log.warning("%s kernel: no contributing trajectories, leading order is zero", name)
    return KernelResult(K, contribs, rejected)


def mode_conversion_scan(traj: Trajectory, threshold: float = 1e-6,
                         per_step: int = 8) -> list:
    """Times at which |B(X(t))| has a local minimum below ``threshold``."""
    if threshold <= 0:
        return []
    ts = traj.ts
    grid = np.unique(np.concatenate([
        np.linspace(a, b, per_step, endpoint=False) for a, b in zip(ts[:-1], ts[1:])
    ] + [ts[-1:]]))

    def nb(t):
        return float(np.linalg.norm(eval_fields(traj.config, traj.X(t)).B))

    vals = np.array([nb(t) for t in grid])
    events = []
    for i in range(len(grid)):
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i + 1 < len(grid) else np.inf
        if not (vals[i] <= left and vals[i] <= right):
            continue
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, len(grid) - 1)]
        if b > a:
            # |B|^2 is smooth at a zero of B, |B| is not
            r = optimize.minimize_scalar(lambda s: nb(s) ** 2, bounds=(a, b),
                                         method="bounded", options={"xatol": 1e-13})
            tm, vm = float(r.x), nb(float(r.x))
            if vals[i] < vm:
                tm, vm = float(grid[i]), float(vals[i])
        else:
            tm, vm = float(grid[i]), float(vals[i])
        if vm < threshold and not any(abs(tm - e) < 1e-9 for e in events):
            events.append(tm)
    return events
