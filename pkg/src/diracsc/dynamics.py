"""Classical flows with action, stability matrix and spin bookkeeping.

The integrator advances a 53-component state: phase-space point (p, x), the
6x6 stability matrix J, the action along the flow, the SU(2) spinor of the
transport equation, a BMT spin vector and three scalar accumulators used by
the strong-coupling branch (H0 action, integral of |B|, Berry integrand).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from . import _pycore as layout
from ._backend import core
from .errors import ConjugatePointError, IntegrationError
from .fields import FieldConfig, ParticleParams, eval_fields

log = logging.getLogger(__name__)

HAMILTONIANS = {
    "plus": layout.HAM_PLUS,
    "minus": layout.HAM_MINUS,
    "pauli0": layout.HAM_PAULI0,
    "strong_plus": layout.HAM_STRONG_PLUS,
    "strong_minus": layout.HAM_STRONG_MINUS,
}
CONNECTIONS = {
    "plus": layout.CONN_PLUS,
    "minus": layout.CONN_MINUS,
    "pauli": layout.CONN_PAULI,
    "berry_term": layout.CONN_BERRY,
    "noname_term": layout.CONN_NONAME,
    "none": layout.CONN_NONE,
}
DEFAULT_SPIN = {"plus": "plus", "minus": "minus", "pauli0": "pauli",
                "strong_plus": "none", "strong_minus": "none"}
RELATIVISTIC = ("plus", "minus")

SV_THRESHOLD = 1e-8


@dataclass(frozen=True)
class Tolerances:
    """Integrator tolerances and derived invariant thresholds."""

    rtol: float = 1e-10
    atol: float = 1e-12
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.max_steps > 0):
            raise ValueError("tolerances must be positive")

    @property
    def tol_E(self) -> float:
        return 1e2 * max(self.rtol, self.atol)

    @property
    def tol_symp(self) -> float:
        return 1e2 * max(self.rtol, self.atol)


@dataclass(frozen=True)
class PhaseSpacePoint:
    p: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        x = np.asarray(self.x, dtype=float).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(x))):
            raise ValueError("phase-space point must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "x", x)

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.p, self.x])


def initial_state(p, x, s0=(0.0, 0.0, 1.0), u0=(1.0, 0.0, 0.0, 0.0)) -> np.ndarray:
    """Augmented initial state with J = 1, d = 1 and BMT spin s0."""
    y = np.zeros(layout.STATE_SIZE)
    y[0:3] = p
    y[3:6] = x
    y[6:42] = np.eye(6).ravel()
    y[43:47] = u0
    y[47:50] = s0
    return y


def _check_kind(kind: str) -> int:
    try:
        return HAMILTONIANS[kind]
    except KeyError:
        raise ValueError(f"unknown Hamiltonian kind {kind!r}") from None


def hamiltonian(params: ParticleParams, config: FieldConfig, kind: str, p, x,
                mu: float | None = None) -> float:
    """Value of the scalar Hamiltonian of ``kind`` at (p, x)."""
    return float(core.hamiltonian(_check_kind(kind), params.core_params(mu),
                                  config.arrays, np.asarray(p, float),
                                  np.asarray(x, float)))


class Trajectory:
    """Dense-output solution of the augmented flow on [0, T].

    Query methods accept scalar or array times and interpolate with the
    quartic Dormand-Prince dense output.
    """

    def __init__(self, params, config, kind, spin_kind, mu, y0, T, tol, ts, ys,
                 qs, nfev):
        self.params = params
        self.config = config
        self.kind = kind
        self.spin_kind = spin_kind
        self.mu = params.magneton if mu is None else float(mu)
        self.y0 = np.array(y0)
        self.T = float(T)
        self.tol = tol
        self.ts = ts
        self.ys = ys
        self.qs = qs
        self.nfev = nfev
        self.z0 = PhaseSpacePoint(y0[0:3], y0[3:6])
        self.E0 = hamiltonian(params, config, kind, y0[0:3], y0[3:6], self.mu)
        ys.setflags(write=False)
        ts.setflags(write=False)

    def __repr__(self):
        return (f"Trajectory(kind={self.kind!r}, T={self.T:g}, steps={len(self.ts) - 1},"
                f" E0={self.E0:.12g})")

    # -- interpolation
    def state(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        n = len(self.ts)
        if n == 1:
            out = np.repeat(self.ys[:1], t.size, axis=0)
            return out[0] if scalar else out
        sgn = 1.0 if self.T >= 0 else -1.0
        lo, hi = min(0.0, self.T), max(0.0, self.T)
        span = max(abs(self.T), 1.0)
        if np.any(t < lo - 1e-12 * span) or np.any(t > hi + 1e-12 * span):
            raise ValueError(f"time outside trajectory range [{lo}, {hi}]")
        idx = np.searchsorted(sgn * self.ts, sgn * t, side="right") - 1
        idx = np.clip(idx, 0, n - 2)
        t0 = self.ts[idx]
        h = self.ts[idx + 1] - t0
        th = (t - t0) / h
        powers = np.stack([th, th ** 2, th ** 3, th ** 4], axis=-1)
        out = self.ys[idx] + h[:, None] * np.einsum("nik,nk->ni", self.qs[idx], powers)
        return out[0] if scalar else out

    def P(self, t):
        return self.state(t)[..., 0:3]

    def X(self, t):
        return self.state(t)[..., 3:6]

    def J(self, t):
        return self.state(t)[..., 6:42].reshape(np.shape(t) + (6, 6))

    def action(self, t):
        """Accumulated principal function R(t) = int (p.xdot - H) dt."""
        return self.state(t)[..., layout.I_ACTION]

    def action_h0(self, t):
        """int (p.xdot - H0) dt along this path (H0 the Pauli principal symbol)."""
        return self.state(t)[..., layout.I_ACTION0]

    def field_integral(self, t):
        """int |B(X)| dt."""
        return self.state(t)[..., layout.I_BINT]

    def berry_integral(self, t):
        """int (b_x db_y - b_y db_x) / (1 + b_z) along the field direction b."""
        return self.state(t)[..., layout.I_BERRY]

    def d(self, t) -> np.ndarray:
        """SU(2) transport matrix built from the spinor column (alpha, beta)."""
        u = self.state(t)[..., 43:47]
        a = u[..., 0] + 1j * u[..., 1]
        b = u[..., 2] + 1j * u[..., 3]
        out = np.empty(np.shape(a) + (2, 2), dtype=complex)
        out[..., 0, 0] = a
        out[..., 0, 1] = -np.conj(b)
        out[..., 1, 0] = b
        out[..., 1, 1] = np.conj(a)
        return out

    def s(self, t) -> np.ndarray:
        """Independently integrated BMT spin vector."""
        return self.state(t)[..., 47:50]

    def derivative(self, t) -> np.ndarray:
        par = self.params.core_params(self.mu)
        st = np.atleast_2d(self.state(t))
        out = np.array([core.rhs(0.0, y, HAMILTONIANS[self.kind],
                                 CONNECTIONS[self.spin_kind], par,
                                 self.config.arrays) for y in st])
        return out[0] if np.ndim(t) == 0 else out

    def energy(self, t) -> np.ndarray:
        st = np.atleast_2d(self.state(t))
        out = np.array([hamiltonian(self.params, self.config, self.kind, y[0:3],
                                    y[3:6], self.mu) for y in st])
        return out[0] if np.ndim(t) == 0 else out

    # -- invariants
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy(self.ts) - self.E0)))

    def symplectic_defect(self) -> tuple[float, float]:
        """(max |det J - 1|, max ||J^T Omega J - Omega||) over stored steps."""
        Js = self.ys[:, 6:42].reshape(-1, 6, 6)
        Om = symplectic_form()
        dets = np.abs(np.linalg.det(Js) - 1.0)
        sym = np.linalg.norm(np.einsum("nji,jk,nkl->nil", Js, Om, Js) - Om,
                             axis=(1, 2))
        return float(dets.max()), float(sym.max())

    # -- conjugate points
    def _frame(self, t):
        J = self.J(np.atleast_1d(t))
        F = np.concatenate([J[:, 0:3, 0:3], J[:, 3:6, 0:3]], axis=1)
        Q, R = np.linalg.qr(F)
        sgn = np.sign(np.prod(np.diagonal(R, axis1=1, axis2=2), axis=1))
        W = Q[:, 3:6, :]
        return W, sgn

    def _detW(self, t):
        W, sgn = self._frame(t)
        return np.linalg.det(W) * sgn

    def _svmin(self, t):
        W, _ = self._frame(t)
        return np.linalg.svd(W, compute_uv=False)[:, -1]

    def multiplicity_at(self, t) -> int:
        W, _ = self._frame(t)
        return int(np.sum(np.linalg.svd(W[0], compute_uv=False) < SV_THRESHOLD))

    @cached_property
    def conjugate_points(self) -> tuple:
        """Conjugate times in (0, T] as ``((t, multiplicity), ...)``."""
        return find_conjugate_points(self)

    def morse_count(self, t=None) -> int:
        """Conjugate points (with multiplicity) strictly inside (0, t)."""
        t = self.T if t is None else t
        tol = 1e-9 * max(1.0, abs(self.T))
        return int(sum(m for tc, m in self.conjugate_points
                       if abs(tc) < abs(t) - tol))


def symplectic_form(n: int = 3) -> np.ndarray:
    """Canonical matrix Omega with dz/dt = Omega grad H for z = (p, x)."""
    Z = np.zeros((n, n))
    I = np.eye(n)
    return np.block([[Z, -I], [I, Z]])


def _bisect(f, a, b, fa, xtol):
    for _ in range(200):
        if abs(b - a) <= xtol:
            break
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (fa < 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def find_conjugate_points(traj: Trajectory, per_step: int = 8) -> tuple:
    """Locate zeros of det(dX/dxi) along a trajectory.

    Sign changes of the determinant of the orthonormalised position block are
    refined by bisection; local minima of its smallest singular value are
    refined by Brent's method to catch even multiplicities. Multiplicity is
    the number of singular values below 1e-8.
    """
    ts = traj.ts
    if len(ts) < 2:
        return ()
    frac = np.linspace(0.0, 1.0, per_step + 1)[:-1]
    grid = (ts[:-1, None] + np.diff(ts)[:, None] * frac[None, :]).ravel()
    grid = np.append(grid, ts[-1])
    # skip the trivially singular start
    t_first = ts[1] * 1e-3 if len(ts) > 1 else 0.0
    grid[0] = t_first
    grid = grid[np.abs(grid) >= abs(t_first)]
    det = traj._detW(grid)
    svm = traj._svmin(grid)
    found = []
    xtol = 1e-14 * max(1.0, abs(traj.T))
    for i in range(len(grid) - 1):
        a, b = grid[i], grid[i + 1]
        if det[i] == 0.0:
            found.append(a)
        elif det[i] * det[i + 1] < 0:
            found.append(_bisect(lambda t: traj._detW(t)[0], a, b, det[i], xtol))
    for i in range(1, len(grid) - 1):
        if svm[i] <= svm[i - 1] and svm[i] <= svm[i + 1] and svm[i] < 1e-2:
            lo, hi = sorted((grid[i - 1], grid[i + 1]))
            r = optimize.minimize_scalar(lambda t: traj._svmin(t)[0],
                                         bounds=(lo, hi), method="bounded",
                                         options={"xatol": xtol})
            if r.fun < SV_THRESHOLD:
                found.append(r.x)
    if svm[-1] < SV_THRESHOLD:
        found.append(grid[-1])
    found.sort(key=abs)
    merged = []
    for t in found:
        if merged and abs(t - merged[-1]) < 1e-7 * max(1.0, abs(traj.T)):
            continue
        merged.append(t)
    out = []
    for t in merged:
        m = traj.multiplicity_at(t)
        if m == 0:
            # sign change resolved to below the threshold resolution
            m = 1
        out.append((float(t), m))
    return tuple(out)


def flow(params: ParticleParams, config: FieldConfig, kind: str, z0, T: float,
         tol: Tolerances | None = None, spin: str | None = None,
         mu: float | None = None, s0=(0.0, 0.0, 1.0)) -> Trajectory:
    """Integrate the flow of the scalar Hamiltonian ``kind`` from z0 for time T.

    Parameters
    ----------
    kind : {"plus", "minus", "pauli0", "strong_plus", "strong_minus"}
    z0 : PhaseSpacePoint or 6-vector (p, x)
    spin : connection transported jointly (defaults to the natural one for
        ``kind``; ``"none"`` disables spin transport).
    mu : magnetic moment for the strong-coupling kinds (default e hbar / 2mc).

    Raises
    ------
    IntegrationError
        On step-size underflow or a non-finite state, with the failing time.
    """
    hk = _check_kind(kind)
    spin = DEFAULT_SPIN[kind] if spin is None else spin
    if spin not in CONNECTIONS:
        raise ValueError(f"unknown connection kind {spin!r}")
    if not math.isfinite(T):
        raise ValueError("T must be finite")
    tol = tol or Tolerances()
    if not isinstance(z0, PhaseSpacePoint):
        z = np.asarray(z0, dtype=float).reshape(6)
        z0 = PhaseSpacePoint(z[0:3], z[3:6])
    eval_fields(config, z0.x)
    s0 = np.asarray(s0, dtype=float)
    y0 = initial_state(z0.p, z0.x, s0)
    status, t_fail, ts, ys, qs, nfev = core.integrate(
        y0, float(T), hk, CONNECTIONS[spin], params.core_params(mu),
        config.arrays, tol.rtol, tol.atol, int(tol.max_steps), True)
    if status == layout.STATUS_UNDERFLOW:
        raise IntegrationError("step-size underflow", t_fail)
    if status == layout.STATUS_NONFINITE:
        raise IntegrationError("non-finite state", t_fail)
    if status == layout.STATUS_MAX_STEPS:
        raise IntegrationError(f"step limit {tol.max_steps} reached", t_fail)
    log.debug("flow %s T=%g: %d steps, %d evaluations", kind, T, len(ts) - 1, nfev)
    return Trajectory(params, config, kind, spin, mu, y0, T, tol, ts, ys, qs, nfev)


def free_guess(params: ParticleParams, kind: str, y, x, T) -> np.ndarray:
    """Momentum of the straight-line connection (field-free estimate)."""
    v = (np.asarray(x, float) - np.asarray(y, float)) / T
    if kind in RELATIVISTIC:
        beta2 = float(v @ v) / params.c ** 2
        if beta2 >= 1.0:
            v = v * (0.999 / math.sqrt(beta2))
            beta2 = 0.999 ** 2
        p = params.m * v / math.sqrt(1.0 - beta2)
        return -p if kind == "minus" else p
    return params.m * v


@dataclass(frozen=True)
class Connection:
    """A trajectory from y to x in time T with initial momentum xi."""

    xi: np.ndarray
    trajectory: Trajectory

    def __iter__(self):
        return iter((self.xi, self.trajectory))


def _shoot(params, config, kind, y, x, T, seed, tol, mu, spin):
    xi = np.array(seed, dtype=float)
    target = 1e-10 * (1.0 + np.linalg.norm(x))
    traj = flow(params, config, kind, np.concatenate([xi, y]), T, tol, spin, mu)
    F = traj.X(T) - x
    nF = np.linalg.norm(F)
    for it in range(50):
        if nF < target:
            return xi, traj
        Jx = traj.J(T)[3:6, 0:3]
        sv = np.linalg.svd(Jx, compute_uv=False)
        if sv[-1] < 1e-12 * max(sv[0], 1e-300):
            raise ConjugatePointError("singular Newton Jacobian (conjugate point)")
        step = np.linalg.solve(Jx, -F)
        lam = 1.0
        while True:
            cand = xi + lam * step
            try:
                ct = flow(params, config, kind, np.concatenate([cand, y]), T, tol,
                          spin, mu)
                cF = ct.X(T) - x
                cn = np.linalg.norm(cF)
            except IntegrationError:
                cn = np.inf
            if cn < nF or lam < 1e-4:
                break
            lam *= 0.5
        if not np.isfinite(cn):
            return None
        xi, traj, F, nF = cand, ct, cF, cn
    return (xi, traj) if nF < target else None


def connect(params: ParticleParams, config: FieldConfig, kind: str, y, x, T: float,
            seeds: Iterable | None = None, tol: Tolerances | None = None,
            mu: float | None = None, spin: str | None = None,
            include_free_guess: bool = True) -> list[Connection]:
    """Solve the two-point problem X(T; y, xi) = x by damped Newton shooting.

    Seeds that hit a conjugate point are logged and skipped; an empty list
    means no seed converged. Results are deduplicated and sorted
    lexicographically by initial momentum.
    """
    if T == 0:
        raise ValueError("T must be nonzero")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    seeds = [np.asarray(s, dtype=float) for s in (seeds or [])]
    if include_free_guess:
        seeds.append(free_guess(params, kind, y, x, T))
    if not seeds:
        raise ValueError("at least one seed is required")
    sols: list[Connection] = []
    for seed in seeds:
        try:
            res = _shoot(params, config, kind, y, x, T, seed, tol, mu, spin)
        except ConjugatePointError:
            log.warning("seed %s: degenerate (conjugate point), skipped", seed.tolist())
            continue
        except IntegrationError as exc:
            log.info("seed %s: integration failed (%s)", seed.tolist(), exc)
            continue
        if res is None:
            log.debug("seed %s did not converge", seed.tolist())
            continue
        xi, traj = res
        if any(np.linalg.norm(xi - s.xi) < 1e-6 * (1 + np.linalg.norm(xi)) for s in sols):
            continue
        sols.append(Connection(xi, traj))
    sols.sort(key=lambda s: tuple(s.xi))
    return sols


def vanvleck(traj: Trajectory) -> float:
    """D = |det dX(T)/dxi|^(-1/2).

    Raises
    ------
    ConjugatePointError
        If the position block of J(T) is singular.
    """
    Jx = traj.J(traj.T)[3:6, 0:3]
    sv = np.linalg.svd(Jx, compute_uv=False)
    scale = max(1.0, abs(traj.T) / traj.params.m)
    if sv[-1] < SV_THRESHOLD * scale:
        raise ConjugatePointError(f"dX/dxi singular at T={traj.T:g}")
    return float(abs(np.linalg.det(Jx)) ** -0.5)


def morse_index(traj: Trajectory) -> int:
    """Number of conjugate points with multiplicity on (0, T).

    Raises
    ------
    ConjugatePointError
        If T itself is a conjugate time.
    """
    tol = 1e-9 * max(1.0, abs(traj.T))
    for t, m in traj.conjugate_points:
        if abs(t - traj.T) <= tol:
            raise ConjugatePointError(f"conjugate point at the endpoint t={t:g}")
    return traj.morse_count()


def phase_space_scale(points: Sequence[np.ndarray]) -> float:
    return max(1.0, max(float(np.linalg.norm(p)) for p in points))
