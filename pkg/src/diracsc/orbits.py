"""Periodic orbits on an energy shell.

Newton shooting on (z0, T), reduced (transverse) monodromy, Maslov index from
conjugate points, spin transport once around the orbit and the orbit
amplitude entering the trace formula.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .dynamics import (PhaseSpacePoint, Tolerances, Trajectory,
                       flow, hamiltonian, symplectic_form)
from .errors import ConvergenceError, DegenerateOrbitError, IntegrationError
from .fields import FieldConfig, ParticleParams, eval_fields
from .spin import eta_phase

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-5


@dataclass(frozen=True)
class PeriodicOrbit:
    """Periodic orbit data on the shell H = E."""

    kind: str
    E: float
    T: float
    T_primitive: float
    k: int
    S: float
    z0: np.ndarray
    monodromy_full: np.ndarray
    monodromy: np.ndarray
    maslov: int
    theta: float
    eta: float
    spin_weight: float
    spin_trace: float
    degenerate: bool
    seed: tuple = ()
    tol: Tolerances = field(default_factory=Tolerances)

    @property
    def point(self) -> PhaseSpacePoint:
        return PhaseSpacePoint(self.z0[0:3], self.z0[3:6])

    def det_M_minus_1(self) -> float:
        return float(np.linalg.det(self.monodromy - np.eye(4)))

    def to_record(self) -> dict:
        """Plain dict for the orbit database."""
        return {
            "kind": self.kind, "E": self.E, "T": self.T,
            "T_primitive": self.T_primitive, "k": self.k, "S": self.S,
            "z0": [float(v) for v in self.z0],
            "monodromy": [[float(v) for v in row] for row in self.monodromy],
            "monodromy_full": [[float(v) for v in row] for row in self.monodromy_full],
            "maslov": self.maslov, "theta": self.theta, "eta": self.eta,
            "spin_weight": self.spin_weight, "degenerate": self.degenerate,
            "seed": [float(v) for v in self.seed],
            "rtol": self.tol.rtol, "atol": self.tol.atol,
        }


def symplectic_basis(vectors: np.ndarray, omega: np.ndarray | None = None) -> np.ndarray:
    """Symplectic Gram-Schmidt of the columns of ``vectors`` (2n of them).

    Returns columns ordered (e_1..e_n, f_1..f_n) with omega(e_i, f_j) = delta_ij.
    """
    Om = symplectic_form() if omega is None else omega
    w = lambda a, b: float(a @ Om @ b)
    rest = [v.copy() for v in vectors.T]
    es, fs = [], []
    while rest:
        e = rest.pop(0)
        vals = [abs(w(e, v)) for v in rest]
        if not vals or max(vals) < 1e-14:
            raise ValueError("subspace is not symplectic")
        j = int(np.argmax(vals))
        f = rest.pop(j)
        f = f / w(e, f)
        rest = [v - w(v, f) * e + w(v, e) * f for v in rest]
        es.append(e)
        fs.append(f)
    return np.column_stack(es + fs)


def reduced_monodromy(J: np.ndarray, grad_H: np.ndarray) -> np.ndarray:
    """Restrict the 6x6 return map to the complement of span{flow, grad H}.

    With f = Omega grad H the symplectic complement of span{f, grad H} is
    their Euclidean orthogonal complement. The 4x4 matrix is expressed in a
    symplectic basis of that space via omega-pairings, which discard any
    component along f.
    """
    Om = symplectic_form()
    f = Om @ grad_H
    Q, _ = np.linalg.qr(np.column_stack([f, grad_H]), mode="complete")
    basis = symplectic_basis(Q[:, 2:])
    n = basis.shape[1] // 2
    e, fb = basis[:, :n], basis[:, n:]
    img = J @ basis
    # coordinates: a_i = omega(w, f_i), b_i = -omega(w, e_i)
    a = fb.T @ Om.T @ img
    b = -(e.T @ Om.T @ img)
    return np.vstack([a, b])


def _grad_H(traj: Trajectory, t) -> np.ndarray:
    dz = traj.derivative(t)[0:6]
    # zdot = (-H_x, H_p) -> grad H = (H_p, H_x)
    return np.concatenate([dz[3:6], -dz[0:3]])


def project_to_shell(params, config, kind, E, z, mu=None) -> np.ndarray:
    """Rescale the kinetic momentum so that H(p, x) = E."""
    z = np.asarray(z, dtype=float).copy()
    x = z[3:6]
    A = eval_fields(config, x).A
    shift = (params.e / params.c) * A
    pi = z[0:3] - shift
    npi = np.linalg.norm(pi)
    if npi == 0:
        raise ConvergenceError("seed has zero kinetic momentum; direction undefined")
    u = pi / npi
    f = lambda lam: hamiltonian(params, config, kind, shift + lam * u, x, mu) - E
    lo, hi = 0.0, max(npi, 1e-3)
    s0 = np.sign(f(lo))
    for _ in range(200):
        if np.sign(f(hi)) != s0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"energy {E} not reachable from seed position")
    lam = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15)
    z[0:3] = shift + lam * u
    return z


def _orbit_data(params, config, kind, E, z0, T, tol, mu, seed) -> PeriodicOrbit:
    traj = flow(params, config, kind, z0, T, tol, mu=mu)
    J = traj.J(T)
    M = reduced_monodromy(J, _grad_H(traj, 0.0))
    S = float(traj.action(T)) + traj.E0 * T
    maslov = int(sum(m for t, m in traj.conjugate_points))
    eig = np.linalg.eigvals(M)
    degenerate = bool(np.any(np.abs(eig - 1.0) < DEGENERACY_TOL))
    spin = traj.spin_kind
    theta = eta = 0.0
    d = traj.d(T)
    trace = float(np.trace(d).real)
    if spin != "none":
        ev = eta_phase(traj).evaluate(T)
        s = traj.s(T)
        theta = math.acos(max(-1.0, min(1.0, s[2] / np.linalg.norm(s))))
        eta = float(ev["eta"])
        weight = 2.0 * math.cos(theta / 2) * math.cos(eta)
    else:
        weight = trace
    k = primitive_count(traj, tol)
    return PeriodicOrbit(kind=kind, E=float(traj.E0), T=float(T),
                         T_primitive=float(T) / k, k=k, S=S,
                         z0=np.array(z0, dtype=float), monodromy_full=J,
                         monodromy=M, maslov=maslov, theta=theta, eta=eta,
                         spin_weight=weight, spin_trace=trace,
                         degenerate=degenerate, seed=tuple(seed), tol=tol)


def primitive_count(traj: Trajectory, tol: Tolerances | None = None,
                    kmax: int = 16) -> int:
    """Largest k with z(T/k) = z(0) within the closure tolerance."""
    z0 = traj.y0[0:6]
    scale = max(1.0, float(np.linalg.norm(z0)))
    close = 1e-6 * scale
    for k in range(kmax, 1, -1):
        if np.linalg.norm(traj.state(traj.T / k)[0:6] - z0) < close:
            return k
    return 1


def find_periodic(params: ParticleParams, config: FieldConfig, kind: str, E: float,
                  seed, T_guess: float, tol: Tolerances | None = None,
                  mu: float | None = None, max_iter: int = 50) -> PeriodicOrbit:
    """Newton search for a periodic orbit on H = E near ``seed``.

    Unknowns (z0, T); residuals z(T) - z0, H(z0) - E and the phase condition
    f_ref.(z0 - z_ref) = 0. Solved in least squares with step halving.

    Raises
    ------
    ConvergenceError
        If the iteration does not converge within ``max_iter`` steps.
    """
    tol = tol or Tolerances()
    seed = np.asarray(seed.z if isinstance(seed, PhaseSpacePoint) else seed, dtype=float)
    z = project_to_shell(params, config, kind, E, seed, mu)
    T = float(T_guess)
    scale = max(1.0, float(np.linalg.norm(z)))
    tol_close = 1e-9 * scale
    tol_E = 1e-10 * max(1.0, abs(E))
    # keep away from the trivial solution T -> 0
    T_min = 1e-2 * T

    def residual(z, T, z_ref, f_ref):
        tr = flow(params, config, kind, z, T, tol, spin="none", mu=mu)
        zT = tr.state(T)[0:6]
        H = hamiltonian(params, config, kind, z[0:3], z[3:6], mu)
        F = np.concatenate([zT - z, [H - E], [f_ref @ (z - z_ref)]])
        return F, tr

    z_ref = z.copy()
    tr0 = flow(params, config, kind, z, 0.0, tol, spin="none", mu=mu)
    f_ref = tr0.derivative(0.0)[0:6]
    try:
        F, tr = residual(z, T, z_ref, f_ref)
    except IntegrationError as exc:
        raise ConvergenceError(f"seed integration failed: {exc}") from exc
    nF = np.linalg.norm(F)
    for it in range(max_iter):
        if np.linalg.norm(F[:6]) < tol_close and abs(F[6]) < tol_E:
            log.info("periodic orbit converged in %d iterations: T=%.12g", it, T)
            return _orbit_data(params, config, kind, E, z, T, tol, mu, seed)
        J = tr.J(T)
        fT = tr.derivative(T)[0:6]
        gH = _grad_H(tr, 0.0)
        Jac = np.zeros((8, 7))
        Jac[0:6, 0:6] = J - np.eye(6)
        Jac[0:6, 6] = fT
        Jac[6, 0:6] = gH
        Jac[7, 0:6] = f_ref
        delta = np.linalg.lstsq(Jac, -F, rcond=1e-12)[0]
        lam = 1.0
        while True:
            zc = z + lam * delta[:6]
            Tc = T + lam * delta[6]
            try:
                Fc, trc = residual(zc, Tc, z_ref, f_ref) if Tc > T_min else (None, None)
            except IntegrationError:
                Fc = None
            if Fc is not None and np.linalg.norm(Fc) < nF:
                break
            lam *= 0.5
            if lam < 1e-6:
                raise ConvergenceError(f"Newton stalled at iteration {it}, |F|={nF:.3e}")
        z, T, F, tr, nF = zc, Tc, Fc, trc, np.linalg.norm(Fc)
    raise ConvergenceError(f"no convergence in {max_iter} iterations, |F|={nF:.3e}")


def orbit_from_point(params, config, kind, z0, T, tol=None, mu=None) -> PeriodicOrbit:
    """Orbit data for a known periodic point (no Newton refinement)."""
    return _orbit_data(params, config, kind, None, np.asarray(z0, float), float(T),
                       tol or Tolerances(), mu, ())


def repeat(orbit: PeriodicOrbit, k: int, params: ParticleParams,
           config: FieldConfig, mu: float | None = None) -> PeriodicOrbit:
    """The k-fold traversal of ``orbit``, recomputing all data."""
    return _orbit_data(params, config, orbit.kind, orbit.E, orbit.z0, k * orbit.T,
                       orbit.tol, mu, orbit.seed)


def primitive_decompose(orbit: PeriodicOrbit, params: ParticleParams,
                        config: FieldConfig, mu: float | None = None):
    """Return ``(primitive orbit, k)``; ``k = 1`` returns the orbit itself."""
    if orbit.k == 1:
        return orbit, 1
    prim = _orbit_data(params, config, orbit.kind, orbit.E, orbit.z0,
                       orbit.T_primitive, orbit.tol, mu, orbit.seed)
    return prim, orbit.k


def orbit_amplitude(orbit: PeriodicOrbit) -> complex:
    """A = 2 T# cos(theta/2) cos(eta) |det(M - 1)|^(-1/2) exp(-i pi mu / 2).

    Raises
    ------
    DegenerateOrbitError
        If the orbit is flagged degenerate or det(M - 1) vanishes.
    """
    det = abs(orbit.det_M_minus_1())
    if orbit.degenerate or det < 1e-10:
        raise DegenerateOrbitError(
            f"orbit T={orbit.T:g} is not isolated (|det(M-1)|={det:.3e})")
    return complex(orbit.T_primitive * orbit.spin_weight / math.sqrt(det)
                   * np.exp(-0.5j * math.pi * orbit.maslov))


def _loop_distance(points: np.ndarray, traj: Trajectory, samples: np.ndarray,
                   loop: np.ndarray) -> float:
    """Largest distance from ``points`` to the continuous loop of ``traj``."""
    worst = 0.0
    dt = traj.T / len(samples)
    for q in points:
        j = int(np.argmin(np.linalg.norm(loop - q, axis=1)))
        t0 = samples[j]
        r = optimize.minimize_scalar(
            lambda t: float(np.linalg.norm(traj.state(t % traj.T)[0:6] - q)),
            bounds=(t0 - dt, t0 + dt), method="bounded", options={"xatol": 1e-12})
        worst = max(worst, float(r.fun))
    return worst


def deduplicate(orbits, params: ParticleParams, config: FieldConfig,
                samples: int = 32, mu: float | None = None) -> list[PeriodicOrbit]:
    """Drop orbits whose loops lie within 1e-6*scale of a kept one (Hausdorff).

    Results are sorted by (T, S).
    """
    kept = []
    for orb in sorted(orbits, key=lambda o: (o.T, o.S)):
        tr = flow(params, config, orb.kind, orb.z0, orb.T, orb.tol, spin="none", mu=mu)
        ts = np.linspace(0, orb.T, samples, endpoint=False)
        loop = tr.state(ts)[:, 0:6]
        scale = max(1.0, float(np.max(np.abs(loop))))
        dup = False
        for other, otr, ots, oloop in kept:
            if other.kind != orb.kind or abs(other.T - orb.T) > 1e-6 * max(1.0, orb.T):
                continue
            haus = max(_loop_distance(loop, otr, ots, oloop),
                       _loop_distance(oloop, tr, ts, loop))
            if haus < 1e-6 * scale:
                dup = True
                break
        if not dup:
            kept.append((orb, tr, ts, loop))
    return [k[0] for k in kept]
