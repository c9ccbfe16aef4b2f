"""Spin transport along classical trajectories.

Connections M = R.sigma/2 for the positive and negative energy branches, the
nonrelativistic limit, and the Berry / no-name split of the positive branch;
SU(2) transport d' = -i M d; the classical BMT spin; the Hopf projection; and
the Wu-Yang two-chart integration of the fibre phase eta, from which d can be
rebuilt using classical data alone.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from . import _pycore
from .dynamics import CONNECTIONS, Trajectory, flow
from .errors import ToleranceError
from .fields import (ALPHA, BETA, SIGMA, FieldConfig, ParticleParams,
                     eval_fields, sigma_dot, symbol_dirac)

log = logging.getLogger(__name__)

CONNECTION_KINDS = ("plus", "minus", "pauli", "berry_term", "noname_term")
THETA_LO = math.radians(70.0)
THETA_HI = math.radians(110.0)


# ---------------------------------------------------------------- connections

@dataclass(frozen=True)
class ConnectionValue:
    """Traceless hermitian connection coefficient M and its vector R (M = R.sigma/2)."""

    M: np.ndarray
    R: np.ndarray


def precession_vector(kind: str, params: ParticleParams, config: FieldConfig, p, x) -> np.ndarray:
    rec = eval_fields(config, x)
    pi = np.asarray(p, dtype=float) - (params.e / params.c) * rec.A
    return _pycore.spin_axis(CONNECTIONS[kind], params.core_params(), pi, rec.E, rec.B)


def connection(kind: str, params: ParticleParams, config: FieldConfig, p, x) -> ConnectionValue:
    """Connection coefficient of ``kind`` at (p, x).

    ``kind`` is one of ``plus``, ``minus``, ``pauli``, ``berry_term`` and
    ``noname_term``; the latter is M_plus - M_berry.
    """
    if kind not in CONNECTION_KINDS:
        raise ValueError(f"unknown connection kind {kind!r}")
    R = precession_vector(kind, params, config, p, x)
    return ConnectionValue(M=0.5 * sigma_dot(R), R=R)


# ---------------------------------------------------------------- Poisson bracket

@dataclass(frozen=True)
class MatrixField:
    """Matrix-valued phase-space function with optional analytic gradients.

    ``grad(p, x)`` returns ``(dp, dx)`` with ``dp[i] = dA/dp_i`` and
    ``dx[i] = dA/dx_i``.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable | None = None


def matrix_poisson_bracket(A: MatrixField, B: MatrixField, p, x,
                           mode: str = "analytic", h: float = 1e-5) -> np.ndarray:
    """Ordering-preserving Poisson bracket sum_i (d_pi A d_xi B - d_xi A d_pi B).

    Parameters
    ----------
    mode : {"analytic", "finite-difference"}
        Analytic mode needs ``grad`` on both fields; finite differences use
        central steps of size ``h`` scaled by the point magnitude.
    """
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if mode == "analytic":
        if A.grad is None or B.grad is None:
            raise ValueError("analytic mode requires gradients on both fields")
        dpA, dxA = A.grad(p, x)
        dpB, dxB = B.grad(p, x)
    elif mode == "finite-difference":
        dpA, dxA = _fd_grad(A.value, p, x, h)
        dpB, dxB = _fd_grad(B.value, p, x, h)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return sum(dpA[i] @ dxB[i] - dxA[i] @ dpB[i] for i in range(3))


def _fd_grad(f, p, x, h):
    scale = max(1.0, float(np.max(np.abs(np.concatenate([p, x])))))
    hh = h * scale
    if hh <= 1e3 * np.finfo(float).eps * scale:
        raise ToleranceError(f"finite-difference step {hh:g} underflows")
    dp, dx = [], []
    for i in range(3):
        e = np.zeros(3)
        e[i] = hh
        dp.append((f(p + e, x) - f(p - e, x)) / (2 * hh))
        dx.append((f(p, x + e) - f(p, x - e)) / (2 * hh))
    return np.array(dp), np.array(dx)


def _kin(params, config, p, x):
    rec = eval_fields(config, x)
    m, e, c = params.m, params.e, params.c
    pi = np.asarray(p, dtype=float) - (e / c) * rec.A
    eps = math.sqrt(c * c * float(pi @ pi) + m * m * c ** 4)
    N = c * np.einsum("i,ijk->jk", pi.astype(complex), ALPHA) + m * c * c * BETA
    Dpi = -(e / c) * rec.dA.T   # Dpi[k, j] = d pi_k / d x_j
    return pi, eps, N, Dpi


def projector_field(params: ParticleParams, config: FieldConfig) -> MatrixField:
    """P_plus(p, x) = (1 + (c alpha.pi + beta m c^2) / eps) / 2 with gradients."""
    c = params.c

    def value(p, x):
        _, eps, N, _ = _kin(params, config, p, x)
        return 0.5 * (np.eye(4) + N / eps)

    def grad(p, x):
        pi, eps, N, Dpi = _kin(params, config, p, x)
        dpi = np.array([0.5 * (c * ALPHA[k] / eps - N * c * c * pi[k] / eps ** 3)
                        for k in range(3)])
        return dpi, np.einsum("kab,kj->jab", dpi, Dpi)

    return MatrixField(value, grad)


def shifted_symbol_field(params: ParticleParams, config: FieldConfig) -> MatrixField:
    """H_D - H_plus 1 (independent of phi) with gradients."""
    c = params.c

    def value(p, x):
        _, eps, N, _ = _kin(params, config, p, x)
        return N - eps * np.eye(4)

    def grad(p, x):
        pi, eps, N, Dpi = _kin(params, config, p, x)
        dpi = np.array([c * ALPHA[k] - (c * c * pi[k] / eps) * np.eye(4)
                        for k in range(3)])
        return dpi, np.einsum("kab,kj->jab", dpi, Dpi)

    return MatrixField(value, grad)


def noname_from_bracket(params: ParticleParams, config: FieldConfig, p, x,
                        mode: str = "analytic", h: float = 1e-5) -> np.ndarray:
    """M_C = -(i/2) V^dagger {P_plus, H_D - H_plus} V via the matrix bracket."""
    V = symbol_dirac(params, config, p, x).V
    br = matrix_poisson_bracket(projector_field(params, config),
                                shifted_symbol_field(params, config), p, x, mode, h)
    return -0.5j * V.conj().T @ br @ V


# ---------------------------------------------------------------- SU(2) helpers

def _check_su2(d, tol=1e-8):
    d = np.asarray(d, dtype=complex)
    if d.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    if np.linalg.norm(d.conj().T @ d - np.eye(2)) > tol or abs(np.linalg.det(d) - 1) > tol:
        raise ValueError("matrix is not in SU(2)")
    return d


def hopf(d) -> np.ndarray:
    """Hopf map of the first column (alpha, beta) of d onto the unit sphere."""
    d = _check_su2(d)
    a, b = d[0, 0], d[1, 0]
    ab = np.conj(a) * b
    return np.array([2 * ab.real, 2 * ab.imag, abs(a) ** 2 - abs(b) ** 2])


def hopf_columns(d: np.ndarray) -> np.ndarray:
    """Vectorised Hopf map for stacked matrices (no unitarity check)."""
    a, b = d[..., 0, 0], d[..., 1, 0]
    ab = np.conj(a) * b
    return np.stack([2 * ab.real, 2 * ab.imag, np.abs(a) ** 2 - np.abs(b) ** 2], axis=-1)


def reconstruct_d(theta, phi, eta) -> np.ndarray:
    """SU(2) matrix from spherical angles of s and the fibre phase eta."""
    c = np.cos(np.asarray(theta) / 2)
    s = np.sin(np.asarray(theta) / 2)
    out = np.empty(np.shape(c) + (2, 2), dtype=complex)
    out[..., 0, 0] = c * np.exp(1j * eta)
    out[..., 0, 1] = -s * np.exp(-1j * (np.asarray(eta) + phi))
    out[..., 1, 0] = s * np.exp(1j * (np.asarray(eta) + phi))
    out[..., 1, 1] = c * np.exp(-1j * np.asarray(eta))
    return out


def spin_operator(d) -> np.ndarray:
    """Sigma = d^dagger sigma d, returned as an array of shape (3, 2, 2)."""
    d = _check_su2(d)
    return np.array([d.conj().T @ s @ d for s in SIGMA])


def repetition_trace(d_primitive, k: int) -> float:
    """Trace of the k-th power of an SU(2) holonomy (equals 2 cos(k chi))."""
    if k < 1:
        raise ValueError("k must be >= 1")
    d = _check_su2(d_primitive)
    return float(np.trace(np.linalg.matrix_power(d, int(k))).real)


# ---------------------------------------------------------------- transport

class SpinTransport:
    """SU(2) transport d(t) along a trajectory for one connection kind."""

    def __init__(self, traj: Trajectory, kind: str):
        self.trajectory = traj
        self.kind = kind

    def d(self, t):
        return self.trajectory.d(t)

    def s(self, t):
        """Hopf image of d(t) applied to the initial spinor (1, 0)."""
        return hopf_columns(self.d(t))

    def unitarity_defect(self, t=None) -> tuple[float, float]:
        t = self.trajectory.ts if t is None else np.atleast_1d(t)
        d = self.d(t)
        eye = np.eye(2)
        u = np.linalg.norm(np.conj(np.swapaxes(d, -1, -2)) @ d - eye, axis=(-2, -1))
        det = np.abs(np.linalg.det(d) - 1.0)
        return float(u.max()), float(det.max())


def _retarget(traj: Trajectory, spin: str, s0=(0.0, 0.0, 1.0)) -> Trajectory:
    if traj.spin_kind == spin and np.allclose(traj.y0[47:50], s0, atol=0, rtol=0):
        return traj
    return flow(traj.params, traj.config, traj.kind, traj.z0, traj.T, traj.tol,
                spin=spin, mu=traj.mu, s0=s0)


def transport_spin(traj: Trajectory, kind: str, check: float = 1e-8) -> SpinTransport:
    """Solve d' = -i M(t) d, d(0) = 1, along ``traj``.

    Raises
    ------
    ToleranceError
        If unitarity drifts beyond ``check`` at a stored step.
    """
    if kind not in CONNECTION_KINDS:
        raise ValueError(f"unknown connection kind {kind!r}")
    tr = SpinTransport(_retarget(traj, kind), kind)
    du, dd = tr.unitarity_defect()
    if max(du, dd) > check:
        raise ToleranceError(f"SU(2) drift {max(du, dd):.3e} exceeds {check:g}")
    return tr


class BMTPath:
    """Classical spin vector s(t) integrated from ds/dt = R x s."""

    def __init__(self, traj: Trajectory):
        self.trajectory = traj

    def s(self, t):
        return self.trajectory.s(t)

    def norm_drift(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.trajectory.ys[:, 47:50], axis=1) - 1)))


def bmt(traj: Trajectory, s0, kind: str, check: float = 1e-8) -> BMTPath:
    """Classical precession along ``traj`` for the connection ``kind``."""
    s0 = np.asarray(s0, dtype=float)
    if abs(np.linalg.norm(s0) - 1.0) > 1e-12:
        raise ValueError("s0 must be a unit vector")
    path = BMTPath(_retarget(traj, kind, s0))
    drift = path.norm_drift()
    if drift > check:
        raise ToleranceError(f"|s| drift {drift:.3e} exceeds {check:g}")
    return path


# ---------------------------------------------------------------- eta phase

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


class EtaPath:
    """Fibre phase along a path with Wu-Yang chart switching.

    Stores the chart variable (eta on the northern chart, lambda on the
    southern one) and the dynamical integral at every breakpoint; queries
    integrate from the nearest breakpoint with Gauss-Legendre quadrature.
    """

    def __init__(self, R, s, breaks, theta_lo, theta_hi):
        self._R = R
        self._s = s
        self.theta_lo = theta_lo
        self.theta_hi = theta_hi
        self.times = []
        self.charts = []
        self.chi = []
        self.dyn = []
        self.phi = []
        self.switches = []
        self._build(np.asarray(breaks, dtype=float))

    # integrands
    def _rates(self, t):
        t = np.atleast_1d(t)
        s = self._s(t)
        R = self._R(t)
        sd = np.cross(R, s)
        rs = np.einsum("ij,ij->i", R, s)
        w = s[:, 0] * sd[:, 1] - s[:, 1] * sd[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            return -0.5 * rs, -0.5 * w / (1.0 + s[:, 2]), 0.5 * w / (1.0 - s[:, 2])

    def _integrate(self, a, b, chart):
        if b == a:
            return 0.0, 0.0
        t = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        dyn, gn, gs = self._rates(t)
        geo = gn if chart == "N" else gs
        half = 0.5 * (b - a)
        return half * float(_GL_W @ dyn), half * float(_GL_W @ geo)

    def _azimuth(self, t, ref):
        s = self._s(np.atleast_1d(t))[0]
        if s[0] * s[0] + s[1] * s[1] < 1e-24:
            return ref
        return ref + _wrap(math.atan2(s[1], s[0]) - ref)

    def _append(self, t, chart, chi, dyn, phi):
        self.times.append(float(t))
        self.charts.append(chart)
        self.chi.append(chi)
        self.dyn.append(dyn)
        self.phi.append(phi)

    def _build(self, breaks):
        s0 = self._s(np.atleast_1d(breaks[0]))[0]
        if np.linalg.norm(s0 - np.array([0.0, 0.0, 1.0])) > 1e-8:
            raise ValueError("eta phase requires s(0) at the north pole")
        cos_hi, cos_lo = math.cos(self.theta_hi), math.cos(self.theta_lo)
        chart, chi, dyn, phi = "N", 0.0, 0.0, 0.0
        self._append(breaks[0], chart, chi, dyn, phi)
        for a, b in zip(breaks[:-1], breaks[1:]):
            cur = a
            while True:
                thr = cos_hi if chart == "N" else cos_lo
                sign = 1.0 if chart == "N" else -1.0   # crossing when sign*(sz - thr) < 0

                def g(t):
                    return sign * (self._s(np.atleast_1d(t))[0, 2] - thr)
                probe = np.linspace(cur, b, 9)[1:]
                vals = sign * (self._s(probe)[:, 2] - thr)
                hit = np.nonzero(vals < 0)[0]
                if hit.size == 0:
                    dd, dg = self._integrate(cur, b, chart)
                    chi += dd + dg
                    dyn += dd
                    phi = self._azimuth(b, phi)
                    if b != breaks[-1]:
                        self._append(b, chart, chi, dyn, phi)
                    break
                j = hit[0]
                lo = cur if j == 0 else probe[j - 1]
                if g(lo) <= 0:
                    tsw = lo
                else:
                    tsw = optimize.brentq(g, lo, probe[j], xtol=1e-15, rtol=1e-15)
                dd, dg = self._integrate(cur, tsw, chart)
                chi += dd + dg
                dyn += dd
                phi = self._azimuth(tsw, phi)
                # hand-over: lambda = phi + eta, eta = lambda - phi
                chi = chi + phi if chart == "N" else chi - phi
                chart = "S" if chart == "N" else "N"
                self.switches.append((float(tsw), chart))
                self._append(tsw, chart, chi, dyn, phi)
                cur = tsw
        self._append(breaks[-1], chart, chi, dyn, phi)
        self.times = np.array(self.times)

    def _locate(self, t):
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        return min(max(i, 0), len(self.times) - 1)

    def evaluate(self, t) -> dict:
        """Chart, eta, chart variable, dynamical and geometric parts at time t."""
        i = self._locate(t)
        chart = self.charts[i]
        dd, dg = self._integrate(self.times[i], float(t), chart)
        chi = self.chi[i] + dd + dg
        dyn = self.dyn[i] + dd
        phi = self._azimuth(t, self.phi[i])
        eta = chi if chart == "N" else chi - phi
        return {"chart": chart, "eta": eta, "lambda": chi if chart == "S" else None,
                "dynamical": dyn, "geometric": eta - dyn, "phi": phi}

    def eta(self, t) -> float:
        return self.evaluate(t)["eta"]

    def reconstruct(self, t) -> np.ndarray:
        """d(t) rebuilt from (theta, phi, eta)."""
        ev = self.evaluate(t)
        s = self._s(np.atleast_1d(t))[0]
        theta = math.acos(max(-1.0, min(1.0, s[2] / np.linalg.norm(s))))
        return reconstruct_d(theta, ev["phi"], ev["eta"])


def eta_phase(traj: Trajectory | None = None, R: Callable | None = None,
              s: Callable | None = None, T: float | None = None,
              thresholds: tuple = (THETA_LO, THETA_HI), segments: int = 256,
              kind: str | None = None) -> EtaPath:
    """Integrate the fibre phase eta with chart switching.

    Either pass a trajectory (R is evaluated from its fields and the spin
    kind it was transported with, s is its BMT spin) or explicit callables
    ``R(t)`` and ``s(t)`` returning arrays of shape ``(n, 3)`` together with
    ``T``. ``thresholds = (theta_lo, theta_hi)`` in radians.
    """
    lo, hi = thresholds
    if not lo < hi:
        raise ValueError("theta_lo must be below theta_hi")
    if traj is not None:
        kind = kind or traj.spin_kind
        if kind == "none":
            raise ValueError("trajectory carries no spin transport")
        tr = _retarget(traj, kind)
        ck = CONNECTIONS[kind]
        par = tr.params.core_params(tr.mu)
        e, c = tr.params.e, tr.params.c

        def R(t):
            st = np.atleast_2d(tr.state(np.atleast_1d(t)))
            out = np.empty((len(st), 3))
            for n, y in enumerate(st):
                rec = eval_fields(tr.config, y[3:6])
                out[n] = _pycore.spin_axis(ck, par, y[0:3] - (e / c) * rec.A, rec.E, rec.B)
            return out

        def s(t):
            return np.atleast_2d(tr.s(np.atleast_1d(t)))

        breaks = tr.ts
    else:
        if R is None or s is None or T is None:
            raise ValueError("provide a trajectory or R, s and T")
        breaks = np.linspace(0.0, T, segments + 1)
    return EtaPath(R, s, breaks, lo, hi)
