"""Nonrelativistic and strong-coupling limits side by side.

Pauli fibre phase eta_P, c-sweeps comparing relativistic and Pauli spin
transport, and adiabatic (Berry) phases of the strong-coupling branches.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import _pycore
from .dynamics import Tolerances, Trajectory, connect, flow
from .errors import ModeConversionError
from .fields import FieldConfig, ParticleParams, eval_fields, symbol_dirac
from .spin import EtaPath, eta_phase

log = logging.getLogger(__name__)


def eta_phase_pauli(traj: Trajectory, s: Callable | None = None, **kw) -> EtaPath:
    """eta_P along a Pauli trajectory.

    The dynamical part is (e/2mc) int B.s dt and the geometric part is the
    monopole term of the spin path. ``s`` overrides the transported spin
    with a prescribed path s(t) (arrays of shape (n, 3)); it must start at
    the north pole.
    """
    if s is None:
        return eta_phase(traj, kind="pauli", **kw)
    e, m, c = traj.params.e, traj.params.m, traj.params.c

    def R(t):
        X = np.atleast_2d(traj.X(np.atleast_1d(t)))
        return np.array([-(e / (m * c)) * eval_fields(traj.config, xi).B for xi in X])

    return eta_phase(R=R, s=s, T=traj.T, **kw)


# ------------------------------------------------------------------ c-sweeps

@dataclass
class LimitComparison:
    """Distances along a parameter sweep and fitted convergence orders."""

    parameter: str
    values: np.ndarray
    distances: np.ndarray
    orders: np.ndarray | None
    expected_order: float
    accepted: bool
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.parameter, "distance", "fitted_order"])
        for i, (v, d) in enumerate(zip(self.values, self.distances)):
            o = "" if self.orders is None or i == 0 else repr(float(self.orders[i - 1]))
            w.writerow([repr(float(v)), repr(float(d)), o])
        return buf.getvalue()


def fit_orders(values: Sequence[float], distances: Sequence[float],
               expected: float = 1.0, floor: float = 1e-15):
    """Convergence orders log(d_i / d_{i+1}) / log(v_{i+1} / v_i).

    Returns ``(orders or None, accepted, notes)``; an order is accepted when
    it lies within [0.75, 1.25] times ``expected``.
    """
    v = np.asarray(values, dtype=float)
    d = np.asarray(distances, dtype=float)
    if np.all(d <= floor):
        return None, False, ["distances vanish at every value"]
    if np.any(d <= floor) or np.any(np.diff(d) >= 0):
        return None, False, ["distances are not monotonically decreasing; no fit"]
    orders = np.log(d[:-1] / d[1:]) / np.log(v[1:] / v[:-1])
    ok = bool(np.all((orders >= 0.75 * expected) & (orders <= 1.25 * expected)))
    return orders, ok, []


def _pick(conns, ref):
    if not conns:
        return None
    return min(conns, key=lambda c: float(np.linalg.norm(c.xi - ref)))


def compare_limits(params: ParticleParams, config: FieldConfig, t: float,
                   c_values: Sequence[float], endpoints=None, initial=None,
                   seeds=None, tol: Tolerances | None = None,
                   expected_order: float = 1.0) -> LimitComparison:
    """||d_+(c) - d_P|| along the c-sweep.

    Either ``endpoints = (y, x)`` (two-point problem, same positions for all
    c) or ``initial = (p, x0)`` (same initial kinetic data for all c).
    In the two-point mode the action difference |R_+ + mc^2 t - R_P| is
    recorded in ``extra["action_distances"]``.
    """
    if (endpoints is None) == (initial is None):
        raise ValueError("give exactly one of endpoints or initial")
    tol = tol or Tolerances(rtol=1e-12, atol=1e-14)
    dist, dR = [], []
    ref_traj = None
    for c in c_values:
        pc = replace(params, c=float(c))
        if initial is not None:
            z0 = np.concatenate([np.asarray(initial[0], float), np.asarray(initial[1], float)])
            tp = flow(pc, config, "plus", z0, t, tol)
            tn = flow(pc, config, "pauli0", z0, t, tol)
        else:
            y, x = (np.asarray(v, float) for v in endpoints)
            cn = connect(pc, config, "pauli0", y, x, t, seeds, tol)
            if not cn:
                raise ValueError(f"no Pauli connection at c={c}")
            cn = cn[0]
            cp = _pick(connect(pc, config, "plus", y, x, t, [cn.xi] + list(seeds or []), tol),
                       cn.xi)
            if cp is None:
                raise ValueError(f"no relativistic connection at c={c}")
            tp, tn = cp.trajectory, cn.trajectory
            dR.append(abs(float(tp.action(t)) + pc.m * c * c * t - float(tn.action(t))))
        dist.append(float(np.linalg.norm(tp.d(t) - tn.d(t))))
        ref_traj = tn
    orders, ok, notes = fit_orders(c_values, dist, expected_order)
    for n in notes:
        log.warning("compare_limits: %s", n)
    extra = {"action_distances": np.asarray(dR)} if dR else {}
    extra["pauli_trajectory"] = ref_traj
    return LimitComparison("c", np.asarray(c_values, float), np.asarray(dist), orders,
                           expected_order, ok, notes, extra)


def axis_limit(params: ParticleParams, config: FieldConfig, p, x,
               c_values: Sequence[float], expected_order: float = 2.0) -> LimitComparison:
    """||R_+ - R_P|| of the precession vectors at a fixed phase-space point."""
    dist = []
    for c in c_values:
        pc = replace(params, c=float(c))
        rec = eval_fields(config, x)
        par = pc.core_params()
        pi = np.asarray(p, float) - (pc.e / pc.c) * rec.A
        Rp = _pycore.spin_axis(_pycore.CONN_PLUS, par, pi, rec.E, rec.B)
        RP = _pycore.spin_axis(_pycore.CONN_PAULI, par, pi, rec.E, rec.B)
        dist.append(float(np.linalg.norm(Rp - RP)))
    orders, ok, notes = fit_orders(c_values, dist, expected_order)
    return LimitComparison("c", np.asarray(c_values, float), np.asarray(dist), orders,
                           expected_order, ok, notes)


def frame_limit(params: ParticleParams, config: FieldConfig, p, x,
                c_values: Sequence[float]) -> LimitComparison:
    """Distance of V from (1, 0)^T along a c-sweep (expected order 1)."""
    dist = []
    ref = np.vstack([np.eye(2), np.zeros((2, 2))])
    for c in c_values:
        V = symbol_dirac(replace(params, c=float(c)), config, p, x).V
        dist.append(float(np.linalg.norm(V - ref)))
    orders, ok, notes = fit_orders(c_values, dist, 1.0)
    return LimitComparison("c", np.asarray(c_values, float), np.asarray(dist), orders,
                           1.0, ok, notes)


# -------------------------------------------------------- adiabatic phases

def berry_integrand(b, db) -> float:
    """(b_x db_y - b_y db_x) / (1 + b_z): connection of v_+ in the north gauge."""
    if 1.0 + b[2] < 1e-12:
        raise ModeConversionError("field direction at the south-pole gauge singularity")
    return float((b[0] * db[1] - b[1] * db[0]) / (1.0 + b[2]))


def berry_phase(b: Callable, db: Callable, T: float) -> float:
    """G = int_0^T (b_x b_y' - b_y b_x') / (1 + b_z) dt for a prescribed unit-field path.

    The strong-coupling U(1) factors are d'_+ = exp(-i G / 2) and
    d'_- = exp(+i G / 2); on a closed loop G is the enclosed solid angle.
    """
    val, err = integrate.quad(lambda t: berry_integrand(b(t), db(t)), 0.0, T,
                              epsabs=1e-14, epsrel=1e-13, limit=500)
    return float(val)


def cone_path(alpha: float, omega: float, axis=(0.0, 0.0, 1.0), start=None):
    """Unit vector rotating at rate ``omega`` on a cone of half-angle ``alpha``.

    Returns callables ``(b, db)``. With ``start`` given, the cone axis is
    ``axis`` and the path starts at ``start`` (which then fixes alpha).
    """
    n = np.asarray(axis, float)
    n = n / np.linalg.norm(n)
    if start is None:
        u = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-8:
            u = np.cross(n, [0.0, 1.0, 0.0])
        u = np.cross(u / np.linalg.norm(u), n)
        b0 = math.cos(alpha) * n + math.sin(alpha) * u
    else:
        b0 = np.asarray(start, float) / np.linalg.norm(start)
    par = (b0 @ n) * n
    perp = b0 - par
    w = np.cross(n, perp)

    def b(t):
        return par + math.cos(omega * t) * perp + math.sin(omega * t) * w

    def db(t):
        return omega * (-math.sin(omega * t) * perp + math.cos(omega * t) * w)

    return b, db


def _bmt_path(Rfun, s0, T, rtol=1e-12, atol=1e-14):
    sol = integrate.solve_ivp(lambda t, s: np.cross(Rfun(t), s), (0.0, T), s0,
                              method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    return sol.sol


def adiabatic_comparison(params: ParticleParams, B0: float, alpha: float, omega: float,
                         loops: int = 1, segments: int = 512) -> dict:
    """Exact Pauli phase versus its adiabatic approximation on a rotating field.

    The field B(t) = B0 b(t) turns on a cone whose axis is tilted by
    ``alpha`` from z, starting at b(0) = z. The exact eta_P follows the
    precessing spin s(t); the adiabatic one pins s to b(t). Returns both
    phases at the end of ``loops`` turns and |e^{i eta} - e^{i eta_ad}|.
    """
    axis = (math.sin(alpha), 0.0, math.cos(alpha))
    b, db = cone_path(alpha, omega, axis=axis, start=(0.0, 0.0, 1.0))
    T = loops * 2 * math.pi / abs(omega)
    k = params.e / (params.m * params.c)

    def R1(t):
        return -k * B0 * b(t)

    def Rv(t):
        return np.array([R1(ti) for ti in np.atleast_1d(t)])

    sol = _bmt_path(R1, np.array([0.0, 0.0, 1.0]), T)

    def s_exact(t):
        s = np.atleast_2d(sol(np.atleast_1d(t)).T)
        return s / np.linalg.norm(s, axis=1)[:, None]

    ex = eta_phase(R=Rv, s=s_exact, T=T, segments=segments).evaluate(T)
    # pinned spin: s = b is not a BMT solution, so the monopole term uses b'
    dyn_ad, _ = integrate.quad(lambda t: -0.5 * float(R1(t) @ b(t)), 0.0, T,
                               epsabs=1e-13, epsrel=1e-13, limit=2000)
    G = berry_phase(b, db, T)
    eta_ad = dyn_ad - 0.5 * G
    return {"eta": ex["eta"], "eta_adiabatic": eta_ad,
            "geometric_adiabatic": -0.5 * G, "berry": G,
            "distance": float(abs(np.exp(1j * ex["eta"]) - np.exp(1j * eta_ad))),
            "rate_ratio": abs(omega) / (k * abs(B0))}


def strong_coupling_phase(traj: Trajectory, hbar: float | None = None) -> dict:
    """Spin phase of a strong-coupling trajectory: +/- mu int|B| / hbar -/+ G / 2."""
    sig = {"strong_plus": 1.0, "strong_minus": -1.0}[traj.kind]
    hbar = traj.params.hbar if hbar is None else hbar
    T = traj.T
    dyn = sig * traj.mu * float(traj.field_integral(T)) / hbar
    geo = -0.5 * sig * float(traj.berry_integral(T))
    return {"dynamical": dyn, "geometric": geo, "total": dyn + geo}
