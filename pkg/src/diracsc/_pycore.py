"""Pure-Python reference backend.

Mirrors the compiled ``_core`` extension function by function: polynomial and
softened-Coulomb field evaluation, the augmented equations of motion and a
Dormand-Prince 5(4) integrator with dense output. Both backends implement the
same algorithm so their trajectories agree to rounding.
"""
import math

import numpy as np

BACKEND_NAME = "python"

STATE_SIZE = 53
I_P, I_X, I_J, I_ACTION, I_SPIN, I_BMT = 0, 3, 6, 42, 43, 47
I_ACTION0, I_BINT, I_BERRY = 50, 51, 52

HAM_PLUS, HAM_MINUS, HAM_PAULI0, HAM_STRONG_PLUS, HAM_STRONG_MINUS = range(5)
CONN_PLUS, CONN_MINUS, CONN_PAULI, CONN_BERRY, CONN_NONAME, CONN_NONE = range(6)

STATUS_OK, STATUS_UNDERFLOW, STATUS_MAX_STEPS, STATUS_NONFINITE = range(4)

# Dormand-Prince 5(4) tableau with Shampine's quartic dense output.
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
DP_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200,
                 -22 / 525, 1 / 40])
DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608,
     -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304,
     -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883,
     -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_LEVI = np.zeros((3, 3, 3))
_LEVI[0, 1, 2] = _LEVI[1, 2, 0] = _LEVI[2, 0, 1] = 1.0
_LEVI[0, 2, 1] = _LEVI[2, 1, 0] = _LEVI[1, 0, 2] = -1.0


def _falling(n, r):
    out = np.ones_like(n, dtype=float)
    for k in range(r):
        out = out * (n - k)
    return out


def _poly_derivs(coef, pows, x, maxorder):
    """Value and derivatives (up to ``maxorder`` <= 3) of a polynomial in x."""
    d0 = 0.0
    d1 = np.zeros(3)
    d2 = np.zeros((3, 3))
    d3 = np.zeros((3, 3, 3))
    if coef.size == 0:
        return d0, d1, d2, d3
    pw = pows.astype(float)

    def term(order):
        o = np.asarray(order)
        f = coef * _falling(pw[:, 0], o[0]) * _falling(pw[:, 1], o[1]) \
            * _falling(pw[:, 2], o[2])
        ex = np.maximum(pw - o, 0.0)
        return float(np.sum(f * np.prod(x ** ex, axis=1)))

    d0 = term((0, 0, 0))
    if maxorder >= 1:
        for j in range(3):
            o = [0, 0, 0]
            o[j] += 1
            d1[j] = term(o)
    if maxorder >= 2:
        for j in range(3):
            for l in range(j, 3):
                o = [0, 0, 0]
                o[j] += 1
                o[l] += 1
                d2[j, l] = d2[l, j] = term(o)
    if maxorder >= 3:
        for j in range(3):
            for l in range(j, 3):
                for m in range(l, 3):
                    o = [0, 0, 0]
                    o[j] += 1
                    o[l] += 1
                    o[m] += 1
                    v = term(o)
                    for a, b, c in ((j, l, m), (j, m, l), (l, j, m),
                                    (l, m, j), (m, j, l), (m, l, j)):
                        d3[a, b, c] = v
    return d0, d1, d2, d3


def field_derivs(fa, x):
    """Potentials and their derivatives at x.

    Returns ``(phi, dphi, d2phi, A, dA, d2A, d3A)`` with ``dA[j, i] = d_j A_i``,
    ``d2A[j, l, i] = d_j d_l A_i`` and ``d3A[j, l, m, i]``.
    """
    x = np.asarray(x, dtype=float)
    phi, dphi, d2phi, _ = _poly_derivs(fa.phi_coef, fa.phi_pow, x, 2)
    for Z, a, cx, cy, cz in fa.coulomb:
        r = x - np.array([cx, cy, cz])
        q = r @ r + a * a
        s = 1.0 / math.sqrt(q)
        phi += -Z * s
        dphi = dphi + Z * r * s ** 3
        d2phi = d2phi + Z * (np.eye(3) * s ** 3 - 3.0 * np.outer(r, r) * s ** 5)
    A = np.zeros(3)
    dA = np.zeros((3, 3))
    d2A = np.zeros((3, 3, 3))
    d3A = np.zeros((3, 3, 3, 3))
    for i in range(3):
        mask = fa.a_comp == i
        v0, v1, v2, v3 = _poly_derivs(fa.a_coef[mask], fa.a_pow[mask], x, 3)
        A[i] = v0
        dA[:, i] = v1
        d2A[:, :, i] = v2
        d3A[:, :, :, i] = v3
    return phi, dphi, d2phi, A, dA, d2A, d3A


def _kinetic(hk, pi, m, c):
    if hk == HAM_PLUS or hk == HAM_MINUS:
        eps = math.sqrt(c * c * (pi @ pi) + m * m * c ** 4)
        v = c * c * pi / eps
        G = (c * c / eps) * (np.eye(3) - np.outer(v, v) / (c * c))
        return eps, v, G
    return (pi @ pi) / (2.0 * m), pi / m, np.eye(3) / m


def spin_axis(ck, par, pi, E, B):
    """Precession vector R with M = R.sigma/2 for connection kind ``ck``."""
    m, e, c = par[0], par[1], par[2]
    if ck == CONN_NONE:
        return np.zeros(3)
    if ck == CONN_PAULI:
        return -(e / (m * c)) * B
    eps = math.sqrt(c * c * (pi @ pi) + m * m * c ** 4)
    mc2 = m * c * c
    if ck == CONN_PLUS:
        return -(e * c / eps) * (B + c / (eps + mc2) * np.cross(E, pi))
    if ck == CONN_MINUS:
        return (e * c / eps) * (B - c / (eps + mc2) * np.cross(E, pi))
    rb = (e * c * c / (eps * (eps + mc2))) * np.cross(pi, E) \
        + (e * c ** 3 / (eps * eps * (eps + mc2))) * np.cross(pi, np.cross(pi, B))
    if ck == CONN_BERRY:
        return rb
    rp = -(e * c / eps) * (B + c / (eps + mc2) * np.cross(E, pi))
    return rp - rb


def hamiltonian(hk, par, fa, p, x):
    m, e, c, mu = par
    phi, _, _, A, dA, _, _ = field_derivs(fa, x)
    pi = np.asarray(p, dtype=float) - (e / c) * A
    f, _, _ = _kinetic(hk, pi, m, c)
    H = e * phi + (-f if hk == HAM_MINUS else f)
    if hk == HAM_STRONG_PLUS or hk == HAM_STRONG_MINUS:
        B = np.einsum("ijk,jk->i", _LEVI, dA)
        sig = 1.0 if hk == HAM_STRONG_PLUS else -1.0
        H -= sig * mu * math.sqrt(B @ B)
    return H


def rhs(t, y, hk, ck, par, fa):
    """Time derivative of the 53-component augmented state."""
    m, e, c, mu = par
    p = y[0:3]
    x = y[3:6]
    phi, dphi, d2phi, A, dA, d2A, d3A = field_derivs(fa, x)
    B = np.einsum("ijk,jk->i", _LEVI, dA)
    dB = np.einsum("ijk,ljk->li", _LEVI, d2A)
    E = -dphi
    pi = p - (e / c) * A
    Dpi = -(e / c) * dA.T
    f, v, G = _kinetic(hk, pi, m, c)
    sgn = -1.0 if hk == HAM_MINUS else 1.0
    H = e * phi + sgn * f
    Hp = sgn * v
    Hx = e * dphi + sgn * (Dpi.T @ v)
    Hpp = sgn * G
    Hpx = sgn * (G @ Dpi)
    Hxx = e * d2phi + sgn * (Dpi.T @ G @ Dpi
                             - (e / c) * np.einsum("i,jli->jl", v, d2A))
    nb = math.sqrt(B @ B)
    if hk == HAM_STRONG_PLUS or hk == HAM_STRONG_MINUS:
        sig = 1.0 if hk == HAM_STRONG_PLUS else -1.0
        d2B = np.einsum("ijk,mljk->mli", _LEVI, d3A)
        b = B / nb
        g = dB @ b
        hess = (dB @ dB.T - np.outer(g, g)) / nb + d2B @ b
        H -= sig * mu * nb
        Hx = Hx - sig * mu * g
        Hxx = Hxx - sig * mu * hess
    dy = np.zeros(STATE_SIZE)
    dy[0:3] = -Hx
    dy[3:6] = Hp
    lin = np.block([[-Hpx.T, -Hxx], [Hpp, Hpx]])
    dy[6:42] = (lin @ y[6:42].reshape(6, 6)).ravel()
    xdot = Hp
    dy[I_ACTION] = p @ xdot - H
    dy[I_ACTION0] = p @ xdot - ((pi @ pi) / (2.0 * m) + e * phi)
    dy[I_BINT] = nb
    R = spin_axis(ck, par, pi, E, B)
    ar, ai, br, bi = y[43:47]
    al = complex(ar, ai)
    be = complex(br, bi)
    # u' = -i (R.sigma/2) u
    da = -0.5j * (R[2] * al + complex(R[0], -R[1]) * be)
    db = -0.5j * (complex(R[0], R[1]) * al - R[2] * be)
    dy[43:47] = (da.real, da.imag, db.real, db.imag)
    dy[47:50] = np.cross(R, y[47:50])
    if (hk == HAM_STRONG_PLUS or hk == HAM_STRONG_MINUS) and nb > 0.0:
        b = B / nb
        Bdot = dB.T @ xdot
        bdot = (Bdot - b * (b @ Bdot)) / nb
        dy[I_BERRY] = (b[0] * bdot[1] - b[1] * bdot[0]) / (1.0 + b[2])
    return dy


def _rms(v):
    return math.sqrt(float(v @ v) / v.size)


def integrate(y0, t_end, hk, ck, par, fa, rtol, atol, max_steps, renorm):
    """Dormand-Prince 5(4) with dense output.

    Returns ``(status, t_fail, ts, ys, qs, nfev)`` where ``qs[n]`` holds the
    quartic dense-output coefficients of step n (shape ``(N, 4)``).
    """
    y = np.array(y0, dtype=float)
    n = y.size
    t = 0.0
    direction = 1.0 if t_end >= 0 else -1.0
    ts = [0.0]
    ys = [y.copy()]
    qs = []
    if t_end == 0.0:
        return STATUS_OK, 0.0, np.array(ts), np.array(ys), np.zeros((0, n, 4)), 0
    f = rhs(t, y, hk, ck, par, fa)
    nfev = 1
    # initial step (Hairer-Norsett-Wanner II.4)
    scale = atol + np.abs(y) * rtol
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    span = abs(t_end)
    h0 = min(h0, span)
    f1 = rhs(t + direction * h0, y + direction * h0 * f, hk, ck, par, fa)
    nfev += 1
    d2 = _rms((f1 - f) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    h = min(100 * h0, h1, span)
    K = np.zeros((7, n))
    steps = 0
    while direction * (t_end - t) > 0:
        if steps >= max_steps:
            return STATUS_MAX_STEPS, t, np.array(ts), np.array(ys), np.array(qs), nfev
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        if h < min_step:
            return STATUS_UNDERFLOW, t, np.array(ts), np.array(ys), np.array(qs), nfev
        accepted = False
        while not accepted:
            if h < min_step:
                return STATUS_UNDERFLOW, t, np.array(ts), np.array(ys), np.array(qs), nfev
            hs = h * direction
            t_new = t + hs
            if direction * (t_new - t_end) > 0:
                t_new = t_end
            hs = t_new - t
            ha = abs(hs)
            K[0] = f
            for s in range(1, 6):
                dyv = K[:s].T @ DP_A[s, :s] * hs
                K[s] = rhs(t + DP_C[s] * hs, y + dyv, hk, ck, par, fa)
            y_new = y + hs * (K[:6].T @ DP_B)
            f_new = rhs(t + hs, y_new, hk, ck, par, fa)
            nfev += 6
            K[6] = f_new
            if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
                return STATUS_NONFINITE, t, np.array(ts), np.array(ys), np.array(qs), nfev
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err = _rms((K.T @ DP_E) * hs / scale)
            if err < 1.0:
                fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** -0.2)
                h = ha * fac
                accepted = True
            else:
                h = ha * max(0.2, 0.9 * err ** -0.2)
        qs.append(K.T @ DP_P)
        t = t_new
        y = y_new
        f = f_new
        if renorm:
            u = y[43:47]
            nu = math.sqrt(float(u @ u))
            if abs(nu - 1.0) > 1e-13:
                y[43:47] = u / nu
        ts.append(t)
        ys.append(y.copy())
        steps += 1
    return STATUS_OK, t, np.array(ts), np.array(ys), np.array(qs), nfev
