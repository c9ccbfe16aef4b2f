# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backend: field evaluation, augmented flow and DP5(4) integrator.

Algorithmically identical to :mod:`diracsc._pycore`; the inner loops run
without the GIL on fixed-size C arrays.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite, nextafter, INFINITY, pow as cpow
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cnp.import_array()

BACKEND_NAME = "compiled"

cdef enum:
    NS = 53

cdef struct Field:
    int nphi
    const double* phi_coef
    const int* phi_pow
    int na
    const double* a_coef
    const int* a_pow
    const int* a_comp
    int nc
    const double* coul


cdef double C_C[6]
cdef double C_A[6][5]
cdef double C_B[6]
cdef double C_E[7]
cdef double C_P[7][4]


def _load_tableau(c, a, b, e, p):
    cdef int i, j
    for i in range(6):
        C_C[i] = c[i]
        C_B[i] = b[i]
        for j in range(5):
            C_A[i][j] = a[i, j]
    for i in range(7):
        C_E[i] = e[i]
        for j in range(4):
            C_P[i][j] = p[i, j]


from ._pycore import DP_C, DP_A, DP_B, DP_E, DP_P  # noqa: E402
_load_tableau(DP_C, DP_A, DP_B, DP_E, DP_P)


cdef inline double ipow(double x, int n) noexcept nogil:
    cdef double r = 1.0
    cdef int k
    for k in range(n):
        r *= x
    return r


cdef inline double falling(int n, int r) noexcept nogil:
    cdef double out = 1.0
    cdef int k
    for k in range(r):
        out *= (n - k)
    return out


cdef inline double mono(double coef, const int* pw, const double* x,
                        int o0, int o1, int o2) noexcept nogil:
    cdef double f = falling(pw[0], o0) * falling(pw[1], o1) * falling(pw[2], o2)
    if f == 0.0:
        return 0.0
    return coef * f * ipow(x[0], pw[0] - o0) * ipow(x[1], pw[1] - o1) \
        * ipow(x[2], pw[2] - o2)


cdef void field_c(const Field* F, const double* x, double* phi, double* dphi,
                  double* d2phi, double* A, double* dA, double* d2A,
                  double* d3A, bint third) noexcept nogil:
    cdef int n, i, j, l, m, k
    cdef int o[3]
    cdef const int* pw
    cdef double cf, r0, r1, r2, q, s, s3, s5, Z, a
    cdef double rr[3]
    phi[0] = 0.0
    for i in range(3):
        dphi[i] = 0.0
        A[i] = 0.0
    for i in range(9):
        d2phi[i] = 0.0
        dA[i] = 0.0
    for i in range(27):
        d2A[i] = 0.0
    if third:
        for i in range(81):
            d3A[i] = 0.0
    for n in range(F.nphi):
        pw = F.phi_pow + 3 * n
        cf = F.phi_coef[n]
        phi[0] += mono(cf, pw, x, 0, 0, 0)
        for j in range(3):
            o[0] = 0; o[1] = 0; o[2] = 0
            o[j] += 1
            dphi[j] += mono(cf, pw, x, o[0], o[1], o[2])
            for l in range(3):
                o[0] = 0; o[1] = 0; o[2] = 0
                o[j] += 1
                o[l] += 1
                d2phi[3 * j + l] += mono(cf, pw, x, o[0], o[1], o[2])
    for n in range(F.nc):
        Z = F.coul[5 * n]
        a = F.coul[5 * n + 1]
        rr[0] = x[0] - F.coul[5 * n + 2]
        rr[1] = x[1] - F.coul[5 * n + 3]
        rr[2] = x[2] - F.coul[5 * n + 4]
        q = rr[0] * rr[0] + rr[1] * rr[1] + rr[2] * rr[2] + a * a
        s = 1.0 / sqrt(q)
        s3 = s * s * s
        s5 = s3 * s * s
        phi[0] += -Z * s
        for j in range(3):
            dphi[j] += Z * rr[j] * s3
            for l in range(3):
                d2phi[3 * j + l] += Z * ((1.0 if j == l else 0.0) * s3
                                         - 3.0 * rr[j] * rr[l] * s5)
    for n in range(F.na):
        pw = F.a_pow + 3 * n
        cf = F.a_coef[n]
        i = F.a_comp[n]
        A[i] += mono(cf, pw, x, 0, 0, 0)
        for j in range(3):
            o[0] = 0; o[1] = 0; o[2] = 0
            o[j] += 1
            dA[3 * j + i] += mono(cf, pw, x, o[0], o[1], o[2])
            for l in range(3):
                o[0] = 0; o[1] = 0; o[2] = 0
                o[j] += 1
                o[l] += 1
                d2A[(3 * j + l) * 3 + i] += mono(cf, pw, x, o[0], o[1], o[2])
                if third:
                    for m in range(3):
                        o[0] = 0; o[1] = 0; o[2] = 0
                        o[j] += 1
                        o[l] += 1
                        o[m] += 1
                        d3A[((3 * j + l) * 3 + m) * 3 + i] += \
                            mono(cf, pw, x, o[0], o[1], o[2])


cdef inline void curl(const double* dA, double* B) noexcept nogil:
    # B_i = eps_ijk d_j A_k with dA[3*j + k]
    B[0] = dA[3 * 1 + 2] - dA[3 * 2 + 1]
    B[1] = dA[3 * 2 + 0] - dA[3 * 0 + 2]
    B[2] = dA[3 * 0 + 1] - dA[3 * 1 + 0]


cdef inline void cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef void spin_axis_c(int ck, const double* par, const double* pi,
                      const double* E, const double* B, double* R) noexcept nogil:
    cdef double m = par[0], e = par[1], c = par[2]
    cdef double eps, mc2, f, pp, g1, g2
    cdef double ExP[3]
    cdef double PxE[3]
    cdef double PxB[3]
    cdef double PxPxB[3]
    cdef int i
    if ck == 5:
        R[0] = 0.0; R[1] = 0.0; R[2] = 0.0
        return
    if ck == 2:
        for i in range(3):
            R[i] = -(e / (m * c)) * B[i]
        return
    pp = pi[0] * pi[0] + pi[1] * pi[1] + pi[2] * pi[2]
    eps = sqrt(c * c * pp + m * m * c * c * c * c)
    mc2 = m * c * c
    cross(E, pi, ExP)
    if ck == 0:
        for i in range(3):
            R[i] = -(e * c / eps) * (B[i] + c / (eps + mc2) * ExP[i])
        return
    if ck == 1:
        for i in range(3):
            R[i] = (e * c / eps) * (B[i] - c / (eps + mc2) * ExP[i])
        return
    cross(pi, E, PxE)
    cross(pi, B, PxB)
    cross(pi, PxB, PxPxB)
    g1 = e * c * c / (eps * (eps + mc2))
    g2 = e * c * c * c / (eps * eps * (eps + mc2))
    for i in range(3):
        R[i] = g1 * PxE[i] + g2 * PxPxB[i]
    if ck == 4:
        for i in range(3):
            R[i] = -(e * c / eps) * (B[i] + c / (eps + mc2) * ExP[i]) - R[i]


cdef double kinetic_c(int hk, const double* pi, double m, double c,
                      double* v, double* G) noexcept nogil:
    cdef double pp = pi[0] * pi[0] + pi[1] * pi[1] + pi[2] * pi[2]
    cdef double eps
    cdef int i, j
    if hk == 0 or hk == 1:
        eps = sqrt(c * c * pp + m * m * c * c * c * c)
        for i in range(3):
            v[i] = c * c * pi[i] / eps
        for i in range(3):
            for j in range(3):
                G[3 * i + j] = (c * c / eps) * ((1.0 if i == j else 0.0)
                                                - v[i] * v[j] / (c * c))
        return eps
    for i in range(3):
        v[i] = pi[i] / m
        for j in range(3):
            G[3 * i + j] = (1.0 / m) if i == j else 0.0
    return pp / (2.0 * m)


cdef void rhs_c(double t, const double* y, double* dy, int hk, int ck,
                const double* par, const Field* F) noexcept nogil:
    cdef double m = par[0], e = par[1], c = par[2], mu = par[3]
    cdef double phi
    cdef double dphi[3]
    cdef double d2phi[9]
    cdef double A[3]
    cdef double dA[9]
    cdef double d2A[27]
    cdef double d3A[81]
    cdef double B[3]
    cdef double dB[9]
    cdef double d2B[27]
    cdef double E[3]
    cdef double pi[3]
    cdef double Dpi[9]
    cdef double v[3]
    cdef double G[9]
    cdef double GD[9]
    cdef double Hx[3]
    cdef double Hpx[9]
    cdef double Hpp[9]
    cdef double Hxx[9]
    cdef double lin[36]
    cdef double R[3]
    cdef double g[3]
    cdef double b[3]
    cdef double Bdot[3]
    cdef double bdot[3]
    cdef double ds[3]
    cdef double f, sgn, H, nb, sig, acc, pp, bB, ar, ai, br, bi, zr, zi
    cdef int i, j, k, l, mm
    cdef bint strong = (hk == 3 or hk == 4)
    field_c(F, y + 3, &phi, dphi, d2phi, A, dA, d2A, d3A, strong)
    curl(dA, B)
    for l in range(3):
        curl(d2A + 9 * l, dB + 3 * l)
        E[l] = -dphi[l]
        pi[l] = y[l] - (e / c) * A[l]
    for i in range(3):
        for j in range(3):
            Dpi[3 * i + j] = -(e / c) * dA[3 * j + i]
    f = kinetic_c(hk, pi, m, c, v, G)
    sgn = -1.0 if hk == 1 else 1.0
    H = e * phi + sgn * f
    for j in range(3):
        acc = 0.0
        for i in range(3):
            acc += Dpi[3 * i + j] * v[i]
        Hx[j] = e * dphi[j] + sgn * acc
    for k in range(3):
        for j in range(3):
            acc = 0.0
            for i in range(3):
                acc += G[3 * k + i] * Dpi[3 * i + j]
            GD[3 * k + j] = acc
            Hpx[3 * k + j] = sgn * acc
            Hpp[3 * k + j] = sgn * G[3 * k + j]
    for j in range(3):
        for l in range(3):
            acc = 0.0
            for k in range(3):
                acc += Dpi[3 * k + j] * GD[3 * k + l]
            for i in range(3):
                acc -= (e / c) * v[i] * d2A[(3 * j + l) * 3 + i]
            Hxx[3 * j + l] = e * d2phi[3 * j + l] + sgn * acc
    nb = sqrt(B[0] * B[0] + B[1] * B[1] + B[2] * B[2])
    if strong:
        sig = 1.0 if hk == 3 else -1.0
        for mm in range(3):
            for l in range(3):
                curl(d3A + 27 * mm + 9 * l, d2B + 9 * mm + 3 * l)
        for i in range(3):
            b[i] = B[i] / nb
        for j in range(3):
            g[j] = dB[3 * j] * b[0] + dB[3 * j + 1] * b[1] + dB[3 * j + 2] * b[2]
        for j in range(3):
            for l in range(3):
                acc = 0.0
                for i in range(3):
                    acc += dB[3 * j + i] * dB[3 * l + i]
                acc = (acc - g[j] * g[l]) / nb
                for i in range(3):
                    acc += d2B[(3 * j + l) * 3 + i] * b[i]
                Hxx[3 * j + l] -= sig * mu * acc
            Hx[j] -= sig * mu * g[j]
        H -= sig * mu * nb
    for i in range(3):
        dy[i] = -Hx[i]
        dy[3 + i] = sgn * v[i]
    for i in range(3):
        for j in range(3):
            lin[6 * i + j] = -Hpx[3 * j + i]
            lin[6 * i + 3 + j] = -Hxx[3 * i + j]
            lin[6 * (i + 3) + j] = Hpp[3 * i + j]
            lin[6 * (i + 3) + 3 + j] = Hpx[3 * i + j]
    for i in range(6):
        for j in range(6):
            acc = 0.0
            for k in range(6):
                acc += lin[6 * i + k] * y[6 + 6 * k + j]
            dy[6 + 6 * i + j] = acc
    acc = y[0] * dy[3] + y[1] * dy[4] + y[2] * dy[5]
    dy[42] = acc - H
    pp = pi[0] * pi[0] + pi[1] * pi[1] + pi[2] * pi[2]
    dy[50] = acc - (pp / (2.0 * m) + e * phi)
    dy[51] = nb
    spin_axis_c(ck, par, pi, E, B, R)
    ar = y[43]; ai = y[44]; br = y[45]; bi = y[46]
    # da = -i/2 (Rz a + (Rx - i Ry) b),  db = -i/2 ((Rx + i Ry) a - Rz b)
    zr = R[2] * ar + R[0] * br + R[1] * bi
    zi = R[2] * ai + R[0] * bi - R[1] * br
    dy[43] = 0.5 * zi
    dy[44] = -0.5 * zr
    zr = R[0] * ar - R[1] * ai - R[2] * br
    zi = R[0] * ai + R[1] * ar - R[2] * bi
    dy[45] = 0.5 * zi
    dy[46] = -0.5 * zr
    cross(R, y + 47, ds)
    dy[47] = ds[0]; dy[48] = ds[1]; dy[49] = ds[2]
    dy[52] = 0.0
    if strong and nb > 0.0:
        for i in range(3):
            Bdot[i] = dB[i] * dy[3] + dB[3 + i] * dy[4] + dB[6 + i] * dy[5]
        bB = b[0] * Bdot[0] + b[1] * Bdot[1] + b[2] * Bdot[2]
        for i in range(3):
            bdot[i] = (Bdot[i] - b[i] * bB) / nb
        dy[52] = (b[0] * bdot[1] - b[1] * bdot[0]) / (1.0 + b[2])


cdef double hamiltonian_c(int hk, const double* par, const Field* F,
                          const double* p, const double* x) noexcept nogil:
    cdef double m = par[0], e = par[1], c = par[2], mu = par[3]
    cdef double phi
    cdef double dphi[3]
    cdef double d2phi[9]
    cdef double A[3]
    cdef double dA[9]
    cdef double d2A[27]
    cdef double B[3]
    cdef double pi[3]
    cdef double v[3]
    cdef double G[9]
    cdef double H, f
    cdef int i
    field_c(F, x, &phi, dphi, d2phi, A, dA, d2A, NULL, False)
    for i in range(3):
        pi[i] = p[i] - (e / c) * A[i]
    f = kinetic_c(hk, pi, m, c, v, G)
    H = e * phi + (-f if hk == 1 else f)
    if hk == 3 or hk == 4:
        curl(dA, B)
        H -= (1.0 if hk == 3 else -1.0) * mu * sqrt(B[0] * B[0] + B[1] * B[1] + B[2] * B[2])
    return H


cdef class _FieldHolder:
    cdef Field F
    cdef object keep

    def __init__(self, fa):
        phi_coef = np.ascontiguousarray(fa.phi_coef, dtype=np.float64)
        phi_pow = np.ascontiguousarray(fa.phi_pow, dtype=np.intc).reshape(-1, 3)
        a_coef = np.ascontiguousarray(fa.a_coef, dtype=np.float64)
        a_pow = np.ascontiguousarray(fa.a_pow, dtype=np.intc).reshape(-1, 3)
        a_comp = np.ascontiguousarray(fa.a_comp, dtype=np.intc)
        coul = np.ascontiguousarray(fa.coulomb, dtype=np.float64).reshape(-1, 5)
        self.keep = (phi_coef, phi_pow, a_coef, a_pow, a_comp, coul)
        self.F.nphi = phi_coef.shape[0]
        self.F.na = a_coef.shape[0]
        self.F.nc = coul.shape[0]
        self.F.phi_coef = <const double*> cnp.PyArray_DATA(phi_coef)
        self.F.phi_pow = <const int*> cnp.PyArray_DATA(phi_pow)
        self.F.a_coef = <const double*> cnp.PyArray_DATA(a_coef)
        self.F.a_pow = <const int*> cnp.PyArray_DATA(a_pow)
        self.F.a_comp = <const int*> cnp.PyArray_DATA(a_comp)
        self.F.coul = <const double*> cnp.PyArray_DATA(coul)


cdef _FieldHolder _holder(fa):
    h = getattr(fa, "_compiled", None)
    if h is None:
        h = _FieldHolder(fa)
        try:
            object.__setattr__(fa, "_compiled", h)
        except (AttributeError, TypeError):
            pass
    return h


def field_derivs(fa, x):
    """Potentials and derivatives at x; see :func:`diracsc._pycore.field_derivs`."""
    cdef _FieldHolder h = _holder(fa)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double phi
    dphi = np.zeros(3)
    d2phi = np.zeros((3, 3))
    A = np.zeros(3)
    dA = np.zeros((3, 3))
    d2A = np.zeros((3, 3, 3))
    d3A = np.zeros((3, 3, 3, 3))
    cdef double[::1] a1 = dphi
    cdef double[:, ::1] a2 = d2phi
    cdef double[::1] a3 = A
    cdef double[:, ::1] a4 = dA
    cdef double[:, :, ::1] a5 = d2A
    cdef double[:, :, :, ::1] a6 = d3A
    field_c(&h.F, &xv[0], &phi, &a1[0], &a2[0, 0], &a3[0], &a4[0, 0],
            &a5[0, 0, 0], &a6[0, 0, 0, 0], True)
    return phi, dphi, d2phi, A, dA, d2A, d3A


def hamiltonian(int hk, par, fa, p, x):
    cdef _FieldHolder h = _holder(fa)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] pr = np.ascontiguousarray(par, dtype=np.float64)
    return hamiltonian_c(hk, &pr[0], &h.F, &pv[0], &xv[0])


def rhs(double t, y, int hk, int ck, par, fa):
    cdef _FieldHolder h = _holder(fa)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] pr = np.ascontiguousarray(par, dtype=np.float64)
    out = np.zeros(NS)
    cdef double[::1] ov = out
    rhs_c(t, &yv[0], &ov[0], hk, ck, &pr[0], &h.F)
    return out


cdef inline double rms(const double* v, int n) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(n):
        s += v[i] * v[i]
    return sqrt(s / n)


cdef struct Store:
    int cap
    int n
    double* ts
    double* ys
    double* qs


cdef int store_push(Store* st, double t, const double* y, const double* q,
                    bint with_q) noexcept nogil:
    cdef int newcap
    cdef void* p1
    cdef void* p2
    cdef void* p3
    if st.n >= st.cap:
        newcap = 2 * st.cap
        p1 = realloc(st.ts, newcap * sizeof(double))
        p2 = realloc(st.ys, newcap * NS * sizeof(double))
        p3 = realloc(st.qs, newcap * NS * 4 * sizeof(double))
        if p1 == NULL or p2 == NULL or p3 == NULL:
            return -1
        st.ts = <double*> p1
        st.ys = <double*> p2
        st.qs = <double*> p3
        st.cap = newcap
    st.ts[st.n] = t
    memcpy(st.ys + NS * st.n, y, NS * sizeof(double))
    if with_q:
        memcpy(st.qs + NS * 4 * (st.n - 1), q, NS * 4 * sizeof(double))
    st.n += 1
    return 0


cdef int integrate_c(double* y, double t_end, int hk, int ck, const double* par,
                     const Field* F, double rtol, double atol, long max_steps,
                     bint renorm, Store* st, double* t_out, long* nfev_out) noexcept nogil:
    cdef double t = 0.0
    cdef double direction = 1.0 if t_end >= 0 else -1.0
    cdef double K[7][NS]
    cdef double f[NS]
    cdef double f1[NS]
    cdef double ytmp[NS]
    cdef double ynew[NS]
    cdef double sc[NS]
    cdef double q[NS * 4]
    cdef double d0, d1, d2, h0, h1, h, span, hs, ha, t_new, err, fac, min_step, acc, nu
    cdef long nfev = 0, steps = 0
    cdef int i, s, j, k
    cdef bint accepted
    t_out[0] = 0.0
    if store_push(st, 0.0, y, NULL, False) != 0:
        return 4
    if t_end == 0.0:
        nfev_out[0] = 0
        return 0
    rhs_c(t, y, f, hk, ck, par, F)
    nfev = 1
    for i in range(NS):
        sc[i] = atol + fabs(y[i]) * rtol
        ytmp[i] = y[i] / sc[i]
    d0 = rms(ytmp, NS)
    for i in range(NS):
        ytmp[i] = f[i] / sc[i]
    d1 = rms(ytmp, NS)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    span = fabs(t_end)
    if h0 > span:
        h0 = span
    for i in range(NS):
        ytmp[i] = y[i] + direction * h0 * f[i]
    rhs_c(t + direction * h0, ytmp, f1, hk, ck, par, F)
    nfev += 1
    for i in range(NS):
        ytmp[i] = (f1[i] - f[i]) / sc[i]
    d2 = rms(ytmp, NS) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = cpow(0.01 / (d1 if d1 > d2 else d2), 0.2)
    h = 100 * h0
    if h1 < h:
        h = h1
    if span < h:
        h = span
    while direction * (t_end - t) > 0:
        t_out[0] = t
        nfev_out[0] = nfev
        if steps >= max_steps:
            return 2
        min_step = 10.0 * fabs(nextafter(t, direction * INFINITY) - t)
        accepted = False
        while not accepted:
            if h < min_step:
                return 1
            hs = h * direction
            t_new = t + hs
            if direction * (t_new - t_end) > 0:
                t_new = t_end
            hs = t_new - t
            ha = fabs(hs)
            for i in range(NS):
                K[0][i] = f[i]
            for s in range(1, 6):
                for i in range(NS):
                    acc = 0.0
                    for j in range(s):
                        acc += K[j][i] * C_A[s][j]
                    ytmp[i] = y[i] + acc * hs
                rhs_c(t + C_C[s] * hs, ytmp, K[s], hk, ck, par, F)
            for i in range(NS):
                acc = 0.0
                for j in range(6):
                    acc += K[j][i] * C_B[j]
                ynew[i] = y[i] + hs * acc
            rhs_c(t + hs, ynew, K[6], hk, ck, par, F)
            nfev += 6
            for i in range(NS):
                if not (isfinite(ynew[i]) and isfinite(K[6][i])):
                    nfev_out[0] = nfev
                    return 3
            for i in range(NS):
                acc = 0.0
                for j in range(7):
                    acc += K[j][i] * C_E[j]
                sc[i] = atol + (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i])) * rtol
                ytmp[i] = acc * hs / sc[i]
            err = rms(ytmp, NS)
            if err < 1.0:
                if err == 0.0:
                    fac = 10.0
                else:
                    fac = 0.9 * cpow(err, -0.2)
                    if fac > 10.0:
                        fac = 10.0
                h = ha * fac
                accepted = True
            else:
                fac = 0.9 * cpow(err, -0.2)
                if fac < 0.2:
                    fac = 0.2
                h = ha * fac
        for i in range(NS):
            for k in range(4):
                acc = 0.0
                for j in range(7):
                    acc += K[j][i] * C_P[j][k]
                q[4 * i + k] = acc
        t = t_new
        for i in range(NS):
            y[i] = ynew[i]
            f[i] = K[6][i]
        if renorm:
            nu = sqrt(y[43] * y[43] + y[44] * y[44] + y[45] * y[45] + y[46] * y[46])
            if fabs(nu - 1.0) > 1e-13:
                for i in range(43, 47):
                    y[i] /= nu
        if store_push(st, t, y, q, True) != 0:
            return 4
        steps += 1
    t_out[0] = t
    nfev_out[0] = nfev
    return 0


def integrate(y0, double t_end, int hk, int ck, par, fa, double rtol,
              double atol, long max_steps, bint renorm):
    """Compiled twin of :func:`diracsc._pycore.integrate`."""
    cdef _FieldHolder h = _holder(fa)
    cdef double[::1] yv = np.array(y0, dtype=np.float64)
    cdef double[::1] pr = np.ascontiguousarray(par, dtype=np.float64)
    if yv.shape[0] != NS:
        raise ValueError("state must have %d components" % NS)
    cdef Store st
    st.cap = 256
    st.n = 0
    st.ts = <double*> malloc(st.cap * sizeof(double))
    st.ys = <double*> malloc(st.cap * NS * sizeof(double))
    st.qs = <double*> malloc(st.cap * NS * 4 * sizeof(double))
    if st.ts == NULL or st.ys == NULL or st.qs == NULL:
        free(st.ts); free(st.ys); free(st.qs)
        raise MemoryError()
    cdef double t_fail = 0.0
    cdef long nfev = 0
    cdef int status
    with nogil:
        status = integrate_c(&yv[0], t_end, hk, ck, &pr[0], &h.F, rtol, atol,
                             max_steps, renorm, &st, &t_fail, &nfev)
    try:
        if status == 4:
            raise MemoryError()
        n = st.n
        ts = np.empty(n)
        ys = np.empty((n, NS))
        qs = np.empty((max(n - 1, 0), NS, 4))
        if n:
            memcpy(cnp.PyArray_DATA(ts), st.ts, n * sizeof(double))
            memcpy(cnp.PyArray_DATA(ys), st.ys, n * NS * sizeof(double))
        if n > 1:
            memcpy(cnp.PyArray_DATA(qs), st.qs, (n - 1) * NS * 4 * sizeof(double))
    finally:
        free(st.ts)
        free(st.ys)
        free(st.qs)
    return status, t_fail, ts, ys, qs, nfev
