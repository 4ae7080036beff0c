# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: closed-loop governor simulation, navigation flow, plant rollout.

Parameters arrive packed by :mod:`attitude_erg.kernels`; the layout is
documented there. All quaternions are scalar-first.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, acos, atan2, cos, sin, floor, ceil, M_PI, INFINITY, isfinite
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef double NORM_TOL = 1e-12
cdef double NORM_FAIL = 1e-3
cdef double PARALLEL_TOL = 1e-10
cdef double DEGENERATE_TOL = 1e-12
cdef double QUANTUM = 1e9

cdef enum:
    MAX_CONES = 16


cdef struct Model:
    double J[9]
    double Jinv[9]
    double kP
    double kD
    double tau_max[3]
    double h[3]
    double zeta
    double delta
    double eta
    double kappa_e
    double kappa_a
    double kappa_tau
    double gamma_a
    double r[4]
    int ncones
    double e[MAX_CONES * 3]
    double psi[MAX_CONES]
    uint64_t seed
    int destab
    int saturation


cdef int load_model(Model* m, const double[:] P, const double[:, :] C, long seed, int destab, int saturation) except -1:
    cdef int k
    for k in range(9):
        m.J[k] = P[k]
        m.Jinv[k] = P[9 + k]
    m.kP = P[18]
    m.kD = P[19]
    for k in range(3):
        m.tau_max[k] = P[20 + k]
        m.h[k] = P[23 + k]
    m.zeta = P[26]
    m.delta = P[27]
    m.eta = P[28]
    m.kappa_e = P[29]
    m.kappa_a = P[30]
    m.kappa_tau = P[31]
    m.gamma_a = P[32]
    for k in range(4):
        m.r[k] = P[33 + k]
    if C.shape[0] > MAX_CONES:
        raise ValueError("too many cones for the compiled core")
    m.ncones = C.shape[0]
    for k in range(m.ncones):
        m.e[3 * k] = C[k, 0]
        m.e[3 * k + 1] = C[k, 1]
        m.e[3 * k + 2] = C[k, 2]
        m.psi[k] = C[k, 3]
    m.seed = <uint64_t>seed
    m.destab = destab
    m.saturation = saturation
    return 0


# ---- small vector algebra ----

cdef inline double dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    cdef double x = a[1] * b[2] - a[2] * b[1]
    cdef double y = a[2] * b[0] - a[0] * b[2]
    cdef double z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void qmul(const double* q, const double* p, double* s) noexcept nogil:
    cdef double s0 = q[0] * p[0] - (q[1] * p[1] + q[2] * p[2] + q[3] * p[3])
    cdef double s1 = q[0] * p[1] + p[0] * q[1] + (q[2] * p[3] - q[3] * p[2])
    cdef double s2 = q[0] * p[2] + p[0] * q[2] + (q[3] * p[1] - q[1] * p[3])
    cdef double s3 = q[0] * p[3] + p[0] * q[3] + (q[1] * p[2] - q[2] * p[1])
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3


cdef inline void qmul_conj(const double* q, const double* p, double* s) noexcept nogil:
    # q p*
    cdef double pc[4]
    pc[0] = p[0]
    pc[1] = -p[1]
    pc[2] = -p[2]
    pc[3] = -p[3]
    qmul(q, pc, s)


cdef inline int qnormalize(double* q) noexcept nogil:
    cdef double n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    cdef double dev = fabs(n - 1.0)
    if not dev <= NORM_FAIL:
        return -1
    if dev > NORM_TOL:
        q[0] /= n
        q[1] /= n
        q[2] /= n
        q[3] /= n
    return 0


cdef inline void canonicalize(double* q) noexcept nogil:
    if q[0] < 0.0:
        q[0] = -q[0]
        q[1] = -q[1]
        q[2] = -q[2]
        q[3] = -q[3]


cdef inline void rotate(const double* q, const double* x, double* out) noexcept nogil:
    # R(q) x
    cdef double qr = q[0]
    cdef double qi[3]
    cdef double c[3]
    qi[0] = q[1]
    qi[1] = q[2]
    qi[2] = q[3]
    cdef double a = qr * qr - dot3(qi, qi)
    cdef double b = 2.0 * dot3(qi, x)
    cross3(qi, x, c)
    out[0] = a * x[0] + b * qi[0] + 2.0 * qr * c[0]
    out[1] = a * x[1] + b * qi[1] + 2.0 * qr * c[1]
    out[2] = a * x[2] + b * qi[2] + 2.0 * qr * c[2]


cdef inline void kinematic(const double* q, const double* u, double* out) noexcept nogil:
    # E(q) u
    out[0] = -(q[1] * u[0] + q[2] * u[1] + q[3] * u[2])
    out[1] = q[0] * u[0] + (q[3] * u[1] - q[2] * u[2])
    out[2] = q[0] * u[1] + (q[1] * u[2] - q[3] * u[0])
    out[3] = q[0] * u[2] + (q[2] * u[0] - q[1] * u[1])


cdef inline void matvec3(const double* A, const double* x, double* out) noexcept nogil:
    out[0] = A[0] * x[0] + A[1] * x[1] + A[2] * x[2]
    out[1] = A[3] * x[0] + A[4] * x[1] + A[5] * x[2]
    out[2] = A[6] * x[0] + A[7] * x[1] + A[8] * x[2]


cdef inline double clip1(double c) noexcept nogil:
    if c > 1.0:
        return 1.0
    if c < -1.0:
        return -1.0
    return c


# ---- hashing, identical to the Python implementation ----

cdef inline uint64_t splitmix64(uint64_t x) noexcept nogil:
    cdef uint64_t z = x + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double hash_angle(uint64_t seed, const double* v) noexcept nogil:
    cdef uint64_t hsh = seed
    cdef int k
    cdef int64_t key
    for k in range(4):
        key = <int64_t>floor(v[k] * QUANTUM + 0.5)
        hsh = splitmix64(hsh ^ <uint64_t>key)
    return <double>(hsh >> 11) * (1.0 / 9007199254740992.0) * 2.0 * M_PI


cdef inline void orthonormal_pair(const double* n_in, double* b1, double* b2) noexcept nogil:
    cdef double n[3]
    cdef double a[3]
    cdef double nn = sqrt(dot3(n_in, n_in))
    cdef int k = 0
    n[0] = n_in[0] / nn
    n[1] = n_in[1] / nn
    n[2] = n_in[2] / nn
    if fabs(n[1]) < fabs(n[k]):
        k = 1
    if fabs(n[2]) < fabs(n[k]):
        k = 2
    a[0] = 0.0
    a[1] = 0.0
    a[2] = 0.0
    a[k] = 1.0
    cross3(n, a, b1)
    nn = sqrt(dot3(b1, b1))
    b1[0] /= nn
    b1[1] /= nn
    b1[2] /= nn
    cross3(n, b1, b2)


# ---- constraints and field ----

cdef inline double theta_min(const Model* m, const double* v, int* idx) noexcept nogil:
    cdef double best = INFINITY
    cdef double re[3]
    cdef double th
    cdef int k
    idx[0] = -1
    for k in range(m.ncones):
        rotate(v, &m.e[3 * k], re)
        th = acos(clip1(dot3(m.h, re))) - m.psi[k]
        if th < best:
            best = th
            idx[0] = k
    return best


cdef inline double ramp(const Model* m, double theta) noexcept nogil:
    cdef double x = (m.zeta - theta) / (m.zeta - m.delta)
    return x if x > 0.0 else 0.0


cdef inline void rho_attraction(const Model* m, const double* v, double* out) noexcept nogil:
    cdef double vt[4]
    qmul_conj(v, m.r, vt)
    canonicalize(vt)
    cdef double n = sqrt(vt[1] * vt[1] + vt[2] * vt[2] + vt[3] * vt[3])
    cdef double s = sin(m.eta / 2.0)
    if s > n:
        n = s
    out[0] = -vt[1] / n
    out[1] = -vt[2] / n
    out[2] = -vt[3] / n


cdef inline void repulsion_direction(const Model* m, const double* v, int idx, double* out) noexcept nogil:
    cdef double re[3]
    cdef double b1[3]
    cdef double b2[3]
    rotate(v, &m.e[3 * idx], re)
    cross3(m.h, re, out)
    cdef double n = sqrt(dot3(out, out))
    if n > DEGENERATE_TOL:
        out[0] /= n
        out[1] /= n
        out[2] /= n
        return
    orthonormal_pair(m.h, b1, b2)
    cdef double a = hash_angle(m.seed, v)
    out[0] = cos(a) * b1[0] + sin(a) * b2[0]
    out[1] = cos(a) * b1[1] + sin(a) * b2[1]
    out[2] = cos(a) * b1[2] + sin(a) * b2[2]


cdef inline void field_rate(const Model* m, const double* v, double* u) noexcept nogil:
    # rho_r + rho_e + rho_d as a rate 3-vector
    cdef double rr[3]
    cdef double n[3]
    cdef double re[3]
    cdef double phi[3]
    cdef double b1[3]
    cdef double b2[3]
    cdef int idx
    cdef double theta, g, mag, ne, nr, nc, a
    rho_attraction(m, v, rr)
    u[0] = rr[0]
    u[1] = rr[1]
    u[2] = rr[2]
    theta = theta_min(m, v, &idx)
    if idx < 0 or theta >= m.zeta:
        return
    repulsion_direction(m, v, idx, n)
    g = ramp(m, theta)
    re[0] = g * n[0]
    re[1] = g * n[1]
    re[2] = g * n[2]
    u[0] += re[0]
    u[1] += re[1]
    u[2] += re[2]
    if not m.destab:
        return
    mag = -dot3(rr, n)
    if mag < 0.0:
        mag = 0.0
    mag *= g
    if mag == 0.0:
        return
    ne = sqrt(dot3(re, re))
    nr = sqrt(dot3(rr, rr))
    cross3(re, rr, phi)
    nc = sqrt(dot3(phi, phi))
    if nc > PARALLEL_TOL * ne * nr and ne > 0.0 and nr > 0.0:
        phi[0] /= nc
        phi[1] /= nc
        phi[2] /= nc
    else:
        if ne >= nr:
            orthonormal_pair(re, b1, b2)
        else:
            orthonormal_pair(rr, b1, b2)
        a = hash_angle(m.seed, v)
        phi[0] = cos(a) * b1[0] + sin(a) * b2[0]
        phi[1] = cos(a) * b1[1] + sin(a) * b2[1]
        phi[2] = cos(a) * b1[2] + sin(a) * b2[2]
    u[0] += mag * phi[0]
    u[1] += mag * phi[1]
    u[2] += mag * phi[2]


cdef inline double potential(const Model* m, const double* v) noexcept nogil:
    cdef double vt[4]
    cdef int idx
    qmul_conj(v, m.r, vt)
    cdef double c = fabs(vt[0])
    if c > 1.0:
        c = 1.0
    cdef double alpha = 2.0 * acos(c)
    cdef double s = sin(m.eta / 2.0)
    cdef double p
    if alpha <= m.eta:
        p = 2.0 / s * (1.0 - cos(alpha / 2.0))
    else:
        p = 2.0 / s * (1.0 - cos(m.eta / 2.0)) + alpha - m.eta
    cdef double theta = theta_min(m, v, &idx)
    if idx >= 0 and theta < m.zeta:
        p += 0.5 * (m.zeta - theta) * (m.zeta - theta) / (m.zeta - m.delta)
    return p


# ---- plant and safety margin ----

cdef struct Margins:
    double V
    double tau[3]
    double delta
    double delta_e
    double delta_a
    double theta_v


cdef inline int error_state(const double* q, const double* v, double* qt) noexcept nogil:
    qmul_conj(q, v, qt)
    if qnormalize(qt) < 0:
        return -1
    canonicalize(qt)
    return 0


cdef inline double lyapunov(const Model* m, const double* qt, const double* w) noexcept nogil:
    cdef double Jw[3]
    matvec3(m.J, w, Jw)
    return 2.0 * m.kP * (1.0 - qt[0]) + 0.5 * dot3(w, Jw)


cdef inline double sat_margin(const Model* m, const double* tau) noexcept nogil:
    cdef double best = INFINITY
    cdef double x
    cdef int k
    for k in range(3):
        x = m.tau_max[k] - fabs(tau[k])
        if x < best:
            best = x
    return best


cdef inline int margins(const Model* m, const double* q, const double* w, const double* v, Margins* out) noexcept nogil:
    cdef double qt[4]
    cdef int idx, k
    cdef double th, ge, sa, la
    if error_state(q, v, qt) < 0:
        return -1
    out.V = lyapunov(m, qt, w)
    for k in range(3):
        out.tau[k] = -m.kP * qt[k + 1] - m.kD * w[k]
    th = theta_min(m, v, &idx)
    out.theta_v = th
    if th < 0.0:
        th = 0.0
    if th > M_PI:
        th = M_PI
    ge = 2.0 * m.kP * (1.0 - cos(th / 2.0))
    out.delta_e = m.kappa_e * (ge - out.V)
    sa = m.kappa_tau * sat_margin(m, out.tau)
    la = m.kappa_a * (m.gamma_a - out.V)
    out.delta_a = sa if sa < la else la
    if m.saturation and out.delta_a < out.delta_e:
        out.delta = out.delta_a
    else:
        out.delta = out.delta_e
    return 0


cdef inline int closed_loop(const Model* m, const double* q, const double* w, const double* v,
                            double* qd, double* wd) noexcept nogil:
    cdef double qt[4]
    cdef double tau[3]
    cdef double Jw[3]
    cdef double rhs[3]
    cdef int k
    if error_state(q, v, qt) < 0:
        return -1
    for k in range(3):
        tau[k] = -m.kP * qt[k + 1] - m.kD * w[k]
    kinematic(q, w, qd)
    for k in range(4):
        qd[k] *= 0.5
    matvec3(m.J, w, Jw)
    cross3(w, Jw, rhs)
    for k in range(3):
        rhs[k] = -rhs[k] + tau[k]
    matvec3(m.Jinv, rhs, wd)
    return 0


cdef int plant_step(const Model* m, double* q, double* w, const double* v, double dt) noexcept nogil:
    cdef double k1q[4]
    cdef double k2q[4]
    cdef double k3q[4]
    cdef double k4q[4]
    cdef double k1w[3]
    cdef double k2w[3]
    cdef double k3w[3]
    cdef double k4w[3]
    cdef double tq[4]
    cdef double tw[3]
    cdef int k
    if closed_loop(m, q, w, v, k1q, k1w) < 0:
        return -1
    for k in range(4):
        tq[k] = q[k] + 0.5 * dt * k1q[k]
    for k in range(3):
        tw[k] = w[k] + 0.5 * dt * k1w[k]
    if closed_loop(m, tq, tw, v, k2q, k2w) < 0:
        return -1
    for k in range(4):
        tq[k] = q[k] + 0.5 * dt * k2q[k]
    for k in range(3):
        tw[k] = w[k] + 0.5 * dt * k2w[k]
    if closed_loop(m, tq, tw, v, k3q, k3w) < 0:
        return -1
    for k in range(4):
        tq[k] = q[k] + dt * k3q[k]
    for k in range(3):
        tw[k] = w[k] + dt * k3w[k]
    if closed_loop(m, tq, tw, v, k4q, k4w) < 0:
        return -1
    for k in range(4):
        q[k] = q[k] + dt / 6.0 * (k1q[k] + 2.0 * k2q[k] + 2.0 * k3q[k] + k4q[k])
    for k in range(3):
        w[k] = w[k] + dt / 6.0 * (k1w[k] + 2.0 * k2w[k] + 2.0 * k3w[k] + k4w[k])
    if qnormalize(q) < 0:
        return -1
    for k in range(3):
        if not isfinite(w[k]):
            return -1
    return 0


# ---- governor ----

cdef inline double ray_delta(const Model* m, const double* q, const double* w, const double* v,
                             const double* d, double s, double* vs) noexcept nogil:
    cdef Margins mg
    cdef int k
    cdef double n
    for k in range(4):
        vs[k] = v[k] + s * d[k]
    n = sqrt(vs[0] * vs[0] + vs[1] * vs[1] + vs[2] * vs[2] + vs[3] * vs[3])
    for k in range(4):
        vs[k] /= n
    if margins(m, q, w, vs, &mg) < 0:
        return -INFINITY
    return mg.delta


cdef int governor_step(const Model* m, const double* q, const double* w, double* v, double h,
                       double step_len, int max_sub, int* nsub) noexcept nogil:
    """Advance ``v`` over ``h`` with the plant frozen; returns -1 on failure."""
    cdef Margins mg
    cdef double u[3]
    cdef double d[4]
    cdef double vs[4]
    cdef double best[4]
    cdef double d0, speed, hs, lo, hi, glo, ghi, s, gs
    cdef int n, j, it, k, side
    if margins(m, q, w, v, &mg) < 0:
        return -1
    d0 = mg.delta
    if not d0 > 0.0:
        nsub[0] = 0
        return 0
    field_rate(m, v, u)
    speed = sqrt(dot3(u, u))
    if speed == 0.0:
        nsub[0] = 0
        return 0
    n = <int>ceil(h * d0 * speed / step_len)
    if n < 1:
        n = 1
    if n > max_sub:
        n = max_sub
    nsub[0] = n
    hs = h / n
    for j in range(n):
        if j > 0:
            if margins(m, q, w, v, &mg) < 0:
                return -1
            d0 = mg.delta
            if not d0 > 0.0:
                return 0
            field_rate(m, v, u)
        kinematic(v, u, d)
        # backward Euler along the ray v(s): s = hs * max(delta(v(s)), 0)
        lo = 0.0
        glo = -hs * d0
        hi = hs * d0
        gs = ray_delta(m, q, w, v, d, hi, vs)
        ghi = hi - hs * (gs if gs > 0.0 else 0.0)
        if ghi <= 0.0:
            for k in range(4):
                v[k] = vs[k]
            continue
        for k in range(4):
            best[k] = v[k]
        side = 0
        for it in range(60):
            # Illinois false position, bracket [lo, hi] with g(lo) < 0 < g(hi)
            s = (lo * ghi - hi * glo) / (ghi - glo)
            if not (s > lo and s < hi):
                s = 0.5 * (lo + hi)
            gs = ray_delta(m, q, w, v, d, s, vs)
            gs = s - hs * (gs if gs > 0.0 else 0.0)
            if gs <= 0.0:
                lo = s
                glo = gs
                for k in range(4):
                    best[k] = vs[k]
                if side == -1:
                    ghi *= 0.5
                side = -1
            else:
                hi = s
                ghi = gs
                if side == 1:
                    glo *= 0.5
                side = 1
            if hi - lo <= 1e-13 * hi or gs == 0.0:
                break
        for k in range(4):
            v[k] = best[k]
    return 0


LOG_COLUMNS = 21
STAT_NAMES = ("min_sat_margin", "min_cone_margin_q", "min_delta", "max_V", "min_theta_v",
              "max_abs_tau", "max_substeps")


cdef inline double min_cone_margin(const Model* m, const double* q) noexcept nogil:
    cdef int idx
    return theta_min(m, q, &idx)


cdef inline void write_row(double[:, :] log, Py_ssize_t row, double t, const double* q, const double* w,
                           const double* v, const Margins* mg, double cq, double sm) noexcept nogil:
    cdef int k
    log[row, 0] = t
    for k in range(4):
        log[row, 1 + k] = q[k]
        log[row, 11 + k] = v[k]
    for k in range(3):
        log[row, 5 + k] = w[k]
        log[row, 8 + k] = mg.tau[k]
    log[row, 15] = mg.delta
    log[row, 16] = mg.delta_e
    log[row, 17] = mg.delta_a
    log[row, 18] = mg.theta_v
    log[row, 19] = cq
    log[row, 20] = sm


def simulate(const double[:] P, const double[:, :] C, q0, w0, v0, double dt, long n_steps,
             long stride, long seed=0, bint destabilization=True, bint saturation=True,
             double step_len=0.01, int max_sub=1000):
    """Co-integrate plant and governor.

    Returns ``(log, stats, status, steps_done)``; ``status`` is 0 on success
    and 2 when the state became non-finite.
    """
    cdef Model m
    load_model(&m, P, C, seed, destabilization, saturation)
    cdef double q[4]
    cdef double w[3]
    cdef double v[4]
    cdef int k, nsub, status = 0
    cdef long step, done = 0
    cdef Py_ssize_t row = 0
    cdef Margins mg
    cdef double cq, sm, t, x
    for k in range(4):
        q[k] = q0[k]
        v[k] = v0[k]
    for k in range(3):
        w[k] = w0[k]
    n_rows = n_steps // stride + 1
    if n_steps % stride:
        n_rows += 1
    log_arr = np.full((n_rows, 21), np.nan)
    cdef double[:, :] log = log_arr
    cdef double st[7]
    st[0] = INFINITY
    st[1] = INFINITY
    st[2] = INFINITY
    st[3] = -INFINITY
    st[4] = INFINITY
    st[5] = 0.0
    st[6] = 0.0
    with nogil:
        step = 0
        while True:
            t = step * dt
            if margins(&m, q, w, v, &mg) < 0:
                status = 2
                break
            cq = min_cone_margin(&m, q)
            sm = sat_margin(&m, mg.tau)
            if sm < st[0]:
                st[0] = sm
            if cq < st[1]:
                st[1] = cq
            if mg.delta < st[2]:
                st[2] = mg.delta
            if mg.V > st[3]:
                st[3] = mg.V
            if mg.theta_v < st[4]:
                st[4] = mg.theta_v
            for k in range(3):
                x = fabs(mg.tau[k])
                if x > st[5]:
                    st[5] = x
            if step % stride == 0 or step == n_steps:
                write_row(log, row, t, q, w, v, &mg, cq, sm)
                row += 1
            done = step
            if step == n_steps:
                break
            if governor_step(&m, q, w, v, dt, step_len, max_sub, &nsub) < 0:
                status = 2
                break
            if nsub > st[6]:
                st[6] = nsub
            if plant_step(&m, q, w, v, dt) < 0:
                status = 2
                break
            step += 1
    stats = {name: st[k] for k, name in enumerate(STAT_NAMES)}
    return log_arr[:row], stats, status, done


def nav_flow(const double[:] P, const double[:, :] C, v0, double dt, long max_steps, double tol,
             long seed=0, bint destabilization=True):
    """RK4 flow of ``2 dv/dt = E(v) rho`` until the geodesic error to ``r`` is below ``tol``.

    Returns ``(v, steps, converged, min_theta, max_potential_rise)``.
    """
    cdef Model m
    load_model(&m, P, C, seed, destabilization, 1)
    cdef double v[4]
    cdef double k1[4]
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double tv[4]
    cdef double u[3]
    cdef double err[4]
    cdef int k, idx
    cdef long step = 0
    cdef bint converged = False
    cdef double th, p, pn, rise = 0.0, min_th = INFINITY, c
    for k in range(4):
        v[k] = v0[k]
    with nogil:
        p = potential(&m, v)
        while True:
            th = theta_min(&m, v, &idx)
            if th < min_th:
                min_th = th
            qmul_conj(v, m.r, err)
            c = sqrt(err[1] * err[1] + err[2] * err[2] + err[3] * err[3])
            if 2.0 * atan2(c, fabs(err[0])) < tol:
                converged = True
                break
            if step >= max_steps:
                break
            stage(&m, v, v, 0.0, k1)
            stage(&m, v, k1, 0.5 * dt, k2)
            stage(&m, v, k2, 0.5 * dt, k3)
            stage(&m, v, k3, dt, k4)
            for k in range(4):
                v[k] = v[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
            if qnormalize(v) < 0:
                break
            pn = potential(&m, v)
            if pn - p > rise:
                rise = pn - p
            p = pn
            step += 1
    return np.array([v[0], v[1], v[2], v[3]]), step, converged, min_th, rise


cdef inline void stage(const Model* m, const double* v, const double* k, double a, double* out) noexcept nogil:
    # 0.5 E(x) rho(x) at x = normalize(v + a k)
    cdef double x[4]
    cdef double u[3]
    cdef double n
    cdef int j
    for j in range(4):
        x[j] = v[j] + a * k[j]
    n = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3])
    for j in range(4):
        x[j] /= n
    field_rate(m, x, u)
    kinematic(x, u, out)
    for j in range(4):
        out[j] *= 0.5


def plant_rollout(const double[:] P, q0, w0, v, double dt, long n_steps):
    """Closed loop with a constant reference; rows are ``t, q(4), omega(3), tau(3), V``."""
    cdef Model m
    cdef double[:, :] C0 = np.zeros((0, 4))
    load_model(&m, P, C0, 0, 0, 1)
    cdef double q[4]
    cdef double w[3]
    cdef double vv[4]
    cdef int k
    cdef long step
    cdef Margins mg
    for k in range(4):
        q[k] = q0[k]
        vv[k] = v[k]
    for k in range(3):
        w[k] = w0[k]
    out_arr = np.full((n_steps + 1, 12), np.nan)
    cdef double[:, :] out = out_arr
    cdef long done = n_steps
    with nogil:
        for step in range(n_steps + 1):
            if margins(&m, q, w, vv, &mg) < 0:
                done = step - 1
                break
            out[step, 0] = step * dt
            for k in range(4):
                out[step, 1 + k] = q[k]
            for k in range(3):
                out[step, 5 + k] = w[k]
                out[step, 8 + k] = mg.tau[k]
            out[step, 11] = mg.V
            if step < n_steps and plant_step(&m, q, w, vv, dt) < 0:
                done = step
                break
    return out_arr[:done + 1]


def field_rate_at(const double[:] P, const double[:, :] C, v, long seed=0, bint destabilization=True):
    """Navigation rate vector at ``v`` (used for parity checks)."""
    cdef Model m
    load_model(&m, P, C, seed, destabilization, 1)
    cdef double vv[4]
    cdef double u[3]
    cdef int k
    for k in range(4):
        vv[k] = v[k]
    field_rate(&m, vv, u)
    return np.array([u[0], u[1], u[2]])


def margins_at(const double[:] P, const double[:, :] C, q, w, v, bint saturation=True):
    """``(delta, delta_e, delta_a, V)`` at one state (used for parity checks)."""
    cdef Model m
    load_model(&m, P, C, 0, 1, saturation)
    cdef double qq[4]
    cdef double ww[3]
    cdef double vv[4]
    cdef Margins mg
    cdef int k
    for k in range(4):
        qq[k] = q[k]
        vv[k] = v[k]
    for k in range(3):
        ww[k] = w[k]
    if margins(&m, qq, ww, vv, &mg) < 0:
        raise ValueError("error quaternion failed to normalize")
    return mg.delta, mg.delta_e, mg.delta_a, mg.V
