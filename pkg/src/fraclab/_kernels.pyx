# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled extension kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cosh, pow, tgamma, NAN

cnp.import_array()

cdef double _DE_STEP = 0.125
cdef double _DE_CUTOFF = 60.0
cdef double _SERIES_MAX_R = 2.0
cdef int _SERIES_TERMS = 30
MODE_CUTOFF = 60.0
cdef double _MODE_CUTOFF = 60.0


# trapezoid nodes t_k = k * _DE_STEP tabulated once per call; enough for
# r * (cosh t - 1) to pass the cutoff whenever r > 1e-9
DEF _NT = 200


cdef struct Ctx:
    double s
    double pref      # 2^(1-s) / Gamma(s)
    double g1m       # Gamma(1-s)
    double a0        # 1 / Gamma(1-s)
    double b0        # 1 / Gamma(1+s)
    double chm1[_NT]      # cosh(t_k) - 1
    double cnu[_NT]       # cosh(s t_k)
    double cnu1[_NT]      # cosh((1-s) t_k)


cdef void _init(Ctx* c, double s) nogil:
    cdef int k
    cdef double t
    c.s = s
    c.pref = pow(2.0, 1 - s) / tgamma(s)
    c.g1m = tgamma(1.0 - s)
    c.a0 = 1.0 / c.g1m
    c.b0 = 1.0 / tgamma(1.0 + s)
    for k in range(_NT):
        t = k * _DE_STEP
        c.chm1[k] = cosh(t) - 1.0
        c.cnu[k] = cosh(s * t)
        c.cnu1[k] = cosh((1.0 - s) * t)


cdef double _kscaled_direct(double nu, double r) nogil:
    cdef double t = 0.0, w = 0.5, acc = 0.0, expo
    while True:
        expo = r * (cosh(t) - 1.0)
        if expo >= _DE_CUTOFF:
            break
        acc += w * exp(-expo) * cosh(nu * t)
        t += _DE_STEP
        w = 1.0
    return acc * _DE_STEP


cdef double _kscaled_tab(const double* chm1, const double* cn, double nu, double r) nogil:
    cdef double acc = 0.5 * cn[0], expo
    cdef int k
    for k in range(1, _NT):
        expo = r * chm1[k]
        if expo >= _DE_CUTOFF:
            return acc * _DE_STEP
        acc += exp(-expo) * cn[k]
    return _kscaled_direct(nu, r)


cdef inline void _series(const Ctx* c, double r, double* sa, double* sb,
                         double* da, double* db) nogil:
    cdef double q = 0.25 * r * r, s = c.s
    cdef double a = c.a0
    cdef double b = c.b0
    cdef int j
    sa[0] = a
    sb[0] = b
    da[0] = 0.0
    db[0] = s * b
    for j in range(1, _SERIES_TERMS):
        a = a * q / (j * (j - s))
        b = b * q / (j * (j + s))
        sa[0] += a
        sb[0] += b
        da[0] += j * a
        db[0] += (j + s) * b
        if a < 1e-17 * sa[0] and b < 1e-17 * sb[0] and j * a < 1e-17 * da[0]:
            break


cdef double _rho(const Ctx* c, double r) nogil:
    cdef double sa, sb, da, db
    if r <= _SERIES_MAX_R:
        _series(c, r, &sa, &sb, &da, &db)
        return c.g1m * (sa - pow(0.5 * r, 2 * c.s) * sb)
    return c.pref * pow(r, c.s) * exp(-r) * _kscaled_tab(c.chm1, c.cnu, c.s, r)


cdef double _drho(const Ctx* c, double r) nogil:
    cdef double sa, sb, da, db, half
    if r <= _SERIES_MAX_R:
        _series(c, r, &sa, &sb, &da, &db)
        half = 0.5 * r
        return c.g1m * (da / half - db * pow(half, 2 * c.s - 1))
    return -c.pref * pow(r, c.s) * exp(-r) * _kscaled_tab(c.chm1, c.cnu1, 1.0 - c.s, r)


def bessel_k_scaled(double nu, r):
    cdef cnp.ndarray[cnp.double_t, ndim=1] rr = np.ascontiguousarray(np.atleast_1d(r), dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.double_t, ndim=1] out = np.empty_like(rr)
    cdef Ctx c
    cdef Py_ssize_t i
    _init(&c, nu)
    for i in range(rr.shape[0]):
        out[i] = _kscaled_tab(c.chm1, c.cnu, nu, rr[i])
    return out.reshape(np.shape(r))


def rho(r, double s):
    cdef cnp.ndarray[cnp.double_t, ndim=1] rr = np.ascontiguousarray(np.atleast_1d(r), dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.double_t, ndim=1] out = np.empty_like(rr)
    cdef Ctx c
    cdef Py_ssize_t i
    _init(&c, s)
    for i in range(rr.shape[0]):
        out[i] = _rho(&c, rr[i])
    return out


def drho(r, double s):
    cdef cnp.ndarray[cnp.double_t, ndim=1] rr = np.ascontiguousarray(np.atleast_1d(r), dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.double_t, ndim=1] out = np.empty_like(rr)
    cdef Ctx c
    cdef Py_ssize_t i
    _init(&c, s)
    for i in range(rr.shape[0]):
        out[i] = _drho(&c, rr[i])
    return out


def mode_sum(coef, kappa, t, double s, int deriv=0):
    cdef cnp.ndarray[cnp.double_t, ndim=1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef cnp.ndarray[cnp.double_t, ndim=1] k = np.ascontiguousarray(kappa, dtype=np.float64)
    cdef cnp.ndarray[cnp.double_t, ndim=1] tt = np.ascontiguousarray(np.atleast_1d(t), dtype=np.float64)
    cdef cnp.ndarray[cnp.double_t, ndim=1] out = np.empty(tt.shape[0])
    cdef Ctx c
    cdef double acc, ti, arg
    cdef Py_ssize_t i, m, nm = cf.shape[0]
    with nogil:
        _init(&c, s)
        for i in range(tt.shape[0]):
            ti = tt[i]
            acc = 0.0
            if ti <= 0.0:
                if deriv == 0:
                    for m in range(nm):
                        acc += cf[m]
                else:
                    acc = NAN
                out[i] = acc
                continue
            for m in range(nm):
                arg = k[m] * ti
                if arg > _MODE_CUTOFF:
                    break
                if deriv == 0:
                    acc += cf[m] * _rho(&c, arg)
                else:
                    acc += cf[m] * _drho(&c, arg)
            out[i] = acc
    return out
