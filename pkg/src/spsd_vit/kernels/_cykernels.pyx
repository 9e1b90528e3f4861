# cython: boundscheck=False, wraparound=False
"""Compiled implementations of the hot kernels.

Signature-identical to ``_pykernels``; see that module for the shape and
dtype contract.

The numeric loops live in verbatim C with restrict-qualified pointers.
Every array a kernel touches is a distinct allocation, and telling the
compiler so matters for more than speed: without the no-overlap
guarantee it emits runtime alias checks and falls back to scalar code
whenever two arrays happen to sit close together in memory, so results
would depend on where the allocator placed them.  With restrict each
loop compiles to a single unconditional code path and a kernel's output
is a function of its input values alone.
"""

from libc.stddef cimport ptrdiff_t

import numpy as np

BACKEND_NAME = "cython"

ctypedef fused floating:
    float
    double

cdef extern from *:
    r"""
    #include <math.h>
    #include <stddef.h>

    #define GELU_K 0.7978845608028654 /* sqrt(2 / pi) */
    #define GELU_C 0.044715

    #define DEF_LN_FWD(NAME, T, SQRT)                                    \
    static void NAME(const T *restrict x, const T *restrict gamma,       \
                     const T *restrict beta, T *restrict y,              \
                     T *restrict mean, T *restrict rstd,                 \
                     ptrdiff_t R, ptrdiff_t D, double eps)               \
    {                                                                    \
        for (ptrdiff_t r = 0; r < R; r++) {                              \
            const T *xr = x + r * D;                                     \
            T *yr = y + r * D;                                           \
            T acc = 0;                                                   \
            for (ptrdiff_t d = 0; d < D; d++)                            \
                acc += xr[d];                                            \
            const T mu = acc / D;                                        \
            acc = 0;                                                     \
            for (ptrdiff_t d = 0; d < D; d++) {                          \
                const T diff = xr[d] - mu;                               \
                acc += diff * diff;                                      \
            }                                                            \
            const T var = acc / D;                                       \
            const T rs = (T)(1.0 / SQRT(var + (T)eps));                  \
            mean[r] = mu;                                                \
            rstd[r] = rs;                                                \
            for (ptrdiff_t d = 0; d < D; d++)                            \
                yr[d] = (xr[d] - mu) * rs * gamma[d] + beta[d];          \
        }                                                                \
    }
    DEF_LN_FWD(ln_fwd_f32, float, sqrtf)
    DEF_LN_FWD(ln_fwd_f64, double, sqrt)

    #define DEF_LN_BWD(NAME, T)                                          \
    static void NAME(const T *restrict dy, const T *restrict x,          \
                     const T *restrict gamma, const T *restrict mean,    \
                     const T *restrict rstd, T *restrict dx,             \
                     T *restrict dgamma, T *restrict dbeta,              \
                     ptrdiff_t R, ptrdiff_t D)                           \
    {                                                                    \
        for (ptrdiff_t r = 0; r < R; r++) {                              \
            const T *dyr = dy + r * D;                                   \
            const T *xr = x + r * D;                                     \
            T *dxr = dx + r * D;                                         \
            const T mu = mean[r], rs = rstd[r];                          \
            T m1 = 0, m2 = 0;                                            \
            for (ptrdiff_t d = 0; d < D; d++) {                          \
                const T xhat = (xr[d] - mu) * rs;                        \
                const T dxh = dyr[d] * gamma[d];                         \
                m1 += dxh;                                               \
                m2 += dxh * xhat;                                        \
                dgamma[d] += dyr[d] * xhat;                              \
                dbeta[d] += dyr[d];                                      \
            }                                                            \
            m1 /= D;                                                     \
            m2 /= D;                                                     \
            for (ptrdiff_t d = 0; d < D; d++) {                          \
                const T xhat = (xr[d] - mu) * rs;                        \
                const T dxh = dyr[d] * gamma[d];                         \
                dxr[d] = rs * (dxh - m1 - xhat * m2);                    \
            }                                                            \
        }                                                                \
    }
    DEF_LN_BWD(ln_bwd_f32, float)
    DEF_LN_BWD(ln_bwd_f64, double)

    #define DEF_SOFTMAX_FWD(NAME, T, EXP)                                \
    static void NAME(const T *restrict x, T *restrict p,                 \
                     ptrdiff_t R, ptrdiff_t D)                           \
    {                                                                    \
        for (ptrdiff_t r = 0; r < R; r++) {                              \
            const T *xr = x + r * D;                                     \
            T *pr = p + r * D;                                           \
            T mx = xr[0];                                                \
            for (ptrdiff_t d = 1; d < D; d++)                            \
                if (xr[d] > mx)                                          \
                    mx = xr[d];                                          \
            T acc = 0;                                                   \
            for (ptrdiff_t d = 0; d < D; d++) {                          \
                const T e = EXP(xr[d] - mx);                             \
                pr[d] = e;                                               \
                acc += e;                                                \
            }                                                            \
            acc = (T)1.0 / acc;                                          \
            for (ptrdiff_t d = 0; d < D; d++)                            \
                pr[d] *= acc;                                            \
        }                                                                \
    }
    DEF_SOFTMAX_FWD(softmax_fwd_f32, float, expf)
    DEF_SOFTMAX_FWD(softmax_fwd_f64, double, exp)

    #define DEF_SOFTMAX_BWD(NAME, T)                                     \
    static void NAME(const T *restrict dp, const T *restrict p,          \
                     T *restrict dx, ptrdiff_t R, ptrdiff_t D)           \
    {                                                                    \
        for (ptrdiff_t r = 0; r < R; r++) {                              \
            const T *dpr = dp + r * D;                                   \
            const T *pr = p + r * D;                                     \
            T *dxr = dx + r * D;                                         \
            T inner = 0;                                                 \
            for (ptrdiff_t d = 0; d < D; d++)                            \
                inner += dpr[d] * pr[d];                                 \
            for (ptrdiff_t d = 0; d < D; d++)                            \
                dxr[d] = pr[d] * (dpr[d] - inner);                       \
        }                                                                \
    }
    DEF_SOFTMAX_BWD(softmax_bwd_f32, float)
    DEF_SOFTMAX_BWD(softmax_bwd_f64, double)

    #define DEF_GELU_FWD(NAME, T, TANH)                                  \
    static void NAME(const T *restrict x, T *restrict y, ptrdiff_t n)    \
    {                                                                    \
        for (ptrdiff_t i = 0; i < n; i++) {                              \
            const T v = x[i];                                            \
            const T u = (T)GELU_K * (v + (T)GELU_C * v * v * v);         \
            const T t = TANH(u);                                         \
            y[i] = (T)0.5 * v * ((T)1.0 + t);                            \
        }                                                                \
    }
    DEF_GELU_FWD(gelu_fwd_f32, float, tanhf)
    DEF_GELU_FWD(gelu_fwd_f64, double, tanh)

    #define DEF_GELU_BWD(NAME, T, TANH)                                  \
    static void NAME(const T *restrict dy, const T *restrict x,          \
                     T *restrict dx, ptrdiff_t n)                        \
    {                                                                    \
        for (ptrdiff_t i = 0; i < n; i++) {                              \
            const T v = x[i];                                            \
            const T v2 = v * v;                                          \
            const T u = (T)GELU_K * (v + (T)GELU_C * v * v2);            \
            const T t = TANH(u);                                         \
            const T du = (T)GELU_K * ((T)1.0 + (T)3.0 * (T)GELU_C * v2); \
            dx[i] = dy[i] * ((T)0.5 * ((T)1.0 + t)                       \
                             + (T)0.5 * v * ((T)1.0 - t * t) * du);      \
        }                                                                \
    }
    DEF_GELU_BWD(gelu_bwd_f32, float, tanhf)
    DEF_GELU_BWD(gelu_bwd_f64, double, tanh)

    #define DEF_ADAMW(NAME, T, SQRT)                                     \
    static void NAME(T *restrict param, const T *restrict grad,          \
                     T *restrict m, T *restrict v, ptrdiff_t n,          \
                     double lr, double beta1, double beta2, double eps,  \
                     double weight_decay, double bc1, double bc2)        \
    {                                                                    \
        const T b1 = (T)beta1, b2 = (T)beta2, one = (T)1.0;              \
        const T lr_t = (T)lr, eps_t = (T)eps, wd = (T)weight_decay;      \
        const T bc1_t = (T)bc1, bc2_t = (T)bc2;                          \
        for (ptrdiff_t i = 0; i < n; i++) {                              \
            const T g = grad[i];                                         \
            m[i] = b1 * m[i] + (one - b1) * g;                           \
            v[i] = b2 * v[i] + (one - b2) * g * g;                       \
            const T denom = SQRT(v[i] / bc2_t) + eps_t;                  \
            param[i] -= lr_t * (m[i] / (bc1_t * denom) + wd * param[i]); \
        }                                                                \
    }
    DEF_ADAMW(adamw_f32, float, sqrtf)
    DEF_ADAMW(adamw_f64, double, sqrt)
    """
    void ln_fwd_f32(const float *x, const float *gamma, const float *beta,
                    float *y, float *mean, float *rstd,
                    ptrdiff_t R, ptrdiff_t D, double eps) nogil
    void ln_fwd_f64(const double *x, const double *gamma, const double *beta,
                    double *y, double *mean, double *rstd,
                    ptrdiff_t R, ptrdiff_t D, double eps) nogil
    void ln_bwd_f32(const float *dy, const float *x, const float *gamma,
                    const float *mean, const float *rstd, float *dx,
                    float *dgamma, float *dbeta,
                    ptrdiff_t R, ptrdiff_t D) nogil
    void ln_bwd_f64(const double *dy, const double *x, const double *gamma,
                    const double *mean, const double *rstd, double *dx,
                    double *dgamma, double *dbeta,
                    ptrdiff_t R, ptrdiff_t D) nogil
    void softmax_fwd_f32(const float *x, float *p,
                         ptrdiff_t R, ptrdiff_t D) nogil
    void softmax_fwd_f64(const double *x, double *p,
                         ptrdiff_t R, ptrdiff_t D) nogil
    void softmax_bwd_f32(const float *dp, const float *p, float *dx,
                         ptrdiff_t R, ptrdiff_t D) nogil
    void softmax_bwd_f64(const double *dp, const double *p, double *dx,
                         ptrdiff_t R, ptrdiff_t D) nogil
    void gelu_fwd_f32(const float *x, float *y, ptrdiff_t n) nogil
    void gelu_fwd_f64(const double *x, double *y, ptrdiff_t n) nogil
    void gelu_bwd_f32(const float *dy, const float *x, float *dx,
                      ptrdiff_t n) nogil
    void gelu_bwd_f64(const double *dy, const double *x, double *dx,
                      ptrdiff_t n) nogil
    void adamw_f32(float *param, const float *grad, float *m, float *v,
                   ptrdiff_t n, double lr, double beta1, double beta2,
                   double eps, double weight_decay,
                   double bc1, double bc2) nogil
    void adamw_f64(double *param, const double *grad, double *m, double *v,
                   ptrdiff_t n, double lr, double beta1, double beta2,
                   double eps, double weight_decay,
                   double bc1, double bc2) nogil


def layer_norm_forward(floating[:, ::1] x, floating[::1] gamma,
                       floating[::1] beta, double eps):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((R, D), dtype=dtype)
    mean_arr = np.empty(R, dtype=dtype)
    rstd_arr = np.empty(R, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    with nogil:
        if floating is float:
            ln_fwd_f32(&x[0, 0], &gamma[0], &beta[0],
                       &y[0, 0], &mean[0], &rstd[0], R, D, eps)
        else:
            ln_fwd_f64(&x[0, 0], &gamma[0], &beta[0],
                       &y[0, 0], &mean[0], &rstd[0], R, D, eps)
    return y_arr, mean_arr, rstd_arr


def layer_norm_backward(floating[:, ::1] dy, floating[:, ::1] x,
                        floating[::1] gamma, floating[::1] mean,
                        floating[::1] rstd):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.empty((R, D), dtype=dtype)
    dgamma_arr = np.zeros(D, dtype=dtype)
    dbeta_arr = np.zeros(D, dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgamma = dgamma_arr
    cdef floating[::1] dbeta = dbeta_arr
    with nogil:
        if floating is float:
            ln_bwd_f32(&dy[0, 0], &x[0, 0], &gamma[0], &mean[0], &rstd[0],
                       &dx[0, 0], &dgamma[0], &dbeta[0], R, D)
        else:
            ln_bwd_f64(&dy[0, 0], &x[0, 0], &gamma[0], &mean[0], &rstd[0],
                       &dx[0, 0], &dgamma[0], &dbeta[0], R, D)
    return dx_arr, dgamma_arr, dbeta_arr


def softmax_forward(floating[:, ::1] x):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    p_arr = np.empty((R, D), dtype=dtype)
    cdef floating[:, ::1] p = p_arr
    with nogil:
        if floating is float:
            softmax_fwd_f32(&x[0, 0], &p[0, 0], R, D)
        else:
            softmax_fwd_f64(&x[0, 0], &p[0, 0], R, D)
    return p_arr


def softmax_backward(floating[:, ::1] dp, floating[:, ::1] p):
    cdef Py_ssize_t R = p.shape[0], D = p.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.empty((R, D), dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    with nogil:
        if floating is float:
            softmax_bwd_f32(&dp[0, 0], &p[0, 0], &dx[0, 0], R, D)
        else:
            softmax_bwd_f64(&dp[0, 0], &p[0, 0], &dx[0, 0], R, D)
    return dx_arr


def gelu_forward(x):
    out = np.empty_like(x, order="C")
    _gelu_fwd_flat(x.ravel(), out.ravel())
    return out


def gelu_backward(dy, x):
    out = np.empty_like(x, order="C")
    _gelu_bwd_flat(dy.ravel(), x.ravel(), out.ravel())
    return out


def _gelu_fwd_flat(floating[::1] x, floating[::1] y):
    cdef Py_ssize_t n = x.shape[0]
    with nogil:
        if floating is float:
            gelu_fwd_f32(&x[0], &y[0], n)
        else:
            gelu_fwd_f64(&x[0], &y[0], n)


def _gelu_bwd_flat(floating[::1] dy, floating[::1] x, floating[::1] dx):
    cdef Py_ssize_t n = x.shape[0]
    with nogil:
        if floating is float:
            gelu_bwd_f32(&dy[0], &x[0], &dx[0], n)
        else:
            gelu_bwd_f64(&dy[0], &x[0], &dx[0], n)


def adamw_update(floating[::1] param, floating[::1] grad, floating[::1] m,
                 floating[::1] v, long step, double lr, double beta1,
                 double beta2, double eps, double weight_decay):
    cdef Py_ssize_t n = param.shape[0]
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    with nogil:
        if floating is float:
            adamw_f32(&param[0], &grad[0], &m[0], &v[0], n,
                      lr, beta1, beta2, eps, weight_decay, bc1, bc2)
        else:
            adamw_f64(&param[0], &grad[0], &m[0], &v[0], n,
                      lr, beta1, beta2, eps, weight_decay, bc1, bc2)
