# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tail fixed-point iteration, one-dimensional configurations.

Same contract as the `tail_fixed_point` in the NumPy backend, restricted to
n = 1 (theta shaped (B, 2, nm)).  The win over BLAS-backed NumPy is dispatch
overhead on the small batches produced by Newton polishing; the package
falls back to the NumPy kernel for n > 1 and for large batches.
"""

from libc.math cimport sin, fabs

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"

cdef double _STALL = 1e-13


def tail_fixed_point(
    double[:, ::1] PHI,
    double[:, ::1] A0,
    double[:, ::1] V,
    double[::1] w,
    double[:, ::1] AT,
    double[:, ::1] WT,
    theta_in,
    x_in,
    lsym_in,
    double pamp,
    wvec_in,
    double mass,
    double tol,
    int max_iter,
    int n_exact=0,
    F0=None,
):
    theta_arr = np.ascontiguousarray(theta_in, dtype=np.float64)
    if theta_arr.shape[1] != 2:
        raise ValueError("compiled kernel requires one spatial dimension")
    cdef double[:, :, ::1] theta = theta_arr
    x_arr = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] x = x_arr
    cdef double ell = np.asarray(lsym_in, dtype=np.float64).reshape(())[()] \
        if np.asarray(lsym_in).size == 1 else np.asarray(lsym_in, dtype=np.float64)[0, 0]
    cdef double wv = np.asarray(wvec_in, dtype=np.float64).ravel()[0]

    cdef Py_ssize_t B = theta.shape[0]
    cdef Py_ssize_t nm = theta.shape[2]
    cdef Py_ssize_t nn = V.shape[0]

    F_arr = (
        np.zeros((B, 2, nn)) if F0 is None else np.ascontiguousarray(F0, dtype=np.float64).copy()
    )
    cdef double[:, :, ::1] F = F_arr
    delta_arr = np.full(B, np.inf)
    rate_arr = np.zeros(B)
    iters_arr = np.zeros(B, dtype=np.intp)
    cdef double[::1] delta = delta_arr
    cdef double[::1] rate = rate_arr
    cdef Py_ssize_t[::1] iters = iters_arr

    buf = np.zeros((6, nn))
    cdef double[:, ::1] work = buf
    # rows: 0 base_ip, 1 base_ix, 2 Cx, 3 Cp, 4 gx, 5 scratch
    coef = np.zeros(nm)
    cdef double[::1] cf = coef

    cdef Py_ssize_t b, i, j, m, it, n_steps
    cdef double acc, g, step, scale, prev, xb, ratio, d, fmax
    cdef bint fixed = n_exact > 0

    n_steps = n_exact if fixed else max_iter

    for b in range(B):
        xb = x[b, 0]
        for j in range(nn):
            acc = 0.0
            g = 0.0
            for m in range(nm):
                acc += A0[j, m] * theta[b, 1, m]
                g += AT[j, m] * theta[b, 0, m]
            work[0, j] = acc
            work[1, j] = g
        prev = -1.0
        for it in range(1, n_steps + 1):
            fmax = 0.0
            for j in range(nn):
                acc = work[0, j]
                g = xb - work[1, j]
                for i in range(nn):
                    acc += V[j, i] * F[b, 1, i]
                    g -= WT[j, i] * F[b, 0, i]
                work[2, j] = acc / mass
                work[4, j] = g
            for j in range(nn):
                g = work[4, j]
                work[3, j] = -(ell * g)
                if pamp != 0.0:
                    work[3, j] += pamp * sin(wv * g) * wv
            # remove the low band from each component
            for m in range(nm):
                acc = 0.0
                for j in range(nn):
                    acc += w[j] * work[2, j] * PHI[j, m]
                cf[m] = acc
            for j in range(nn):
                acc = work[2, j]
                for m in range(nm):
                    acc -= PHI[j, m] * cf[m]
                work[2, j] = acc
            for m in range(nm):
                acc = 0.0
                for j in range(nn):
                    acc += w[j] * work[3, j] * PHI[j, m]
                cf[m] = acc
            for j in range(nn):
                acc = work[3, j]
                for m in range(nm):
                    acc -= PHI[j, m] * cf[m]
                work[3, j] = acc
            # update, measuring the sup step and new sup norm
            step = 0.0
            for j in range(nn):
                d = fabs(work[2, j] - F[b, 0, j])
                if d > step:
                    step = d
                d = fabs(work[3, j] - F[b, 1, j])
                if d > step:
                    step = d
                F[b, 0, j] = work[2, j]
                F[b, 1, j] = work[3, j]
                d = fabs(work[2, j])
                if d > fmax:
                    fmax = d
                d = fabs(work[3, j])
                if d > fmax:
                    fmax = d
            scale = 1.0 + fmax
            if it >= 2 and prev > _STALL * scale and step > _STALL * scale:
                ratio = step / prev
                if ratio > rate[b]:
                    rate[b] = ratio
            delta[b] = step
            iters[b] = it
            if not fixed:
                if step <= tol * scale:
                    break
                if step <= _STALL * scale:
                    break
                if it >= 2 and step <= 1e-11 * scale and step >= 0.9 * prev:
                    break
            prev = step
    return F_arr, delta_arr, iters_arr, rate_arr
