# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: BPR gradients, context vectors, fused Adam."""

import numpy as np
from libc.math cimport exp, log1p, pow, sqrt


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def bpr_grad(double[:, ::1] P, double[::1] beta,
             long long[::1] long_ptr, int[::1] long_idx,
             long long[::1] short_ptr, int[::1] short_idx, double[::1] short_w,
             long long[::1] rows, long long[::1] pos, long long[::1] neg,
             double alpha, double a, double b, double scale,
             double[:, ::1] gP, double[::1] gbeta):
    cdef Py_ssize_t n_trip = rows.shape[0], k = P.shape[1]
    cdef Py_ssize_t n, j, q, r, lo, hi, slo, shi, side, c, item
    cdef int in_j
    cdef Py_ssize_t n_j
    cdef double loss = 0.0, x, g, e, w, acc
    cdef double[::1] S = np.zeros(k)
    cdef double[::1] st = np.zeros(k)
    cdef double[:, ::1] d = np.zeros((2, k))
    cdef double[::1] coef = np.zeros(2)
    cdef double[::1] sc = np.zeros(2)
    cdef long long[2] cand

    with nogil:
        for n in range(n_trip):
            r = rows[n]
            lo = long_ptr[r]
            hi = long_ptr[r + 1]
            slo = short_ptr[r]
            shi = short_ptr[r + 1]
            for q in range(k):
                S[q] = 0.0
                st[q] = 0.0
            for j in range(lo, hi):
                item = long_idx[j]
                for q in range(k):
                    S[q] += P[item, q]
            if b != 0.0:
                for j in range(slo, shi):
                    item = short_idx[j]
                    w = short_w[j]
                    for q in range(k):
                        st[q] += w * P[item, q]
            cand[0] = pos[n]
            cand[1] = neg[n]
            for side in range(2):
                c = cand[side]
                in_j = 0
                for j in range(lo, hi):
                    if long_idx[j] == c:
                        in_j = 1
                        break
                n_j = (hi - lo) - in_j
                if a != 0.0 and n_j > 0:
                    coef[side] = 1.0 / pow(<double>n_j, alpha)
                else:
                    coef[side] = 0.0
                acc = 0.0
                for q in range(k):
                    if coef[side] != 0.0:
                        if in_j:
                            x = a * (S[q] - P[c, q]) * coef[side]
                        else:
                            x = a * S[q] * coef[side]
                    else:
                        x = 0.0
                    x = x + b * st[q] - P[c, q]
                    d[side, q] = x
                    acc += x * x
                sc[side] = -(beta[c] + acc)
            x = sc[0] - sc[1]
            loss += _softplus(-x)
            g = -_sigmoid(-x) * scale
            for side in range(2):
                c = cand[side]
                e = g if side == 0 else -g
                gbeta[c] -= e
                for q in range(k):
                    gP[c, q] += 2.0 * e * d[side, q]
                if coef[side] != 0.0:
                    for j in range(lo, hi):
                        item = long_idx[j]
                        if item == c:
                            continue
                        for q in range(k):
                            gP[item, q] += a * coef[side] * (-2.0 * e * d[side, q])
                if b != 0.0:
                    for j in range(slo, shi):
                        item = short_idx[j]
                        w = short_w[j]
                        for q in range(k):
                            gP[item, q] += b * w * (-2.0 * e * d[side, q])
    return loss


def context_vectors(double[:, ::1] P, long long[::1] long_ptr, int[::1] long_idx,
                    long long[::1] short_ptr, int[::1] short_idx, double[::1] short_w,
                    long long[::1] rows, double alpha, double a, double b):
    cdef Py_ssize_t n_rows = rows.shape[0], k = P.shape[1]
    V_arr = np.zeros((n_rows, k))
    cdef double[:, ::1] V = V_arr
    cdef Py_ssize_t n, j, q, r, lo, hi, item
    cdef double f, w
    with nogil:
        for n in range(n_rows):
            r = rows[n]
            if a != 0.0:
                lo = long_ptr[r]
                hi = long_ptr[r + 1]
                if hi > lo:
                    f = a / pow(<double>(hi - lo), alpha)
                    for j in range(lo, hi):
                        item = long_idx[j]
                        for q in range(k):
                            V[n, q] += f * P[item, q]
            if b != 0.0:
                for j in range(short_ptr[r], short_ptr[r + 1]):
                    item = short_idx[j]
                    w = b * short_w[j]
                    for q in range(k):
                        V[n, q] += w * P[item, q]
    return V_arr


def adam_step(theta_arr, grad_arr, m_arr, v_arr, double lr, double beta1, double beta2,
              double eps, long long t, double l2):
    cdef double[::1] theta = theta_arr.reshape(-1)
    cdef double[::1] grad = grad_arr.reshape(-1)
    cdef double[::1] m = m_arr.reshape(-1)
    cdef double[::1] v = v_arr.reshape(-1)
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double g, bc1 = 1.0 - pow(beta1, <double>t), bc2 = 1.0 - pow(beta2, <double>t)
    with nogil:
        for i in range(n):
            g = grad[i]
            if l2 != 0.0:
                g = g + (2.0 * l2) * theta[i]
            m[i] = m[i] * beta1 + (1.0 - beta1) * g
            v[i] = v[i] * beta2 + (1.0 - beta2) * (g * g)
            theta[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
