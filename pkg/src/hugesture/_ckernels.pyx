# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: scaled HMM recursions and region labeling."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


def forward_scaled(double[::1] pi, double[:, ::1] A, double[:, ::1] B, long[::1] obs):
    cdef Py_ssize_t T = obs.shape[0], K = pi.shape[0], t, i, j
    alpha_arr = np.empty((T, K))
    scale_arr = np.empty(T)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] scale = scale_arr
    _forward(pi, A, B, obs, alpha, scale)
    return alpha_arr, scale_arr


cdef void _forward(double[::1] pi, double[:, ::1] A, double[:, ::1] B, long[::1] obs,
                   double[:, ::1] alpha, double[::1] scale) noexcept nogil:
    cdef Py_ssize_t T = obs.shape[0], K = pi.shape[0], t, i, j
    cdef double s, acc
    s = 0.0
    for i in range(K):
        alpha[0, i] = pi[i] * B[i, obs[0]]
        s += alpha[0, i]
    scale[0] = s
    for i in range(K):
        alpha[0, i] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(K):
            acc = 0.0
            for i in range(K):
                acc += alpha[t - 1, i] * A[i, j]
            acc *= B[j, obs[t]]
            alpha[t, j] = acc
            s += acc
        scale[t] = s
        for j in range(K):
            alpha[t, j] /= s


cdef void _backward(double[:, ::1] A, double[:, ::1] B, long[::1] obs,
                    double[::1] scale, double[:, ::1] beta, double[::1] tmp) noexcept nogil:
    cdef Py_ssize_t T = obs.shape[0], K = A.shape[0], t, i, j
    cdef double acc
    for i in range(K):
        beta[T - 1, i] = 1.0
    for t in range(T - 2, -1, -1):
        for j in range(K):
            tmp[j] = B[j, obs[t + 1]] * beta[t + 1, j]
        for i in range(K):
            acc = 0.0
            for j in range(K):
                acc += A[i, j] * tmp[j]
            beta[t, i] = acc / scale[t + 1]


def backward_scaled(double[:, ::1] A, double[:, ::1] B, long[::1] obs, double[::1] scale):
    cdef Py_ssize_t T = obs.shape[0], K = A.shape[0]
    beta_arr = np.empty((T, K))
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] tmp = np.empty(K)
    _backward(A, B, obs, scale, beta, tmp)
    return beta_arr


def estep(double[::1] pi, double[:, ::1] A, double[:, ::1] B, long[::1] obs,
          double[::1] acc_pi, double[:, ::1] acc_A, double[:, ::1] acc_B):
    cdef Py_ssize_t T = obs.shape[0], K = pi.shape[0], t, i, j
    cdef double[:, ::1] alpha = np.empty((T, K))
    cdef double[:, ::1] beta = np.empty((T, K))
    cdef double[::1] scale = np.empty(T)
    cdef double[::1] tmp = np.empty(K)
    cdef double ll = 0.0, w
    with nogil:
        _forward(pi, A, B, obs, alpha, scale)
        _backward(A, B, obs, scale, beta, tmp)
        for t in range(T):
            ll += log(scale[t])
            for i in range(K):
                acc_B[i, obs[t]] += alpha[t, i] * beta[t, i]
        for i in range(K):
            acc_pi[i] += alpha[0, i] * beta[0, i]
        for t in range(T - 1):
            for j in range(K):
                tmp[j] = B[j, obs[t + 1]] * beta[t + 1, j] / scale[t + 1]
            for i in range(K):
                w = alpha[t, i]
                for j in range(K):
                    acc_A[i, j] += w * A[i, j] * tmp[j]
    return ll


def label_regions(mask):
    """8-connected component labels (0 = background) and region count."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t H = m.shape[0], W = m.shape[1]
    labels_arr = np.zeros((H, W), dtype=np.int32)
    cdef int[:, ::1] lab = labels_arr
    stack_arr = np.empty(H * W, dtype=np.int64)
    cdef long[::1] stack = stack_arr
    cdef Py_ssize_t r, c, rr, cc, top, p
    cdef int dr, dc, n = 0
    with nogil:
        for r in range(H):
            for c in range(W):
                if m[r, c] == 0 or lab[r, c] != 0:
                    continue
                n += 1
                lab[r, c] = n
                top = 0
                stack[top] = r * W + c
                top += 1
                while top > 0:
                    top -= 1
                    p = stack[top]
                    rr = p // W
                    cc = p - rr * W
                    for dr in range(-1, 2):
                        if rr + dr < 0 or rr + dr >= H:
                            continue
                        for dc in range(-1, 2):
                            if cc + dc < 0 or cc + dc >= W:
                                continue
                            if m[rr + dr, cc + dc] != 0 and lab[rr + dr, cc + dc] == 0:
                                lab[rr + dr, cc + dc] = n
                                stack[top] = (rr + dr) * W + cc + dc
                                top += 1
    return labels_arr, int(n)


def region_stats(labels, int n, power):
    cdef int[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.int32)
    cdef double[:, ::1] pw = np.ascontiguousarray(power, dtype=np.float64)
    out_arr = np.zeros((n, 5))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, k
    cdef double v
    with nogil:
        for r in range(lab.shape[0]):
            for c in range(lab.shape[1]):
                k = lab[r, c]
                if k == 0:
                    continue
                k -= 1
                v = pw[r, c]
                out[k, 0] += 1
                out[k, 1] += v
                out[k, 2] += v * r
                out[k, 3] += v * c
                if v > out[k, 4]:
                    out[k, 4] = v
    return out_arr
