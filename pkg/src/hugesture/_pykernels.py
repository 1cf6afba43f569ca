"""Reference implementations of the hot kernels (numpy/scipy only).

Signatures match the compiled ``_ckernels`` module exactly; see
:mod:`hugesture.kernels` for the selection logic.
"""

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)


def forward_scaled(pi, A, B, obs):
    """Scaled forward pass.

    Returns ``(alpha, scale)`` where each row of ``alpha`` sums to one and
    ``log p(obs) = sum(log(scale))``.
    """
    T = len(obs)
    K = len(pi)
    alpha = np.empty((T, K))
    scale = np.empty(T)
    a = pi * B[:, obs[0]]
    s = a.sum()
    alpha[0] = a / s
    scale[0] = s
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * B[:, obs[t]]
        s = a.sum()
        alpha[t] = a / s
        scale[t] = s
    return alpha, scale


def backward_scaled(A, B, obs, scale):
    T = len(obs)
    K = A.shape[0]
    beta = np.empty((T, K))
    beta[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (B[:, obs[t + 1]] * beta[t + 1])) / scale[t + 1]
    return beta


def estep(pi, A, B, obs, acc_pi, acc_A, acc_B):
    """Add one sequence's expected counts into the accumulators; return its log-likelihood."""
    alpha, scale = forward_scaled(pi, A, B, obs)
    beta = backward_scaled(A, B, obs, scale)
    gamma = alpha * beta
    acc_pi += gamma[0]
    if len(obs) > 1:
        # xi_t(i, j) = alpha_t(i) A(i, j) B(j, o_{t+1}) beta_{t+1}(j) / scale_{t+1}
        w = B[:, obs[1:]].T * beta[1:] / scale[1:, None]
        acc_A += A * (alpha[:-1].T @ w)
    np.add.at(acc_B.T, obs, gamma)
    return float(np.log(scale).sum())


def label_regions(mask):
    """8-connected component labels (0 = background) and region count."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    return labels.astype(np.int32), int(n)


def region_stats(labels, n, power):
    """Per-region (count, power sum, power-weighted row/col sums, peak power).

    Returns a float64 array of shape (n, 5); row i describes label i + 1.
    """
    flat = labels.ravel()
    w = power.ravel()
    rows, cols = np.indices(labels.shape)
    out = np.zeros((n, 5))
    if n == 0:
        return out
    m = n + 1
    out[:, 0] = np.bincount(flat, minlength=m)[1:]
    out[:, 1] = np.bincount(flat, weights=w, minlength=m)[1:]
    out[:, 2] = np.bincount(flat, weights=w * rows.ravel(), minlength=m)[1:]
    out[:, 3] = np.bincount(flat, weights=w * cols.ravel(), minlength=m)[1:]
    peak = np.zeros(m)
    np.maximum.at(peak, flat, w)
    out[:, 4] = peak[1:]
    return out
