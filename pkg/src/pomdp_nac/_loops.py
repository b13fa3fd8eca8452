"""Compiled sequential loops for the projected TD and SGD recursions.

Sampling is done up front in vectorized numpy; only the iterate recursion,
which cannot be batched, runs here.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _project(v, R):
    n = np.sqrt(np.dot(v, v))
    if n > R:
        v *= R / n


@njit(cache=True)
def projected_td(psi, start, end, returns, gamma_m, alpha, R, every):
    """Run ``beta <- Proj_R(beta + alpha * delta * psi[start])`` over pre-drawn samples.

    Returns the average of ``beta_0..beta_{K-1}``, the final iterate,
    per-iteration ``(|beta_t|, delta_t, |g_t|)`` and the running average
    after every ``every`` iterations.
    """
    K = start.shape[0]
    d = psi.shape[1]
    beta = np.zeros(d)
    total = np.zeros(d)
    log = np.empty((K, 3))
    marks = np.empty((K // every, d))
    for t in range(K):
        total += beta
        if (t + 1) % every == 0:
            marks[(t + 1) // every - 1] = total / (t + 1)
        p0 = psi[start[t]]
        delta = returns[t] + gamma_m * np.dot(beta, psi[end[t]]) - np.dot(beta, p0)
        log[t, 0] = np.sqrt(np.dot(beta, beta))
        log[t, 1] = delta
        log[t, 2] = abs(delta) * np.sqrt(np.dot(p0, p0))
        beta += alpha * delta * p0
        _project(beta, R)
    return total / K, beta, log, marks


@njit(cache=True)
def projected_sgd(score, target, idx, zeta, R):
    """Run ``w <- Proj_R(w - zeta * 2(<g,w> - A) g)`` from ``w = 0``.

    Returns the average of ``w_0..w_{N-1}``, the final iterate and the
    per-step squared residual at the pre-update iterate.
    """
    N = idx.shape[0]
    d = score.shape[1]
    w = np.zeros(d)
    total = np.zeros(d)
    loss = np.empty(N)
    max_norm = 0.0
    for k in range(N):
        total += w
        g = score[idx[k]]
        resid = np.dot(g, w) - target[idx[k]]
        loss[k] = resid * resid
        w -= zeta * 2.0 * resid * g
        _project(w, R)
        n = np.sqrt(np.dot(w, w))
        if n > max_norm:
            max_norm = n
    return total / N, w, loss, max_norm
