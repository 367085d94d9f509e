"""numba-compiled kernel implementations (same contracts as numpy_impl)."""

import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_POW_M53 = 2.0**-53


@njit(cache=True)
def splitmix_fill_uniform(states, out):
    n, k = out.shape
    for i in range(n):
        s = states[i]
        for j in range(k):
            s += GOLDEN
            z = s
            z = (z ^ (z >> _S30)) * MIX1
            z = (z ^ (z >> _S27)) * MIX2
            z = z ^ (z >> _S31)
            out[i, j] = (np.float64(z >> _S11) + 1.0) * _TWO_POW_M53
        states[i] = s


@njit(cache=True)
def _pair_distance_sum(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        row = 0.0
        for j in range(b.shape[0]):
            s = 0.0
            for d in range(a.shape[1]):
                diff = a[i, d] - b[j, d]
                s += diff * diff
            row += math.sqrt(s)
        total += row
    return total


def pair_distance_sum(a, b):
    return _pair_distance_sum(
        np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64)
    )


@njit(cache=True)
def _gmm_stats(x, means, variances, log_weights):
    n, d = x.shape
    k = means.shape[0]
    logpdf = np.empty(n)
    grad = np.zeros((n, d))
    hess = np.zeros((n, d))
    log_norm = np.empty(k)
    for c in range(k):
        acc = 0.0
        for j in range(d):
            acc += math.log(2.0 * math.pi * variances[c, j])
        log_norm[c] = -0.5 * acc
    log_comp = np.empty(k)
    for i in range(n):
        top = -np.inf
        for c in range(k):
            acc = 0.0
            for j in range(d):
                diff = x[i, j] - means[c, j]
                acc += diff * diff / variances[c, j]
            log_comp[c] = log_weights[c] + log_norm[c] - 0.5 * acc
            if log_comp[c] > top:
                top = log_comp[c]
        z = 0.0
        for c in range(k):
            z += math.exp(log_comp[c] - top)
        lse = top + math.log(z)
        logpdf[i] = lse
        for c in range(k):
            r = math.exp(log_comp[c] - lse)
            for j in range(d):
                inv_v = 1.0 / variances[c, j]
                g = -(x[i, j] - means[c, j]) * inv_v
                grad[i, j] += r * g
                hess[i, j] += r * (g * g - inv_v)
        for j in range(d):
            hess[i, j] -= grad[i, j] * grad[i, j]
    return logpdf, grad, hess


def gmm_stats(x, means, variances, log_weights):
    return _gmm_stats(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(variances, dtype=np.float64),
        np.ascontiguousarray(log_weights, dtype=np.float64),
    )
