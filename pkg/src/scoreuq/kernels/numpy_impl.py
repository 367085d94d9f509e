"""Pure-numpy kernel implementations."""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_POW_M53 = 2.0**-53

# Pairwise-distance blocks are sized by element count so memory stays bounded.
_BLOCK_ELEMS = 1 << 22


def splitmix_fill_uniform(states, out):
    """Advance every splitmix64 state ``out.shape[1]`` times, writing (0, 1] uniforms.

    ``states`` is a uint64 array of shape (n,) updated in place; ``out`` is a
    float64 array of shape (n, k).
    """
    s = states.copy()
    with np.errstate(over="ignore"):
        for j in range(out.shape[1]):
            s += GOLDEN
            z = s.copy()
            z = (z ^ (z >> np.uint64(30))) * MIX1
            z = (z ^ (z >> np.uint64(27))) * MIX2
            z = z ^ (z >> np.uint64(31))
            out[:, j] = ((z >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_M53
    states[:] = s


def pair_distance_sum(a, b):
    """Sum of Euclidean distances over all ordered pairs (a_i, b_j)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    rows = max(1, _BLOCK_ELEMS // max(1, b.shape[0] * a.shape[1]))
    total = 0.0
    for start in range(0, a.shape[0], rows):
        diff = a[start:start + rows, None, :] - b[None, :, :]
        total += float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum())
    return total


def gmm_stats(x, means, variances, log_weights):
    """Log density, gradient and Hessian diagonal of a diagonal-covariance mixture.

    Args:
        x: points, shape (n, d).
        means: component means, shape (k, d).
        variances: component variances, shape (k, d), all positive.
        log_weights: log mixture weights, shape (k,).

    Returns:
        ``(logpdf, grad, hess_diag)`` with shapes (n,), (n, d), (n, d).
    """
    diff = x[:, None, :] - means[None, :, :]
    inv_v = 1.0 / variances
    log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)
    log_comp = log_weights + log_norm - 0.5 * np.sum(diff * diff * inv_v, axis=2)
    top = log_comp.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.sum(np.exp(log_comp - top), axis=1))
    resp = np.exp(log_comp - lse[:, None])
    g = -diff * inv_v
    grad = np.einsum("nk,nkd->nd", resp, g)
    second = np.einsum("nk,nkd->nd", resp, g * g - inv_v)
    return lse, grad, second - grad * grad
