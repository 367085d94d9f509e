import os
import subprocess
import sys

import numpy as np
import pytest

from scoreuq import kernels

needs_numba = pytest.mark.skipif(kernels.numba_impl is None, reason="numba not available")


def test_backend_flag_forces_numpy():
    env = dict(os.environ, SCOREUQ_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from scoreuq import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_get_impl():
    assert kernels.get_impl("numpy") is kernels.numpy_impl
    with pytest.raises(ValueError):
        kernels.get_impl("fortran")


@needs_numba
def test_splitmix_parity():
    s1 = np.arange(1, 50, dtype=np.uint64) * np.uint64(0x1234567)
    s2 = s1.copy()
    a, b = np.empty((49, 7)), np.empty((49, 7))
    kernels.numpy_impl.splitmix_fill_uniform(s1, a)
    kernels.numba_impl.splitmix_fill_uniform(s2, b)
    assert np.array_equal(a, b) and np.array_equal(s1, s2)


@needs_numba
def test_pair_distance_parity(rng):
    a, b = rng.normal(size=(300, 3)), rng.normal(size=(200, 3))
    x = kernels.numpy_impl.pair_distance_sum(a, b)
    y = kernels.numba_impl.pair_distance_sum(a, b)
    assert abs(x - y) <= 1e-12 * abs(x)


@needs_numba
def test_gmm_stats_parity(rng):
    x = rng.normal(size=(100, 2)) * 3
    means = rng.normal(size=(3, 2))
    var = rng.uniform(0.1, 2.0, size=(3, 2))
    logw = np.log([0.2, 0.3, 0.5])
    for p, q in zip(kernels.numpy_impl.gmm_stats(x, means, var, logw),
                    kernels.numba_impl.gmm_stats(x, means, var, logw)):
        assert np.allclose(p, q, rtol=1e-12, atol=1e-14)


def test_pair_distance_small():
    a = np.array([[0.0], [2.0]])
    b = np.array([[1.0]])
    assert kernels.pair_distance_sum(a, b) == 2.0
    assert kernels.numpy_impl.pair_distance_sum(a, a) == 4.0
