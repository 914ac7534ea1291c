import numpy as np
import pytest

from diffprior import _kernels as K

needs_numba = pytest.mark.skipif(K.numba is None, reason="numba not installed")


@pytest.fixture
def pts():
    rng = np.random.default_rng(0)
    return rng.normal(size=(150, 3)), rng.normal(size=(90, 3))


def test_numpy_kernels_consistent(pts):
    a, b = pts
    g = 0.37
    assert K.rbf_mean_numpy(a, a, g) == pytest.approx(K.rbf_gram_numpy(a, g).mean(), rel=1e-12)
    w = np.random.default_rng(1).normal(size=len(a))
    Kg = K.rbf_gram_numpy(a, g)
    assert K.weighted_quadratic_numpy(Kg, w) == pytest.approx(w @ Kg @ w, rel=1e-12)
    d = K.pairwise_distances_numpy(a[:5])
    ref = [np.linalg.norm(a[i] - a[j]) for i in range(5) for j in range(i + 1, 5)]
    np.testing.assert_allclose(d, ref, rtol=1e-13)


@needs_numba
def test_numba_matches_numpy(pts):
    a, b = pts
    g = 0.37
    assert K.rbf_mean_numba(a, b, g) == pytest.approx(K.rbf_mean_numpy(a, b, g), rel=1e-12)
    np.testing.assert_allclose(K.rbf_gram_numba(a, g), K.rbf_gram_numpy(a, g), rtol=1e-12, atol=1e-15)
    Kg = K.rbf_gram_numpy(a, g)
    w = np.random.default_rng(2).normal(size=len(a))
    assert K.weighted_quadratic_numba(Kg, w) == pytest.approx(K.weighted_quadratic_numpy(Kg, w), rel=1e-10)
    np.testing.assert_allclose(K.pairwise_distances_numba(a), K.pairwise_distances_numpy(a), rtol=1e-13)


def test_backend_label():
    assert K.backend() in ("numba", "numpy")
    assert (K.backend() == "numba") == K.USE_NUMBA


def test_env_flag_selects_numpy():
    import os
    import subprocess
    import sys

    env = dict(os.environ, DIFFPRIOR_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from diffprior import _kernels; print(_kernels.backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
