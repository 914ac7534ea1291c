import numpy as np
import pytest

from diffprior import autodiff as ad
from diffprior.config import TrainConfig
from diffprior.errors import DatasetError, ShapeError
from diffprior.metrics import generate, heldout_elbo, median_bandwidth, mmd_permutation_null, mmd_rbf
from diffprior.training import build_model
from diffprior.vae import decode, log_likelihood

from oracles import linear_vae_log_marginal, random_linear_model


def test_mmd_identical_sets_zero():
    x = np.random.default_rng(0).normal(size=(200, 2))
    assert mmd_rbf(x, x, n_boot=0).value == pytest.approx(0.0, abs=1e-14)


def test_mmd_same_law_below_null_95th():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(300, 2)), rng.normal(size=(300, 2))
    null = mmd_permutation_null(a, b, n_perm=200, seed=0)
    assert mmd_rbf(a, b, n_boot=0).value <= np.quantile(null, 0.95)


def test_mmd_shifted_law_above_null_99th():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(500, 2)), rng.normal(loc=5.0, size=(500, 2))
    null = mmd_permutation_null(a, b, n_perm=200, seed=0)
    assert mmd_rbf(a, b, n_boot=0).value > np.quantile(null, 0.99)


def test_mmd_symmetric_nonnegative_with_stderr():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(120, 3)), rng.normal(loc=0.3, size=(80, 3))
    ab, ba = mmd_rbf(a, b, seed=0), mmd_rbf(b, a, seed=0)
    assert ab.value == pytest.approx(ba.value, abs=1e-14)
    assert ab.value >= 0.0 and ab.stderr > 0.0
    assert ab.counts == {"n_a": 120, "n_b": 80}


def test_mmd_matches_explicit_formula():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(30, 2)), rng.normal(size=(20, 2))
    bw = 0.9
    k = lambda u, v: np.exp(-np.sum((u[:, None] - v[None]) ** 2, axis=2) / (2 * bw**2))  # noqa: E731
    ref = k(a, a).mean() + k(b, b).mean() - 2 * k(a, b).mean()
    assert mmd_rbf(a, b, bandwidth=bw, n_boot=0).value == pytest.approx(ref, abs=1e-14)


def test_median_bandwidth():
    x = np.array([[0.0], [1.0], [3.0]])
    assert median_bandwidth(x) == 2.0


def test_mmd_dimension_mismatch():
    with pytest.raises(ShapeError):
        mmd_rbf(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        mmd_rbf(np.zeros((0, 2)), np.zeros((3, 2)))


def _pinned_gaussian_model():
    model = build_model(TrainConfig(encoder_hidden=(8,), decoder_hidden=(8,)), 2)
    model.vae.encoder.zero_output_layer()
    model.vae.decoder.layers[0][0].data[...] = 0.0
    return model


def test_heldout_elbo_pinned_posterior_equals_loglik():
    model = _pinned_gaussian_model()
    x = np.random.default_rng(0).normal(size=(20, 2))
    with ad.no_grad():
        ll = log_likelihood(decode(model.vae, np.zeros((20, 2))), x).data.mean()
    assert heldout_elbo(model, x, n_mc=1).value == pytest.approx(ll, abs=1e-12)
    assert heldout_elbo(model, x, n_mc=64).value == pytest.approx(ll, abs=1e-12)


def test_heldout_elbo_more_samples_smaller_error():
    model, _, _ = random_linear_model(0, "diffusion")
    x = np.random.default_rng(1).normal(size=(50, model.vae.data_dim))
    one = heldout_elbo(model, x, n_mc=2, seed=0)
    many = heldout_elbo(model, x, n_mc=64, seed=0)
    assert many.stderr < one.stderr
    assert many.counts == {"n": 50, "n_mc": 64}


@pytest.mark.parametrize("kind", ["gaussian", "diffusion"])
def test_heldout_elbo_below_exact(kind):
    for seed in range(5):
        model, m, S = random_linear_model(seed, kind)
        x = np.random.default_rng(seed).normal(size=(40, model.vae.data_dim))
        exact = linear_vae_log_marginal(model.vae, m, S, x).mean()
        assert heldout_elbo(model, x, n_mc=64, seed=seed).value <= exact


def test_heldout_elbo_empty_split():
    with pytest.raises(DatasetError):
        heldout_elbo(_pinned_gaussian_model(), np.zeros((0, 2)))


def test_generate_shapes_and_determinism():
    model = build_model(TrainConfig(prior="flow", encoder_hidden=(4,), decoder_hidden=(4,), flow_hidden=4), 3)
    a = generate(model, 10, seed=5)
    assert a.shape == (10, 3)
    assert a.tobytes() == generate(model, 10, seed=5).tobytes()
