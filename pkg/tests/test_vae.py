import numpy as np
import pytest

from diffprior import autodiff as ad
from diffprior.autodiff import Tensor, grad_check
from diffprior.errors import DatasetError, ShapeError
from diffprior.vae import (
    GaussianPosterior,
    LikelihoodParams,
    decode,
    encode,
    gaussian_log_density,
    kl_diag_gaussian_to_standard,
    likelihood_sample,
    log_likelihood,
    make_vae,
    reparameterize,
)

from oracles import LOG_2PI, np_mlp


def test_zero_head_gives_standard_posterior():
    vae = make_vae(3, 2, (8,), (8,), seed=0)
    vae.encoder.zero_output_layer()
    post = encode(vae, Tensor(np.random.default_rng(0).normal(size=(5, 3))))
    assert np.all(post.mu.data == 0.0) and np.all(post.logvar.data == 0.0)


def test_rows_independent_of_batch():
    vae = make_vae(3, 2, (8,), (8,), seed=1)
    x = np.random.default_rng(1).normal(size=(8, 3))
    full = encode(vae, Tensor(x))
    one = encode(vae, Tensor(x[4:5]))
    # BLAS may pick a different kernel for one row, so compare to rounding level
    np.testing.assert_allclose(one.mu.data[0], full.mu.data[4], rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(one.logvar.data[0], full.logvar.data[4], rtol=1e-14, atol=1e-15)


def test_encoder_gradient():
    vae = make_vae(3, 2, (6,), (6,), activation="tanh", seed=2)
    x = Tensor(np.random.default_rng(2).normal(size=(4, 3)))
    params = [p for _, p in vae.encoder.named_parameters("e")]
    rep = grad_check(lambda: ad.sum(encode(vae, x).mu), params)
    assert rep.passed, rep.errors


def test_encoder_matches_numpy():
    vae = make_vae(3, 2, (6,), (6,), seed=3)
    x = np.random.default_rng(3).normal(size=(4, 3))
    post = encode(vae, Tensor(x))
    ref = np_mlp(vae.encoder, x)
    np.testing.assert_allclose(post.mu.data, ref[:, :2], rtol=1e-13)
    np.testing.assert_allclose(post.logvar.data, np.clip(ref[:, 2:], -10, 10), rtol=1e-13)


def test_logvar_clamped():
    vae = make_vae(1, 1, (), (), seed=0)
    w, b = vae.encoder.layers[0]
    w.data[...] = 0.0
    b.data[...] = [0.0, 50.0]
    assert encode(vae, Tensor(np.zeros((1, 1)))).logvar.data[0, 0] == 10.0


def test_encode_width_mismatch():
    with pytest.raises(ShapeError):
        encode(make_vae(3, 2, seed=0), Tensor(np.ones((2, 4))))


def _post(mu, logvar):
    return GaussianPosterior(Tensor(np.asarray(mu, float)), Tensor(np.asarray(logvar, float)))


def test_reparameterize_examples():
    mu = np.array([[0.5, -1.0]])
    np.testing.assert_array_equal(reparameterize(_post(mu, [[1.0, 2.0]]), np.zeros((1, 2))).data, mu)
    n = np.array([[0.3, -0.2]])
    np.testing.assert_allclose(reparameterize(_post(mu, np.zeros((1, 2))), n).data, mu + n, rtol=1e-15)


def test_reparameterize_variance_mc():
    n = 100_000
    noise = np.random.default_rng(0).standard_normal((n, 1))
    z = reparameterize(_post(np.zeros((n, 1)), np.full((n, 1), np.log(4.0))), noise).data[:, 0]
    # standard error of the sample variance of a normal: sigma^2 sqrt(2/(n-1))
    assert abs(z.var(ddof=1) - 4.0) < 3 * 4.0 * np.sqrt(2.0 / (n - 1))


def test_reparameterize_shape_mismatch():
    with pytest.raises(ShapeError):
        reparameterize(_post(np.zeros((2, 2)), np.zeros((2, 2))), np.zeros((2, 3)))


def test_gaussian_likelihood_at_mean():
    p = LikelihoodParams("gaussian", mu=Tensor([[0.7]]), logvar=Tensor([[0.0]]))
    assert log_likelihood(p, Tensor([[0.7]])).item() == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)
    assert -0.5 * LOG_2PI == pytest.approx(-0.9189, abs=1e-4)


def test_bernoulli_zero_logits():
    p = LikelihoodParams("bernoulli", logits=Tensor(np.zeros((2, 4))))
    x = Tensor([[0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
    np.testing.assert_allclose(log_likelihood(p, x).data, 4 * np.log(0.5), rtol=1e-14)


def test_bernoulli_rejects_nonbinary():
    p = LikelihoodParams("bernoulli", logits=Tensor(np.zeros((1, 2))))
    with pytest.raises(DatasetError):
        log_likelihood(p, Tensor([[0.5, 1.0]]))


def test_likelihoods_match_density_sum():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 3))
    mu, lv = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    got = log_likelihood(LikelihoodParams("gaussian", mu=Tensor(mu), logvar=Tensor(lv)), Tensor(x)).data
    ref = [sum(-0.5 * np.log(2 * np.pi * np.exp(lv[i, j])) - (x[i, j] - mu[i, j]) ** 2 / (2 * np.exp(lv[i, j])) for j in range(3)) for i in range(6)]
    np.testing.assert_allclose(got, ref, atol=1e-10)
    xb = (rng.random((6, 3)) > 0.5).astype(float)
    logits = rng.normal(size=(6, 3))
    got = log_likelihood(LikelihoodParams("bernoulli", logits=Tensor(logits)), Tensor(xb)).data
    p = 1 / (1 + np.exp(-logits))
    ref = np.sum(np.where(xb == 1.0, np.log(p), np.log1p(-p)), axis=1)
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_gaussian_log_density_examples():
    z = Tensor([[0.2, -0.4]])
    assert gaussian_log_density(z, z, Tensor(np.zeros((1, 2)))).item() == pytest.approx(-LOG_2PI, abs=1e-15)
    rng = np.random.default_rng(0)
    zz, mu, lv = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    shift = rng.normal(size=(1, 2))
    np.testing.assert_allclose(
        gaussian_log_density(zz, mu, lv).data, gaussian_log_density(zz + shift, mu + shift, lv).data, atol=1e-12
    )


def test_gaussian_density_normalizes():
    grid = np.linspace(-20, 20, 400001)[:, None]
    mu, lv = np.full_like(grid, 0.4), np.full_like(grid, np.log(1.7))
    dens = np.exp(gaussian_log_density(grid, mu, lv).data)
    assert abs(np.trapezoid(dens, grid[:, 0]) - 1.0) < 1e-4


def test_gaussian_density_shape_mismatch():
    with pytest.raises(ShapeError):
        gaussian_log_density(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))


def test_kl_examples():
    assert kl_diag_gaussian_to_standard(_post([[0.0, 0.0]], [[0.0, 0.0]])).item() == 0.0
    assert kl_diag_gaussian_to_standard(_post([[1.0]], [[0.0]])).item() == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(5)
    mu, lv = rng.normal(size=(1, 3)), rng.normal(scale=0.5, size=(1, 3))
    exact = kl_diag_gaussian_to_standard(_post(mu, lv)).item()
    n = 1_000_000
    z = mu + np.exp(0.5 * lv) * rng.standard_normal((n, 3))
    log_q = np.sum(-0.5 * ((z - mu) ** 2 / np.exp(lv) + lv + LOG_2PI), axis=1)
    log_p = np.sum(-0.5 * (z**2 + LOG_2PI), axis=1)
    diff = log_q - log_p
    assert abs(diff.mean() - exact) < 3 * diff.std(ddof=1) / np.sqrt(n)


def test_decoder_variance_modes():
    z = Tensor(np.random.default_rng(0).normal(size=(4, 2)))
    shared = decode(make_vae(3, 2, (5,), (5,), seed=0, decoder_logvar_init=-2.0), z)
    assert shared.mu.shape == (4, 3) and np.all(shared.logvar.data == -2.0)
    full = decode(make_vae(3, 2, (5,), (5,), decoder_variance="full", seed=0), z)
    assert full.mu.shape == full.logvar.shape == (4, 3)
    bern = decode(make_vae(3, 2, (5,), (5,), likelihood="bernoulli", seed=0), z)
    draws = likelihood_sample(bern, np.random.default_rng(0))
    assert set(np.unique(draws)) <= {0.0, 1.0}
