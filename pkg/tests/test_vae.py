"""VAE tests: encoder/decoder contracts, finite-difference gradient checks,
training behavior, and checkpoint round trips."""

import numpy as np
import pytest

import tiltvae.vae as V
from tiltvae.data import gen_blobs, gen_noise, blob_preset
from tiltvae.errors import DomainError, NumericalError, UnsupportedPriorError
from tiltvae.sampler import RngStream
from tiltvae.specfn import chi_mean
from tiltvae.tilted import TiltedPrior, quadratic_kld


def _const_model(prior, d_x, d_z, mu_bias, dec_bias=None, hidden=(4,)):
    """All-zero weights: the encoder and decoder outputs are their biases."""
    model = V.build_model(RngStream(0), d_x, d_z, prior, hidden=hidden)
    for mlp in (model.encoder, model.decoder):
        for w in mlp.weights:
            w[:] = 0.0
        for b in mlp.biases:
            b[:] = 0.0
    model.encoder.biases[-1][:] = mu_bias
    if dec_bias is not None:
        model.decoder.biases[-1][:] = dec_bias
    return model


@pytest.fixture(scope="module")
def tilted_prior():
    return TiltedPrior.fit(10.0, 10)


class TestEncodeDecode:
    def test_zero_weight_encoder_returns_bias(self, tilted_prior):
        bias = np.arange(10, dtype=np.float64)
        model = _const_model(tilted_prior, 6, 10, bias)
        mu, log_sigma = V.encode(model, np.ones(6))
        assert np.array_equal(mu, bias)
        assert log_sigma is None

    def test_gaussian_encoder_splits_heads(self):
        bias = np.concatenate([np.full(3, 2.0), np.full(3, -0.5)])
        model = _const_model(V.StandardGaussian(), 6, 3, bias)
        mu, log_sigma = V.encode(model, np.zeros(6))
        assert np.array_equal(mu, np.full(3, 2.0))
        assert np.array_equal(log_sigma, np.full(3, -0.5))

    def test_encode_is_pure(self, tilted_prior):
        model = V.build_model(RngStream(1), 6, 10, tilted_prior)
        x = RngStream(2).generator.random(6)
        a, _ = V.encode(model, x)
        b, _ = V.encode(model, x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self, tilted_prior):
        model = V.build_model(RngStream(1), 6, 10, tilted_prior)
        with pytest.raises(DomainError):
            V.encode(model, np.zeros(7))

    def test_non_finite_activations_name_the_layer(self, tilted_prior):
        model = V.build_model(RngStream(1), 6, 10, tilted_prior)
        model.encoder.weights[1][0, 0] = np.inf
        with pytest.raises(NumericalError) as err:
            V.encode(model, np.ones(6))
        assert err.value.context["layer"] == 1


class TestReparameterize:
    def test_vanishing_sigma_returns_mean(self):
        mu = np.array([1.0, -2.0, 3.0])
        z = V.reparameterize(RngStream(3), mu, log_sigma=np.full(3, -60.0))
        assert z == pytest.approx(mu, abs=1e-20)

    def test_unit_sigma_norm_matches_chi_mean(self):
        rng = RngStream(4)
        mu = np.zeros((10**5, 8))
        z = V.reparameterize(rng, mu)
        mean_norm = float(np.linalg.norm(z, axis=1).mean())
        assert mean_norm == pytest.approx(chi_mean(8), rel=0.01)

    def test_seeded_determinism(self):
        mu = np.ones(5)
        a = V.reparameterize(RngStream(5), mu)
        b = V.reparameterize(RngStream(5), mu)
        assert np.array_equal(a, b)


class TestElboTerms:
    def test_collapsed_gaussian_has_zero_kld(self):
        model = _const_model(V.StandardGaussian(), 6, 3, np.zeros(6))
        recon, kld = V.elbo_terms(model, RngStream(6), np.zeros(6))
        assert kld == 0.0

    def test_tilted_at_gamma_pays_committed_rate(self, tilted_prior):
        bias = np.zeros(10)
        bias[0] = tilted_prior.gamma
        model = _const_model(tilted_prior, 6, 10, bias)
        _, kld = V.elbo_terms(model, RngStream(7), np.zeros(6))
        assert kld == tilted_prior.committed_rate
        assert kld > 0.0

    def test_perfect_autoencoder_total_is_committed_rate(self, tilted_prior):
        x = RngStream(8).generator.random(6)
        bias = np.zeros(10)
        bias[0] = tilted_prior.gamma
        model = _const_model(tilted_prior, 6, 10, bias, dec_bias=x)
        recon, kld = V.elbo_terms(model, RngStream(9), x)
        assert recon == 0.0
        assert recon + kld == tilted_prior.committed_rate


class TestGradients:
    def test_quadratic_term_gradient_vs_finite_differences(self):
        gen = RngStream(10).generator
        for _ in range(20):
            d = int(gen.integers(2, 12))
            mu = gen.standard_normal(d) * gen.uniform(0.5, 10.0)
            gamma = gen.uniform(0.0, 12.0)
            norm = np.linalg.norm(mu)
            analytic = (norm - gamma) * mu / norm
            fd = np.empty(d)
            for i in range(d):
                h = 1e-5 * max(1.0, abs(mu[i]))
                up, dn = mu.copy(), mu.copy()
                up[i] += h
                dn[i] -= h
                fd[i] = (
                    0.5 * (np.linalg.norm(up) - gamma) ** 2
                    - 0.5 * (np.linalg.norm(dn) - gamma) ** 2
                ) / (2 * h)
            assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("prior_kind", ["tilted", "gaussian"])
    def test_full_elbo_gradients_vs_finite_differences(self, prior_kind):
        prior = TiltedPrior.fit(3.0, 3) if prior_kind == "tilted" else V.StandardGaussian()
        rng = RngStream(11)
        model = V.build_model(rng, 8, 3, prior, hidden=(6,), weight_std=0.3)
        x = rng.generator.random((4, 8))
        eps = rng.generator.standard_normal((4, 3))
        recon, kld, grads = V._elbo_forward_backward(model, x, eps)
        glist = V._grad_list(model, grads)
        for p, g in zip(V._param_list(model), glist):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                h = 1e-5 * max(1.0, abs(p[idx]))
                orig = p[idx]
                p[idx] = orig + h
                r1, k1, _ = V._elbo_forward_backward(model, x, eps, want_grads=False)
                p[idx] = orig - h
                r2, k2, _ = V._elbo_forward_backward(model, x, eps, want_grads=False)
                p[idx] = orig
                fd = ((r1 + k1) - (r2 + k2)) / (2 * h)
                scale = max(1e-6, abs(fd), abs(float(g[idx])))
                assert abs(fd - float(g[idx])) / scale < 1e-4


class TestGradStep:
    def test_vanishing_learning_rate_leaves_parameters(self, tilted_prior):
        model = V.build_model(RngStream(12), 6, 10, tilted_prior, hidden=(4,))
        before = [p.copy() for p in V._param_list(model)]
        config = V.TrainConfig(epochs=1, learning_rate=1e-300, seed=0)
        V.grad_step(model, V.AdamState(model), RngStream(13), np.ones((2, 6)), config)
        for b, p in zip(before, V._param_list(model)):
            assert np.allclose(p, b, rtol=0.0, atol=1e-290)

    def test_empty_batch_rejected(self, tilted_prior):
        model = V.build_model(RngStream(12), 6, 10, tilted_prior, hidden=(4,))
        config = V.TrainConfig(epochs=1)
        with pytest.raises(DomainError):
            V.grad_step(model, V.AdamState(model), RngStream(13), np.ones((0, 6)), config)


class TestTrain:
    def test_objective_decreases_on_blobs(self, tilted_prior):
        ds = gen_blobs(RngStream(14, 101), 200, 8, 8, blob_preset("two", 8, 8))
        model = V.build_model(RngStream(14), 64, 10, tilted_prior, hidden=(32, 16))
        result = V.train(model, ds, V.TrainConfig(epochs=10, learning_rate=1e-3, seed=14))
        assert sum(result.history[-1]) < sum(result.history[0])
        assert result.z_bar > 0.0

    def test_gaussian_kld_collapses_on_uninformative_data(self):
        ds = gen_noise(RngStream(15, 101), 200, 8, 8)
        model = V.build_model(RngStream(15), 64, 4, V.StandardGaussian(), hidden=(32, 16))
        result = V.train(model, ds, V.TrainConfig(epochs=10, learning_rate=1e-3, seed=15))
        assert result.history[-1][1] < result.history[0][1]

    def test_seeded_determinism_is_bitwise(self, tilted_prior):
        ds = gen_blobs(RngStream(16, 101), 100, 8, 8, blob_preset("two", 8, 8))
        runs = []
        for _ in range(2):
            model = V.build_model(RngStream(16), 64, 10, tilted_prior, hidden=(16, 8))
            V.train(model, ds, V.TrainConfig(epochs=3, learning_rate=1e-3, seed=16))
            runs.append([p.copy() for p in V._param_list(model)])
        for a, b in zip(*runs):
            assert np.array_equal(a, b)

    def test_zero_tilt_matches_sigma_frozen_gaussian(self, monkeypatch):
        # With tau = 0 the quadratic penalty is ||mu||^2/2 + 0, exactly the
        # Gaussian divergence at sigma = 1; freezing the sigma head makes the
        # two training problems identical on the shared parameters.
        prior0 = TiltedPrior.fit(0.0, 3)
        d_x, d_z = 12, 3
        tilted = V.build_model(RngStream(17), d_x, d_z, prior0, hidden=(8,))
        gauss = V.build_model(RngStream(18), d_x, d_z, V.StandardGaussian(), hidden=(8,))
        for src, dst in zip(tilted.encoder.weights[:-1], gauss.encoder.weights[:-1]):
            dst[:] = src
        for src, dst in zip(tilted.encoder.biases[:-1], gauss.encoder.biases[:-1]):
            dst[:] = src
        gauss.encoder.weights[-1][:] = 0.0
        gauss.encoder.weights[-1][:, :d_z] = tilted.encoder.weights[-1]
        gauss.encoder.biases[-1][:] = 0.0
        gauss.encoder.biases[-1][:d_z] = tilted.encoder.biases[-1]
        for src, dst in zip(tilted.decoder.weights, gauss.decoder.weights):
            dst[:] = src
        for src, dst in zip(tilted.decoder.biases, gauss.decoder.biases):
            dst[:] = src

        raw = V._elbo_forward_backward

        def frozen_sigma(model, x, eps, want_grads=True):
            out = raw(model, x, eps, want_grads)
            if want_grads and not model.is_tilted:
                enc_w, enc_b = out[2][0]
                enc_w[-1][:, d_z:] = 0.0
                enc_b[-1][d_z:] = 0.0
            return out

        monkeypatch.setattr(V, "_elbo_forward_backward", frozen_sigma)

        ds = gen_blobs(RngStream(19, 101), 64, 4, 3, [((1.0, 1.0), 1.0, 1.0)])
        config = V.TrainConfig(epochs=3, batch_size=16, learning_rate=1e-3, seed=19)
        hist_t = V.train(tilted, ds, config).history
        hist_g = V.train(gauss, ds, config).history
        for (rt, kt), (rg, kg) in zip(hist_t, hist_g):
            assert rt == pytest.approx(rg, rel=1e-12)
            assert kt == pytest.approx(kg, rel=1e-12)
        assert np.allclose(
            tilted.encoder.weights[-1], gauss.encoder.weights[-1][:, :d_z],
            rtol=1e-12, atol=1e-15,
        )


class TestExactElbo:
    def test_tangency_and_one_sided_gap(self, tilted_prior):
        ds = gen_blobs(RngStream(20, 101), 50, 8, 8, blob_preset("two", 8, 8))
        model = V.build_model(RngStream(20), 64, 10, tilted_prior, hidden=(16, 8))
        V.train(model, ds, V.TrainConfig(epochs=3, learning_rate=1e-3, seed=20))
        recons, klds = V.exact_elbo(model, ds)
        norms = V.encode_norms(model, ds)
        quads = np.array([quadratic_kld(tilted_prior, float(r)) for r in norms])
        assert np.all(klds <= quads + 1e-9)
        assert np.all(klds >= tilted_prior.committed_rate - 1e-12)
        assert np.all(recons >= 0.0)

    def test_exact_equals_quadratic_at_gamma(self, tilted_prior):
        bias = np.zeros(10)
        bias[0] = tilted_prior.gamma
        model = _const_model(tilted_prior, 4, 10, bias)
        ds_samples = np.zeros((3, 4))
        from tiltvae.data import Dataset

        ds = Dataset(ds_samples, 2, 2, 1, tag="t")
        _, klds = V.exact_elbo(model, ds)
        assert klds == pytest.approx(tilted_prior.committed_rate, rel=1e-12)

    def test_zero_tilt_exact_equals_quadratic_everywhere(self):
        prior0 = TiltedPrior.fit(0.0, 4)
        model = V.build_model(RngStream(21), 9, 4, prior0, hidden=(6,))
        ds = gen_noise(RngStream(21, 101), 20, 3, 3)
        _, klds = V.exact_elbo(model, ds)
        norms = V.encode_norms(model, ds)
        assert klds == pytest.approx(0.5 * norms**2, rel=1e-10)

    def test_gaussian_model_unsupported(self):
        model = V.build_model(RngStream(22), 9, 4, V.StandardGaussian(), hidden=(6,))
        ds = gen_noise(RngStream(22, 101), 5, 3, 3)
        with pytest.raises(UnsupportedPriorError):
            V.exact_elbo(model, ds)


class TestCheckpoint:
    def test_roundtrip_parameters_and_header(self, tmp_path, tilted_prior):
        model = V.build_model(RngStream(23), 6, 10, tilted_prior, hidden=(5, 4))
        path = tmp_path / "model.ckpt"
        V.save_checkpoint(model, path, z_bar=10.2)
        back, z_bar = V.load_checkpoint(path)
        assert z_bar == 10.2
        assert back.d_x == 6 and back.d_z == 10
        assert back.is_tilted
        assert back.prior.tau == tilted_prior.tau
        assert back.prior.gamma == tilted_prior.gamma
        assert back.prior.committed_rate == tilted_prior.committed_rate
        assert back.prior.log_z_tau == tilted_prior.log_z_tau
        for a, b in zip(V._param_list(model), V._param_list(back)):
            assert np.array_equal(a, b)

    def test_manifest_written(self, tmp_path, tilted_prior):
        model = V.build_model(RngStream(24), 6, 10, tilted_prior, hidden=(4,))
        path = tmp_path / "model.ckpt"
        V.save_checkpoint(model, path)
        manifest = (tmp_path / "model.ckpt.manifest").read_text()
        assert "prior = tilted" in manifest
        assert "d_z = 10" in manifest
        assert "z_bar = \n" in manifest

    def test_gaussian_roundtrip(self, tmp_path):
        model = V.build_model(RngStream(25), 6, 3, V.StandardGaussian(), hidden=(4,))
        path = tmp_path / "g.ckpt"
        V.save_checkpoint(model, path, z_bar=None)
        back, z_bar = V.load_checkpoint(path)
        assert z_bar is None
        assert not back.is_tilted

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(DomainError):
            V.load_checkpoint(path)
