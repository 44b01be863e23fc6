"""Backbone contracts: determinism, bottleneck algebra, KL closed forms."""

import numpy as np
import pytest

import ppsenn.tensor as T
from ppsenn.optim import gradient_check
from ppsenn.tensor import Tensor
from ppsenn.vae import AutoEncoder, BackboneConfig, EncoderOutput


def _tiny(variational=True, kind="mlp", input_dim=3, latent=2, seed=0):
    cfg = BackboneConfig(kind=kind, hidden_sizes=(5, 4), latent_dim=latent,
                         variational=variational)
    return AutoEncoder(cfg, input_dim, np.random.default_rng(seed))


class TestEncode:
    def test_shapes_and_finiteness(self):
        ae = _tiny()
        out = ae.encode(Tensor(np.zeros((2, 3))))
        assert out.mu.values.shape == (2, 2)
        assert out.log_var.values.shape == (2, 2)
        assert np.all(np.isfinite(out.mu.values))

    def test_deterministic(self):
        ae = _tiny()
        x = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
        np.testing.assert_array_equal(ae.encode(x).mu.values, ae.encode(x).mu.values)

    def test_batch_equals_single_calls(self):
        ae = _tiny()
        xs = np.random.default_rng(2).normal(size=(5, 3))
        batch = ae.encode(Tensor(xs)).mu.values
        singles = np.vstack([ae.encode(Tensor(x.reshape(1, 3))).mu.values for x in xs])
        np.testing.assert_allclose(batch, singles, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(T.ShapeError, match="encode"):
            _tiny().encode(Tensor(np.zeros((1, 7))))

    def test_log_var_clamped(self):
        ae = _tiny()
        # blow up a head weight so the raw log-variance leaves the window
        ae.enc_head.w.values[:] = 100.0
        out = ae.encode(Tensor(np.ones((1, 3))))
        assert np.all(out.log_var.values <= 10.0)
        assert np.all(out.log_var.values >= -10.0)


class TestReparameterize:
    def test_zero_noise_returns_mean(self):
        ae = _tiny()
        out = EncoderOutput(mu=Tensor([[1.0, -2.0]]), log_var=Tensor([[0.3, -0.7]]))
        z = ae.reparameterize(out, np.zeros((1, 2)))
        np.testing.assert_array_equal(z.values, [[1.0, -2.0]])

    def test_unit_variance_shifts_by_basis_vector(self):
        ae = _tiny()
        out = EncoderOutput(mu=Tensor([[1.0, -2.0]]), log_var=Tensor([[0.0, 0.0]]))
        z = ae.reparameterize(out, np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(z.values, [[1.0, -1.0]])

    def test_monte_carlo_covariance(self):
        ae = _tiny()
        log_var = np.array([[0.4, -1.1]])
        out = EncoderOutput(mu=Tensor([[0.0, 0.0]]), log_var=Tensor(log_var))
        rng = np.random.default_rng(7)
        draws = np.vstack([
            ae.reparameterize(out, rng.standard_normal((1, 2))).values for _ in range(100_000)
        ])
        emp = draws.var(axis=0)
        np.testing.assert_allclose(emp, np.exp(log_var[0]), rtol=0.05)


class TestDecode:
    def test_output_range(self):
        ae = _tiny()
        z = Tensor(np.random.default_rng(3).normal(scale=10.0, size=(6, 2)))
        vals = ae.decode(z).values
        assert np.all(vals >= -1.0) and np.all(vals <= 1.0)

    def test_deterministic(self):
        ae = _tiny()
        z = Tensor(np.ones((1, 2)))
        np.testing.assert_array_equal(ae.decode(z).values, ae.decode(z).values)

    def test_dimension_mismatch(self):
        with pytest.raises(T.ShapeError, match="decode"):
            _tiny().decode(Tensor(np.zeros((1, 5))))


class TestKl:
    def test_zero_at_prior(self):
        out = EncoderOutput(mu=Tensor([[0.0, 0.0]]), log_var=Tensor([[0.0, 0.0]]))
        assert _tiny().kl_term(out).item() == 0.0

    def test_unit_mean_shift_costs_half(self):
        out = EncoderOutput(mu=Tensor([[1.0, 0.0]]), log_var=Tensor([[0.0, 0.0]]))
        assert _tiny().kl_term(out).item() == pytest.approx(0.5, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        ae = _tiny()
        for _ in range(200):
            out = EncoderOutput(mu=Tensor(rng.normal(size=(1, 2))),
                                log_var=Tensor(rng.normal(size=(1, 2))))
            assert ae.kl_term(out).item() >= -1e-12


class TestPlainAutoencoderMode:
    def test_reparameterize_is_identity_and_kl_zero(self):
        ae = _tiny(variational=False)
        out = ae.encode(Tensor(np.ones((2, 3))))
        assert out.log_var is None
        z = ae.reparameterize(out, np.full((2, 2), 9.0))
        assert z is out.mu
        assert ae.kl_term(out).item() == 0.0


def test_reconstruction_chain_gradients():
    ae = _tiny()
    x = np.random.default_rng(5).normal(size=(2, 3)) * 0.5
    noise = np.random.default_rng(6).standard_normal((2, 2))

    def loss():
        out = ae.encode(Tensor(x))
        z = ae.reparameterize(out, noise)
        recon = ae.decode(z)
        return T.sum_(T.square(recon - Tensor(x))) + ae.kl_term(out)

    assert gradient_check(loss, ae.parameters(), 1e-5) < 1e-4


def test_conv_backbone_round_trip_shapes():
    cfg = BackboneConfig(kind="conv", latent_dim=4)
    ae = AutoEncoder(cfg, 32 * 32, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).uniform(-1, 1, size=(2, 1024)))
    out = ae.encode(x)
    assert out.mu.values.shape == (2, 4)
    recon = ae.decode(out.mu)
    assert recon.values.shape == (2, 1024)
    assert np.all(np.abs(recon.values) <= 1.0)


def test_conv_batchnorm_tracks_running_stats():
    cfg = BackboneConfig(kind="conv", latent_dim=4)
    ae = AutoEncoder(cfg, 32 * 32, np.random.default_rng(0))
    before = ae.enc_bns[0].running_mean.copy()
    ae.train_mode = True
    ae.encode(Tensor(np.random.default_rng(2).uniform(-1, 1, size=(4, 1024))))
    ae.train_mode = False
    assert not np.array_equal(before, ae.enc_bns[0].running_mean)
