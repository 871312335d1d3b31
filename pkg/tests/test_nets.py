import numpy as np
import pytest
import torch

from compositegan.compositor import compose_first
from compositegan.errors import ShapeError, VariantError
from compositegan.losses import gan_loss
from compositegan.nets import (
    Conditioner,
    ConditionerState,
    Discriminator,
    Encoder,
    EncoderOutput,
    LayerGenerator,
    ModelBundle,
    Variant,
    init_parameters,
    reparameterize,
    sample_prior,
)

from util import compose_stack_oracle, fd_check_params, fd_check_tensor

TINY = dict(latent_dim=6, hidden_dim=10, image_size=16, base_channels=2)


def tiny_bundle(n=2, variant=Variant.CGAN, seed=0):
    return ModelBundle.create(seed=seed, n=n, variant=variant, **TINY)


class TestSamplePrior:
    def test_deterministic_under_fixed_seed(self):
        a = sample_prior(5, 4, torch.Generator().manual_seed(3))
        b = sample_prior(5, 4, torch.Generator().manual_seed(3))
        assert torch.equal(a, b)

    def test_moments_match_standard_normal(self):
        z = sample_prior(100_000, 8, torch.Generator().manual_seed(4))
        mean = z.mean(dim=0)
        var = z.var(dim=0)
        assert torch.all(mean.abs() < 0.02)
        assert torch.all((var - 1.0).abs() < 0.05)

    def test_empty_count_rejected(self):
        with pytest.raises(ValueError):
            sample_prior(0, 4, torch.Generator())
        with pytest.raises(ValueError):
            sample_prior(4, 0, torch.Generator())

    def test_dtype_and_shape(self):
        z = sample_prior(3, 7, torch.Generator().manual_seed(0))
        assert z.shape == (3, 7) and z.dtype == torch.float64


class TestConditioner:
    def make(self, seed=0):
        cond = Conditioner(latent_dim=6, hidden_dim=10).double()
        init_parameters(cond, torch.Generator().manual_seed(seed))
        return cond

    def test_reproducible_step(self):
        cond = self.make()
        z = sample_prior(2, 6, torch.Generator().manual_seed(1))
        s0 = cond.initial_state(2)
        a = cond.step(s0, z)
        b = cond.step(s0, z)
        assert torch.equal(a.hidden, b.hidden) and torch.equal(a.cell, b.cell)

    def test_initial_state_is_zero(self):
        s0 = self.make().initial_state(3)
        assert torch.all(s0.hidden == 0) and torch.all(s0.cell == 0)

    def test_different_inputs_give_different_states(self):
        cond = self.make(seed=5)
        g = torch.Generator().manual_seed(2)
        s0 = cond.initial_state(1)
        out1 = cond.step(s0, sample_prior(1, 6, g))
        out2 = cond.step(s0, sample_prior(1, 6, g))
        assert not torch.allclose(out1.hidden, out2.hidden)

    def test_dimension_mismatch(self):
        cond = self.make()
        with pytest.raises(ShapeError):
            cond.step(cond.initial_state(2), torch.zeros(2, 7, dtype=torch.float64))
        with pytest.raises(ShapeError):
            cond.step(cond.initial_state(2), torch.zeros(3, 6, dtype=torch.float64))

    def test_run_folds_sequence(self):
        cond = self.make()
        g = torch.Generator().manual_seed(3)
        zs = [sample_prior(2, 6, g) for _ in range(3)]
        seq = cond.run(zs)
        assert len(seq.h) == 3
        state = cond.initial_state(2)
        for z, got in zip(zs, seq.h):
            state = cond.step(state, z)
            assert torch.equal(state.hidden, got.hidden)

    def test_gradient_wrt_input_matches_finite_differences(self):
        cond = self.make(seed=7)
        g = torch.Generator().manual_seed(4)
        z = sample_prior(1, 6, g).requires_grad_()
        weights = torch.randn(1, 10, generator=g, dtype=torch.float64)

        def scalar():
            out = cond.step(cond.initial_state(1), z)
            return (out.hidden * weights).sum()

        fd_check_tensor(scalar, z, h=1e-5, rtol=1e-3)


class TestLayerGenerator:
    def make(self, seed=0):
        gen = LayerGenerator(hidden_dim=10, image_size=16, base_channels=2).double()
        init_parameters(gen, torch.Generator().manual_seed(seed))
        gen.eval()
        return gen

    def test_output_shape(self):
        gen = self.make()
        out = gen(torch.randn(3, 10, dtype=torch.float64))
        assert out.rgb.shape == (3, 3, 16, 16)
        assert out.alpha.shape == (3, 1, 16, 16)

    def test_outputs_in_unit_range(self):
        gen = self.make()
        out = gen(5.0 * torch.randn(4, 10, dtype=torch.float64))
        assert torch.all(out.rgb >= 0) and torch.all(out.rgb <= 1)
        assert torch.all(out.alpha >= 0) and torch.all(out.alpha <= 1)

    def test_deterministic(self):
        gen = self.make()
        h = torch.randn(2, 10, dtype=torch.float64)
        assert torch.equal(gen(h).rgb, gen(h).rgb)

    def test_rejects_wrong_hidden_dim(self):
        with pytest.raises(ShapeError):
            self.make()(torch.randn(2, 11, dtype=torch.float64))

    def test_image_size_validation(self):
        with pytest.raises(ValueError):
            LayerGenerator(hidden_dim=10, image_size=24, base_channels=2)


class TestDiscriminator:
    def make(self, seed=0):
        d = Discriminator(image_size=16, base_channels=2).double()
        init_parameters(d, torch.Generator().manual_seed(seed))
        return d

    def test_prob_strictly_inside_unit_interval(self):
        d = self.make()
        out = d(torch.rand(4, 3, 16, 16, dtype=torch.float64))
        assert torch.all(out.prob > 0) and torch.all(out.prob < 1)
        assert out.prob.shape == (4,)

    def test_feature_dimension_constant(self):
        d = self.make()
        a = d(torch.rand(2, 3, 16, 16, dtype=torch.float64))
        b = d(torch.rand(5, 3, 16, 16, dtype=torch.float64))
        assert a.feature.shape[1] == b.feature.shape[1] == d.feature_dim

    def test_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            self.make()(torch.rand(2, 4, 16, 16, dtype=torch.float64))

    def test_wrong_resolution(self):
        with pytest.raises(ShapeError):
            self.make()(torch.rand(2, 3, 32, 32, dtype=torch.float64))

    def test_log_prob_gradient_matches_finite_differences(self):
        d = self.make(seed=3)
        d.eval()
        g = torch.Generator().manual_seed(5)
        x = torch.rand(1, 3, 16, 16, generator=g, dtype=torch.float64).requires_grad_()

        def scalar():
            return torch.log(d(x).prob).sum()

        fd_check_tensor(scalar, x, h=1e-5, rtol=1e-3, coords=60, rng=np.random.default_rng(0))


class TestEncoder:
    def test_output_dims(self):
        enc = Encoder(image_size=16, base_channels=2, latent_dim=6).double()
        init_parameters(enc, torch.Generator().manual_seed(0))
        out = enc(torch.rand(3, 3, 16, 16, dtype=torch.float64))
        assert out.mu.shape == (3, 6) and out.logvar.shape == (3, 6)

    def test_deterministic(self):
        enc = Encoder(image_size=16, base_channels=2, latent_dim=6).double()
        init_parameters(enc, torch.Generator().manual_seed(1))
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        assert torch.equal(enc(x).mu, enc(x).mu)


class TestReparameterize:
    def test_near_zero_variance_returns_mean(self):
        mu = torch.randn(4, dtype=torch.float64)
        z = reparameterize(EncoderOutput(mu=mu, logvar=torch.full_like(mu, -40.0)), torch.randn(4, dtype=torch.float64))
        assert torch.allclose(z, mu, atol=1e-8)

    def test_standard_posterior_returns_eps(self):
        eps = torch.randn(5, dtype=torch.float64)
        zero = torch.zeros(5, dtype=torch.float64)
        z = reparameterize(EncoderOutput(mu=zero, logvar=zero.clone()), eps)
        assert torch.equal(z, eps)

    def test_gradient_wrt_mu_is_identity(self):
        mu = torch.randn(3, dtype=torch.float64, requires_grad=True)
        logvar = torch.randn(3, dtype=torch.float64)
        eps = torch.randn(3, dtype=torch.float64)
        reparameterize(EncoderOutput(mu=mu, logvar=logvar), eps).sum().backward()
        assert torch.allclose(mu.grad, torch.ones(3, dtype=torch.float64))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reparameterize(
                EncoderOutput(mu=torch.zeros(3), logvar=torch.zeros(3)), torch.zeros(4)
            )


class TestModelBundle:
    def test_create_is_pure_function_of_seed(self):
        a = tiny_bundle(seed=9)
        b = tiny_bundle(seed=9)
        for ta, tb in zip(a.state_dict().values(), b.state_dict().values()):
            assert torch.equal(ta, tb)
        c = tiny_bundle(seed=10)
        assert any(
            not torch.equal(ta, tc)
            for ta, tc in zip(a.state_dict().values(), c.state_dict().values())
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelBundle(n=0, **TINY)
        with pytest.raises(ValueError):
            ModelBundle(n=1, latent_dim=6, hidden_dim=10, image_size=20, base_channels=2)

    def test_generators_do_not_share_parameters(self):
        bundle = tiny_bundle(n=3)
        ids = [set(id(p) for p in gen.parameters()) for gen in bundle.generators]
        for i in range(3):
            for j in range(i + 1, 3):
                assert not (ids[i] & ids[j])

    def test_generate_layer_index_validation(self):
        bundle = tiny_bundle(n=2)
        state = bundle.conditioner.initial_state(1)
        with pytest.raises(ValueError):
            bundle.generate_layer(0, state)
        with pytest.raises(ValueError):
            bundle.generate_layer(3, state)

    def test_encode_requires_vae_variant(self):
        bundle = tiny_bundle(n=2, variant=Variant.CGAN)
        with pytest.raises(VariantError):
            bundle.encode(1, torch.rand(1, 3, 16, 16, dtype=torch.float64))

    def test_distinct_encoders_differ(self):
        bundle = tiny_bundle(n=2, variant=Variant.CGAN_VAE, seed=2)
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        with torch.no_grad():
            a = bundle.encode(1, x)
            b = bundle.encode(2, x)
        assert not torch.allclose(a.mu, b.mu)

    def test_forward_generate_n1_degenerates_to_compose_first(self):
        bundle = tiny_bundle(n=1, seed=3)
        bundle.eval()
        z = [sample_prior(2, 6, torch.Generator().manual_seed(0))]
        with torch.no_grad():
            layers, final, inter = bundle.forward_generate(z)
        assert len(layers) == 1 and len(inter) == 1
        assert torch.equal(final.rgb, compose_first(layers[0]).rgb)

    def test_forward_generate_bitwise_reproducible(self):
        bundle = tiny_bundle(seed=4)
        bundle.eval()
        def run():
            g = torch.Generator().manual_seed(11)
            zs = [sample_prior(2, 6, g) for _ in range(2)]
            with torch.no_grad():
                return bundle.forward_generate(zs)[1].rgb
        assert torch.equal(run(), run())

    def test_forward_generate_matches_compositor_oracle(self):
        bundle = tiny_bundle(seed=5)
        bundle.eval()
        g = torch.Generator().manual_seed(12)
        zs = [sample_prior(2, 6, g) for _ in range(2)]
        with torch.no_grad():
            layers, final, _ = bundle.forward_generate(zs)
        oracle = compose_stack_oracle(
            [l.rgb.numpy() for l in layers], [l.alpha.numpy() for l in layers]
        )
        np.testing.assert_allclose(final.rgb.numpy(), oracle[-1], atol=1e-9)

    def test_wrong_sequence_length_rejected(self):
        bundle = tiny_bundle(n=2)
        z = sample_prior(1, 6, torch.Generator().manual_seed(0))
        with pytest.raises(ValueError):
            bundle.forward_generate([z])

    def test_fixed_z1_resampled_z2_changes_output(self):
        bundle = tiny_bundle(seed=6)
        bundle.eval()
        g = torch.Generator().manual_seed(13)
        z1 = sample_prior(1, 6, g)
        with torch.no_grad():
            out_a = bundle.forward_generate([z1, sample_prior(1, 6, g)])[1].rgb
            out_b = bundle.forward_generate([z1, sample_prior(1, 6, g)])[1].rgb
        assert not torch.equal(out_a, out_b)

    def test_n1_output_depends_only_on_z1(self):
        bundle = tiny_bundle(n=1, seed=7)
        bundle.eval()
        g = torch.Generator().manual_seed(14)
        z1 = sample_prior(1, 6, g)
        with torch.no_grad():
            a = bundle.forward_generate([z1])[1].rgb
            _ = sample_prior(1, 6, g)  # extra noise drawn, never consumed
            b = bundle.forward_generate([z1])[1].rgb
        assert torch.equal(a, b)

    def test_outputs_finite_after_init(self):
        bundle = tiny_bundle(seed=8, variant=Variant.CGAN_VAE)
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        g = torch.Generator().manual_seed(15)
        zs = [sample_prior(2, 6, g) for _ in range(2)]
        with torch.no_grad():
            layers, final, _ = bundle.forward_generate(zs)
            d = bundle.discriminate(final)
            e = bundle.encode(1, x)
        for t in (final.rgb, d.prob, d.feature, e.mu, e.logvar):
            assert torch.all(torch.isfinite(t))

    def test_every_parameter_group_receives_gradient(self):
        bundle = tiny_bundle(seed=9)
        bundle.train()
        g = torch.Generator().manual_seed(16)
        zs = [sample_prior(2, 6, g) for _ in range(2)]
        _, final, _ = bundle.forward_generate(zs)
        loss = gan_loss(
            bundle.discriminate(torch.rand(2, 3, 16, 16, dtype=torch.float64)).prob,
            bundle.discriminate(final).prob,
        )
        loss.backward()
        for name, params in bundle.parameter_groups().items():
            got = any(p.grad is not None and bool((p.grad != 0).any()) for p in params)
            assert got, f"no gradient reached group {name}"

    def test_end_to_end_gradients_match_finite_differences(self):
        # latent -> conditioner -> generators -> compositor -> discriminator -> loss
        bundle = tiny_bundle(seed=10)
        bundle.train()
        g = torch.Generator().manual_seed(17)
        zs = [sample_prior(2, 6, g) for _ in range(2)]
        x = torch.rand(2, 3, 16, 16, generator=g, dtype=torch.float64)

        def scalar():
            _, final, _ = bundle.forward_generate(zs)
            return gan_loss(bundle.discriminate(x).prob, bundle.discriminate(final).prob)

        params = [p for ps in bundle.parameter_groups().values() for p in ps]
        fd_check_params(scalar, params, h=1e-5, rtol=1e-3, coords=60, seed=1)

    def test_metadata_roundtrip(self):
        bundle = tiny_bundle(n=2, variant=Variant.CGAN_VAE_A)
        meta = bundle.metadata()
        assert meta["n"] == 2
        assert meta["variant"] == "cgan-vae-a"
        assert meta["dtype"] == "float64"
