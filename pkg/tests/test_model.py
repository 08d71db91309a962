import math

import numpy as np
import pytest
import torch

from mmcrl.model import (ModelConfig, MultimodalModel, NumericalError,
                         kl_standard_normal, loss_recon)


def tiny_config(**overrides):
    kwargs = dict(latent_dims=(2, 1), exo_dims=(1, 1), obs_dims=(3, 2),
                  hidden_width=8, hidden_depth=1, flow_hidden=8, flow_depth=1)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def case1_config(**overrides):
    kwargs = dict(latent_dims=(2, 2), exo_dims=(1, 1), obs_dims=(15, 15))
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


class TestConfig:
    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            case1_config(alpha_ind=-1.0)
        with pytest.raises(ValueError):
            case1_config(adjacency_threshold=1.5)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(latent_dims=(2, 2), exo_dims=(1,), obs_dims=(15, 15))

    def test_round_trip_dict(self):
        cfg = case1_config(flow_type="affine")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestEncodeDecode:
    def test_case1_shapes(self):
        torch.manual_seed(0)
        model = MultimodalModel(case1_config())
        model.eval()
        x = torch.randn(7, 15)
        out = model.encode(0, x)
        assert out.z_hat.shape == (7, 2)
        assert out.eta_mean.shape == (7, 1)
        assert out.eta_logvar.shape == (7, 1)
        assert out.eta_logvar.abs().max() <= 10.0

    def test_round_trip_shape(self):
        torch.manual_seed(0)
        model = MultimodalModel(case1_config())
        model.eval()
        x = torch.randn(5, 15)
        out = model.encode(0, x)
        x_hat = model.decode(0, out.z_hat, out.eta_mean)
        assert x_hat.shape == x.shape

    def test_dimension_mismatch_raises(self):
        torch.manual_seed(0)
        model = MultimodalModel(case1_config())
        with pytest.raises(ValueError):
            model.encode(0, torch.randn(4, 9))
        with pytest.raises(ValueError):
            model.decode(0, torch.randn(4, 3), torch.randn(4, 1))

    def test_zeroed_final_decoder_layer_outputs_bias(self):
        torch.manual_seed(0)
        model = MultimodalModel(case1_config())
        last = model.decoders[0].net[-1]
        with torch.no_grad():
            last.weight.zero_()
            last.bias.copy_(torch.arange(15.0))
        out1 = model.decode(0, torch.randn(3, 2), torch.randn(3, 1))
        out2 = model.decode(0, torch.randn(3, 2) * 9, torch.randn(3, 1))
        assert torch.allclose(out1, out2)
        assert torch.allclose(out1[0], torch.arange(15.0))

    def test_encode_deterministic_in_eval(self):
        torch.manual_seed(0)
        model = MultimodalModel(case1_config())
        model.eval()
        x = torch.randn(6, 15)
        a = model.encode(0, x).z_hat
        b = model.encode(0, x).z_hat
        assert torch.equal(a, b)


class TestLossExamples:
    def test_recon_identical_zero(self):
        x = torch.randn(4, 3)
        assert loss_recon([x], [x]).item() == 0.0

    def test_recon_unit_difference(self):
        assert loss_recon([torch.zeros(1, 1)], [torch.ones(1, 1)]).item() == 1.0

    def test_recon_batch_mean(self):
        x = torch.tensor([[0.0], [2.0]])
        assert loss_recon([x], [torch.zeros(2, 1)]).item() == 2.0

    def test_kl_standard_normal_zero(self):
        kl = kl_standard_normal(torch.zeros(1, 1), torch.zeros(1, 1))
        assert kl.item() == 0.0

    def test_kl_unit_mean_half(self):
        kl = kl_standard_normal(torch.ones(1, 1), torch.zeros(1, 1))
        assert kl.item() == pytest.approx(0.5, abs=1e-7)

    def test_flow_nll_of_standard_normal_samples(self):
        # direct density evaluation oracle on a fixed batch
        torch.manual_seed(3)
        model = MultimodalModel(tiny_config(cross_dependence=False))
        eps = torch.randn(512, 3)
        logdet = torch.zeros(512)
        out = model.loss_ind([], [], eps, logdet)
        expected = (0.5 * (eps ** 2).sum(dim=1)
                    + 0.5 * 3 * math.log(2 * math.pi)).mean()
        assert out["nll_eps"].item() == pytest.approx(expected.item(), rel=1e-6)

    def test_sparsity_sum_of_gates(self):
        torch.manual_seed(0)
        model = MultimodalModel(tiny_config())
        with torch.no_grad():
            model.adjacency.logits.fill_(-100.0)
        assert model.loss_sparsity().item() == pytest.approx(0.0, abs=1e-9)
        with torch.no_grad():
            model.adjacency.logits.zero_()
        # sigmoid(0) = 0.5 on every off-diagonal entry
        assert model.loss_sparsity().item() == pytest.approx(0.5 * 6, abs=1e-6)

    def test_sparsity_homogeneity(self):
        torch.manual_seed(0)
        model = MultimodalModel(tiny_config())
        with torch.no_grad():
            model.adjacency.logits.fill_(math.log(1.0 / 3.0))  # gates 0.25
        quarter = model.loss_sparsity().item()
        with torch.no_grad():
            model.adjacency.logits.zero_()  # gates 0.5
        half = model.loss_sparsity().item()
        assert half == pytest.approx(2 * quarter, rel=1e-5)


class TestTotalLoss:
    def _batch(self, cfg, n=16, seed=0):
        g = torch.Generator().manual_seed(seed)
        return [torch.randn(n, d, generator=g) for d in cfg.obs_dims]

    def test_all_alpha_zero(self):
        torch.manual_seed(0)
        cfg = tiny_config(alpha_recon=0.0, alpha_ind=0.0, alpha_sparsity=0.0,
                          cross_dependence=False, nondegeneracy_weight=0.0)
        model = MultimodalModel(cfg)
        total, _ = model.total_loss(self._batch(cfg),
                                    generator=torch.Generator().manual_seed(1))
        assert total.item() == 0.0

    def test_recon_only_matches_loss_recon(self):
        torch.manual_seed(0)
        cfg = tiny_config(alpha_recon=1.0, alpha_ind=0.0, alpha_sparsity=0.0,
                          cross_dependence=False, nondegeneracy_weight=0.0)
        model = MultimodalModel(cfg)
        model.eval()
        xs = self._batch(cfg)
        total, breakdown = model.total_loss(
            xs, generator=torch.Generator().manual_seed(1))
        assert total.item() == pytest.approx(breakdown["recon"].item(), rel=1e-6)

    def test_breakdown_keys(self):
        torch.manual_seed(0)
        cfg = case1_config(acyclicity_weight=1.0)
        model = MultimodalModel(cfg)
        _, breakdown = model.total_loss(
            self._batch(cfg, n=32), generator=torch.Generator().manual_seed(1))
        for key in ("total", "recon", "ind", "sparsity", "kl_eta", "nll_eps",
                    "cross_dep", "acyclicity", "nondegen"):
            assert key in breakdown

    def test_nonfinite_loss_named(self):
        torch.manual_seed(0)
        cfg = tiny_config(cross_dependence=False, nondegeneracy_weight=0.0)
        model = MultimodalModel(cfg)
        with torch.no_grad():
            model.decoders[0].net[-1].bias.fill_(float("nan"))
        with pytest.raises(NumericalError) as err:
            model.total_loss(self._batch(cfg),
                             generator=torch.Generator().manual_seed(1))
        assert err.value.term == "recon"


class TestGradientCheck:
    def test_analytic_matches_finite_differences(self):
        torch.manual_seed(0)
        cfg = tiny_config()
        model = MultimodalModel(cfg).double()
        model.train()
        g0 = torch.Generator().manual_seed(11)
        xs = [torch.randn(4, d, generator=g0, dtype=torch.float64)
              for d in cfg.obs_dims]

        def loss_fn():
            g = torch.Generator().manual_seed(7)
            total, _ = model.total_loss(xs, generator=g)
            return total

        total = loss_fn()
        total.backward()
        rng = np.random.default_rng(0)
        for name, p in model.named_parameters():
            if p.grad is None:
                continue
            flat = p.data.view(-1)
            grads = p.grad.view(-1)
            for k in rng.choice(flat.numel(), size=min(3, flat.numel()),
                                replace=False):
                h = 1e-6
                orig = flat[k].item()
                flat[k] = orig + h
                hi = loss_fn().item()
                flat[k] = orig - h
                lo = loss_fn().item()
                flat[k] = orig
                fd = (hi - lo) / (2 * h)
                ga = grads[k].item()
                rel = abs(fd - ga) / max(abs(fd), abs(ga), 1e-6)
                assert rel < 1e-3, f"{name}[{k}]: analytic {ga} vs fd {fd}"


class TestPermutationEquivariance:
    def test_swapping_modalities_swaps_outputs(self):
        cfg_a = ModelConfig(latent_dims=(2, 1), exo_dims=(1, 2), obs_dims=(5, 3),
                            hidden_width=8, hidden_depth=1, flow_hidden=8)
        cfg_b = ModelConfig(latent_dims=(1, 2), exo_dims=(2, 1), obs_dims=(3, 5),
                            hidden_width=8, hidden_depth=1, flow_hidden=8)
        torch.manual_seed(0)
        model_a = MultimodalModel(cfg_a)
        torch.manual_seed(0)
        model_b = MultimodalModel(cfg_b)
        # copy modality-m weights of model_a into slot 1-m of model_b
        model_b.encoders[1].load_state_dict(model_a.encoders[0].state_dict())
        model_b.encoders[0].load_state_dict(model_a.encoders[1].state_dict())
        model_a.eval()
        model_b.eval()
        g = torch.Generator().manual_seed(1)
        xs = [torch.randn(6, 5, generator=g), torch.randn(6, 3, generator=g)]
        out_a = model_a.encode_all(xs)
        out_b = model_b.encode_all(xs[::-1])
        assert torch.allclose(out_a[0].z_hat, out_b[1].z_hat)
        assert torch.allclose(out_a[1].z_hat, out_b[0].z_hat)
        assert torch.allclose(out_a[0].eta_mean, out_b[1].eta_mean)


class TestAdjacency:
    def test_structural_zero_diagonal(self):
        torch.manual_seed(0)
        model = MultimodalModel(tiny_config(adjacency_init_scale=3.0))
        gates = model.adjacency.gates().detach()
        assert torch.all(gates.diagonal() == 0)
        assert torch.all(gates[~torch.eye(3, dtype=torch.bool)] > 0.9)

    def test_binarize_thresholds(self):
        torch.manual_seed(0)
        model = MultimodalModel(tiny_config())
        with torch.no_grad():
            model.adjacency.logits.fill_(-100.0)
        assert not model.adjacency.binarize(0.3).any()
        with torch.no_grad():
            model.adjacency.logits.fill_(100.0)
        adj = model.adjacency.binarize(0.5)
        assert adj.sum() == 6 and not adj.diagonal().any()
        assert not model.adjacency.binarize(1.0).any()


class TestFlowNoiseContract:
    def test_gated_context_zero_gates_identity(self):
        torch.manual_seed(0)
        model = MultimodalModel(tiny_config())
        with torch.no_grad():
            model.adjacency.logits.fill_(-100.0)
        z = torch.randn(10, 3)
        eps, logdet = model.flow_noise(z)
        assert torch.allclose(eps, z, atol=1e-6)
        assert torch.allclose(logdet, torch.zeros(10), atol=1e-5)

    def test_invert_noise_round_trip(self):
        torch.manual_seed(0)
        model = MultimodalModel(tiny_config(flow_type="spline"))
        with torch.no_grad():
            for p in model.flow.parameters():
                p.add_(torch.randn_like(p) * 0.1)
        z = torch.randn(50, 3, dtype=torch.float64)
        eps, _ = model.flow_noise(z)
        z_rec = model.invert_noise(eps, z)
        assert (z_rec - z).abs().max().item() < 1e-5
