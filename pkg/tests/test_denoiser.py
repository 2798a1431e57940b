"""Tests for the conditional transformer denoiser and latent windows."""

import pytest
import torch
from torch import nn

from mam.config import DenoiserConfig, preset
from mam.denoiser import (
    Denoiser,
    count_params,
    denoise_forward,
    extract_windows,
    sinusoidal_table,
)


@pytest.fixture
def model():
    torch.manual_seed(0)
    cfg = DenoiserConfig(
        d_in=3, d_cond=2, num_steps=10, d_model=8, n_heads=2,
        n_layers_enc=1, n_layers_dec=1, max_len=32, dropout=0.0,
    )
    return Denoiser(cfg).eval()


def inputs(batch=4, length=12):
    gen = torch.Generator().manual_seed(1)
    x_t = torch.randn(batch, length, 3, generator=gen)
    cond = torch.randn(batch, length, 2, generator=gen)
    t = torch.randint(1, 11, (batch,), generator=gen)
    return x_t, cond, t


class TestDenoiser:
    def test_output_shapes(self, model):
        x_t, cond, t = inputs()
        x0_hat, z = model(x_t, cond, t)
        assert x0_hat.shape == (4, 12, 3)
        assert z.shape == (4, 12, model.config.d_latent)
        assert torch.isfinite(x0_hat).all()

    def test_zeroed_output_projection(self, model):
        with torch.no_grad():
            model.output_proj.weight.zero_()
            model.output_proj.bias.zero_()
        x_t, cond, t = inputs()
        x0_hat, _ = model(x_t, cond, t)
        assert torch.equal(x0_hat, torch.zeros_like(x0_hat))

    def test_deterministic_in_eval_mode(self, model):
        x_t, cond, t = inputs()
        assert torch.equal(model.predict_x0(x_t, cond, t), model.predict_x0(x_t, cond, t))

    def test_time_order_matters(self, model):
        x_t, cond, t = inputs()
        perm = torch.randperm(12, generator=torch.Generator().manual_seed(3))
        shuffled, _ = model(x_t[:, perm], cond[:, perm], t)
        original, _ = model(x_t, cond, t)
        assert not torch.allclose(shuffled, original[:, perm], atol=1e-5)

    def test_step_changes_prediction(self, model):
        x_t, cond, _ = inputs()
        first = model.predict_x0(x_t, cond, torch.full((4,), 1))
        last = model.predict_x0(x_t, cond, torch.full((4,), 10))
        assert not torch.allclose(first, last)

    def test_positions_are_not_saved(self, model):
        assert "positions" not in model.state_dict()
        assert model.positions.shape == (32, 8)
        assert torch.equal(model.positions, sinusoidal_table(32, 8))

    @pytest.mark.parametrize(
        ("x_shape", "cond_shape", "t", "match"),
        [
            ((4, 12, 4), (4, 12, 2), [1, 1, 1, 1], "x_t"),
            ((4, 12, 3), (4, 11, 2), [1, 1, 1, 1], "cond"),
            ((4, 12, 3), (4, 12, 3), [1, 1, 1, 1], "cond"),
            ((1, 33, 3), (1, 33, 2), [1], "max_len"),
            ((4, 12, 3), (4, 12, 2), [1, 2], "one step"),
            ((2, 12, 3), (2, 12, 2), [0, 1], "out of range"),
            ((2, 12, 3), (2, 12, 2), [1, 11], "out of range"),
        ],
    )
    def test_rejects_bad_inputs(self, model, x_shape, cond_shape, t, match):
        with pytest.raises(ValueError, match=match):
            model(torch.zeros(x_shape), torch.zeros(cond_shape), torch.tensor(t))

    def test_denoise_forward_windows(self, model):
        x_t, cond, t = inputs()
        x0_hat, latent = denoise_forward(model, x_t, cond, t, window_len=4)
        assert x0_hat.shape == (4, 12, 3)
        assert latent.num_windows == 3
        assert latent.windows.shape == (4, 3, 4, 8)
        _, whole = denoise_forward(model, x_t, cond, t)
        assert whole.num_windows == 1


class TestParameterCount:
    def test_linear_layer(self):
        assert count_params(nn.Linear(3, 4)) == 16

    def test_frozen_parameters_are_excluded(self):
        layer = nn.Linear(3, 4)
        layer.bias.requires_grad_(False)
        assert count_params(layer) == 12

    def test_desk_preset_is_small(self):
        cfg = preset("desk")
        model = Denoiser(cfg.model.for_modality(cfg.data.d_x, cfg.data.d_y, cfg.schedule.num_steps))
        assert count_params(model) < 1_000_000

    def test_paper_preset_size(self):
        cfg = preset("paper")
        model = Denoiser(cfg.model.for_modality(15, 9, cfg.schedule.num_steps))
        assert 10_000_000 <= count_params(model) <= 50_000_000

    def test_feed_forward_width(self):
        desk = preset("desk").model.for_modality(3, 2, 5)
        assert desk.ffn_width == 4 * desk.d_model
        paper = preset("paper").model
        assert paper.ffn_dim == 64 * paper.d_model

    def test_conventional_width_is_below_the_size_bracket(self):
        cfg = preset("paper").with_overrides(["model.ffn_dim=0"])
        model = Denoiser(cfg.model.for_modality(15, 9, cfg.schedule.num_steps))
        assert count_params(model) < 10_000_000


class TestExtractWindows:
    @pytest.mark.parametrize(
        ("length", "window", "count", "dropped"),
        [(6, 3, 2, 0), (7, 3, 2, 1), (300, 30, 10, 0), (5, 5, 1, 0), (5, 1, 5, 0)],
    )
    def test_partition(self, length, window, count, dropped):
        z = torch.arange(2 * length * 2, dtype=torch.float32).reshape(2, length, 2)
        latent = extract_windows(z, window)
        assert latent.num_windows == count
        assert latent.dropped == dropped
        assert latent.windows.shape == (2, count, window, 2)
        assert torch.equal(latent.windows.reshape(2, -1, 2), z[:, : count * window])

    @pytest.mark.parametrize("window", [0, 8])
    def test_rejects_bad_window(self, window):
        with pytest.raises(ValueError, match="window_len"):
            extract_windows(torch.zeros(1, 7, 2), window)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            extract_windows(torch.zeros(7, 2), 3)
