"""Tests for the latent alignment losses.

Each loss is compared against a brute-force loop implementation in float64.
"""

import math

import pytest
import torch

from mam.alignment import (
    alignment_loss,
    barlow_align,
    contrastive_align,
    covariance_align,
    latent_mse_align,
    llma,
    pool_windows,
    simclr_align,
    vicreg_align,
    window_covariance,
)
from mam.config import AlignmentConfig
from mam.denoiser import extract_windows

SEEDS = range(100)
EPS = 1e-8


def rand(seed, *shape):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def unit(v):
    return v / (math.sqrt(sum(float(a) ** 2 for a in v)) + EPS)


def dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def loop_contrastive(zx, zy, window, tau):
    batch, length, _ = zx.shape
    count = length // window
    ux, uy = [], []
    for b in range(batch):
        for i in range(count):
            ux.append(unit(zx[b, i * window : (i + 1) * window].mean(dim=0)))
            uy.append(unit(zy[b, i * window : (i + 1) * window].mean(dim=0)))
    total = 0.0
    for k, anchor in enumerate(ux):
        scores = [math.exp(dot(anchor, cand) / tau) for cand in uy]
        total -= math.log(scores[k] / sum(scores))
    return total / len(ux)


def loop_cov(w):
    steps, d = len(w), len(w[0])
    mean = [sum(float(w[s][i]) for s in range(steps)) / steps for i in range(d)]
    return [
        [
            sum((float(w[s][i]) - mean[i]) * (float(w[s][j]) - mean[j]) for s in range(steps)) / (steps - 1)
            for j in range(d)
        ]
        for i in range(d)
    ]


def loop_covariance_align(zx, zy, window):
    batch, length, d = zx.shape
    total, count = 0.0, 0
    for b in range(batch):
        for i in range(length // window):
            cx = loop_cov(zx[b, i * window : (i + 1) * window])
            cy = loop_cov(zy[b, i * window : (i + 1) * window])
            total += sum((cx[p][q] - cy[p][q]) ** 2 for p in range(d) for q in range(d)) / d**2
            count += 1
    return total / count


def loop_ntxent(px, py, tau):
    n = len(px)
    emb = [unit(v) for v in [*px, *py]]
    total = 0.0
    for k in range(2 * n):
        pos = k + n if k < n else k - n
        scores = {m: math.exp(dot(emb[k], emb[m]) / tau) for m in range(2 * n) if m != k}
        total -= math.log(scores[pos] / sum(scores.values()))
    return total / (2 * n)


def loop_standardize(z):
    n, d = z.shape
    out = [[0.0] * d for _ in range(n)]
    for j in range(d):
        col = [float(z[i, j]) for i in range(n)]
        mean = sum(col) / n
        std = math.sqrt(sum((c - mean) ** 2 for c in col) / n)
        for i in range(n):
            out[i][j] = (col[i] - mean) / (std + EPS)
    return out


def loop_barlow(px, py, lam):
    n, d = px.shape
    a, b = loop_standardize(px), loop_standardize(py)
    total = 0.0
    for i in range(d):
        for j in range(d):
            c = sum(a[k][i] * b[k][j] for k in range(n)) / n
            total += (1 - c) ** 2 if i == j else lam * c**2
    return total


def loop_vicreg(px, py, weights, gamma):
    n, d = px.shape
    inv = sum((float(px[i, j]) - float(py[i, j])) ** 2 for i in range(n) for j in range(d)) / (n * d)

    def var_term(z):
        total = 0.0
        for j in range(d):
            col = [float(z[i, j]) for i in range(n)]
            mean = sum(col) / n
            std = math.sqrt(sum((c - mean) ** 2 for c in col) / (n - 1) + 1e-12)
            total += max(0.0, gamma - std) ** 2
        return total

    def cov_term(z):
        cov = loop_cov([[z[i, j] for j in range(d)] for i in range(n)])
        return sum(cov[i][j] ** 2 for i in range(d) for j in range(d) if i != j)

    return (
        weights[0] * inv
        + weights[1] * 0.5 * (var_term(px) + var_term(py))
        + weights[2] * 0.5 * (cov_term(px) + cov_term(py))
    )


class TestContrastive:
    def test_single_window_is_zero(self):
        z = extract_windows(rand(0, 1, 4, 3), 4)
        assert contrastive_align(z, z, tau=0.5).item() == pytest.approx(0.0, abs=1e-12)

    def test_two_orthogonal_windows(self):
        z = torch.zeros(1, 2, 2, dtype=torch.float64)
        z[0, 0, 0] = 1.0
        z[0, 1, 1] = 1.0
        latent = extract_windows(z, 1)
        expected = -math.log(math.e / (math.e + 1))
        assert contrastive_align(latent, latent, tau=1.0).item() == pytest.approx(expected, rel=1e-6)
        assert expected == pytest.approx(0.3133, abs=1e-4)

    def test_matches_loop_oracle(self):
        for seed in SEEDS:
            zx, zy = rand(seed, 2, 6, 3), rand(seed + 1000, 2, 6, 3)
            got = contrastive_align(extract_windows(zx, 2), extract_windows(zy, 2), tau=0.7).item()
            assert got == pytest.approx(loop_contrastive(zx, zy, 2, 0.7), rel=1e-6)

    def test_scale_invariance(self):
        zx, zy = rand(1, 2, 8, 4), rand(2, 2, 8, 4)
        base = contrastive_align(extract_windows(zx, 4), extract_windows(zy, 4), 0.1)
        scaled = contrastive_align(extract_windows(3.5 * zx, 4), extract_windows(3.5 * zy, 4), 0.1)
        assert abs(base.item() - scaled.item()) < 1e-6

    def test_symmetrized_averages_both_sides(self):
        zx, zy = rand(3, 2, 6, 3), rand(4, 2, 6, 3)
        lx, ly = extract_windows(zx, 3), extract_windows(zy, 3)
        both = contrastive_align(lx, ly, 0.5, symmetrize=True)
        expected = 0.5 * (contrastive_align(lx, ly, 0.5) + contrastive_align(ly, lx, 0.5))
        assert both.item() == pytest.approx(expected.item(), rel=1e-9)

    def test_zero_latents_are_finite(self):
        z = extract_windows(torch.zeros(2, 4, 3, dtype=torch.float64), 2)
        assert torch.isfinite(contrastive_align(z, z, 0.1))

    def test_rejects_bad_arguments(self):
        z = extract_windows(rand(0, 1, 4, 3), 2)
        with pytest.raises(ValueError, match="tau"):
            contrastive_align(z, z, tau=0.0)
        with pytest.raises(ValueError, match="shapes"):
            contrastive_align(z, extract_windows(rand(0, 1, 4, 2), 2), tau=1.0)


class TestCovariance:
    def test_identical_and_sign_flipped(self):
        z = extract_windows(rand(5, 2, 8, 3), 4)
        neg = extract_windows(-z.z, 4)
        assert covariance_align(z, z).item() == 0.0
        assert covariance_align(z, neg).item() == pytest.approx(0.0, abs=1e-14)

    def test_matches_loop_oracle(self):
        for seed in SEEDS:
            zx, zy = rand(seed, 1, 4, 3), rand(seed + 500, 1, 4, 3)
            got = covariance_align(extract_windows(zx, 4), extract_windows(zy, 4)).item()
            assert got == pytest.approx(loop_covariance_align(zx, zy, 4), rel=1e-6)

    def test_invariant_to_per_window_offsets(self):
        zx, zy = rand(6, 2, 8, 3), rand(7, 2, 8, 3)
        offsets = rand(8, 2, 2, 1, 3).expand(2, 2, 4, 3).reshape(2, 8, 3)
        base = covariance_align(extract_windows(zx, 4), extract_windows(zy, 4))
        shifted = covariance_align(extract_windows(zx + offsets, 4), extract_windows(zy, 4))
        assert shifted.item() == pytest.approx(base.item(), rel=1e-9)

    def test_window_covariance_shape(self):
        cov = window_covariance(extract_windows(rand(0, 2, 9, 3), 3))
        assert cov.shape == (2, 3, 3, 3)
        assert torch.allclose(cov, cov.transpose(-1, -2))

    def test_needs_two_steps(self):
        z = extract_windows(rand(0, 1, 4, 3), 1)
        with pytest.raises(ValueError, match="at least 2"):
            covariance_align(z, z)


class TestLlma:
    def test_identical_single_window_is_zero(self):
        z = extract_windows(rand(0, 1, 4, 3), 4)
        assert llma(z, z, AlignmentConfig(window_len=4)).item() == pytest.approx(0.0, abs=1e-12)

    def test_is_sum_of_terms(self):
        cfg = AlignmentConfig(window_len=3, temperature=0.2)
        lx, ly = extract_windows(rand(1, 2, 9, 4), 3), extract_windows(rand(2, 2, 9, 4), 3)
        expected = contrastive_align(lx, ly, 0.2) + covariance_align(lx, ly)
        assert llma(lx, ly, cfg).item() == pytest.approx(expected.item(), rel=1e-12)

    @pytest.mark.parametrize(
        ("use_contrast", "use_cov"), [(True, False), (False, True), (False, False)]
    )
    def test_ablation_flags(self, use_contrast, use_cov):
        cfg = AlignmentConfig(window_len=3, temperature=0.2, use_contrast=use_contrast, use_cov=use_cov)
        lx, ly = extract_windows(rand(1, 2, 9, 4), 3), extract_windows(rand(2, 2, 9, 4), 3)
        expected = 0.0
        if use_contrast:
            expected += contrastive_align(lx, ly, 0.2).item()
        if use_cov:
            expected += covariance_align(lx, ly).item()
        assert llma(lx, ly, cfg).item() == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_gradient_matches_finite_differences(self):
        cfg = AlignmentConfig(window_len=3, temperature=0.5)
        zx = rand(3, 2, 6, 3).requires_grad_(True)
        zy = rand(4, 2, 6, 3)
        assert torch.autograd.gradcheck(
            lambda a: llma(extract_windows(a, 3), extract_windows(zy, 3), cfg), (zx,)
        )


class TestSimclr:
    @pytest.mark.parametrize(("n", "tau"), [(2, 1.0), (4, 0.1), (5, 2.0)])
    def test_identical_embeddings(self, n, tau):
        z = torch.ones(n, 3, dtype=torch.float64)
        assert simclr_align(z, z, tau).item() == pytest.approx(math.log(2 * n - 1), rel=1e-9)

    def test_orthonormal_pairs(self):
        z = torch.eye(2, dtype=torch.float64)
        expected = -math.log(math.e / (math.e + 2))
        assert simclr_align(z, z, 1.0).item() == pytest.approx(expected, rel=1e-6)

    def test_matches_loop_oracle(self):
        for seed in SEEDS:
            px, py = rand(seed, 4, 3), rand(seed + 7, 4, 3)
            assert simclr_align(px, py, 0.5).item() == pytest.approx(loop_ntxent(px, py, 0.5), rel=1e-6)

    def test_single_pair_warns(self, caplog):
        z = rand(0, 1, 3)
        with caplog.at_level("WARNING", logger="mam.alignment"):
            simclr_align(z, z, 1.0)
        assert "degenerate" in caplog.text

    def test_gradient(self):
        px = rand(1, 4, 3).requires_grad_(True)
        py = rand(2, 4, 3)
        assert torch.autograd.gradcheck(lambda a: simclr_align(a, py, 0.5), (px,))


class TestBarlow:
    WHITENED = torch.tensor([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]], dtype=torch.float64)

    def test_whitened_identical_batches(self):
        assert barlow_align(self.WHITENED, self.WHITENED).item() == pytest.approx(0.0, abs=1e-12)

    def test_negated_dimension(self):
        flipped = self.WHITENED.clone()
        flipped[:, 0] *= -1
        assert barlow_align(self.WHITENED, flipped).item() == pytest.approx(4.0, rel=1e-6)

    def test_matches_loop_oracle(self):
        for seed in SEEDS:
            px, py = rand(seed, 8, 5), rand(seed + 11, 8, 5)
            assert barlow_align(px, py, 5e-3).item() == pytest.approx(loop_barlow(px, py, 5e-3), rel=1e-6)

    def test_constant_dimension_is_finite(self):
        px = rand(0, 6, 3)
        px[:, 1] = 2.0
        assert torch.isfinite(barlow_align(px, rand(1, 6, 3)))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError, match="at least 2"):
            barlow_align(rand(0, 1, 3), rand(1, 1, 3))

    def test_gradient(self):
        px = rand(1, 8, 3).requires_grad_(True)
        py = rand(2, 8, 3)
        assert torch.autograd.gradcheck(lambda a: barlow_align(a, py), (px,))


class TestVicreg:
    def test_whitened_identical_batches(self):
        z = 2.0 * TestBarlow.WHITENED
        assert vicreg_align(z, z).item() == pytest.approx(0.0, abs=1e-12)

    def test_constant_batches_hit_the_hinge(self):
        z = torch.zeros(4, 3, dtype=torch.float64)
        loss = vicreg_align(z, z, weights=(0.0, 1.0, 0.0), gamma_v=1.0)
        assert loss.item() == pytest.approx(3.0, rel=1e-5)

    def test_matches_loop_oracle(self):
        for seed in SEEDS:
            px, py = 0.5 * rand(seed, 8, 4), 0.5 * rand(seed + 3, 8, 4)
            expected = loop_vicreg(px, py, (25.0, 25.0, 1.0), 1.0)
            assert vicreg_align(px, py).item() == pytest.approx(expected, rel=1e-6)

    def test_gradient(self):
        px = (0.5 * rand(1, 8, 3)).requires_grad_(True)
        py = 0.5 * rand(2, 8, 3)
        assert torch.autograd.gradcheck(lambda a: vicreg_align(a, py), (px,))


class TestLatentMse:
    def test_values(self):
        z = rand(0, 2, 5, 3)
        assert latent_mse_align(z, z).item() == 0.0
        assert latent_mse_align(z, z + 1).item() == pytest.approx(1.0)

    def test_matches_loop_oracle(self):
        zx, zy = rand(1, 2, 5, 3), rand(2, 2, 5, 3)
        expected = sum(float(v) ** 2 for v in (zx - zy).flatten()) / zx.numel()
        assert latent_mse_align(zx, zy).item() == pytest.approx(expected, rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            latent_mse_align(rand(0, 2, 5, 3), rand(0, 2, 4, 3))


class TestAlignmentLoss:
    @pytest.fixture
    def latents(self):
        return extract_windows(rand(1, 2, 8, 4), 4), extract_windows(rand(2, 2, 8, 4), 4)

    def test_none_is_constant_zero(self, latents):
        zx, zy = latents
        zx.z.requires_grad_(True)
        loss = alignment_loss(zx, zy, AlignmentConfig(method="none"))
        assert loss.item() == 0.0
        assert not loss.requires_grad

    def test_dispatch(self, latents):
        zx, zy = latents
        px, py = pool_windows(zx), pool_windows(zy)
        cases = {
            "llma": llma(zx, zy, AlignmentConfig(window_len=4)),
            "simclr": simclr_align(px, py, 0.1),
            "barlow": barlow_align(px, py, 5e-3),
            "vicreg": vicreg_align(px, py),
            "mse": latent_mse_align(zx.z, zy.z),
        }
        for method, expected in cases.items():
            got = alignment_loss(zx, zy, AlignmentConfig(method=method, window_len=4))
            assert got.item() == pytest.approx(expected.item(), rel=1e-12), method

    def test_pool_windows(self, latents):
        zx, _ = latents
        pooled = pool_windows(zx)
        assert pooled.shape == (4, 4)
        assert torch.allclose(pooled[1], zx.z[0, 4:8].mean(dim=0))
