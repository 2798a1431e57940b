"""Tests for the joint training loop, EMA and per-fold runs."""

from unittest import mock

import pandas as pd
import pytest
import torch

from mam.checkpoint import latest_checkpoint, load_checkpoint
from mam.data.folds import make_folds
from mam.objective import LOG_COLUMNS
from mam.trainer import (
    ParameterEMA,
    Trainer,
    append_train_log,
    ema_update,
    modality_labels,
    run_fold,
    truncate_train_log,
)
from mam.utils import NumericalError, read_json


def snapshot(trainer):
    return {name: t.detach().clone() for name, t in trainer.learnables().items()}


class TestEma:
    def test_decay_zero_copies_live(self):
        shadow = torch.tensor([4.0, -1.0])
        ema_update(shadow, torch.tensor([2.0, 3.0]), 0.0)
        assert shadow.tolist() == [2.0, 3.0]

    def test_decay_one_keeps_shadow(self):
        shadow = torch.tensor([4.0])
        ema_update(shadow, torch.tensor([100.0]), 1.0)
        assert shadow.tolist() == [4.0]

    def test_hand_arithmetic(self):
        shadow = torch.tensor([4.0])
        ema_update(shadow, torch.tensor([0.0]), 0.5)
        assert shadow.item() == 2.0
        ema_update(shadow, torch.tensor([8.0]), 0.5)
        assert shadow.item() == 5.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="EMA shape mismatch"):
            ema_update(torch.zeros(2), torch.zeros(3), 0.5)

    def test_parameter_ema_state(self):
        live = {"w": torch.ones(2), "b": torch.zeros(1)}
        ema = ParameterEMA(live, decay=0.5)
        live["w"].mul_(3.0)
        ema.update(live)
        state = ema.state_dict()
        assert set(state) == {"ema.w", "ema.b"}
        assert state["ema.w"].tolist() == [2.0, 2.0]

        other = ParameterEMA({"w": torch.zeros(2), "b": torch.zeros(1)}, decay=0.5)
        other.load_state_dict(state)
        assert other.shadow["w"].tolist() == [2.0, 2.0]


class TestTrainStep:
    def test_returns_finite_breakdown(self, tiny_config, batch):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        parts = trainer.train_step(*batch)
        assert parts is not None
        assert torch.isfinite(parts.total)
        assert trainer.step == 1

    def test_zero_learning_rate_keeps_parameters(self, tiny_config, batch):
        config = tiny_config.with_overrides(["train.lr_theta=0.0", "train.lr_phi=0.0", "train.lr_alpha=0.0"])
        trainer = Trainer(config, d_x=3, d_y=2)
        before = snapshot(trainer)
        for _ in range(3):
            trainer.train_step(*batch)
        after = snapshot(trainer)
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_parameters_move(self, tiny_config, batch):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        before = snapshot(trainer)
        trainer.train_step(*batch)
        after = snapshot(trainer)
        assert not torch.equal(before["model_x.output_proj.weight"], after["model_x.output_proj.weight"])
        assert not torch.equal(before["model_y.output_proj.weight"], after["model_y.output_proj.weight"])
        assert not torch.equal(before["alpha.raw"], after["alpha.raw"])

    def test_unaligned_run_leaves_alpha(self, tiny_config, batch):
        trainer = Trainer(tiny_config.with_overrides(["alignment.method=\"none\""]), d_x=3, d_y=2)
        before = trainer.alpha.raw.detach().clone()
        parts = trainer.train_step(*batch)
        assert parts.align.item() == 0.0
        assert torch.equal(trainer.alpha.raw.detach(), before)

    def test_same_seed_same_losses(self, tiny_config, batch):
        runs = []
        for _ in range(2):
            trainer = Trainer(tiny_config, d_x=3, d_y=2)
            runs.append([trainer.train_step(*batch).total.item() for _ in range(10)])
        assert runs[0] == runs[1]

    def test_different_seed_different_losses(self, tiny_config, batch):
        first = Trainer(tiny_config, d_x=3, d_y=2).train_step(*batch).total.item()
        other = Trainer(tiny_config.with_overrides(["train.seed=1"]), d_x=3, d_y=2)
        assert other.train_step(*batch).total.item() != first

    def test_non_finite_step_is_skipped(self, tiny_config, batch):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        before = snapshot(trainer)
        with mock.patch("mam.trainer.total_loss", side_effect=NumericalError("Non-finite loss terms: total")):
            assert trainer.train_step(*batch) is None
        assert trainer.step == 1
        assert trainer.skipped_steps == 1
        after = snapshot(trainer)
        assert all(torch.equal(before[k], after[k]) for k in before)
        assert trainer.train_step(*batch) is not None
        assert trainer.step == 2


class TestFit:
    def test_log_rows_and_columns(self, tiny_config, pairs, tmp_path):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        log = tmp_path / "train_log.csv"
        history = trainer.fit(pairs, epochs=2, log_path=log, quiet=True)
        frame = pd.read_csv(log)
        assert tuple(frame.columns) == LOG_COLUMNS
        assert len(frame) == len(history) == 6
        assert frame["step"].tolist() == [1, 2, 3, 4, 5, 6]
        assert trainer.epoch == 2

    def test_all_skipped_epoch_raises(self, tiny_config, pairs):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        with mock.patch("mam.trainer.total_loss", side_effect=NumericalError("nan")):
            with pytest.raises(NumericalError, match="Every step"):
                trainer.fit(pairs, epochs=1, quiet=True)
        assert trainer.skipped_steps == 3

    def test_periodic_checkpoints(self, tiny_config, pairs, tmp_path):
        config = tiny_config.with_overrides(["train.checkpoint_every=1"])
        trainer = Trainer(config, d_x=3, d_y=2)
        trainer.fit(pairs, epochs=2, checkpoint_root=tmp_path / "checkpoints", quiet=True)
        names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
        assert names == ["step_3", "step_6"]
        assert latest_checkpoint(tmp_path).name == "step_6"

    def test_resume_continues_the_same_trajectory(self, tiny_config, pairs, tmp_path):
        straight = Trainer(tiny_config, d_x=3, d_y=2).fit(pairs, epochs=2, quiet=True)

        first = Trainer(tiny_config, d_x=3, d_y=2)
        first.fit(pairs, epochs=1, quiet=True)
        first.save(tmp_path / "step_3")
        resumed = Trainer.from_checkpoint(tmp_path / "step_3")
        assert resumed.step == 3
        assert resumed.epoch == 1
        rest = resumed.fit(pairs, epochs=2, quiet=True)

        assert [r["step"] for r in rest] == [4, 5, 6]
        for expected, got in zip(straight[3:], rest):
            assert got["total"] == pytest.approx(expected["total"], rel=1e-6)


class TestCheckpointRoundTrip:
    def test_arrays_and_manifest(self, tiny_config, batch, tmp_path):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        trainer.train_step(*batch)
        trainer.save(tmp_path / "ckpt", {"fold": {"fold_index": 0}})
        data = load_checkpoint(tmp_path / "ckpt")
        assert "alpha.raw" in data.arrays
        assert "ema.alpha.raw" in data.arrays
        assert any(k.startswith("model_x.") for k in data.arrays)
        assert any(k.startswith("ema.model_y.") for k in data.arrays)
        assert not any(k.endswith("positions") for k in data.arrays)
        assert data.manifest["step"] == 1
        assert data.manifest["d_x"] == 3
        assert data.manifest["fold"] == {"fold_index": 0}
        assert data.manifest["schema_version"] == 1

    def test_reloaded_models_predict_identically(self, tiny_config, batch, tmp_path):
        trainer = Trainer(tiny_config, d_x=3, d_y=2)
        for _ in range(2):
            trainer.train_step(*batch)
        trainer.save(tmp_path / "ckpt")
        restored = Trainer.from_checkpoint(tmp_path / "ckpt")

        x, y = batch
        t = torch.full((4,), 3)
        for original, reloaded in zip(trainer.ema_models(), restored.ema_models()):
            cond = y if original.d_out == 3 else x
            x_t = x if original.d_out == 3 else y
            assert torch.equal(original.predict_x0(x_t, cond, t), reloaded.predict_x0(x_t, cond, t))
        assert torch.equal(trainer.alpha.raw, restored.alpha.raw)
        assert torch.equal(trainer.generator.get_state(), restored.generator.get_state())

    def test_ema_models_differ_from_live(self, tiny_config, batch):
        trainer = Trainer(tiny_config.with_overrides(["train.ema_decay=0.9"]), d_x=3, d_y=2)
        trainer.train_step(*batch)
        ema_x, _ = trainer.ema_models()
        live = dict(trainer.model_x.named_parameters())
        shadow = dict(ema_x.named_parameters())
        assert not torch.equal(live["output_proj.weight"], shadow["output_proj.weight"])
        assert not ema_x.training


class TestTrainLog:
    def test_header_written_once(self, tmp_path):
        path = tmp_path / "log.csv"
        row = dict.fromkeys(LOG_COLUMNS, 0.5)
        append_train_log(path, [{**row, "step": 1}])
        append_train_log(path, [{**row, "step": 2}])
        append_train_log(path, [])
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].split(",") == list(LOG_COLUMNS)

    def test_truncate_drops_rows_past_step(self, tmp_path):
        path = tmp_path / "log.csv"
        row = dict.fromkeys(LOG_COLUMNS, 0.5)
        append_train_log(path, [{**row, "step": s} for s in range(1, 7)])
        truncate_train_log(path, 4)
        assert pd.read_csv(path)["step"].tolist() == [1, 2, 3, 4]
        truncate_train_log(tmp_path / "missing.csv", 4)
        assert not (tmp_path / "missing.csv").exists()


def test_modality_labels(tiny_config):
    assert modality_labels(tiny_config, 3, 2) == ("x-y", ["x0", "x1", "x2"], ["y0", "y1"])
    real = tiny_config.with_overrides(['data.source="gait.csv"'])
    label, names_x, names_y = modality_labels(real, 15, 9)
    assert label == "kinematics-kinetics"
    assert (len(names_x), len(names_y)) == (15, 9)


class TestRunFold:
    def test_writes_fold_artifacts(self, tiny_config, pairs, tmp_path):
        fold = make_folds(pairs, 1, 0, 2, seed=0)[0]
        result = run_fold(fold, tiny_config, pairs, tmp_path / "fold_0", quiet=True)

        fold_dir = tmp_path / "fold_0"
        info = read_json(fold_dir / "fold.json")
        assert info["n_train"] + info["n_test"] == len(pairs)
        assert info["fold"]["fold_index"] == 0
        assert (fold_dir / "train_log.csv").is_file()
        assert (fold_dir / "metrics.csv").is_file()
        assert result.checkpoint == fold_dir / "checkpoints" / "step_2"
        assert load_checkpoint(result.checkpoint).manifest["normalization"] == info["normalization"]
        assert {r.split for r in result.reports} == {"train", "test"}

    def test_rerun_without_resume_replaces_log(self, tiny_config, pairs, tmp_path):
        fold = make_folds(pairs, 1, 0, 2, seed=0)[0]
        run_fold(fold, tiny_config, pairs, tmp_path, quiet=True)
        run_fold(fold, tiny_config, pairs, tmp_path, quiet=True)
        assert len(pd.read_csv(tmp_path / "train_log.csv")) == 2

    def test_resume_extends_training(self, tiny_config, pairs, tmp_path):
        fold = make_folds(pairs, 1, 0, 2, seed=0)[0]
        run_fold(fold, tiny_config, pairs, tmp_path, quiet=True)
        longer = tiny_config.with_overrides(["train.epochs=2"])
        result = run_fold(fold, longer, pairs, tmp_path, resume=True, quiet=True)
        assert result.checkpoint.name == "step_4"
        assert pd.read_csv(tmp_path / "train_log.csv")["step"].tolist() == [1, 2, 3, 4]

    def test_resume_discards_rows_after_the_checkpoint(self, tiny_config, pairs, tmp_path):
        fold = make_folds(pairs, 1, 0, 2, seed=0)[0]
        run_fold(fold, tiny_config, pairs, tmp_path, quiet=True)
        stale = dict.fromkeys(LOG_COLUMNS, 99.0)
        append_train_log(tmp_path / "train_log.csv", [{**stale, "step": 3}, {**stale, "step": 4}])

        longer = tiny_config.with_overrides(["train.epochs=2"])
        run_fold(fold, longer, pairs, tmp_path, resume=True, quiet=True)
        log = pd.read_csv(tmp_path / "train_log.csv")
        assert log["step"].tolist() == [1, 2, 3, 4]
        assert (log["total"] != 99.0).all()


@pytest.mark.long
def test_overfits_a_single_batch(tiny_config, batch):
    config = tiny_config.with_overrides(["train.lr_theta=0.003", "train.lr_phi=0.003", "train.weight_decay=0.0"])
    trainer = Trainer(config, d_x=3, d_y=2)
    x, y = batch
    first = trainer.train_step(x, y)
    denoise_start = first.denoise_x.item() + first.denoise_y.item()
    window = []
    for _ in range(300):
        parts = trainer.train_step(x, y)
        window.append(parts.denoise_x.item() + parts.denoise_y.item())
    assert sum(window[-20:]) / 20 < 0.5 * denoise_start
