import numpy as np
import pandas as pd
import pytest

from app.data.manifest import load_manifest
from app.data.synthetic import generate_synthetic
from app.models.manifest import SyntheticSpec
from app.tensor import make_node
from app.training import trainer
from app.training.trainer import train
from app.utils.error import InvalidInputError, NonFiniteError, TrainingError


def with_sections(config, **sections):
    updates = {
        name: getattr(config, name).model_copy(update=values) for name, values in sections.items()
    }
    return config.model_copy(update=updates)


@pytest.fixture(scope="module")
def entries(tiny_dataset):
    return load_manifest(tiny_dataset)


class TestTrain:
    """Training loop on the tiny synthetic set."""

    def test_outputs(self, tiny_config, entries, tmp_path):
        """Training writes a checkpoint, a log row per epoch and the config."""
        result = train(tiny_config, entries, tmp_path)
        assert [r.step for r in result.history] == [4, 8]
        assert result.step == 8
        assert result.checkpoint == tmp_path / "model.gaun" and result.checkpoint.is_file()
        log = pd.read_csv(result.log)
        assert list(log.columns) == ["epoch", "step", "loss", "lr", "train_accuracy"]
        assert len(log) == 2
        assert np.isfinite(log["loss"]).all()
        assert (tmp_path / "config.json").is_file()

    def test_resume_continues_step_count(self, tiny_config, entries, tmp_path):
        """Resuming continues the step count."""
        first = train(tiny_config, entries, tmp_path / "first")
        resumed = train(tiny_config, entries, tmp_path / "second", resume=first.checkpoint)
        assert [r.step for r in resumed.history] == [12, 16]
        assert resumed.step == 16

    def test_resume_needs_same_architecture(self, tiny_config, entries, tmp_path):
        """Resuming with another architecture is refused."""
        first = train(tiny_config, entries, tmp_path / "first")
        other = with_sections(tiny_config, head={"gru_hidden": 8})
        with pytest.raises(InvalidInputError, match="head"):
            train(other, entries, resume=first.checkpoint)

    def test_zero_lambda_matches_focal_only(self, tiny_config, entries):
        """Lambda zero trains exactly like focal-only mode."""
        zero = with_sections(tiny_config, loss={"lambda_": 0.0}, training={"epochs": 1})
        focal = with_sections(tiny_config, loss={"mode": "focal"}, training={"epochs": 1})
        assert [r.loss for r in train(zero, entries).history] == [r.loss for r in train(focal, entries).history]

    def test_horizontal_flip(self, tiny_config, entries):
        """Flip augmentation trains with finite losses."""
        flipped = with_sections(tiny_config, training={"hflip": True})
        result = train(flipped, entries)
        assert [r.step for r in result.history] == [4, 8]
        assert all(np.isfinite(r.loss) for r in result.history)

    def test_needs_both_classes(self, tiny_config, entries):
        """A training set with one class is refused."""
        with pytest.raises(InvalidInputError):
            train(tiny_config, [e for e in entries if not e.is_attack])

    def test_non_finite_loss_dumps_batch(self, tiny_config, entries, tmp_path, monkeypatch):
        """A non-finite loss stops training and dumps the batch."""
        def diverged(*args, **kwargs):
            raise NonFiniteError("loss is nan")

        monkeypatch.setattr(trainer, "compute_loss", diverged)
        with pytest.raises(TrainingError, match="step 0"):
            train(tiny_config, entries, tmp_path)
        dump = np.load(tmp_path / "nonfinite_step0.npz")
        assert dump["images"].shape == (4, 3, 32, 32)
        assert dump["labels"].shape == (4,)

    def test_non_finite_gradient_dumps_batch(self, tiny_config, entries, tmp_path, monkeypatch):
        """A finite loss whose backward yields NaN gradients stops training with a dump."""
        real_loss = trainer.compute_loss

        def nan_gradient(*args, **kwargs):
            loss = real_loss(*args, **kwargs)
            return make_node(loss.data, (loss,), lambda g: (g * np.nan,), "nan_gradient")

        monkeypatch.setattr(trainer, "compute_loss", nan_gradient)
        with pytest.raises(TrainingError, match="step 0"):
            train(tiny_config, entries, tmp_path)
        assert (tmp_path / "nonfinite_step0.npz").is_file()
        assert not (tmp_path / "model.gaun").exists()


@pytest.mark.slow
class TestOverfit:
    @pytest.mark.parametrize("lambda_", [0.0, 0.5])
    def test_separable_set_is_learned(self, toy_config, tmp_path, lambda_):
        """A small separable set is learned to full training accuracy."""
        spec = SyntheticSpec(image_size=64, bonafide_count=16, attack_counts={"PH": 8, "PL": 8}, seed=7)
        manifest, _ = generate_synthetic(spec, tmp_path)
        config = with_sections(toy_config, loss={"lambda_": lambda_}, training={"epochs": 200})
        history = train(config, load_manifest(manifest)).history
        assert history[-1].train_accuracy == 1.0
        assert history[-1].loss < 0.1 * history[0].loss
