import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from conftest import StubClassifier
from corrgan.corruptions import CorruptionSpec
from corrgan.data import CorruptedDataset, corrupt_images, make_synthetic
from corrgan.errors import ChecksumError, InvalidSpec, IoError, ManifestError, ShapeError
from corrgan.models import build_model
from corrgan.training import (Checkpoint, TrainConfig, config_hash, derive_seed, load_checkpoint, probe_batch,
                              probe_outputs, read_manifest, save_checkpoint, train_denoiser_gan,
                              train_noise_classifier, train_target_classifier)


@pytest.fixture(scope="module")
def tiny():
    clean = make_synthetic(16, 5)
    spec = CorruptionSpec("brightness", 3, 0)
    bright = CorruptedDataset(corrupt_images(clean.images, spec), clean.class_labels, "brightness", 3, 0)
    fog = CorruptedDataset(corrupt_images(clean.images, CorruptionSpec("fog", 3, 0)), clean.class_labels, "fog", 3, 0)
    return clean, bright, fog


def _stub_classifier():
    torch.manual_seed(0)
    return StubClassifier().float().eval()


def _state_bytes(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


class TestConfig:
    def test_round_trip_and_hash(self):
        c = TrainConfig(epochs=3, lambda_hid=0.5)
        assert TrainConfig.from_dict(c.to_dict()) == c
        assert c.hash() == TrainConfig.from_dict(c.to_dict()).hash()
        assert c.hash() != TrainConfig(epochs=3, lambda_hid=0.25).hash()
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})

    @pytest.mark.parametrize("bad", [{"epochs": -1}, {"batch_size": 0}, {"lr_generator": 0.0}, {"lambda_pix": -1.0}])
    def test_rejects_invalid(self, bad):
        with pytest.raises(InvalidSpec):
            TrainConfig(**bad)

    def test_rejects_unknown_keys(self):
        with pytest.raises(InvalidSpec):
            TrainConfig.from_dict({"epochs": 1, "learning_rate": 0.1})

    @given(st.integers(0, 2**32 - 1), st.text(min_size=1, max_size=20))
    def test_derive_seed_is_stable(self, root, label):
        assert derive_seed(root, label) == derive_seed(root, label)
        assert 0 <= derive_seed(root, label) < 2**63

    def test_derive_seed_separates_labels(self):
        assert derive_seed(0, "shuffle") != derive_seed(0, "augment")
        assert derive_seed(0, "shuffle") != derive_seed(1, "shuffle")


class TestGan:
    def test_zero_epochs_contract(self, tiny):
        clean, bright, _ = tiny
        clf = _stub_classifier()
        res = train_denoiser_gan("brightness", bright, clean, clf, TrainConfig(epochs=0))
        assert res.history == []
        x = probe_batch(4)
        with torch.no_grad():
            assert torch.count_nonzero(torch.as_tensor(probe_outputs(res.generator.model, "generator", x))) == 0
            d = probe_outputs(res.discriminator.model, "discriminator", x)
        assert ((d > 0) & (d < 1)).all()

    def test_one_epoch_history_and_frozen_classifier(self, tiny, tmp_path):
        clean, bright, _ = tiny
        clf = _stub_classifier()
        clf.train()
        before = _state_bytes(clf)
        cfg = TrainConfig(epochs=1, batch_size=4)
        res = train_denoiser_gan("brightness", bright, clean, clf, cfg, log_path=tmp_path / "log.jsonl")
        assert len(res.history) == 4 == res.generator.step
        for rec in res.history:
            assert set(rec) == {"step", "epoch", "adv", "pix", "hid", "total", "d_loss"}
            assert all(np.isfinite(v) for v in rec.values())
        assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 4
        after = clf.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)
        assert clf.training and all(p.requires_grad for p in clf.parameters())
        assert res.generator.extra == {"kind": "brightness"}

    def test_deterministic(self, tiny):
        clean, bright, _ = tiny
        cfg = TrainConfig(epochs=1, batch_size=8, seed=3)
        a = train_denoiser_gan("brightness", bright, clean, _stub_classifier(), cfg)
        b = train_denoiser_gan("brightness", bright, clean, _stub_classifier(), cfg)
        assert a.history == b.history
        sa, sb = a.generator.model.state_dict(), b.generator.model.state_dict()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)

    def test_misaligned(self, tiny):
        clean, bright, _ = tiny
        with pytest.raises(InvalidSpec):
            train_denoiser_gan("brightness", bright.subset(np.arange(8)), clean, _stub_classifier(), TrainConfig())
        shuffled = CorruptedDataset(bright.images, np.roll(bright.class_labels, 1), "brightness", 3)
        if not np.array_equal(shuffled.class_labels, clean.class_labels):
            with pytest.raises(InvalidSpec):
                train_denoiser_gan("brightness", shuffled, clean, _stub_classifier(), TrainConfig())

    def test_wrong_kind(self, tiny):
        clean, bright, _ = tiny
        with pytest.raises(InvalidSpec):
            train_denoiser_gan("fog", bright, clean, _stub_classifier(), TrainConfig(epochs=0))


class TestSupervised:
    def test_classifier_one_epoch(self, tiny):
        clean, _, _ = tiny
        ck = train_target_classifier(clean, TrainConfig(epochs=1, batch_size=8), test=clean)
        assert ck.step == 2 == len(ck.history)
        assert 0.0 <= ck.extra["test_accuracy"] <= 1.0
        assert not ck.model.training

    def test_classifier_deterministic(self, tiny):
        clean, _, _ = tiny
        cfg = TrainConfig(epochs=1, batch_size=8, augment=True)
        a, b = train_target_classifier(clean, cfg), train_target_classifier(clean, cfg)
        assert [h["loss"] for h in a.history] == [h["loss"] for h in b.history]

    def test_empty_training_set_is_unrepresentable(self):
        with pytest.raises(ShapeError):
            CorruptedDataset(np.zeros((0, 32, 32, 3), np.float32), np.zeros(0, np.int64))

    def test_noise_classifier(self, tiny):
        _, bright, fog = tiny
        ck = train_noise_classifier([fog, bright], TrainConfig(epochs=1, batch_size=16), test=[fog, bright])
        assert ck.extra["kinds"] == ["fog", "brightness"]
        assert set(ck.extra["per_kind_accuracy"]) == {"fog", "brightness"}

    def test_noise_classifier_needs_two_kinds(self, tiny):
        _, bright, _ = tiny
        with pytest.raises(InvalidSpec):
            train_noise_classifier([bright, bright], TrainConfig(epochs=0))


ROLES = {
    "classifier": {},
    "generator": {},
    "discriminator": {},
    "noise_classifier": {"num_kinds": 2},
}


class TestCheckpoint:
    @pytest.mark.parametrize("role", list(ROLES))
    def test_round_trip(self, role, tmp_path):
        torch.manual_seed(7)
        model = build_model(role, **ROLES[role]).eval()
        with torch.no_grad():
            for p in model.parameters():  # the generator head starts at zero; make outputs informative
                p.add_(0.01 * torch.randn_like(p))
        cfg = TrainConfig(epochs=2)
        manifest = save_checkpoint(Checkpoint(model, role, cfg, step=5, history=[{"step": 0}],
                                              extra={"kind": "fog"}), tmp_path / role)
        assert manifest["model_role"] == role
        assert manifest["training_config_hash"] == cfg.hash()
        assert {"architecture_id", "input_shape", "num_classes_or_kinds", "format_version",
                "weights_sha256"} <= set(manifest)
        loaded = load_checkpoint(tmp_path / role, role=role)
        x = probe_batch(4)
        diff = np.abs(probe_outputs(model, role, x) - probe_outputs(loaded.model, role, x)).max()
        assert diff <= 1e-6
        assert loaded.step == 5 and loaded.history == [{"step": 0}] and loaded.config == cfg
        assert loaded.extra == {"kind": "fog"}

    def test_role_mismatch(self, tmp_path):
        save_checkpoint(Checkpoint(build_model("discriminator"), "discriminator"), tmp_path / "d")
        with pytest.raises(ManifestError):
            load_checkpoint(tmp_path / "d", role="generator")

    def test_unknown_role(self, tmp_path):
        with pytest.raises(ManifestError):
            save_checkpoint(Checkpoint(build_model("discriminator"), "critic"), tmp_path / "d")

    def test_tampered_weights(self, tmp_path):
        save_checkpoint(Checkpoint(build_model("discriminator"), "discriminator"), tmp_path / "d")
        w = tmp_path / "d" / "weights.pt"
        data = bytearray(w.read_bytes())
        data[-10] ^= 0xFF
        w.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_checkpoint(tmp_path / "d")

    def test_bad_format_version(self, tmp_path):
        save_checkpoint(Checkpoint(build_model("discriminator"), "discriminator"), tmp_path / "d")
        mf = tmp_path / "d" / "manifest.json"
        d = json.loads(mf.read_text())
        d["format_version"] = 99
        mf.write_text(json.dumps(d))
        with pytest.raises(ManifestError):
            read_manifest(tmp_path / "d")

    def test_missing(self, tmp_path):
        with pytest.raises(IoError):
            load_checkpoint(tmp_path / "nope")
