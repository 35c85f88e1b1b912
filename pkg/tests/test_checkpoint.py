"""Checkpoint round-trip, determinism and corruption handling."""

import json

import numpy as np
import pytest

from ordiformer.checkpoint import (
    CheckpointBundle,
    load_checkpoint,
    save_checkpoint,
    train_config_from_dict,
    train_config_to_dict,
)
from ordiformer.errors import DataFormatError
from ordiformer.model import GradingModel, ModelConfig
from ordiformer.pipeline import FoldSplit, TrainConfig
from ordiformer.semalign import AlignmentConfig


def make_model(align_mode: str = "off", seed: int = 5) -> GradingModel:
    cfg = ModelConfig(image_hw=(8, 8), encoder="mlp", mlp_widths=(8,),
                      align=AlignmentConfig(mode=align_mode, prompt_dim=6))
    return GradingModel(cfg, np.random.default_rng(seed))


def make_split() -> FoldSplit:
    return FoldSplit(1, (0, 2, 4), (1, 3), (5, 6))


SUMMARY = {"best_epoch": 3, "best_metric": 0.9, "monitor": "accuracy",
           "epochs_run": 7}


class TestRoundTrip:
    def test_state_and_forward_bitwise(self, tmp_path):
        model = make_model()
        save_checkpoint(tmp_path / "ck", model, TrainConfig(), 1, make_split(),
                        SUMMARY)
        bundle = load_checkpoint(tmp_path / "ck")
        src, dst = model.state_tensors(), bundle.model.state_tensors()
        assert set(src) == set(dst)
        for name in src:
            np.testing.assert_array_equal(src[name], dst[name])
        rng = np.random.default_rng(0)
        images = [rng.random((8, 8)).astype(np.float32) for _ in range(4)]
        np.testing.assert_array_equal(model.infer_logits(images),
                                      bundle.model.infer_logits(images))

    def test_prompts_persisted(self, tmp_path):
        model = make_model(align_mode="kl_distill")
        save_checkpoint(tmp_path / "ck", model, TrainConfig(), 0, make_split(),
                        SUMMARY)
        bundle = load_checkpoint(tmp_path / "ck")
        np.testing.assert_array_equal(bundle.model.prompts.embeddings,
                                      model.prompts.embeddings)

    def test_repeated_saves_byte_identical(self, tmp_path):
        model = make_model()
        save_checkpoint(tmp_path / "a", model, TrainConfig(), 1, make_split(),
                        SUMMARY)
        save_checkpoint(tmp_path / "b", model, TrainConfig(), 1, make_split(),
                        SUMMARY)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_stem_variants(self, tmp_path):
        model = make_model()
        save_checkpoint(tmp_path / "ck.json", model, TrainConfig(), 0,
                        make_split(), SUMMARY)
        for handle in ("ck", "ck.json", "ck.bin"):
            bundle = load_checkpoint(tmp_path / handle)
            assert bundle.fold_index == 0

    def test_bundle_accessors(self, tmp_path):
        tc = TrainConfig(lr=1e-4, t_max=12, patience=4, seed=9)
        save_checkpoint(tmp_path / "ck", make_model(), tc, 1, make_split(),
                        SUMMARY)
        bundle = load_checkpoint(tmp_path / "ck")
        assert bundle.split == make_split()
        assert bundle.train_config == tc
        assert bundle.manifest["summary"]["best_epoch"] == 3

    def test_train_config_dict_round_trip(self):
        tc = TrainConfig(lr=2e-4, lr_min=1e-6, batch_size=4, t_max=9,
                         patience=3, seed=1, folds=3, alpha=2.0,
                         monitor="macro_f1", scheme="train-val")
        assert train_config_from_dict(train_config_to_dict(tc)) == tc

    def test_manifest_has_no_volatile_fields(self, tmp_path):
        save_checkpoint(tmp_path / "ck", make_model(), TrainConfig(), 0,
                        make_split(), SUMMARY)
        manifest = json.loads((tmp_path / "ck.json").read_text())
        assert set(manifest) == {"format_version", "model", "train", "fold_index",
                                 "split", "summary", "tensors", "blob_bytes"}


class TestCorruption:
    def save_one(self, tmp_path):
        save_checkpoint(tmp_path / "ck", make_model(), TrainConfig(), 0,
                        make_split(), SUMMARY)
        return tmp_path / "ck.json", tmp_path / "ck.bin"

    def edit_manifest(self, json_path, fn):
        manifest = json.loads(json_path.read_text())
        fn(manifest)
        json_path.write_text(json.dumps(manifest))

    def test_version_mismatch(self, tmp_path):
        json_path, _ = self.save_one(tmp_path)
        self.edit_manifest(json_path, lambda m: m.update(format_version=99))
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_missing_key(self, tmp_path):
        json_path, _ = self.save_one(tmp_path)
        self.edit_manifest(json_path, lambda m: m.pop("tensors"))
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_truncated_blob(self, tmp_path):
        _, bin_path = self.save_one(tmp_path)
        data = bin_path.read_bytes()
        bin_path.write_bytes(data[:-8])
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_offset_gap(self, tmp_path):
        json_path, _ = self.save_one(tmp_path)

        def bump(m):
            m["tensors"][1]["offset"] += 4
        self.edit_manifest(json_path, bump)
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_shape_size_mismatch(self, tmp_path):
        json_path, _ = self.save_one(tmp_path)

        def shrink(m):
            m["tensors"][0]["shape"] = [1]
        self.edit_manifest(json_path, shrink)
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_missing_blob_file(self, tmp_path):
        _, bin_path = self.save_one(tmp_path)
        bin_path.unlink()
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_garbled_json(self, tmp_path):
        json_path, _ = self.save_one(tmp_path)
        json_path.write_text("{not json")
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_renamed_tensor_rejected(self, tmp_path):
        json_path, _ = self.save_one(tmp_path)

        def rename(m):
            m["tensors"][0]["name"] = "enc.bogus"
        self.edit_manifest(json_path, rename)
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")
