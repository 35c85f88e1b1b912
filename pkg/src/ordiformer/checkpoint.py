"""Checkpoint persistence: JSON manifest next to a raw float32 blob.

The manifest records the format version, the full model and training
configuration, the fold's sample ids, a short training summary and a
named tensor index (shape, byte offset, element count).  The blob holds
every tensor little-endian float32, concatenated in index order.  Nothing
time- or host-dependent is written, so re-running a seeded fold produces
byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .augment import AugmentPolicy
from .errors import DataFormatError
from .model import GradingModel, ModelConfig
from .pipeline import FoldSplit, TrainConfig

Array = np.ndarray

FORMAT_VERSION = 1


def _stem(path: str) -> str:
    path = os.fspath(path)
    for suffix in (".json", ".bin"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "lr": cfg.lr,
        "lr_min": cfg.lr_min,
        "weight_decay": cfg.weight_decay,
        "batch_size": cfg.batch_size,
        "t_max": cfg.t_max,
        "patience": cfg.patience,
        "seed": cfg.seed,
        "folds": cfg.folds,
        "alpha": cfg.alpha,
        "monitor": cfg.monitor,
        "scheme": cfg.scheme,
        "augment": {
            "crop_scale": list(cfg.augment.crop_scale),
            "hflip_prob": cfg.augment.hflip_prob,
            "rotate_degrees": cfg.augment.rotate_degrees,
        },
    }


def train_config_from_dict(blob: dict) -> TrainConfig:
    aug = blob["augment"]
    policy = AugmentPolicy(crop_scale=tuple(aug["crop_scale"]),
                           hflip_prob=aug["hflip_prob"],
                           rotate_degrees=aug["rotate_degrees"])
    return TrainConfig(lr=blob["lr"], lr_min=blob["lr_min"],
                       weight_decay=blob["weight_decay"],
                       batch_size=blob["batch_size"], t_max=blob["t_max"],
                       patience=blob["patience"], seed=blob["seed"],
                       folds=blob["folds"], alpha=blob["alpha"],
                       monitor=blob["monitor"], scheme=blob["scheme"],
                       augment=policy)


@dataclass
class CheckpointBundle:
    model: GradingModel
    manifest: dict

    @property
    def fold_index(self) -> int:
        return self.manifest["fold_index"]

    @property
    def split(self) -> FoldSplit:
        s = self.manifest["split"]
        return FoldSplit(self.manifest["fold_index"], tuple(s["train_ids"]),
                         tuple(s["val_ids"]), tuple(s["test_ids"]))

    @property
    def train_config(self) -> TrainConfig:
        return train_config_from_dict(self.manifest["train"])


def save_checkpoint(path, model: GradingModel, train_cfg: TrainConfig,
                    fold_index: int, split: FoldSplit,
                    summary: dict) -> tuple[str, str]:
    """Write `<stem>.json` and `<stem>.bin`; returns both paths."""
    stem = _stem(path)
    state = model.state_tensors()
    index = []
    offset = 0
    chunks = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "size": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size * 4
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": model.config.to_dict(),
        "train": train_config_to_dict(train_cfg),
        "fold_index": fold_index,
        "split": {"train_ids": list(split.train_ids),
                  "val_ids": list(split.val_ids),
                  "test_ids": list(split.test_ids)},
        "summary": summary,
        "tensors": index,
        "blob_bytes": offset,
    }
    json_path, bin_path = stem + ".json", stem + ".bin"
    with open(json_path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        fh.write(b"".join(chunks))
    return json_path, bin_path


def load_checkpoint(path) -> CheckpointBundle:
    stem = _stem(path)
    json_path, bin_path = stem + ".json", stem + ".bin"
    try:
        with open(json_path, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{json_path}: cannot read manifest: {exc}") from exc
    for key in ("format_version", "model", "train", "fold_index", "split",
                "tensors", "blob_bytes"):
        if key not in manifest:
            raise DataFormatError(f"{json_path}: manifest missing {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DataFormatError(f"{json_path}: unsupported format version "
                              f"{manifest['format_version']}")
    try:
        with open(bin_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataFormatError(f"{bin_path}: cannot read blob: {exc}") from exc
    if len(blob) != manifest["blob_bytes"]:
        raise DataFormatError(f"{bin_path}: blob is {len(blob)} bytes, manifest "
                              f"says {manifest['blob_bytes']}")

    state: dict[str, Array] = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, size = entry["offset"], entry["size"]
        if offset != expected_offset:
            raise DataFormatError(f"{json_path}: tensor {name} at offset {offset}, "
                                  f"expected {expected_offset}")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if n != size:
            raise DataFormatError(f"{json_path}: tensor {name} shape {shape} "
                                  f"does not hold {size} values")
        end = offset + size * 4
        if end > len(blob):
            raise DataFormatError(f"{json_path}: tensor {name} overruns the blob")
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        state[name] = arr.astype(np.float32).reshape(shape)
        expected_offset = end
    if expected_offset != len(blob):
        raise DataFormatError(f"{bin_path}: {len(blob) - expected_offset} "
                              f"trailing bytes not covered by the index")

    model_cfg = ModelConfig.from_dict(manifest["model"])
    model = GradingModel(model_cfg, np.random.default_rng(0))
    try:
        model.load_state(state)
    except Exception as exc:
        raise DataFormatError(f"{json_path}: state does not fit the model: {exc}") from exc
    return CheckpointBundle(model=model, manifest=manifest)
