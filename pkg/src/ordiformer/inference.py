"""Test-time augmentation, ensembling and decision-threshold calibration.

All averaging accumulates in float64 and casts the mean back to float32.
That keeps an ensemble of identical members bitwise equal to a single
model and makes member order irrelevant far below reporting precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import hflip, rotate
from .errors import ConfigError, DataFormatError
from .metrics import macro_f1_score
from .model import GradingModel
from .ordinal import decode_batch, stable_sigmoid

Array = np.ndarray


# -- test-time views --


@dataclass(frozen=True)
class TtaView:
    kind: str  # identity | hflip | rotate
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "hflip", "rotate"):
            raise ConfigError(f"unknown view kind {self.kind!r}")


def default_tta_views() -> tuple[TtaView, ...]:
    return (TtaView("identity"), TtaView("hflip"),
            TtaView("rotate", 10.0), TtaView("rotate", -10.0))


def apply_view(image: Array, view: TtaView) -> Array:
    if view.kind == "identity":
        return image
    if view.kind == "hflip":
        return hflip(image)
    return rotate(image, view.angle)


def tta_logits(model: GradingModel, images: list[Array],
               views: tuple[TtaView, ...]) -> Array:
    """Mean logits over the view set, applied in declaration order."""
    if not views or views[0].kind != "identity":
        raise ConfigError("view set must start with the identity view")
    acc = np.zeros((len(images), model.logit_width), dtype=np.float64)
    for view in views:
        acc += model.infer_logits([apply_view(im, view) for im in images])
    return (acc / len(views)).astype(np.float32)


def model_logits(model: GradingModel, images: list[Array],
                 views: tuple[TtaView, ...] | None = None) -> Array:
    if views is None:
        return model.infer_logits(images)
    return tta_logits(model, images, views)


# -- ensembling --


def ensemble_logits(members: list[Array]) -> Array:
    """Member-mean logits; every member must agree on shape."""
    if not members:
        raise ConfigError("ensemble needs at least one member")
    first = np.asarray(members[0], dtype=np.float32)
    acc = np.zeros(first.shape, dtype=np.float64)
    for m in members:
        arr = np.asarray(m, dtype=np.float32)
        if arr.shape != first.shape:
            raise ConfigError(f"ensemble member shape {arr.shape} != {first.shape}")
        acc += arr
    return (acc / len(members)).astype(np.float32)


def majority_vote(member_preds: Array, num_grades: int) -> Array:
    """Per-sample plurality over member predictions; ties pick the lower grade."""
    votes = np.asarray(member_preds, dtype=np.int64)
    if votes.ndim != 2:
        raise ConfigError("expected a (members, samples) vote matrix")
    if votes.min() < 0 or votes.max() >= num_grades:
        raise ConfigError("vote outside grade range")
    out = np.empty(votes.shape[1], dtype=np.int64)
    for j in range(votes.shape[1]):
        counts = np.bincount(votes[:, j], minlength=num_grades)
        out[j] = int(np.argmax(counts))  # argmax breaks ties toward grade 0
    return out


# -- decoding and calibration --


def predict_grades(logits: Array, head_mode: str, tau: float = 0.5) -> Array:
    z = np.asarray(logits, dtype=np.float32)
    if head_mode == "ce":
        return np.argmax(z, axis=1).astype(np.int64)
    return decode_batch(stable_sigmoid(z), tau)


def combine_predictions(member_logits: list[Array], head_mode: str,
                        combine: str, tau: float = 0.5) -> Array:
    if combine == "logit_mean":
        return predict_grades(ensemble_logits(member_logits), head_mode, tau)
    if combine == "majority_vote":
        votes = np.stack([predict_grades(z, head_mode, tau) for z in member_logits])
        num_grades = member_logits[0].shape[1] + (0 if head_mode == "ce" else 1)
        return majority_vote(votes, num_grades)
    raise ConfigError(f"unknown combine mode {combine!r}")


@dataclass(frozen=True)
class TauGrid:
    lo: float = 0.30
    hi: float = 0.70
    step: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.lo <= self.hi < 1.0) or self.step <= 0.0:
            raise ConfigError("threshold grid must satisfy 0 < lo <= hi < 1, step > 0")

    def values(self) -> np.ndarray:
        n = int(round((self.hi - self.lo) / self.step))
        vals = self.lo + self.step * np.arange(n + 1)
        return np.round(vals, 12)


def tune_tau(probs: Array, y_true, num_grades: int,
             grid: TauGrid | None = None) -> tuple[float, float]:
    """Scan the grid ascending; keep the smallest threshold with the best
    validation macro-F1 (only strictly better scores move the choice)."""
    grid = grid or TauGrid()
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float32)
    best_tau, best_f1 = None, -1.0
    for tau in grid.values():
        f1 = macro_f1_score(y_true, decode_batch(probs, float(tau)), num_grades)
        if f1 > best_f1:
            best_tau, best_f1 = float(tau), f1
    return best_tau, best_f1


# -- logit dumps --


def logit_header(width: int) -> str:
    return "id,label," + ",".join(f"z{j}" for j in range(width))


def write_logits(path, ids, labels, logits) -> None:
    z = np.asarray(logits, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or len(ids) != z.shape[0] or labels.shape != (z.shape[0],):
        raise ConfigError("ids, labels and logits must align")
    lines = [logit_header(z.shape[1])]
    for sid, label, row in zip(ids, labels, z):
        cells = ",".join(f"{float(v):.9e}" for v in row)
        lines.append(f"{sid},{int(label)},{cells}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_logits(path) -> tuple[list[str], Array, Array]:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty logit file")
    header = lines[0].split(",")
    if header[:2] != ["id", "label"] or len(header) < 3:
        raise DataFormatError(f"{path}: bad logit header {lines[0]!r}")
    width = len(header) - 2
    if header[2:] != [f"z{j}" for j in range(width)]:
        raise DataFormatError(f"{path}: bad logit column names")
    ids: list[str] = []
    labels = np.empty(len(lines) - 1, dtype=np.int64)
    z = np.empty((len(lines) - 1, width), dtype=np.float32)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != width + 2:
            raise DataFormatError(f"{path}: row {i} has {len(cells)} cells, "
                                  f"expected {width + 2}")
        ids.append(cells[0])
        try:
            labels[i] = int(cells[1])
            z[i] = [float(c) for c in cells[2:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {i}: {exc}") from exc
    return ids, labels, z
