"""Ordinal grading heads over embedding features.

The ordinal route turns a K-grade problem into K-1 cumulative binary
questions "is the grade above k?".  In shared mode all questions reuse
one projection and differ only by per-threshold biases, which makes the
K-1 probabilities ordered whenever the biases are; independent mode
gives each threshold its own projection and drops that guarantee.
A plain softmax head is kept as the non-ordinal baseline.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tape, Tensor, concat, _sigmoid_np

Array = np.ndarray


def stable_sigmoid(x: Array) -> Array:
    """Numerically stable logistic function on numpy arrays."""
    return _sigmoid_np(np.asarray(x, dtype=np.float32))


def encode_levels(labels, num_grades: int) -> Array:
    """Grade y -> cumulative indicator row [1[y>0], ..., 1[y>K-2]]."""
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ShapeError("labels must be 1-d")
    if np.any(y < 0) or np.any(y >= num_grades):
        raise ConfigError(f"labels must lie in [0, {num_grades - 1}]")
    ks = np.arange(num_grades - 1)
    return (y[:, None] > ks[None, :]).astype(np.float32)


def pos_weights(labels, num_grades: int) -> Array:
    """Per-threshold positive weights: negatives over positives.

    Balances each binary question on the training distribution.  Every
    threshold needs at least one sample on each side.
    """
    y = np.asarray(labels, dtype=np.int64)
    out = np.empty(num_grades - 1, dtype=np.float32)
    n = len(y)
    for k in range(num_grades - 1):
        pos = int(np.sum(y > k))
        neg = n - pos
        if pos == 0 or neg == 0:
            raise ConfigError(f"threshold {k} has an empty side (pos={pos}, neg={neg})")
        out[k] = neg / pos
    return out


def emphasis_weights(num_grades: int, alpha: float = 1.5,
                     emphasized: tuple[int, ...] | None = None) -> Array:
    """Per-grade sample weights, upweighting the easily confused grades.

    Defaults to grades 1 and 2 (restricted to interior grades for small
    K), the region where adjacent grades look most alike.
    """
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    if emphasized is None:
        emphasized = tuple(c for c in (1, 2) if 0 < c < num_grades - 1)
    w = np.ones(num_grades, dtype=np.float32)
    for c in emphasized:
        if c < 0 or c >= num_grades:
            raise ConfigError(f"emphasized grade {c} out of range")
        w[c] = alpha
    return w


def sample_weights(labels, grade_weights: Array) -> Array:
    y = np.asarray(labels, dtype=np.int64)
    return np.asarray(grade_weights, dtype=np.float32)[y]


def coral_loss(logits: Tensor, levels: Array, pos_w: Array, sample_w: Array) -> Tensor:
    """Weighted binary cross entropy over all (sample, threshold) cells.

    Uses the softplus identity for both branches so saturated logits stay
    finite.  The mean runs over every cell, so per-sample weights scale
    whole rows and per-threshold positive weights scale the "above"
    branch only.
    """
    n, km1 = logits.shape
    levels = np.asarray(levels, dtype=np.float32)
    if levels.shape != (n, km1):
        raise ShapeError(f"levels shape {levels.shape} does not match logits {logits.shape}")
    pos_w = np.asarray(pos_w, dtype=np.float32).reshape(1, km1)
    sw = np.asarray(sample_w, dtype=np.float32).reshape(n, 1)
    above = Tensor(sw * levels * pos_w)
    below = Tensor(sw * (1.0 - levels))
    return (above * logits.scale(-1.0).softplus() + below * logits.softplus()).reduce_mean()


def ce_loss(logits: Tensor, labels, class_w: Array | None = None) -> Tensor:
    """Softmax cross entropy; optional per-grade weights use a weighted mean."""
    n, k = logits.shape
    y = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros((n, k), dtype=np.float32)
    onehot[np.arange(n), y] = 1.0
    per = logits.logsumexp(axis=1) - (logits * Tensor(onehot)).reduce_sum(axis=1)
    if class_w is None:
        return per.reduce_mean()
    w = np.asarray(class_w, dtype=np.float32)[y]
    return (Tensor(w) * per).reduce_sum().scale(1.0 / float(w.sum()))


def decode(probs: Array, tau: float) -> int:
    """Count thresholds whose above-probability clears tau."""
    p = np.asarray(probs)
    if p.ndim != 1:
        raise ShapeError("decode expects one probability row; see decode_batch")
    return int(np.sum(p >= tau))


def decode_batch(probs: Array, tau: float) -> Array:
    p = np.asarray(probs)
    if p.ndim != 2:
        raise ShapeError("decode_batch expects (n, K-1) probabilities")
    return np.sum(p >= tau, axis=1).astype(np.int64)


def class_distribution(probs: Array) -> Array:
    """Cumulative above-probabilities -> per-grade distribution.

    Telescopes adjacent differences, clamps negatives from non-monotone
    rows to zero and renormalizes.  Falls back to uniform if everything
    cancels (defensive; unreachable for probabilities in [0, 1]).
    """
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    k = p.size + 1
    upper = np.concatenate([[1.0], p])
    lower = np.concatenate([p, [0.0]])
    d = np.maximum(upper - lower, 0.0)
    total = d.sum()
    if total < 1e-12:
        return np.full(k, 1.0 / k)
    return d / total


def class_distribution_tensor(logits: Tensor) -> Tensor:
    """Differentiable version of class_distribution, from raw logits."""
    n, km1 = logits.shape
    p = logits.sigmoid()
    ones = Tensor(np.ones((n, 1), dtype=np.float32))
    zeros = Tensor(np.zeros((n, 1), dtype=np.float32))
    d = (concat([ones, p], axis=1) - concat([p, zeros], axis=1)).clamp_min(0.0)
    total = d.reduce_sum(axis=1).reshape((n, 1)).clamp_min(1e-12)
    return d / total.broadcast_cols(km1 + 1)


# logits live on a fixed scale: gain * cosine + bias.  Normalizing both
# the feature and the projection row caps the score range, so training
# rotates the projection instead of stretching it past the thresholds,
# and the bias priors keep their meaning for the whole run.
LOGIT_GAIN = 8.0


class OrdinalHead:
    """Cosine threshold logits over features; shared or independent rows.

    Each logit is LOGIT_GAIN * cos(features, w_row) + bias.  In shared
    mode all thresholds reuse one row and differ only by bias, which
    keeps the K-1 probabilities ordered whenever the biases are.
    """

    MODES = ("shared", "independent")

    def __init__(self, feature_dim: int, num_grades: int, mode: str,
                 rng: np.random.Generator):
        if mode not in self.MODES:
            raise ConfigError(f"unknown ordinal head mode {mode!r}")
        if num_grades < 2:
            raise ConfigError("need at least two grades")
        self.mode = mode
        self.num_grades = num_grades
        km1 = num_grades - 1
        rows = 1 if mode == "shared" else km1
        # small-norm init: the row direction is what matters, and a short
        # row turns the optimizer's fixed step size into fast rotation
        w = (rng.normal(size=(rows, feature_dim)) * 0.01).astype(np.float32)
        # thresholds -b_k partition the central 60% of the reachable score
        # interval [-gain, gain] evenly; wide slots leave room for uneven
        # cluster spacing, since the biases barely move at small step sizes
        if km1 == 1:
            positions = np.zeros(1)
        else:
            positions = 0.6 * LOGIT_GAIN * (2.0 * np.arange(km1) / (km1 - 1) - 1.0)
        bias = (-positions).astype(np.float32)
        self.params = {
            "head.w": Parameter("head.w", w),
            "head.b": Parameter("head.b", bias),
        }

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        return {name: p.bind(tape) for name, p in self.params.items()}

    def logits(self, bound: dict[str, Tensor], features: Tensor) -> Tensor:
        km1 = self.num_grades - 1
        cos = features.l2_normalize(1e-6).matmul(bound["head.w"].l2_normalize(1e-6).transpose())
        proj = cos.scale(LOGIT_GAIN)
        if self.mode == "shared":
            proj = proj.broadcast_cols(km1)
        return proj.add_bias(bound["head.b"])

    def thresholds(self) -> Array:
        """Current bias vector, one entry per threshold."""
        return self.params["head.b"].array.copy()


class SoftmaxHead:
    """K-way cosine head for the cross-entropy baseline.

    Same gain * cosine scoring as OrdinalHead (one row per grade, zero
    biases) so head comparisons differ only in the loss geometry.
    """

    def __init__(self, feature_dim: int, num_grades: int, rng: np.random.Generator):
        if num_grades < 2:
            raise ConfigError("need at least two grades")
        self.num_grades = num_grades
        w = (rng.normal(size=(num_grades, feature_dim)) * 0.01).astype(np.float32)
        self.params = {
            "head.w": Parameter("head.w", w),
            "head.b": Parameter("head.b", np.zeros(num_grades, dtype=np.float32)),
        }

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        return {name: p.bind(tape) for name, p in self.params.items()}

    def logits(self, bound: dict[str, Tensor], features: Tensor) -> Tensor:
        cos = features.l2_normalize(1e-6).matmul(bound["head.w"].l2_normalize(1e-6).transpose())
        return cos.scale(LOGIT_GAIN).add_bias(bound["head.b"])
