"""Stratified cross-validation training with AdamW, cosine decay, early stop.

One fold is one self-contained run: its RNG is seeded with
``seed + fold_index`` and consumed in a fixed order (parameter init,
then per epoch a shuffle followed by per-sample augmentation draws), so
repeating a run reproduces every byte of the checkpoint.  Batches follow
shuffle order; the last short batch is kept.  Validation is scored at
threshold 0.5 without test-time augmentation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, augment
from .errors import ConfigError, DivergenceError, NumericError
from .metrics import macro_f1_score
from .model import GradingModel, ModelConfig
from .ordinal import decode_batch, emphasis_weights, pos_weights, stable_sigmoid
from .tensor import Parameter, Tape

Array = np.ndarray

MONITORS = ("accuracy", "macro_f1", "mae")
SCHEMES = ("train-val-test", "train-val")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-5
    lr_min: float = 0.0
    weight_decay: float = 0.05
    batch_size: int = 8
    t_max: int = 80
    patience: int = 10
    seed: int = 42
    folds: int = 5
    alpha: float = 1.5
    monitor: str = "accuracy"
    scheme: str = "train-val-test"
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if self.lr <= 0.0 or self.lr_min < 0.0 or self.lr_min > self.lr:
            raise ConfigError("need 0 < lr and 0 <= lr_min <= lr")
        if self.weight_decay < 0.0:
            raise ConfigError("weight decay must be non-negative")
        if self.batch_size < 1 or self.t_max < 1 or self.folds < 2:
            raise ConfigError("batch size, epoch budget and fold count must be positive")
        if self.patience < 1 or self.patience > self.t_max:
            raise ConfigError("patience must lie in [1, t_max]")
        if self.monitor not in MONITORS:
            raise ConfigError(f"unknown monitor {self.monitor!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown split scheme {self.scheme!r}")


# -- splitting --


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple[int, ...]
    val_ids: tuple[int, ...]
    test_ids: tuple[int, ...] = ()


def stratified_kfold(labels, k: int, seed: int, groups=None,
                     scheme: str = "train-val-test") -> list[FoldSplit]:
    """Per-class shuffle + round-robin binning, then bin rotation per fold.

    Fold i uses bin i as test and bin (i+1) mod k as validation under the
    default scheme; the train-val scheme uses bin i as validation and has
    no test part.  With ``groups`` all samples sharing a group id land in
    the same bin (the group is stratified by its lowest member label).
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown split scheme {scheme!r}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ConfigError("labels must be a non-empty 1-d sequence")
    if k < 2:
        raise ConfigError("need at least two folds")
    if groups is None:
        unit_ids = np.arange(labels.size)
        unit_labels = labels
        members = None
    else:
        groups = np.asarray(groups)
        if groups.shape != labels.shape:
            raise ConfigError("groups must align with labels")
        uniq, inverse = np.unique(groups, return_inverse=True)
        unit_ids = np.arange(uniq.size)
        unit_labels = np.full(uniq.size, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(unit_labels, inverse, labels)
        members = [np.nonzero(inverse == u)[0] for u in unit_ids]

    rng = np.random.default_rng(seed)
    bins: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(unit_labels):
        idx = unit_ids[unit_labels == cls]
        if idx.size < k:
            raise ConfigError(f"class {int(cls)} has {idx.size} units, fewer than {k} folds")
        perm = rng.permutation(idx)
        for j, unit in enumerate(perm):
            bins[j % k].append(int(unit))

    def expand(unit_list: list[int]) -> tuple[int, ...]:
        if members is None:
            return tuple(sorted(unit_list))
        out: list[int] = []
        for u in unit_list:
            out.extend(int(i) for i in members[u])
        return tuple(sorted(out))

    splits = []
    for i in range(k):
        if scheme == "train-val-test":
            test_bin, val_bin = i, (i + 1) % k
            train_units = [u for j in range(k) if j not in (test_bin, val_bin)
                           for u in bins[j]]
            splits.append(FoldSplit(i, expand(train_units), expand(bins[val_bin]),
                                    expand(bins[test_bin])))
        else:
            train_units = [u for j in range(k) if j != i for u in bins[j]]
            splits.append(FoldSplit(i, expand(train_units), expand(bins[i]), ()))
    return splits


# -- optimization --


def cosine_lr(t: int, t_max: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr0 at t=0 to lr_min at t=t_max, clamped after."""
    if t < 0 or t_max < 1:
        raise ConfigError("cosine schedule needs t >= 0 and t_max >= 1")
    if t >= t_max:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / t_max))


class AdamW:
    """Adam with decoupled weight decay applied to every trainable tensor."""

    def __init__(self, params: dict[str, Parameter], weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = {n: p for n, p in params.items() if p.trainable}
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.array) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.array) for n, p in self.params.items()}

    def step(self, grads: dict[str, Array], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.array)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.array -= np.float32(lr) * update.astype(np.float32)
            if self.weight_decay:
                p.array -= np.float32(lr * self.weight_decay) * p.array


# -- early stopping --


@dataclass
class EarlyStopState:
    best_metric: float = -math.inf
    best_epoch: int = -1
    epochs_since: int = 0

    def update(self, metric: float, epoch: int) -> bool:
        """Record epoch result; True means strict improvement."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.epochs_since = 0
            return True
        self.epochs_since += 1
        return False

    def should_stop(self, patience: int) -> bool:
        return self.epochs_since >= patience


# -- training --


@dataclass(frozen=True)
class LogRow:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    val_macro_f1: float
    val_mae: float


LOG_HEADER = "epoch,lr,train_loss,val_accuracy,val_macro_f1,val_mae"


def format_log_rows(rows: list[LogRow]) -> str:
    lines = [LOG_HEADER]
    for r in rows:
        lines.append(f"{r.epoch},{r.lr:.10e},{r.train_loss:.8f},"
                     f"{r.val_accuracy:.8f},{r.val_macro_f1:.8f},{r.val_mae:.8f}")
    return "\n".join(lines) + "\n"


@dataclass
class FoldResult:
    fold_index: int
    model: GradingModel
    log_rows: list[LogRow]
    best_epoch: int
    best_metric: float
    split: FoldSplit


def _monitor_value(monitor: str, accuracy: float, macro_f1: float, mae: float) -> float:
    if monitor == "accuracy":
        return accuracy
    if monitor == "macro_f1":
        return macro_f1
    return -mae


def predict_labels(model: GradingModel, images: list[Array], tau: float = 0.5) -> Array:
    logits = model.infer_logits(images)
    if model.config.head_mode == "ce":
        return np.argmax(logits, axis=1).astype(np.int64)
    return decode_batch(stable_sigmoid(logits), tau)


def train_fold(images: list[Array], labels, split: FoldSplit,
               model_cfg: ModelConfig, train_cfg: TrainConfig) -> FoldResult:
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(train_cfg.seed + split.fold_index)
    model = GradingModel(model_cfg, rng)

    train_ids = np.asarray(split.train_ids, dtype=np.int64)
    val_ids = np.asarray(split.val_ids, dtype=np.int64)
    if train_ids.size == 0 or val_ids.size == 0:
        raise ConfigError("fold needs non-empty train and validation parts")
    y_train = labels[train_ids]
    y_val = labels[val_ids]
    val_images = [images[i] for i in val_ids]

    grade_w = emphasis_weights(model_cfg.num_grades, train_cfg.alpha)
    pos_w = None
    if model_cfg.head_mode != "ce":
        pos_w = pos_weights(y_train, model_cfg.num_grades)

    opt = AdamW(model.params, train_cfg.weight_decay)
    stop = EarlyStopState()
    best_state = model.snapshot()
    log_rows: list[LogRow] = []

    for epoch in range(train_cfg.t_max):
        lr = cosine_lr(epoch, train_cfg.t_max, train_cfg.lr, train_cfg.lr_min)
        order = rng.permutation(train_ids.size)
        loss_sum = 0.0
        n_batches = 0
        for lo in range(0, order.size, train_cfg.batch_size):
            batch = train_ids[order[lo:lo + train_cfg.batch_size]]
            batch_images = [augment(images[i], train_cfg.augment, rng) for i in batch]
            try:
                tape = Tape()
                bound = model.bind(tape)
                loss = model.compute_loss(bound, batch_images, labels[batch],
                                          tape, pos_w, grade_w)
                loss_value = loss.item()
                tape.backward(loss)
                grads = {name: bound[name].grad for name in model.params}
                opt.step(grads, lr)
            except NumericError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: {exc}",
                                      epoch=epoch) from exc
            loss_sum += loss_value
            n_batches += 1

        y_hat = predict_labels(model, val_images)
        val_acc = float(np.mean(y_hat == y_val))
        val_f1 = macro_f1_score(y_val, y_hat, model_cfg.num_grades)
        val_mae = float(np.mean(np.abs(y_hat - y_val)))
        log_rows.append(LogRow(epoch, lr, loss_sum / n_batches, val_acc, val_f1, val_mae))

        if stop.update(_monitor_value(train_cfg.monitor, val_acc, val_f1, val_mae), epoch):
            best_state = model.snapshot()
        elif stop.should_stop(train_cfg.patience):
            break

    model.load_state(best_state)
    return FoldResult(split.fold_index, model, log_rows, stop.best_epoch,
                      stop.best_metric, split)


def train_folds(images: list[Array], labels, splits: list[FoldSplit],
                model_cfg: ModelConfig, train_cfg: TrainConfig,
                max_workers: int = 1) -> list[FoldResult]:
    """Train all folds, optionally in parallel; results ordered by fold."""
    if max_workers < 1:
        raise ConfigError("worker count must be positive")
    if max_workers == 1 or len(splits) == 1:
        return [train_fold(images, labels, s, model_cfg, train_cfg) for s in splits]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(splits))) as pool:
        futures = [pool.submit(train_fold, images, labels, s, model_cfg, train_cfg)
                   for s in splits]
        return [f.result() for f in futures]
