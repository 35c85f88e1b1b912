"""Pilot for the quick-convergence criterion: MLP + shared head, noise-free,
1000 train / 200 val, defaults except t_max=30."""

import time

import numpy as np

from ordiformer.model import ModelConfig
from ordiformer.pipeline import TrainConfig, stratified_kfold, train_fold
from ordiformer.synthgen import SynthConfig, generate

t0 = time.time()
ds = generate(SynthConfig(n_samples=1200, noise_sigma=0.0, seed=42))
images, labels = list(ds.images), np.asarray(ds.labels)
print(f"data: {time.time() - t0:.1f}s, counts={np.bincount(labels)}")

split = stratified_kfold(labels, 6, seed=42, scheme="train-val")[0]
print(f"train={len(split.train_ids)} val={len(split.val_ids)}")

model_cfg = ModelConfig(image_hw=(32, 32), encoder="mlp")  # defaults: widths (64,32), shared, kl_distill
train_cfg = TrainConfig(t_max=30)  # defaults otherwise: lr 3e-5, wd 0.05, batch 8, patience 10, seed 42

t0 = time.time()
result = train_fold(images, labels, split, model_cfg, train_cfg)
elapsed = time.time() - t0
for r in result.log_rows:
    print(f"ep {r.epoch:2d} lr={r.lr:.2e} loss={r.train_loss:.4f} "
          f"acc={r.val_accuracy:.4f} f1={r.val_macro_f1:.4f} mae={r.val_mae:.4f}")
print(f"best={result.best_metric:.4f} @ epoch {result.best_epoch}, {elapsed:.1f}s")
