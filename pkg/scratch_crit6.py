"""Pilot for the ordinal-benefit comparison: shared CORAL vs CE test MAE."""
import time

import numpy as np

from ordiformer.augment import AugmentPolicy
from ordiformer.model import ModelConfig
from ordiformer.pipeline import TrainConfig, predict_labels, stratified_kfold, train_fold
from ordiformer.semalign import AlignmentConfig
from ordiformer.synthgen import IMBALANCED, SynthConfig, generate

ds = generate(SynthConfig(n_samples=2000, noise_sigma=0.15,
                          proportions=IMBALANCED, seed=42))
images, labels = list(ds.images), np.asarray(ds.labels)
no_aug = AugmentPolicy(crop_scale=(1.0, 1.0), hflip_prob=0.0, rotate_degrees=0.0)


def pooled_test_mae(head_mode: str, seed: int, lr: float, t_max: int,
                    batch: int) -> float:
    cfg = ModelConfig(image_hw=(32, 32), head_mode=head_mode,
                      align=AlignmentConfig())
    tc = TrainConfig(lr=lr, batch_size=batch, t_max=t_max, patience=t_max,
                     seed=seed, augment=no_aug)
    splits = stratified_kfold(labels, 5, seed=seed)
    err = np.zeros(len(labels), dtype=np.float64)
    seen = np.zeros(len(labels), dtype=bool)
    for split in splits:
        res = train_fold(images, labels, split, cfg, tc)
        ids = list(split.test_ids)
        preds = predict_labels(res.model, [images[i] for i in ids])
        err[ids] = np.abs(preds - labels[ids])
        seen[ids] = True
    assert seen.all()
    return float(err.mean())


for lr, t_max, batch in ((1e-3, 16, 16),):
    print(f"--- lr={lr} t_max={t_max} batch={batch}")
    wins = 0
    for seed in (41, 42, 43, 44, 45):
        t0 = time.time()
        coral = pooled_test_mae("shared", seed, lr, t_max, batch)
        ce = pooled_test_mae("ce", seed, lr, t_max, batch)
        wins += coral <= ce
        print(f"seed {seed}: coral={coral:.4f} ce={ce:.4f} "
              f"{'WIN' if coral <= ce else 'LOSS'} ({time.time() - t0:.0f}s)")
    print(f"wins: {wins}/5")
