"""Architecture grid for the quick-convergence criterion at pinned lr 3e-5."""

import time

import numpy as np

from ordiformer.augment import AugmentPolicy
from ordiformer.model import GradingModel, ModelConfig
from ordiformer.ordinal import decode_batch, emphasis_weights, pos_weights, stable_sigmoid
from ordiformer.pipeline import AdamW, TrainConfig, cosine_lr, stratified_kfold
from ordiformer.semalign import AlignmentConfig
from ordiformer.synthgen import SynthConfig, generate
from ordiformer.tensor import Tape

ds = generate(SynthConfig(n_samples=1200, noise_sigma=0.0, seed=42))
images, labels = list(ds.images), np.asarray(ds.labels)
split = stratified_kfold(labels, 6, seed=42, scheme="train-val")[0]
train_ids = np.asarray(split.train_ids)
val_ids = np.asarray(split.val_ids)
val_images = [images[i] for i in val_ids]
y_val = labels[val_ids]
y_train = labels[train_ids]

PRIOR_BIAS = np.array([np.log(p / (1 - p)) for p in (0.8, 0.6, 0.4, 0.2)],
                      dtype=np.float32)


def run(widths, align_mode, bias_prior, aug, epochs=30, lr=3e-5, batch=8,
        head_scale=1.0):
    t0 = time.time()
    rng = np.random.default_rng(42 + split.fold_index)
    cfg = ModelConfig(image_hw=(32, 32), encoder="mlp", mlp_widths=widths,
                      align=AlignmentConfig(mode=align_mode))
    model = GradingModel(cfg, rng)
    if bias_prior:
        model.params["head.b"].array[...] = PRIOR_BIAS
    if head_scale != 1.0:
        model.params["head.w"].array[...] *= head_scale
    pw = pos_weights(y_train, 5)
    gw = emphasis_weights(5)
    opt = AdamW(model.params, weight_decay=0.05)
    policy = aug if aug is not None else AugmentPolicy(crop_scale=(1.0, 1.0),
                                                       hflip_prob=0.0,
                                                       rotate_degrees=0.0)
    use_aug = aug is not None
    best = 0.0
    accs = []
    from ordiformer.augment import augment
    for epoch in range(epochs):
        lr_t = cosine_lr(epoch, epochs, lr)
        order = rng.permutation(train_ids.size)
        for lo in range(0, order.size, batch):
            b = train_ids[order[lo:lo + batch]]
            imgs = [augment(images[i], policy, rng) if use_aug else images[i]
                    for i in b]
            tape = Tape()
            bound = model.bind(tape)
            loss = model.compute_loss(bound, imgs, labels[b], tape, pw, gw)
            tape.backward(loss)
            opt.step({n: bound[n].grad for n in model.params}, lr_t)
        z = model.infer_logits(val_images)
        acc = float(np.mean(decode_batch(stable_sigmoid(z), 0.5) == y_val))
        accs.append(acc)
        best = max(best, acc)
    print(f"widths={widths} align={align_mode} prior_bias={bias_prior} "
          f"aug={'on' if use_aug else 'off'} hs={head_scale}: best={best:.4f} "
          f"last5={['%.3f' % a for a in accs[-5:]]} ({time.time() - t0:.0f}s)")
    return best


# stage 1: bias init and width sweep, augmentation off, default alignment
run((64, 32), "kl_distill", True, None)
run((256, 64), "kl_distill", True, None)
run((256,), "kl_distill", True, None)
run((64, 32), "kl_distill", False, None)
