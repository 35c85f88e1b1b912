"""Shared oracles for the test suite.

Everything here is deliberately independent of the package internals:
reference forwards are written in float64 numpy/scipy from the math
definitions, gradients come from central finite differences, and the
metric oracles are plain loops.  Tests compare package output against
these, never the other way around.
"""

import numpy as np
import scipy.special

from ordiformer.tensor import Tape, Tensor


# ---------------------------------------------------------------------------
# finite-difference machinery

def fd_gradient(f, xs, step=1e-3):
    """Central-difference gradients of scalar f(*xs) w.r.t. each array in xs."""
    grads = []
    for x in xs:
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = f(*xs)
            flat[j] = orig - step
            fm = f(*xs)
            flat[j] = orig
            gf[j] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def grad_rel_err(analytic, reference):
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    return float(np.max(np.abs(a - r)) / max(1.0, float(np.max(np.abs(r)))))


def snap32(x):
    """Round to float32 grid, return float64 view of those exact values."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def run_fd_case(case, seed, step=1e-3):
    """Build one seeded instance of a case and return max relative error.

    `case(rng)` returns (inputs, fwd32, fwd64): float64 input arrays, a
    graph builder mapping [Tensor] -> scalar Tensor, and an independent
    float64 forward mapping copies of the inputs -> float.
    """
    rng = np.random.default_rng(seed)
    xs, fwd32, fwd64 = case(rng)
    xs = [snap32(x) for x in xs]
    tape = Tape()
    ts = [Tensor(x, tape) for x in xs]
    root = fwd32(ts)
    tape.backward(root)
    analytic = [t.grad for t in ts]
    fd = fd_gradient(lambda *a: fwd64(list(a)), [x.copy() for x in xs], step=step)
    return max(grad_rel_err(a, f) for a, f in zip(analytic, fd))


# ---------------------------------------------------------------------------
# float64 reference forwards (independent of package code)

def ref_sigmoid(x):
    return scipy.special.expit(x)

def ref_softplus(x):
    return np.logaddexp(0.0, x)

def ref_gelu(x):
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))

def ref_softmax(x, axis):
    return scipy.special.softmax(x, axis=axis)

def ref_logsumexp(x, axis):
    return scipy.special.logsumexp(x, axis=axis)

def ref_layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias

def ref_l2_normalize(x):
    return x / np.sqrt((x ** 2).sum(axis=-1, keepdims=True))


def ref_standardize(image):
    img = np.asarray(image, dtype=np.float64)
    return (img - img.mean()) / (img.std() + 1e-6)


def ref_patch_encoder(params, image, patch_size, num_heads, num_layers):
    """Independent float64 forward of the patch/attention encoder."""
    p = patch_size
    h, w = image.shape
    image = ref_standardize(image)
    toks = []
    for r in range(h // p):
        for c in range(w // p):
            toks.append(image[r * p:(r + 1) * p, c * p:(c + 1) * p].reshape(-1))
    x = np.asarray(toks) @ params["patch_embed.w"] + params["patch_embed.b"]
    rows = np.vstack([params["readout"], x]) + params["pos"]
    d = rows.shape[1]
    hd = d // num_heads
    for layer in range(num_layers):
        pre = f"block{layer}."
        hn = ref_layer_norm(rows, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = hn @ params[pre + "attn.wq"] + params[pre + "attn.bq"]
        k = hn @ params[pre + "attn.wk"] + params[pre + "attn.bk"]
        v = hn @ params[pre + "attn.wv"] + params[pre + "attn.bv"]
        ctxs = []
        for head in range(num_heads):
            sl = slice(head * hd, (head + 1) * hd)
            a = ref_softmax(q[:, sl] @ k[:, sl].T / np.sqrt(hd), axis=1)
            ctxs.append(a @ v[:, sl])
        rows = rows + (np.hstack(ctxs) @ params[pre + "attn.wo"] + params[pre + "attn.bo"])
        h2 = ref_layer_norm(rows, params[pre + "ln2.g"], params[pre + "ln2.b"])
        m = ref_gelu(h2 @ params[pre + "mlp.w1"] + params[pre + "mlp.b1"])
        rows = rows + (m @ params[pre + "mlp.w2"] + params[pre + "mlp.b2"])
    rows = ref_layer_norm(rows, params["final_ln.g"], params["final_ln.b"])
    return rows[0:1]


def ref_mlp_encoder(params, image, num_layers):
    x = ref_standardize(image).reshape(1, -1)
    for i in range(num_layers):
        x = ref_gelu(x @ params[f"dense{i}.w"] + params[f"dense{i}.b"])
    return x


def ref_coral_loss(logits, targets, pos_w, sample_w):
    """Weighted mean over all (sample, threshold) cells of the two-sided
    softplus form of binary cross entropy with per-threshold positive
    weighting."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    cell = (sample_w[:, None] *
            (pos_w[None, :] * t * np.logaddexp(0.0, -z)
             + (1.0 - t) * np.logaddexp(0.0, z)))
    return float(cell.mean())


def ref_ce_loss(logits, labels, class_w=None):
    z = np.asarray(logits, dtype=np.float64)
    lse = scipy.special.logsumexp(z, axis=1)
    picked = z[np.arange(len(labels)), labels]
    per = lse - picked
    if class_w is None:
        return float(per.mean())
    w = np.asarray(class_w, dtype=np.float64)[labels]
    return float((w * per).sum() / w.sum())


def ref_student_dist(z):
    """Sigmoid of threshold logits -> clamped/renormalized grade distribution."""
    p = scipy.special.expit(np.asarray(z, dtype=np.float64))
    n = p.shape[0]
    upper = np.concatenate([np.ones((n, 1)), p], axis=1)
    lower = np.concatenate([p, np.zeros((n, 1))], axis=1)
    d = np.maximum(upper - lower, 0.0)
    return d / d.sum(axis=1, keepdims=True)


def ref_kl(teacher, student):
    t = np.asarray(teacher, dtype=np.float64)
    s = np.clip(np.asarray(student, dtype=np.float64), 1e-8, None)
    cell = np.where(t > 0.0, t * (np.log(t) - np.log(s)), 0.0)
    return float(cell.sum(axis=-1).mean())


# ---------------------------------------------------------------------------
# naive metric oracles (plain loops)

def naive_confusion(y_true, y_pred, k):
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


def naive_per_class(y_true, y_pred, k):
    """Per-class precision/recall/f1/specificity with 0/0 -> 0."""
    out = []
    n = len(y_true)
    for c in range(k):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        tn = n - tp - fp - fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        spec = tn / (tn + fp) if tn + fp else 0.0
        out.append(dict(precision=prec, recall=rec, f1=f1,
                        specificity=spec, support=tp + fn))
    return out


def naive_macro_f1(y_true, y_pred, k):
    per = naive_per_class(y_true, y_pred, k)
    vals = [row["f1"] for row in per if row["support"] > 0]
    return sum(vals) / len(vals)


def naive_auroc_pairs(scores, positives):
    """Pair-counting one-vs-rest AUROC; ties count one half."""
    pos = [s for s, y in zip(scores, positives) if y]
    neg = [s for s, y in zip(scores, positives) if not y]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def naive_decode(probs, tau):
    grade = 0
    for p in probs:
        if p >= tau:
            grade += 1
    return grade
