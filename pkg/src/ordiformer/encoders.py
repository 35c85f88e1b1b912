"""Image encoders producing fixed-size embeddings.

Two interchangeable backbones:

* PatchEncoder: a small attention encoder over non-overlapping patches
  with a learnable readout token.  It also exposes per-layer attention
  maps (head-averaged) so saliency can be reconstructed by rollout.
* MlpEncoder: flattened pixels through a dense/gelu stack.  Much faster,
  no attention maps; used where saliency is not needed.

Both standardize each image (zero mean, unit variance) before the first
trainable layer, so absolute brightness drops out, and keep all trainable
state in named Parameters so checkpointing stays generic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tensor import Parameter, Tape, Tensor, concat

Array = np.ndarray


def standardize(image: Array) -> Array:
    """Per-image zero-mean/unit-variance rescale.

    Band exposure varies sample to sample, so absolute brightness carries
    no label information; standardizing each image removes it before any
    trainable layer sees the pixels.
    """
    img = np.asarray(image, dtype=np.float32)
    return (img - img.mean()) / (img.std() + np.float32(1e-6))


def patchify(image: Array, patch_size: int) -> Array:
    """Split (H, W) into raster-ordered rows of flattened square patches.

    Patch (r, c) lands at row r * (W / patch_size) + c; pixels inside a
    patch are row-major.  H and W must be divisible by patch_size.
    """
    if image.ndim != 2:
        raise ShapeError(f"patchify expects a 2-d image, got {image.shape}")
    h, w = image.shape
    if patch_size < 1 or h % patch_size or w % patch_size:
        raise ShapeError(f"patch size {patch_size} does not tile {image.shape}")
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(gh, patch_size, gw, patch_size)
    x = x.transpose(0, 2, 1, 3).reshape(gh * gw, patch_size * patch_size)
    return np.ascontiguousarray(x, dtype=np.float32)


@dataclass(frozen=True)
class PatchEncoderConfig:
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 2
    num_layers: int = 2
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.patch_size < 1 or self.embed_dim < 1 or self.num_heads < 1 or self.num_layers < 1:
            raise ConfigError("patch encoder dimensions must be positive")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")


@dataclass(frozen=True)
class MlpEncoderConfig:
    widths: tuple[int, ...] = (256,)

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError("mlp widths must be a non-empty tuple of positive ints")


class PatchEncoder:
    """Pre-norm attention encoder over patch tokens plus a readout token.

    Parameter draw order is fixed (patch embedding, readout, positions,
    then per-block weights); changing it silently breaks seeded runs.
    """

    def __init__(self, image_hw: tuple[int, int], config: PatchEncoderConfig,
                 rng: np.random.Generator):
        h, w = image_hw
        p = config.patch_size
        if h % p or w % p:
            raise ConfigError(f"patch size {p} does not tile image {image_hw}")
        self.image_hw = image_hw
        self.config = config
        self.grid_hw = (h // p, w // p)
        self.num_tokens = self.grid_hw[0] * self.grid_hw[1] + 1
        d = config.embed_dim
        hidden = int(round(d * config.mlp_ratio))
        self.head_dim = d // config.num_heads

        def normal(shape, std):
            return (rng.normal(size=shape) * std).astype(np.float32)

        params: dict[str, Parameter] = {}

        def add(name, array):
            params[name] = Parameter(name, array)

        pdim = p * p
        add("patch_embed.w", normal((pdim, d), pdim ** -0.5))
        add("patch_embed.b", np.zeros(d, dtype=np.float32))
        add("readout", normal((1, d), 0.02))
        add("pos", normal((self.num_tokens, d), 0.02))
        for layer in range(config.num_layers):
            pre = f"block{layer}."
            add(pre + "ln1.g", np.ones(d, dtype=np.float32))
            add(pre + "ln1.b", np.zeros(d, dtype=np.float32))
            for nm in ("wq", "wk", "wv", "wo"):
                add(pre + "attn." + nm, normal((d, d), d ** -0.5))
            for nm in ("bq", "bk", "bv", "bo"):
                add(pre + "attn." + nm, np.zeros(d, dtype=np.float32))
            add(pre + "ln2.g", np.ones(d, dtype=np.float32))
            add(pre + "ln2.b", np.zeros(d, dtype=np.float32))
            add(pre + "mlp.w1", normal((d, hidden), d ** -0.5))
            add(pre + "mlp.b1", np.zeros(hidden, dtype=np.float32))
            add(pre + "mlp.w2", normal((hidden, d), hidden ** -0.5))
            add(pre + "mlp.b2", np.zeros(d, dtype=np.float32))
        add("final_ln.g", np.ones(d, dtype=np.float32))
        add("final_ln.b", np.zeros(d, dtype=np.float32))
        self.params = params

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        return {name: p.bind(tape) for name, p in self.params.items()}

    def embed(self, bound: dict[str, Tensor], image: Array, tape: Tape | None,
              want_attention: bool = False) -> tuple[Tensor, list[Array] | None]:
        """Encode one image to a (1, d) readout embedding.

        When want_attention is set, also returns one head-averaged
        (T+1, T+1) attention matrix per layer (row-stochastic, numpy).
        """
        if image.shape != self.image_hw:
            raise ShapeError(f"expected image {self.image_hw}, got {image.shape}")
        cfg = self.config
        tokens = Tensor(patchify(standardize(image), cfg.patch_size))
        x = tokens.matmul(bound["patch_embed.w"]).add_bias(bound["patch_embed.b"])
        rows = concat([bound["readout"], x], axis=0) + bound["pos"]
        maps: list[Array] | None = [] if want_attention else None
        for layer in range(cfg.num_layers):
            pre = f"block{layer}."
            h = rows.layer_norm(bound[pre + "ln1.g"], bound[pre + "ln1.b"])
            q = h.matmul(bound[pre + "attn.wq"]).add_bias(bound[pre + "attn.bq"])
            k = h.matmul(bound[pre + "attn.wk"]).add_bias(bound[pre + "attn.bk"])
            v = h.matmul(bound[pre + "attn.wv"]).add_bias(bound[pre + "attn.bv"])
            ctx_heads = []
            head_maps = []
            hd = self.head_dim
            for head in range(cfg.num_heads):
                qi = q.narrow(1, head * hd, hd)
                ki = k.narrow(1, head * hd, hd)
                vi = v.narrow(1, head * hd, hd)
                scores = qi.matmul(ki.transpose()).scale(hd ** -0.5)
                attn = scores.softmax(axis=1)
                if want_attention:
                    head_maps.append(attn.data)
                ctx_heads.append(attn.matmul(vi))
            if want_attention:
                maps.append(np.mean(head_maps, axis=0))
            ctx = concat(ctx_heads, axis=1)
            ctx = ctx.matmul(bound[pre + "attn.wo"]).add_bias(bound[pre + "attn.bo"])
            rows = rows + ctx
            h2 = rows.layer_norm(bound[pre + "ln2.g"], bound[pre + "ln2.b"])
            m = h2.matmul(bound[pre + "mlp.w1"]).add_bias(bound[pre + "mlp.b1"]).gelu()
            m = m.matmul(bound[pre + "mlp.w2"]).add_bias(bound[pre + "mlp.b2"])
            rows = rows + m
        rows = rows.layer_norm(bound["final_ln.g"], bound["final_ln.b"])
        return rows.narrow(0, 0, 1), maps

    def embed_batch(self, bound: dict[str, Tensor], images: list[Array],
                    tape: Tape | None) -> Tensor:
        outs = [self.embed(bound, img, tape)[0] for img in images]
        return outs[0] if len(outs) == 1 else concat(outs, axis=0)


class MlpEncoder:
    """Standardized, flattened pixels through gelu dense layers."""

    def __init__(self, image_hw: tuple[int, int], config: MlpEncoderConfig,
                 rng: np.random.Generator):
        self.image_hw = image_hw
        self.config = config
        fan_in = image_hw[0] * image_hw[1]
        params: dict[str, Parameter] = {}
        for i, width in enumerate(config.widths):
            w = (rng.normal(size=(fan_in, width)) * fan_in ** -0.5).astype(np.float32)
            params[f"dense{i}.w"] = Parameter(f"dense{i}.w", w)
            params[f"dense{i}.b"] = Parameter(f"dense{i}.b", np.zeros(width, dtype=np.float32))
            fan_in = width
        self.params = params

    @property
    def embed_dim(self) -> int:
        return self.config.widths[-1]

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        return {name: p.bind(tape) for name, p in self.params.items()}

    def embed_batch(self, bound: dict[str, Tensor], images: list[Array],
                    tape: Tape | None) -> Tensor:
        for img in images:
            if img.shape != self.image_hw:
                raise ShapeError(f"expected image {self.image_hw}, got {img.shape}")
        flat = np.stack([standardize(img).reshape(-1) for img in images])
        x = Tensor(flat)
        # gelu after every layer, the last included: the embedding must be a
        # nonlinear function of the pixels or the head collapses the whole
        # model into a single linear map
        for i in range(len(self.config.widths)):
            x = x.matmul(bound[f"dense{i}.w"]).add_bias(bound[f"dense{i}.b"]).gelu()
        return x

    def embed(self, bound: dict[str, Tensor], image: Array, tape: Tape | None,
              want_attention: bool = False) -> tuple[Tensor, None]:
        return self.embed_batch(bound, [image], tape), None


def attention_rollout(attn_per_layer: list[Array]) -> Array:
    """Fold per-layer attention into one token-to-token influence matrix.

    Each layer is mixed with the identity (half and half, for the residual
    path), row-renormalized, then composed so the last layer sits leftmost.
    Rows of every input must sum to 1 within 1e-4.
    """
    if not attn_per_layer:
        raise ShapeError("attention_rollout needs at least one layer")
    size = attn_per_layer[0].shape[0]
    rollout = np.eye(size, dtype=np.float64)
    for a in attn_per_layer:
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (size, size):
            raise ShapeError(f"attention map shape {a.shape}, expected ({size}, {size})")
        if np.any(a < 0.0) or np.any(np.abs(a.sum(axis=1) - 1.0) > 1e-4):
            raise DomainError("attention rows must be non-negative and sum to 1")
        mixed = 0.5 * a + 0.5 * np.eye(size)
        mixed /= mixed.sum(axis=1, keepdims=True)
        rollout = mixed @ rollout
    return rollout


def readout_saliency(rollout: Array, grid_hw: tuple[int, int]) -> Array:
    """Readout-token row of a rollout, reshaped onto the patch grid."""
    gh, gw = grid_hw
    if rollout.shape[0] != gh * gw + 1:
        raise ShapeError(f"rollout size {rollout.shape[0]} does not match grid {grid_hw}")
    return rollout[0, 1:].reshape(gh, gw).copy()
