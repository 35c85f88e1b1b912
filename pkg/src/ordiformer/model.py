"""Full grading model: encoder, grading head, optional prompt alignment.

The model owns every named parameter (prefixed by component) plus the
frozen prompt embeddings, so checkpointing can treat state as one flat
name -> array map.  Parameter creation order is fixed: encoder, head,
projection, prompts.  The loss assembly lives here too, so training,
tests and the CLI all optimize the exact same objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .encoders import MlpEncoder, MlpEncoderConfig, PatchEncoder, PatchEncoderConfig
from .errors import ConfigError
from .ordinal import (
    OrdinalHead,
    SoftmaxHead,
    ce_loss,
    class_distribution,
    class_distribution_tensor,
    coral_loss,
    encode_levels,
    sample_weights,
    stable_sigmoid,
)
from .semalign import (
    AlignmentConfig,
    ProjectionHead,
    PromptSet,
    build_prompt_set,
    contrastive_loss,
    kl_distill_loss,
    l2_penalty,
    teacher_distribution,
    total_loss,
)
from .tensor import Parameter, Tape, Tensor

Array = np.ndarray

HEAD_MODES = ("shared", "independent", "ce")
ENCODERS = ("mlp", "patch")


@dataclass(frozen=True)
class ModelConfig:
    image_hw: tuple[int, int] = (32, 32)
    num_grades: int = 5
    encoder: str = "mlp"
    mlp_widths: tuple[int, ...] = (256,)
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 2
    num_layers: int = 2
    mlp_ratio: float = 2.0
    head_mode: str = "shared"
    align: AlignmentConfig = field(default_factory=AlignmentConfig)

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"unknown head mode {self.head_mode!r}")
        if self.num_grades < 2:
            raise ConfigError("need at least two grades")

    def to_dict(self) -> dict:
        return {
            "image_hw": list(self.image_hw),
            "num_grades": self.num_grades,
            "encoder": self.encoder,
            "mlp_widths": list(self.mlp_widths),
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "num_heads": self.num_heads,
            "num_layers": self.num_layers,
            "mlp_ratio": self.mlp_ratio,
            "head_mode": self.head_mode,
            "align": {
                "mode": self.align.mode,
                "temperature": self.align.temperature,
                "align_weight": self.align.align_weight,
                "reg_weight": self.align.reg_weight,
                "prompt_dim": self.align.prompt_dim,
                "prompt_source": self.align.prompt_source,
                "prompt_path": self.align.prompt_path,
            },
        }

    @staticmethod
    def from_dict(blob: dict) -> "ModelConfig":
        align = AlignmentConfig(**blob["align"])
        return ModelConfig(
            image_hw=tuple(blob["image_hw"]),
            num_grades=blob["num_grades"],
            encoder=blob["encoder"],
            mlp_widths=tuple(blob["mlp_widths"]),
            patch_size=blob["patch_size"],
            embed_dim=blob["embed_dim"],
            num_heads=blob["num_heads"],
            num_layers=blob["num_layers"],
            mlp_ratio=blob["mlp_ratio"],
            head_mode=blob["head_mode"],
            align=align,
        )


class GradingModel:
    """Composable encoder + head (+ projection/prompts) with named state."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 prompts: PromptSet | None = None):
        self.config = config
        if config.encoder == "patch":
            enc_cfg = PatchEncoderConfig(
                patch_size=config.patch_size, embed_dim=config.embed_dim,
                num_heads=config.num_heads, num_layers=config.num_layers,
                mlp_ratio=config.mlp_ratio)
            self.encoder = PatchEncoder(config.image_hw, enc_cfg, rng)
        else:
            self.encoder = MlpEncoder(config.image_hw, MlpEncoderConfig(config.mlp_widths), rng)
        dim = self.encoder.embed_dim
        if config.head_mode == "ce":
            self.head = SoftmaxHead(dim, config.num_grades, rng)
        else:
            self.head = OrdinalHead(dim, config.num_grades, config.head_mode, rng)
        self.projection: ProjectionHead | None = None
        self.prompts: PromptSet | None = None
        if config.align.mode != "off":
            self.projection = ProjectionHead(dim, config.align.prompt_dim, rng)
            if prompts is None:
                prompt_seed = int(rng.integers(1 << 31))
                prompts = build_prompt_set(config.align, config.num_grades, prompt_seed)
            if prompts.num_grades != config.num_grades:
                raise ConfigError(f"prompt set has {prompts.num_grades} grades, "
                                  f"model expects {config.num_grades}")
            if prompts.dim != config.align.prompt_dim:
                raise ConfigError(f"prompt dim {prompts.dim} != configured "
                                  f"{config.align.prompt_dim}")
            self.prompts = prompts

        params: dict[str, Parameter] = {}
        for name, p in self.encoder.params.items():
            params["enc." + name] = p
        params.update(self.head.params)
        if self.projection is not None:
            params.update(self.projection.params)
        self.params = params

    # -- state plumbing --

    @property
    def logit_width(self) -> int:
        return self.config.num_grades if self.config.head_mode == "ce" \
            else self.config.num_grades - 1

    def state_tensors(self) -> dict[str, Array]:
        state = {name: p.array for name, p in self.params.items()}
        if self.prompts is not None:
            state["prompts.embeddings"] = self.prompts.embeddings
        return state

    def load_state(self, state: dict[str, Array]) -> None:
        expected = set(self.state_tensors())
        if set(state) != expected:
            missing = expected - set(state)
            extra = set(state) - expected
            raise ConfigError(f"state mismatch: missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)}")
        for name, p in self.params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.array.shape:
                raise ConfigError(f"tensor {name} has shape {arr.shape}, "
                                  f"expected {p.array.shape}")
            p.array[...] = arr
        if self.prompts is not None:
            emb = np.asarray(state["prompts.embeddings"], dtype=np.float32)
            if emb.shape != self.prompts.embeddings.shape:
                raise ConfigError("prompt embedding shape mismatch")
            self.prompts = PromptSet(texts=self.prompts.texts, embeddings=emb)

    def snapshot(self) -> dict[str, Array]:
        return {name: arr.copy() for name, arr in self.state_tensors().items()}

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        return {name: p.bind(tape) for name, p in self.params.items()}

    # -- forward paths --

    def _enc_bound(self, bound: dict[str, Tensor]) -> dict[str, Tensor]:
        return {name[4:]: t for name, t in bound.items() if name.startswith("enc.")}

    def features(self, bound: dict[str, Tensor], images: list[Array],
                 tape: Tape | None) -> Tensor:
        return self.encoder.embed_batch(self._enc_bound(bound), images, tape)

    def logits(self, bound: dict[str, Tensor], images: list[Array],
               tape: Tape | None) -> Tensor:
        return self.head.logits(bound, self.features(bound, images, tape))

    def infer_logits(self, images: list[Array], chunk: int = 64) -> Array:
        """Forward without a tape; returns (N, logit_width) numpy."""
        out = np.empty((len(images), self.logit_width), dtype=np.float32)
        bound = self.bind(None)
        for lo in range(0, len(images), chunk):
            part = images[lo:lo + chunk]
            out[lo:lo + len(part)] = self.logits(bound, part, None).data
        return out

    def attention_maps(self, image: Array) -> list[Array]:
        if not isinstance(self.encoder, PatchEncoder):
            raise ConfigError("attention maps require the patch encoder")
        _, maps = self.encoder.embed(self._enc_bound(self.bind(None)), image,
                                     None, want_attention=True)
        return maps

    def class_scores(self, logits: Array) -> Array:
        """Per-grade distributions from raw logits (for AUROC reporting)."""
        z = np.asarray(logits, dtype=np.float32)
        if self.config.head_mode == "ce":
            z64 = z.astype(np.float64)
            z64 -= z64.max(axis=1, keepdims=True)
            e = np.exp(z64)
            return e / e.sum(axis=1, keepdims=True)
        probs = stable_sigmoid(z)
        return np.stack([class_distribution(row) for row in probs])

    # -- objective --

    def compute_loss(self, bound: dict[str, Tensor], images: list[Array], labels,
                     tape: Tape | None, pos_w: Array | None,
                     grade_w: Array) -> Tensor:
        cfg = self.config
        feats = self.features(bound, images, tape)
        z = self.head.logits(bound, feats)
        if cfg.head_mode == "ce":
            grading = ce_loss(z, labels, grade_w)
        else:
            levels = encode_levels(labels, cfg.num_grades)
            grading = coral_loss(z, levels, pos_w, sample_weights(labels, grade_w))
        align_term = None
        if cfg.align.mode != "off":
            projected = self.projection.project(bound, feats)
            if cfg.align.mode == "contrastive":
                align_term = contrastive_loss(projected, labels, self.prompts,
                                              cfg.align.temperature)
            else:
                teacher = teacher_distribution(projected.data, self.prompts,
                                               cfg.align.temperature)
                if cfg.head_mode == "ce":
                    student = z.softmax(axis=1)
                else:
                    student = class_distribution_tensor(z)
                # the distillation target is only as good as the projection
                # behind it, and the teacher side is detached, so the
                # contrastive term is what keeps the projection aligned
                # with the prompts while the student distills
                align_term = kl_distill_loss(teacher, student) + contrastive_loss(
                    projected, labels, self.prompts, cfg.align.temperature)
        reg_term = None
        if cfg.align.reg_weight > 0.0:
            reg_term = l2_penalty([bound[name] for name in sorted(self.params)
                                   if self.params[name].trainable])
        return total_loss(grading, align_term, reg_term,
                          cfg.align.align_weight, cfg.align.reg_weight)


def clone_config_with(config: ModelConfig, **overrides) -> ModelConfig:
    return replace(config, **overrides)
