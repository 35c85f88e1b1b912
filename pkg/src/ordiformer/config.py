"""Run configuration: INI file parsing plus CLI overrides.

The file uses plain ``key = value`` lines under fixed sections.  Every
section and key is checked against the schema below; anything unknown is
a configuration error rather than a silent ignore.  Values the file does
not mention keep their defaults, and dataclass validation still applies
after parsing, so semantic errors (bad ranges, unknown modes) surface
with the same exception type as schema errors.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .augment import AugmentPolicy
from .errors import ConfigError
from .inference import TauGrid
from .model import ModelConfig
from .pipeline import TrainConfig
from .semalign import AlignmentConfig
from .synthgen import SynthConfig


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


SCHEMA = {
    "synth": {
        "n_samples": _parse_int, "height": _parse_int, "width": _parse_int,
        "num_grades": _parse_int, "gap_base": _parse_int, "gap_step": _parse_int,
        "blobs_per_grade": _parse_int, "noise_sigma": _parse_float,
        "seed": _parse_int, "proportions": _parse_float_list,
    },
    "train": {
        "lr": _parse_float, "lr_min": _parse_float, "weight_decay": _parse_float,
        "batch_size": _parse_int, "t_max": _parse_int, "patience": _parse_int,
        "seed": _parse_int, "folds": _parse_int, "alpha": _parse_float,
        "monitor": _parse_str, "scheme": _parse_str,
    },
    "encoder": {
        "kind": _parse_str, "mlp_widths": _parse_int_list,
        "patch_size": _parse_int, "embed_dim": _parse_int,
        "num_heads": _parse_int, "num_layers": _parse_int,
        "mlp_ratio": _parse_float,
    },
    "head": {"mode": _parse_str},
    "align": {
        "mode": _parse_str, "temperature": _parse_float,
        "align_weight": _parse_float, "reg_weight": _parse_float,
        "prompt_dim": _parse_int, "prompt_source": _parse_str,
        "prompt_path": _parse_str,
    },
    "augment": {
        "crop_lo": _parse_float, "crop_hi": _parse_float,
        "hflip_prob": _parse_float, "rotate_degrees": _parse_float,
    },
    "tau": {"lo": _parse_float, "hi": _parse_float, "step": _parse_float,
            "value": _parse_float},
}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tau_grid: TauGrid = field(default_factory=TauGrid)
    tau: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ConfigError("decision threshold must lie in (0, 1)")


def _read_sections(path: str) -> dict[str, dict[str, object]]:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from exc
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for [{section}] {key}: "
                                  f"{raw!r} ({exc})") from exc
    return values


def load_run_config(path: str | None = None, seed: int | None = None,
                    head: str | None = None,
                    align: str | None = None) -> RunConfig:
    """Assemble the run configuration: defaults, then file, then flags."""
    sections = _read_sections(path) if path else {}

    synth = SynthConfig(**sections.get("synth", {}))

    train_kw = dict(sections.get("train", {}))
    aug = sections.get("augment", {})
    if aug:
        policy = AugmentPolicy(
            crop_scale=(aug.get("crop_lo", 0.8), aug.get("crop_hi", 1.0)),
            hflip_prob=aug.get("hflip_prob", 0.5),
            rotate_degrees=aug.get("rotate_degrees", 10.0))
        train_kw["augment"] = policy
    train = TrainConfig(**train_kw)

    enc = dict(sections.get("encoder", {}))
    kind = enc.pop("kind", "mlp")
    align_kw = dict(sections.get("align", {}))
    align_cfg = AlignmentConfig(**align_kw)
    head_mode = sections.get("head", {}).get("mode", "shared")
    model = ModelConfig(image_hw=(synth.height, synth.width),
                        num_grades=synth.num_grades, encoder=kind,
                        head_mode=head_mode, align=align_cfg, **enc)

    tau_section = dict(sections.get("tau", {}))
    tau_value = tau_section.pop("value", 0.5)
    grid = TauGrid(**tau_section)

    cfg = RunConfig(synth=synth, train=train, model=model, tau_grid=grid,
                    tau=tau_value)
    if seed is not None:
        cfg = replace(cfg, synth=replace(cfg.synth, seed=seed),
                      train=replace(cfg.train, seed=seed))
    if head is not None:
        cfg = replace(cfg, model=replace(cfg.model, head_mode=head))
    if align is not None:
        cfg = replace(cfg, model=replace(
            cfg.model, align=replace(cfg.model.align, mode=align)))
    return cfg
