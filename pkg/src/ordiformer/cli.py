"""Command-line front end.

Subcommands: synth, train, calibrate, eval, explain, compare.  Exit
codes are stable: 0 success, 2 configuration problems, 3 unreadable or
inconsistent data, 4 numeric divergence.  `ORDIFORMER_THREADS` caps how
many folds train concurrently; all files are written by the coordinating
thread after workers finish.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .encoders import attention_rollout, readout_saliency
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    NumericError,
    OrdiformerError,
    ShapeError,
)
from .figures import confusion_figure, curves_figure, saliency_figure
from .inference import (
    combine_predictions,
    default_tta_views,
    ensemble_logits,
    model_logits,
    predict_grades,
    tune_tau,
    write_logits,
)
from .metrics import build_report, macro_f1_score, paired_t_test
from .model import GradingModel
from .ordinal import stable_sigmoid
from .pipeline import format_log_rows, predict_labels, stratified_kfold, train_folds
from .synthgen import generate, read_dataset, write_dataset, write_pgm

HEAD_CHOICES = ("shared", "independent", "ce")
ALIGN_CHOICES = ("off", "contrastive", "kl_distill")
COMBINE_CHOICES = ("logit_mean", "majority_vote")


def _err(message: str) -> None:
    print(f"ordiformer: {message}", file=sys.stderr)


def fold_workers() -> int:
    raw = os.environ.get("ORDIFORMER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ORDIFORMER_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"ORDIFORMER_THREADS must be >= 1, got {n}")
    return n


def load_bundles(run_dir: Path) -> list[CheckpointBundle]:
    pattern = re.compile(r"fold(\d+)\.ckpt\.json$")
    found = []
    for path in sorted(run_dir.glob("fold*.ckpt.json")):
        match = pattern.search(path.name)
        if match:
            found.append((int(match.group(1)), path))
    if not found:
        raise ConfigError(f"no checkpoints (fold*.ckpt.json) in {run_dir}")
    found.sort()
    return [load_checkpoint(path) for _, path in found]


def dataset_arrays(data_dir: str):
    ds = read_dataset(data_dir)
    images = list(ds.images)
    labels = np.asarray(ds.labels, dtype=np.int64)
    return ds, images, labels


def check_dataset_fits(bundle: CheckpointBundle, images, labels) -> None:
    cfg = bundle.model.config
    if tuple(images[0].shape) != tuple(cfg.image_hw):
        raise ConfigError(f"dataset images are {images[0].shape}, checkpoint "
                          f"expects {tuple(cfg.image_hw)}")
    if labels.max() >= cfg.num_grades:
        raise ConfigError(f"dataset has grade {labels.max()}, checkpoint "
                          f"covers {cfg.num_grades} grades")


def resolve_tau(run_dir: Path, cfg: RunConfig) -> tuple[float, str]:
    calib = run_dir / "calibration.json"
    if calib.is_file():
        try:
            blob = json.loads(calib.read_text())
            return float(blob["tau"]), "calibration.json"
        except (ValueError, KeyError) as exc:
            raise DataFormatError(f"{calib}: bad calibration file: {exc}") from exc
    return cfg.tau, "config default"


# -- subcommands --


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    dataset = generate(cfg.synth)
    write_dataset(dataset, args.out)
    counts = np.bincount(dataset.labels, minlength=cfg.synth.num_grades)
    print(f"wrote {len(dataset)} samples to {args.out} "
          f"(grades {'/'.join(str(int(c)) for c in counts)}, "
          f"noise_sigma={cfg.synth.noise_sigma})")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, head=args.head,
                          align=args.align)
    ds, images, labels = dataset_arrays(args.data)
    if labels.max() >= cfg.model.num_grades:
        raise ConfigError(f"dataset has grade {labels.max()}, config covers "
                          f"{cfg.model.num_grades}")
    model_cfg = replace(cfg.model, image_hw=tuple(images[0].shape))

    splits = stratified_kfold(labels, cfg.train.folds, cfg.train.seed,
                              scheme=cfg.train.scheme)
    results = train_folds(images, labels, splits, model_cfg, cfg.train,
                          max_workers=fold_workers())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary_lines = []
    header = "fold,best_epoch,val_accuracy,val_macro_f1,val_mae"
    has_test = cfg.train.scheme == "train-val-test"
    if has_test:
        header += ",test_accuracy,test_macro_f1,test_mae"
    summary_lines.append(header)
    for r in results:
        save_checkpoint(out / f"fold{r.fold_index}.ckpt", r.model, cfg.train,
                        r.fold_index, r.split,
                        {"best_epoch": r.best_epoch,
                         "best_metric": r.best_metric,
                         "monitor": cfg.train.monitor,
                         "epochs_run": len(r.log_rows)})
        (out / f"fold{r.fold_index}_log.csv").write_text(format_log_rows(r.log_rows))
        best = r.log_rows[r.best_epoch]
        line = (f"{r.fold_index},{r.best_epoch},{best.val_accuracy:.8f},"
                f"{best.val_macro_f1:.8f},{best.val_mae:.8f}")
        if has_test:
            test_images = [images[i] for i in r.split.test_ids]
            y_test = labels[list(r.split.test_ids)]
            y_hat = predict_labels(r.model, test_images)
            line += (f",{float(np.mean(y_hat == y_test)):.8f}"
                     f",{macro_f1_score(y_test, y_hat, model_cfg.num_grades):.8f}"
                     f",{float(np.mean(np.abs(y_hat - y_test))):.8f}")
        summary_lines.append(line)
        print(f"fold {r.fold_index}: best_epoch={r.best_epoch} "
              f"val_accuracy={best.val_accuracy:.4f} "
              f"val_macro_f1={best.val_macro_f1:.4f} val_mae={best.val_mae:.4f}")
    (out / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    curves_figure([r.log_rows for r in results], out / "curves.png")
    mean_acc = float(np.mean([r.log_rows[r.best_epoch].val_accuracy for r in results]))
    print(f"mean val_accuracy={mean_acc:.4f}; artifacts in {out}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_run_config(args.config)
    run_dir = Path(args.out)
    bundles = load_bundles(run_dir)
    ds, images, labels = dataset_arrays(args.data)
    views = default_tta_views() if args.tta else None

    pooled_probs = []
    pooled_labels = []
    for bundle in bundles:
        if bundle.model.config.head_mode == "ce":
            raise ConfigError("threshold calibration applies to ordinal heads only")
        check_dataset_fits(bundle, images, labels)
        val_ids = list(bundle.split.val_ids)
        if not val_ids or max(val_ids) >= len(images):
            raise ConfigError("checkpoint validation split does not fit this dataset")
        logits = model_logits(bundle.model, [images[i] for i in val_ids], views)
        pooled_probs.append(stable_sigmoid(logits))
        pooled_labels.append(labels[val_ids])
    probs = np.concatenate(pooled_probs, axis=0)
    y_val = np.concatenate(pooled_labels, axis=0)
    num_grades = bundles[0].model.config.num_grades
    tau, f1 = tune_tau(probs, y_val, num_grades, cfg.tau_grid)

    payload = {"tau": tau, "val_macro_f1": f1, "n_pooled": int(y_val.size),
               "tta": bool(args.tta), "grid": {"lo": cfg.tau_grid.lo,
                                               "hi": cfg.tau_grid.hi,
                                               "step": cfg.tau_grid.step}}
    (run_dir / "calibration.json").write_text(json.dumps(payload, sort_keys=True,
                                                         indent=2) + "\n")
    print(f"calibrated tau={tau:.2f} (val_macro_f1={f1:.4f} over {y_val.size} "
          f"pooled validation samples)")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    run_dir = Path(args.out)
    bundles = load_bundles(run_dir)
    ds, images, labels = dataset_arrays(args.data)
    for bundle in bundles:
        check_dataset_fits(bundle, images, labels)
    head_mode = bundles[0].model.config.head_mode
    num_grades = bundles[0].model.config.num_grades
    views = default_tta_views() if args.tta else None
    tau, tau_source = resolve_tau(run_dir, cfg)

    if args.mode == "ensemble":
        member_logits = [model_logits(b.model, images, views) for b in bundles]
        logits = ensemble_logits(member_logits)
        preds = combine_predictions(member_logits, head_mode, args.combine, tau)
        y_true = labels
        ids = list(ds.ids)
    else:
        pooled = []
        for bundle in bundles:
            test_ids = list(bundle.split.test_ids)
            if not test_ids:
                raise ConfigError("checkpoints carry no test split; "
                                  "use --mode ensemble for held-out data")
            if max(test_ids) >= len(images):
                raise ConfigError("checkpoint test split does not fit this dataset")
            z = model_logits(bundle.model, [images[i] for i in test_ids], views)
            pooled.append((test_ids, z))
        ids = [ds.ids[i] for t, _ in pooled for i in t]
        logits = np.concatenate([z for _, z in pooled], axis=0)
        preds = predict_grades(logits, head_mode, tau)
        y_true = np.concatenate([labels[t] for t, _ in pooled])

    scores = bundles[0].model.class_scores(logits)
    report = build_report(y_true, preds, num_grades, scores=scores,
                          provenance={"mode": args.mode, "combine": args.combine,
                                      "tta": bool(args.tta), "tau": tau,
                                      "tau_source": tau_source,
                                      "checkpoints": len(bundles)})
    report.save(run_dir / "eval_report.json", run_dir / "eval_report.csv",
                run_dir / "confusion.csv")
    confusion_figure(report.confusion, run_dir / "confusion.png")
    write_logits(run_dir / "eval_logits.csv", ids, y_true, logits)
    auroc = "n/a" if report.auroc_macro is None else f"{report.auroc_macro:.4f}"
    print(f"eval[{args.mode}] n={report.n} tau={tau:.2f} ({tau_source}) "
          f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f} "
          f"mae={report.mae:.4f} auroc={auroc}")
    return 0


def _upsample_nearest(grid: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    h, w = hw
    gh, gw = grid.shape
    rows = (np.arange(h) * gh // h).clip(0, gh - 1)
    cols = (np.arange(w) * gw // w).clip(0, gw - 1)
    return grid[np.ix_(rows, cols)]


def cmd_explain(args) -> int:
    run_dir = Path(args.out)
    bundles = load_bundles(run_dir)
    bundle = bundles[0]
    model = bundle.model
    if model.config.encoder != "patch":
        raise ConfigError("explain needs a patch-encoder checkpoint; "
                          "this run used the mlp encoder")
    ds, images, labels = dataset_arrays(args.data)
    check_dataset_fits(bundle, images, labels)
    ids = list(ds.ids)
    sample_id = args.sample if args.sample is not None else ids[0]
    if sample_id not in ids:
        raise DataFormatError(f"sample {sample_id!r} not found in {args.data}")
    idx = ids.index(sample_id)
    image = images[idx]

    maps = model.attention_maps(image)
    rollout = attention_rollout(maps)
    h, w = image.shape
    p = model.config.patch_size
    grid = readout_saliency(rollout, (h // p, w // p))

    csv_path = run_dir / f"explain_{sample_id}.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        for row in grid:
            fh.write(",".join(f"{float(v):.9e}" for v in row) + "\n")
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        normalized = (grid - lo) / (hi - lo)
    else:
        normalized = np.full_like(grid, 0.5)  # flat map renders mid-gray
    pgm_path = run_dir / f"explain_{sample_id}.pgm"
    write_pgm(pgm_path, _upsample_nearest(normalized, (h, w)))
    png_path = run_dir / f"explain_{sample_id}.png"
    saliency_figure(image, grid, png_path)

    pred = int(predict_grades(model.infer_logits([image]), model.config.head_mode)[0])
    print(f"sample {sample_id}: true={int(labels[idx])} predicted={pred} "
          f"saliency grid {grid.shape[0]}x{grid.shape[1]} mass={grid.sum():.4f}; "
          f"wrote {csv_path.name}, {pgm_path.name}, {png_path.name}")
    return 0


def read_summary(path: Path) -> dict[str, list[float]]:
    if not path.is_file():
        raise DataFormatError(f"missing summary table {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataFormatError(f"{path}: summary has no fold rows")
    header = lines[0].split(",")
    columns: dict[str, list[float]] = {name: [] for name in header}
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataFormatError(f"{path}: ragged summary row {line!r}")
        for name, cell in zip(header, cells):
            try:
                columns[name].append(float(cell))
            except ValueError as exc:
                raise DataFormatError(f"{path}: bad cell {cell!r}: {exc}") from exc
    return columns


def cmd_compare(args) -> int:
    a = read_summary(Path(args.run_a) / "summary.csv")
    b = read_summary(Path(args.run_b) / "summary.csv")
    metric = args.metric
    if metric not in a or metric not in b:
        raise ConfigError(f"metric {metric!r} missing from a summary "
                          f"(columns: {sorted(set(a) | set(b))})")
    xs, ys = a[metric], b[metric]
    if len(xs) != len(ys):
        raise ConfigError(f"fold counts differ: {len(xs)} vs {len(ys)}")
    t, p = paired_t_test(xs, ys)
    mean_a, mean_b = float(np.mean(xs)), float(np.mean(ys))
    print(f"compare {metric}: runA={mean_a:.6f} runB={mean_b:.6f} "
          f"diff={mean_a - mean_b:+.6f} t={t:.4f} p={p:.6f} (df={len(xs) - 1})")
    return 0


# -- parser --


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordiformer",
        description="Ordinal severity grading on synthetic radiographs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out_required=True):
        p.add_argument("--config", default=None, help="INI run configuration")
        p.add_argument("--out", required=out_required, help="run directory")
        if data:
            p.add_argument("data", help="dataset directory (labels.csv + PGMs)")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config", default=None)
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one model per fold")
    common(p_train)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--head", choices=HEAD_CHOICES, default=None)
    p_train.add_argument("--align", choices=ALIGN_CHOICES, default=None)
    p_train.set_defaults(func=cmd_train)

    p_cal = sub.add_parser("calibrate", help="tune the decision threshold")
    common(p_cal)
    p_cal.add_argument("--tta", action="store_true")
    p_cal.set_defaults(func=cmd_calibrate)

    p_eval = sub.add_parser("eval", help="score a dataset and write reports")
    common(p_eval)
    p_eval.add_argument("--mode", choices=("single", "ensemble"), default="single")
    p_eval.add_argument("--combine", choices=COMBINE_CHOICES, default="logit_mean")
    p_eval.add_argument("--tta", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_exp = sub.add_parser("explain", help="attention saliency for one sample")
    common(p_exp)
    p_exp.add_argument("sample", nargs="?", default=None,
                       help="sample id (defaults to the first)")
    p_exp.set_defaults(func=cmd_explain)

    p_cmp = sub.add_parser("compare", help="paired t-test between two runs")
    p_cmp.add_argument("run_a", help="first run directory")
    p_cmp.add_argument("run_b", help="second run directory")
    p_cmp.add_argument("--metric", default="val_accuracy")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return 2
    except ShapeError as exc:
        _err(f"configuration error: {exc}")
        return 2
    except (DataFormatError, DegenerateInputError) as exc:
        _err(f"data error: {exc}")
        return 3
    except (DivergenceError, NumericError, DomainError) as exc:
        _err(f"numeric error: {exc}")
        return 4
    except OSError as exc:
        _err(f"data error: {exc}")
        return 3
    except OrdiformerError as exc:  # default bucket for anything package-raised
        _err(str(exc))
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
