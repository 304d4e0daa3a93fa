"""Command-line driver: build clouds, run challenges, train and evaluate.

Subcommands:
  build       structure files -> cloud archives (.npz) + meshes (.ply) + manifest
  challenge   one structure -> rotation-challenge report JSON
  train-eval  cloud dir + labels CSV -> fold metrics, predictions, model archives

Exit codes: 0 success, 1 run failure (all builds failed, missing labels,
training diverged), 2 configuration problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cloudstore, evalkit, neuralcore, pipeline, surface
from .chemio import StructureParseError, parse_structure

STRUCTURE_EXTENSIONS = (".pdb", ".pqr", ".xyz")
_SCALAR_FLAG_MAP = {"esp": "esp", "fukui": "fukui_dual"}
_MODE_FLAG_MAP = {"kfold": "kfold_partition", "random": "random_split"}


class ConfigError(ValueError):
    """Bad configuration file or flag combination."""


def _write_atomic(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def load_config(args) -> pipeline.PipelineConfig:
    """Config file plus flag overrides; raises ConfigError on any problem."""
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        try:
            config = pipeline.PipelineConfig.from_dict(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
    else:
        config = pipeline.PipelineConfig()

    try:
        model = config.model
        folds = config.folds
        if getattr(args, "points", None) is not None:
            config = replace(config, n_points=args.points)
        if getattr(args, "scalar", None) is not None:
            config = replace(config, scalar_kind=_SCALAR_FLAG_MAP[args.scalar])
        if getattr(args, "fp_weight", None) is not None:
            model = replace(model, fp_weight=args.fp_weight)
        if getattr(args, "folds", None) is not None:
            folds = replace(folds, folds=args.folds)
        if getattr(args, "mode", None) is not None:
            folds = replace(folds, mode=_MODE_FLAG_MAP[args.mode])
        if getattr(args, "seed", None) is not None:
            config = replace(config, seed=args.seed)
            model = replace(model, seed=args.seed)
            folds = replace(folds, seed=args.seed)
        config = replace(config, model=model, folds=folds)
    except ValueError as exc:
        raise ConfigError(f"bad flag value: {exc}") from exc
    return config


def _collect_structures(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            for ext in STRUCTURE_EXTENSIONS:
                paths.extend(p.glob(f"*{ext}"))
        else:
            paths.append(p)
    return sorted(set(paths), key=lambda p: p.name)


def _read_structure(path: Path):
    fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("pdb", "pqr", "xyz"):
        raise StructureParseError(0, f"unsupported structure format .{fmt}")
    return parse_structure(path.read_text(encoding="utf-8"), fmt, name=path.stem)


def _build_one(task: tuple[str, pipeline.PipelineConfig, str]) -> dict:
    """Build a single molecule; returns its manifest entry. Worker-safe."""
    path_str, config, out_dir = task
    path = Path(path_str)
    name = path.stem
    entry = {"name": name, "input": path.name, "status": "ok",
             "warnings": [], "outputs": []}
    try:
        mol = _read_structure(path)
        result = pipeline.build_cloud(mol, config, name=name)
        out = Path(out_dir)
        npz = out / f"{name}.npz"
        ply = out / f"{name}.ply"
        buf = _archive_bytes(result.cloud)
        _write_atomic(npz, buf)
        _write_atomic(ply, surface.export_ply(result.mesh))
        entry["warnings"] = list(result.cloud.meta.warnings)
        entry["outputs"] = [npz.name, ply.name]
    except Exception as exc:  # per-molecule isolation; run continues
        entry["status"] = f"failed:{exc}"
    return entry


def _archive_bytes(cloud) -> bytes:
    import io
    buf = io.BytesIO()
    cloudstore.write_archive(cloud, buf)
    return buf.getvalue()


def cmd_build(args) -> int:
    config = load_config(args)
    paths = _collect_structures(args.inputs)
    if not paths:
        print("no structure files found", file=sys.stderr)
        return 1
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(str(p), config, str(out_dir)) for p in paths]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(_build_one, tasks))
    else:
        entries = [_build_one(t) for t in tasks]
    entries.sort(key=lambda e: e["name"])
    manifest = {"config_hash": pipeline.config_hash(config),
                "n_inputs": len(entries), "inputs": entries}
    _write_atomic(out_dir / "manifest.json", _json_bytes(manifest))
    n_ok = sum(1 for e in entries if e["status"] == "ok")
    for e in entries:
        print(f"{e['name']}: {e['status']}")
    print(f"built {n_ok}/{len(entries)} molecules -> {out_dir}")
    return 0 if n_ok > 0 else 1


def cmd_challenge(args) -> int:
    config = load_config(args)
    path = Path(args.structure)
    try:
        mol = _read_structure(path)
        report = pipeline.run_challenge(mol, config, n_trials=args.trials,
                                        seed=config.seed,
                                        rmsd_threshold=args.threshold)
    except (StructureParseError, ValueError, OSError) as exc:
        print(f"challenge failed: {exc}", file=sys.stderr)
        return 1
    payload = {"molecule": path.stem,
               "config_hash": pipeline.config_hash(config),
               **report.to_json_dict()}
    text = _json_bytes(payload)
    if args.out:
        out_dir = Path(args.out)
        _write_atomic(out_dir / "challenge.json", text)
        print(f"wrote {out_dir / 'challenge.json'}")
    sys.stdout.write(text.decode("utf-8"))
    return 0


def read_labels(path: Path) -> dict[str, float]:
    """CSV of name,value rows; a leading header row is tolerated."""
    labels: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row_num, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise ConfigError(f"labels row {row_num + 1} needs name,value")
            name, value = row[0].strip(), row[1].strip()
            try:
                labels[name] = float(value)
            except ValueError:
                if row_num == 0:
                    continue  # header
                raise ConfigError(
                    f"labels row {row_num + 1}: bad value {value!r}") from None
    if not labels:
        raise ConfigError("labels file has no usable rows")
    return labels


def _load_cloud_dir(cloud_dir: Path) -> list:
    archives = sorted(cloud_dir.glob("*.npz"), key=lambda p: p.name)
    clouds = []
    for p in archives:
        cloud = cloudstore.read_archive(p)
        clouds.append(cloud)
    return clouds


def _predictions_csv(summary: evalkit.FoldRunSummary, names: list[str],
                     labels: np.ndarray) -> str:
    lines = ["name,y,yhat_raw,yhat_calibrated,fold"]
    for r in summary.folds:
        if r.error is not None:
            continue
        for pos, idx in enumerate(r.val_idx):
            i = int(idx)
            lines.append(f"{names[i]},{float(labels[i])!r},"
                         f"{float(r.val_preds_raw[pos])!r},"
                         f"{float(r.val_preds[pos])!r},{r.fold}")
    return "\n".join(lines) + "\n"


def _roc_csv(points: np.ndarray) -> str:
    lines = ["fpr,tpr"]
    lines += [f"{float(fpr)!r},{float(tpr)!r}" for fpr, tpr in points]
    return "\n".join(lines) + "\n"


def cmd_train_eval(args) -> int:
    config = load_config(args)
    use_calibration = (args.calibrate != "off")
    cloud_dir = Path(args.clouds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        clouds = _load_cloud_dir(cloud_dir)
        if not clouds:
            print(f"no cloud archives in {cloud_dir}", file=sys.stderr)
            return 1
        label_map = read_labels(Path(args.labels))
    except (ConfigError, cloudstore.ArchiveFormatError, OSError) as exc:
        print(f"train-eval failed: {exc}", file=sys.stderr)
        return 1

    missing = [c.meta.name for c in clouds if c.meta.name not in label_map]
    if missing:
        print(f"missing labels for: {', '.join(sorted(missing))}", file=sys.stderr)
        return 1

    task = config.model.task
    entries = []
    excluded = 0
    for cloud in clouds:
        value = label_map[cloud.meta.name]
        if task == "binary" and value == evalkit.EXCLUDED:
            excluded += 1
            continue
        entries.append((cloud, pipeline.cloud_fingerprint(cloud), value))
    entries.sort(key=lambda e: e[0].meta.name)
    names = [c.meta.name for c, _, _ in entries]
    labels = np.array([v for _, _, v in entries], dtype=np.float64)
    dataset = [(c, fp, v) for c, fp, v in entries]

    model_cfg = replace(config.model,
                        jitter_rot_sigma_deg=config.jitter_rot_sigma_deg)
    histories: dict[int, list[float]] = {}

    def train_fn(train_idx, train_labels, fold_seed):
        cfg = replace(model_cfg, seed=int(fold_seed))
        subset = [dataset[int(i)] for i in train_idx]
        sub_labeled = [(c, fp, float(y)) for (c, fp, _), y in zip(subset, train_labels)]
        model, history = neuralcore.train(sub_labeled, cfg)
        fold = int(fold_seed) - config.folds.seed
        histories[fold] = history
        _write_atomic(out_dir / f"model_fold{fold}.npz", _model_bytes(model))
        return lambda idx: neuralcore.predict(model, [dataset[int(i)] for i in idx])

    try:
        summary = evalkit.fold_runner(labels, config.folds, train_fn, task=task,
                                      use_calibration=use_calibration)
    except (evalkit.FoldError, evalkit.CalibrationError, ValueError,
            neuralcore.TrainingDivergedError) as exc:
        print(f"train-eval failed: {exc}", file=sys.stderr)
        return 1

    results = evalkit.summary_json_dict(summary)
    results["config_hash"] = pipeline.config_hash(config)
    results["n_samples"] = len(dataset)
    results["excluded_labels"] = excluded
    _write_atomic(out_dir / "results.json", _json_bytes(results))
    _write_atomic(out_dir / "per_fold.csv",
                  evalkit.per_fold_csv(summary).encode("utf-8"))
    _write_atomic(out_dir / "predictions.csv",
                  _predictions_csv(summary, names, labels).encode("utf-8"))
    for fold, history in sorted(histories.items()):
        _write_atomic(out_dir / f"history_fold{fold}.csv",
                      neuralcore.history_csv(history).encode("utf-8"))
    if task == "binary":
        pooled_labels = labels[summary.pooled_indices]
        points = evalkit.roc_points(summary.pooled_preds, pooled_labels)
        _write_atomic(out_dir / "roc_points.csv", _roc_csv(points).encode("utf-8"))

    pooled = ", ".join(f"{k}={v:.4f}" for k, v in sorted(summary.pooled_metrics.items()))
    print(f"pooled validation: {pooled}")
    print(f"wrote results to {out_dir}")
    return 0


def _model_bytes(model) -> bytes:
    import io
    buf = io.BytesIO()
    neuralcore.save_model(buf, model)
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amptcr",
                                     description="Molecular surface cloud pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="pipeline config JSON file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--points", type=int, help="points per cloud")
        p.add_argument("--scalar", choices=sorted(_SCALAR_FLAG_MAP),
                       help="surface scalar field")

    b = sub.add_parser("build", help="build cloud archives from structures")
    add_common(b)
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--jobs", type=int, default=1, help="parallel workers")
    b.add_argument("inputs", nargs="+", help="structure files or directories")
    b.set_defaults(func=cmd_build)

    c = sub.add_parser("challenge", help="rotation-robustness challenge")
    add_common(c)
    c.add_argument("--out", help="output directory (JSON also goes to stdout)")
    c.add_argument("--trials", type=int, default=20, help="number of poses")
    c.add_argument("--threshold", type=float, default=0.05,
                   help="pairwise RMSD success threshold in Angstrom")
    c.add_argument("structure", help="structure file")
    c.set_defaults(func=cmd_challenge)

    t = sub.add_parser("train-eval", help="fold-based training and evaluation")
    add_common(t)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--fp-weight", type=float, dest="fp_weight",
                   help="fingerprint blend weight in [0,1]")
    t.add_argument("--folds", type=int, help="fold count")
    t.add_argument("--mode", choices=sorted(_MODE_FLAG_MAP), help="fold protocol")
    t.add_argument("--calibrate", choices=("on", "off"), default="on",
                   help="post hoc affine calibration")
    t.add_argument("clouds", help="directory of cloud archives")
    t.add_argument("labels", help="CSV of name,value labels")
    t.set_defaults(func=cmd_train_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
