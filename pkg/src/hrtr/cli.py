"""Command-line entry points: gen, train, eval, predict, sweep, presets.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 data error, 4 numeric fault. Every failure prints exactly one line to
stderr of the form ``hrtr: error[<kind>]: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import data as hdata
from .config import PRESETS, RunConfig, load_run_config, preset
from .errors import ConfigError, DataError, HRTRError, NumericFault
from .metrics import evaluate, evaluate_probabilities
from .model import ModelConfig, load_checkpoint, predict_proba, save_checkpoint
from .optim import train
from .synthgen import SynthSpec, generate
from .windowing import WindowSpec, smooth

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericFault: 4}
CHECKPOINT_NAME = "checkpoint.hrtr"
LOG_NAME = "train_log.jsonl"


def _fail(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            kind = cls.__name__.replace("Error", "").replace("Fault", "").lower() or "error"
            break
    else:
        code, kind = 1, "internal"
    msg = " ".join(str(exc).split())
    print(f"hrtr: error[{kind}]: {msg}", file=sys.stderr)
    return code


def _load_data(cfg: RunConfig) -> hdata.Dataset:
    return hdata.load_dataset(**cfg.data_paths())


def _model_config(cfg: RunConfig, dataset: hdata.Dataset) -> ModelConfig:
    try:
        return ModelConfig(input_dim=dataset.feature_dim, num_classes=dataset.num_classes,
                           **cfg.model_kwargs())
    except TypeError as exc:
        raise ConfigError(f"bad keys in [model]: {exc}") from None


def run_training(cfg: RunConfig, dataset: hdata.Dataset, out_dir: Path | None = None,
                 window=None):
    """Train from a resolved config; writes checkpoint and log when ``out_dir`` is given."""
    window = window or cfg.window_spec()
    mconf = _model_config(cfg, dataset)
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / LOG_NAME, "w")

    def log_fn(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

    try:
        params, log = train(dataset, mconf, cfg.train_config(), window, cfg.focal_spec(), log_fn=log_fn)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        extra = {
            "window_size": window.size,
            "window_stride": window.stride,
            "smooth_window": cfg.smooth_spec().window,
            "class_names": list(dataset.vocab.names),
            "seed": cfg.seed,
        }
        save_checkpoint(out_dir / CHECKPOINT_NAME, params, mconf, extra)
        (out_dir / "config.resolved.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=True))
    return params, mconf, log


def cmd_gen(args) -> int:
    raw = {}
    if args.spec:
        try:
            raw = yaml.safe_load(Path(args.spec).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"synth spec not found: {args.spec}") from None
    for item in args.set or []:
        key, _, value = item.partition("=")
        raw[key] = yaml.safe_load(value)
    try:
        spec = SynthSpec.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    paths = hdata.write_dataset(generate(spec), args.out_dir)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or (), args.preset)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    dataset = _load_data(cfg)
    _, _, log = run_training(cfg, dataset, out_dir)
    print(json.dumps({"checkpoint": str(out_dir / CHECKPOINT_NAME), "epochs": len(log),
                      "final": log[-1]}, sort_keys=True))
    return 0


def _eval_inputs(args):
    params, mconf, extra = load_checkpoint(args.checkpoint)
    cfg = load_run_config(args.config, args.set or (), args.preset)
    dataset = _load_data(cfg)
    if mconf.input_dim != dataset.feature_dim or mconf.num_classes != dataset.num_classes:
        raise DataError(
            f"checkpoint expects D={mconf.input_dim}, C={mconf.num_classes}; "
            f"data has D={dataset.feature_dim}, C={dataset.num_classes}"
        )
    split = args.split or cfg.raw["eval"]["split"]
    trials = dataset.subset(split)
    if not trials:
        raise DataError(f"split {split!r} is empty")
    window = args.window_size or extra.get("window_size") or cfg.window_spec().size
    smooth_k = args.smooth_window if args.smooth_window is not None else cfg.smooth_spec().window
    return params, mconf, cfg, dataset, trials, int(window), int(smooth_k)


def cmd_eval(args) -> int:
    params, mconf, cfg, dataset, trials, window, smooth_k = _eval_inputs(args)
    aggregate = args.aggregate or cfg.raw["eval"]["aggregate"]
    if args.oracle_labels:
        probs = [np.eye(dataset.num_classes)[t.labels.labels] for t in trials]
        report = evaluate_probabilities([t.labels.labels for t in trials], probs,
                                        dataset.num_classes, smooth_k,
                                        dataset.vocab.names, aggregate)
    else:
        report = evaluate(trials, params, mconf, window, smooth_k, dataset.num_classes,
                          dataset.vocab.names, aggregate)
    if args.confusion_csv:
        report.write_confusion_csv(args.confusion_csv)
    out = report.to_dict()
    out.update(smooth_window=smooth_k, window_size=window)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    params, mconf, cfg, dataset, trials, window, smooth_k = _eval_inputs(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in trials:
        probs = predict_proba(params, mconf, t.features.features, window)
        if smooth_k > 1:
            probs = smooth(probs, smooth_k)
        hdata.write_predictions(out_dir / f"{t.trial_id}.pred.csv", t.trial_id, probs, dataset.vocab)
    print(json.dumps({"written": len(trials), "out_dir": str(out_dir)}))
    return 0


def _parse_int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError("list must not be empty")
    return values


def sweep_pairs(window_sizes: list[int], strides: list[int]) -> list[tuple[int, int]]:
    """Pair window sizes with strides (one stride broadcasts), dropping repeats in order."""
    if len(strides) == 1:
        strides = strides * len(window_sizes)
    elif len(window_sizes) == 1:
        window_sizes = window_sizes * len(strides)
    if len(strides) != len(window_sizes):
        raise ConfigError("--strides must have one entry or as many as --window-sizes")
    seen, pairs = set(), []
    for pair in zip(window_sizes, strides):
        if pair not in seen:
            seen.add(pair)
            pairs.append(pair)
    return pairs


def _sweep_one(cfg_raw: dict, base_dir: str, w: int, s: int, eval_split: str):
    row = {"window_size": w, "stride": s, "edit_score": "", "aer": "",
           "frame_accuracy": "", "status": "ok"}
    try:
        cfg = RunConfig(cfg_raw, Path(base_dir))
        window = WindowSpec(w, s, tail=cfg.window_spec().tail)
        dataset = _load_data(cfg)
        params, mconf, _ = run_training(cfg, dataset, None, window)
        trials = dataset.subset(eval_split)
        report = evaluate(trials, params, mconf, w, cfg.smooth_spec().window, dataset.num_classes)
        row.update(edit_score=report.edit_score, aer=report.aer,
                   frame_accuracy=report.frame_accuracy)
    except Exception as exc:  # one failed run must not stop the sweep
        row["status"] = "error: " + " ".join(str(exc).split())
    return row


SWEEP_COLUMNS = ["window_size", "stride", "edit_score", "aer", "frame_accuracy", "status"]


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, args.set or (), args.preset)
    pairs = sweep_pairs(_parse_int_list(args.window_sizes), _parse_int_list(args.strides))
    split = args.split
    if split is None:
        split = cfg.raw["eval"]["split"]
    jobs = [(cfg.raw, str(cfg.base_dir), w, s, split) for w, s in pairs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_one, *zip(*jobs)))
    else:
        rows = [_sweep_one(*job) for job in jobs]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_presets(args) -> int:
    names = [args.name] if args.name else sorted(PRESETS)
    dump = {name: preset(name) for name in names}
    sys.stdout.write(yaml.safe_dump(dump if not args.name else dump[args.name], sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrtr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. train.epochs=3 (repeatable)")

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("spec", nargs="?", help="YAML file with synthetic spec fields")
    p.add_argument("out_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("config", nargs="?")
    p.add_argument("--out-dir")
    common(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "print a metrics report as JSON"),
                                 ("predict", cmd_predict, "write per-frame prediction CSVs")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("checkpoint")
        p.add_argument("--config")
        p.add_argument("--split", choices=hdata.SPLIT_NAMES)
        p.add_argument("--smooth-window", type=int, metavar="K", help="0 disables smoothing")
        p.add_argument("--window-size", type=int)
        common(p)
        if name == "eval":
            p.add_argument("--aggregate", choices=("mean", "pooled"))
            p.add_argument("--confusion-csv")
            p.add_argument("--oracle-labels", action="store_true",
                           help="debug: score one-hot ground truth instead of model output")
        else:
            p.add_argument("--out-dir", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="train+eval over window sizes and strides")
    p.add_argument("config", nargs="?")
    p.add_argument("--window-sizes", required=True, help="comma-separated, e.g. 100,200,500")
    p.add_argument("--strides", required=True, help="one stride, or one per window size")
    p.add_argument("--split", choices=hdata.SPLIT_NAMES)
    p.add_argument("--out", help="also write the CSV here")
    p.add_argument("--jobs", type=int, default=1, help="parallel independent runs")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("presets", help="print preset configurations")
    p.add_argument("name", nargs="?", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HRTRError as exc:
        return _fail(exc)
    except (OSError, ValueError) as exc:
        return _fail(DataError(str(exc)) if isinstance(exc, OSError) else exc)


if __name__ == "__main__":
    sys.exit(main())
