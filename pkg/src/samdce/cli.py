"""Command-line entry point: samdce <subcommand> ...

Errors are reported on stderr as a single JSON object
``{"error": <kind>, "message": <text>, ...}`` with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import tensor as T
from .ablation import run_ablation, write_csv, write_svg
from .config import ConfigError, RunConfig, load_config
from .data import SEGBError, SynthConfig, generate_dataset, read_dataset, write_dataset
from .train import CheckpointError, TrainingDiverged, analyze_token_similarity, evaluate, load_checkpoint, save_checkpoint, train

EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 2, 3, 4


class CliError(Exception):
    def __init__(self, kind, message, code=EXIT_INPUT, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _load_split(path, test_fraction):
    samples = read_dataset(path)
    if not samples:
        raise CliError("empty_dataset", f"{path} contains no samples")
    n_test = int(round(len(samples) * test_fraction))
    return samples[: len(samples) - n_test], samples[len(samples) - n_test :]


def cmd_gen_data(args):
    cfg = load_config(args.config, SynthConfig) if args.config else SynthConfig()
    samples = generate_dataset(cfg, args.count, args.start_id)
    write_dataset(samples, args.out)
    _log(f"wrote {len(samples)} samples to {args.out}")


def cmd_train(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    samples = read_dataset(args.data)
    val = read_dataset(args.val_data) if args.val_data else None
    state = load_checkpoint(args.resume) if args.resume else None
    use_mldce = cfg.enable_mcc or cfg.enable_icc

    def progress(s):
        line = f"epoch {s.epoch}/{cfg.epochs} loss {s.history.loss[-1]:.6f}"
        if s.history.val_dice:
            line += f" val_dice {s.history.val_dice[-1]:.4f}"
        _log(line)

    state = train(cfg, samples, val, use_mldce, state, progress)
    save_checkpoint(state, args.out_ckpt)
    _log(f"saved checkpoint to {args.out_ckpt}")


def cmd_eval(args):
    state = load_checkpoint(args.ckpt)
    report = evaluate(state, read_dataset(args.data), spacing=args.spacing)
    report.to_csv(args.report)
    print(json.dumps({"mean_dice": report.mean_dice, "mean_hd95": report.mean_hd95, "token_similarity": report.token_similarity}))


def cmd_ablate(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    train_set, test_set = _load_split(args.data, args.test_fraction)
    seeds = [int(s) for s in args.seeds.split(",")]
    start = time.perf_counter()

    def progress(cell):
        _log(f"{cell.label:8s} seed {cell.seed}: mean dice {cell.mean_dice:.2f}, token similarity {cell.token_similarity:.4f} ({cell.seconds:.0f}s)")

    result = run_ablation(cfg, train_set, test_set, seeds, progress=progress)
    stem, _ = os.path.splitext(args.out)
    write_csv(result, stem + ".csv")
    write_svg(result, stem + ".svg")
    _log(f"ablation finished in {time.perf_counter() - start:.0f}s; wrote {stem}.csv and {stem}.svg")
    for row in result.rows():
        print(f"{row['config']:8s} {row['median_mean_dice']:7.2f} {row['median_token_similarity']:.4f}")


def cmd_similarity(args):
    state = load_checkpoint(args.ckpt)
    value = analyze_token_similarity(state, read_dataset(args.data))
    label = {(False, False): "None", (True, False): "MCC", (False, True): "ICC", (True, True): "MCC+ICC"}
    cfg = state.config
    name = label[(cfg.enable_mcc, cfg.enable_icc)] if state.use_mldce else "None"
    print(json.dumps({"configuration": name, "mean_pairwise_cosine_similarity": value}))


def cmd_gradcheck(args):
    from .gradcheck import MODULE_CHECKS, run_check

    names = [args.module] if args.module else list(MODULE_CHECKS)
    unknown = [n for n in names if n not in MODULE_CHECKS]
    if unknown:
        raise CliError("unknown_module", f"unknown module {unknown[0]!r}; choose from {', '.join(MODULE_CHECKS)}", EXIT_USAGE)
    worst = 0.0
    for name in names:
        err, seconds = run_check(name, max_coords=args.max_coords)
        worst = max(worst, err)
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:10s} max rel err {err:.3e}  {seconds:6.1f}s  {status}")
    if worst >= args.tolerance:
        raise CliError("gradcheck_failed", f"max relative error {worst:.3e} >= {args.tolerance}", EXIT_RUNTIME, max_error=worst)


def build_parser():
    p = argparse.ArgumentParser(prog="samdce", description="Prompt-free class-token segmentation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic SEGB dataset")
    g.add_argument("--config", help="flat key = value file with SynthConfig fields")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=400)
    g.add_argument("--start-id", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--val-data")
    t.add_argument("--out-ckpt", required=True)
    t.add_argument("--resume", help="continue from this checkpoint up to the configured epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-class Dice / HD95 report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--spacing", type=float, default=1.0)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run the four-configuration ablation grid")
    a.add_argument("--config")
    a.add_argument("--data", required=True, help="SEGB file; the last --test-fraction of samples is held out")
    a.add_argument("--out", required=True, help="output stem; .csv and .svg are written")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--test-fraction", type=float, default=0.25)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("similarity", help="mean pairwise cosine similarity of fused class tokens")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_similarity)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--module")
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--max-coords", type=int, default=None)
    c.set_defaults(func=cmd_gradcheck)
    return p


def _fail(kind, message, code, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code, **exc.extra)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_INPUT)
    except SEGBError as exc:
        return _fail("dataset", str(exc), EXIT_INPUT, offset=exc.offset)
    except CheckpointError as exc:
        return _fail("checkpoint", str(exc), EXIT_INPUT)
    except FileNotFoundError as exc:
        return _fail("file_not_found", str(exc), EXIT_INPUT, path=exc.filename)
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc), EXIT_RUNTIME, epoch=exc.epoch, step=exc.step)
    except (ValueError, T.ShapeError) as exc:
        return _fail("invalid_input", str(exc), EXIT_INPUT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
