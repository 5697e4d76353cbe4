"""Command-line interface.

Every subcommand is a thin wrapper around a library call. Results go to
stdout as one JSON object per line; failures print a single
``error: <kind>: <message>`` line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import MemDeblurError, UsageError

EXIT_ERROR = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"error: usage: {message}\n")


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return vals


def _pair(text: str, sep: str) -> tuple[int, int]:
    parts = text.lower().split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two integers separated by {sep!r}, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two integers separated by {sep!r}, got {text!r}")


def _configure_threads() -> None:
    value = os.environ.get("MEMDEBLUR_THREADS")
    if value:
        import torch

        try:
            torch.set_num_threads(max(1, int(value)))
        except ValueError:
            raise UsageError(f"MEMDEBLUR_THREADS must be an integer, got {value!r}")


# --------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> None:
    from .config import ModelConfig, TrainConfig, load_config
    from .io import load_checkpoint, load_dataset
    from .plotting import plot_training_curve
    from .training import init_train_state, train_loop

    dataset = load_dataset(args.data_dir)
    val = load_dataset(args.val_dir)[0] if args.val_dir else None
    if args.resume:
        state = load_checkpoint(args.resume)
    else:
        model_cfg, train_cfg = load_config(args.config) if args.config else (ModelConfig.toy(), TrainConfig.toy())
        state = init_train_state(model_cfg, train_cfg, args.seed)
    out = Path(args.out_dir)
    train_loop(dataset, state, out_dir=out, val=val, epochs=args.epochs,
               checkpoint_every=args.checkpoint_every, on_epoch=lambda _s, rec: _emit(rec))
    if args.plot and state.metrics:
        plot_training_curve(out / "metrics.jsonl", out / "training_curve.png")
    _emit({"checkpoint": str(out / "checkpoint_last.mdck"), "epoch": state.epoch, "step": state.step})


def cmd_deblur(args) -> None:
    from .io import load_model, load_sequence, save_sequence, save_trace
    from .pipeline import restore_sequence

    model = load_model(args.checkpoint)
    overrides = {k: v for k, v in (("scales", args.scales), ("capacity", args.capacity),
                                   ("periods", args.periods)) if v is not None}
    if overrides:
        model.config = model.config.replace(**overrides)
    frames = load_sequence(args.input_dir)
    result = restore_sequence(model, frames, trace=bool(args.attention_trace))
    save_sequence(result.restored[0].clamp(0, 1), args.output_dir)
    if args.attention_trace:
        save_trace(result, args.attention_trace)
    _emit({"frames": len(frames), "output_dir": str(args.output_dir),
           "attention_trace": args.attention_trace, "config": model.config.to_dict()})


def cmd_eval(args) -> None:
    from .evaluation.metrics import evaluate_sequence
    from .io import load_sequence

    if len(args.dirs) % 2:
        raise UsageError("eval expects RESTORED SHARP directory pairs")
    pairs = list(zip(args.dirs[::2], args.dirs[1::2]))
    reports = []
    for restored_dir, sharp_dir in pairs:
        report = evaluate_sequence(load_sequence(restored_dir), load_sequence(sharp_dir))
        reports.append(report)
        for rec in report.records():
            _emit(dict(rec, restored=str(restored_dir), sharp=str(sharp_dir),
                       psnr_db=_finite(rec["psnr_db"])))
        _emit(dict(report.summary(), restored=str(restored_dir), sharp=str(sharp_dir), kind="sequence"))
    total = sum(len(r.per_frame_psnr) for r in reports)
    _emit({"kind": "summary", "sequences": len(reports), "frames": total,
           "psnr_db": float(np.average([r.psnr_db for r in reports], weights=[len(r.per_frame_psnr) for r in reports])),
           "ssim": float(np.average([r.ssim for r in reports], weights=[len(r.per_frame_ssim) for r in reports]))})
    if args.plot:
        from .plotting import plot_metrics

        plot_metrics(reports[0], args.plot)


def _finite(v: float):
    # JSON has no infinity; identical frames are reported as the string "inf"
    return "inf" if math.isinf(v) else v


def cmd_visualize(args) -> None:
    from .evaluation.visualize import attention_heatmap, select_trace
    from .io import load_trace

    traces, frames = load_trace(args.trace)
    trace = select_trace(traces, args.frame, args.scale, args.bank)
    heat = attention_heatmap(trace, args.location, args.out, frames=frames)
    _emit({"query_cell": list(heat.query_cell), "argmax": list(heat.argmax),
           "heatmaps": [str(p) for p in heat.paths],
           "composite": str(heat.composite) if heat.composite else None})


def cmd_profile(args) -> None:
    from .config import ModelConfig, load_config
    from .evaluation.compute import count_macs

    if args.config:
        model_cfg, _ = load_config(args.config)
    else:
        model_cfg = getattr(ModelConfig, args.preset)()
    overrides = {k: v for k, v in (("scales", args.scales), ("capacity", args.capacity),
                                   ("periods", args.periods)) if v is not None}
    if overrides:
        model_cfg = model_cfg.replace(**overrides)
    profile = count_macs(model_cfg, args.dims, args.frames, time_run=args.time)
    _emit(profile.to_dict())
    if args.plot:
        from .plotting import plot_compute_profile

        plot_compute_profile(profile, args.plot)


def cmd_synth(args) -> None:
    from .io import make_sharp_sequence, save_sequence, synthesize_dataset

    if args.generate:
        frames = make_sharp_sequence(args.generate, args.height, args.width, args.seed, args.max_speed)
        save_sequence(frames, args.sharp_dir)
    blurry, sharp = synthesize_dataset(args.sharp_dir, args.out_dir, args.window)
    _emit({"blurry": str(blurry), "sharp": str(sharp), "window": args.window,
           "frames": len(list(Path(blurry).glob("frame_*.png")))})


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="memdeblur", description="Multi-scale memory-bank video deblurring.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train on paired blurry/ sharp/ directories")
    t.add_argument("data_dir")
    t.add_argument("out_dir")
    t.add_argument("--config", help="JSON config with preset/model/train sections")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, help="stop after this many more epochs")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--val-dir", help="held-out paired directory scored each eval_every epochs")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--plot", action="store_true", help="write training_curve.png")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("deblur", help="restore a frame directory")
    d.add_argument("checkpoint")
    d.add_argument("input_dir")
    d.add_argument("output_dir")
    d.add_argument("--scales", type=int, choices=(1, 2, 3))
    d.add_argument("--capacity", type=int)
    d.add_argument("--periods", type=_int_list, help="comma list, e.g. 5,2,1")
    d.add_argument("--attention-trace", help="write attention traces to this file")
    d.set_defaults(func=cmd_deblur)

    e = sub.add_parser("eval", help="PSNR/SSIM of restored vs sharp directories")
    e.add_argument("dirs", nargs="+", metavar="RESTORED SHARP")
    e.add_argument("--plot", help="per-frame metrics figure for the first pair")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("visualize", help="attention heatmaps from a trace file")
    v.add_argument("trace")
    v.add_argument("--frame", type=int, required=True, help="1-based query frame index")
    v.add_argument("--scale", type=int, default=1)
    v.add_argument("--location", type=lambda s: _pair(s, ","), required=True, help="y,x in pixels")
    v.add_argument("--bank", choices=("forward", "backward"), default="forward")
    v.add_argument("--out", required=True, help="output PNG path; per-entry maps are written beside it")
    v.set_defaults(func=cmd_visualize)

    pr = sub.add_parser("profile", help="analytic MAC count")
    src = pr.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--preset", choices=("toy", "full"), default="toy")
    pr.add_argument("--dims", type=lambda s: _pair(s, "x"), default=(720, 1280), help="HxW")
    pr.add_argument("--frames", type=int, default=100)
    pr.add_argument("--scales", type=int, choices=(1, 2, 3))
    pr.add_argument("--capacity", type=int)
    pr.add_argument("--periods", type=_int_list)
    pr.add_argument("--time", action="store_true", help="also time one real CPU run")
    pr.add_argument("--plot", help="write a breakdown bar chart")
    pr.set_defaults(func=cmd_profile)

    s = sub.add_parser("synth", help="build a paired dataset by temporal averaging")
    s.add_argument("sharp_dir")
    s.add_argument("out_dir")
    s.add_argument("--window", type=int, default=7)
    s.add_argument("--generate", type=int, metavar="N", help="first write N procedural sharp frames")
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-speed", type=float, default=3.0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _configure_threads()
        args.func(args)
    except MemDeblurError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, UsageError) else EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
