"""``dyadit`` command line: make-synthetic, train-tokenizer, train-dit, generate, evaluate.

Exit codes: 0 success, 2 bad configuration or conditioning, 3 missing or
unreadable inputs, 4 numerical divergence during training.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import __version__
from .errors import ConfigError, Divergence, FormatError, IoError
from .plotting import plot_losses, report_figures
from . import pipeline

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3, 4


def _echo(name: str, payload: dict):
    print(json.dumps({"command": name, "version": __version__, "config": payload}, sort_keys=True),
          file=sys.stderr)


def _progress(entry: dict):
    print(json.dumps(entry, sort_keys=True), file=sys.stderr, flush=True)


def _resolved(args, section: str) -> dict:
    doc = pipeline.resolve_config(args.config, args.override or (), default_section=section)
    return pipeline.build(doc)


def cmd_make_synthetic(args) -> int:
    overrides = list(args.override or ())
    if args.seed is not None:
        overrides.append(f"synthetic.seed={args.seed}")
    cfg = pipeline.build(pipeline.resolve_config(args.config, overrides, "synthetic"))["synthetic"]
    _echo("make-synthetic", {"synthetic": cfg.to_dict(), "out": args.out})
    pipeline.make_synthetic(cfg, args.out)
    return EXIT_OK


def cmd_train_tokenizer(args) -> int:
    cfg = _resolved(args, "tokenizer")["tokenizer"]
    _echo("train-tokenizer", {"tokenizer": asdict(cfg), "seed": args.seed, "data": args.data, "out": args.out})
    _, history = pipeline.run_train_tokenizer(args.data, cfg, args.seed, args.out, log=_progress)
    plot_losses(history, Path(args.out) / "losses.png", "epoch", ("recon", "commit"), "tokenizer")
    return EXIT_OK


def cmd_train_dit(args) -> int:
    cfgs = _resolved(args, "train")
    _echo("train-dit", {"model": asdict(cfgs["model"]), "train": asdict(cfgs["train"]), "seed": args.seed,
                        "data": args.data, "tokenizer": args.tokenizer, "out": args.out})
    _, history = pipeline.run_train_dit(args.data, args.tokenizer, cfgs["model"], cfgs["train"], args.seed,
                                        args.out, log=_progress)
    plot_losses(history, Path(args.out) / "losses.png", "step", ("loss",), "noise prediction")
    return EXIT_OK


def _parse_personality(text):
    if text is None:
        return None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"personality must be 5 comma-separated numbers, got {text!r}") from None
    if len(values) != 5:
        raise ConfigError(f"personality must have 5 values, got {len(values)}")
    return values


def cmd_generate(args) -> int:
    overrides = list(args.override or ())
    if args.cfg is not None:
        overrides.append(f"sampler.cfg_scale={args.cfg}")
    if args.steps is not None:
        overrides.append(f"sampler.steps={args.steps}")
    sampler = pipeline.build(pipeline.resolve_config(args.config, overrides, "sampler"))["sampler"]
    clips = [int(c) for c in args.clips.split(",")] if args.clips else None
    request = pipeline.GenerationRequest(
        sampler=sampler,
        noise_seed=args.noise_seed,
        clips=clips,
        partner=not args.no_partner,
        style=not args.no_style,
        relationship=args.relationship,
        personality=_parse_personality(args.personality),
        quantize=not args.continuous,
    )
    request.conditioning_overrides()
    _echo("generate", {"request": asdict(request), "data": args.data, "tokenizer": args.tokenizer,
                       "model": args.model, "out": args.out})
    pipeline.run_generate(args.data, args.tokenizer, args.model, request, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _echo("evaluate", {"generated": args.generated, "reference": args.reference, "out": args.out})
    report, gen, ref = pipeline.run_evaluate(args.generated, args.reference)
    text = report.to_json()
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n")
        if not args.no_figures:
            report_figures(gen, ref, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dyadit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seed_default=0):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--version", action="version", version=f"dyadit {__version__}")
        p.add_argument("--config", help="JSON config file (sections: " + ", ".join(pipeline.SECTIONS) + ")")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted-key override, repeatable; bare keys target the command's main section")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", required=name != "evaluate")
        p.set_defaults(func=func)
        return p

    add("make-synthetic", cmd_make_synthetic, "write a synthetic dyadic dataset", seed_default=None)
    p = add("train-tokenizer", cmd_train_tokenizer, "train the residual VQ motion tokenizer")
    p.add_argument("--data", required=True)
    p = add("train-dit", cmd_train_dit, "train the conditional diffusion transformer")
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p = add("generate", cmd_generate, "sample gestures for dataset clips")
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--cfg", type=float, help="guidance scale (default 2.0)")
    p.add_argument("--steps", type=int, help="DDIM steps (default 50)")
    p.add_argument("--noise-seed", type=int, default=0, help="clip k uses noise seed NOISE_SEED + k")
    p.add_argument("--clips", help="comma-separated dataset clip indices (default: all)")
    p.add_argument("--no-style", action="store_true")
    p.add_argument("--no-partner", action="store_true")
    p.add_argument("--relationship", type=int, help="relationship class index 0..3")
    p.add_argument("--personality", help="five comma-separated trait scores")
    p.add_argument("--continuous", action="store_true", help="decode latents without re-quantizing")
    p = add("evaluate", cmd_evaluate, "compute the metric report")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--no-figures", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("DYADIT_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        return args.func(args)
    except Divergence as exc:
        print(f"error: training diverged at step {exc.step} (loss {exc.loss})", file=sys.stderr)
        return EXIT_DIVERGED
    except (IoError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
