"""``eadnet`` command line: summarize, analyze, rf-report, infer, train, gradcheck.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 verification
failure (including a training run whose loss stops being finite).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import footprint, gradcheck
from .cost import analyze_graph, receptive_field_report
from .graph import GraphError
from .netpbm import NetpbmError, default_palette, load_ppm, read_palette, write_pgm, write_ppm
from .network import EadnetConfig, build_eadnet, default_schedule, eadnet_graph, load_model, predict, save_weights
from .serialize import WeightFormatError
from .synth import synth_dataset
from .train import TrainConfig, TrainingError, load_dataset_dir, train, write_loss_log

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return h, w


def _model_flags(p: argparse.ArgumentParser, classes: int = 19) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--classes", type=int, default=classes, help=f"number of output classes (default {classes})")
    g.add_argument("--channels", type=_ints, default=(16, 64, 128), metavar="C1,C2,C3")
    g.add_argument("--n1", type=int, default=6, help="MMRFC blocks at 1/4 resolution")
    g.add_argument("--n2", type=int, default=9, help="MMRFC blocks at 1/8 resolution")
    g.add_argument("--dr2", type=_ints, default=None, metavar="D,...", help="stage-2 dilation rates")
    g.add_argument("--dr3", type=_ints, default=None, metavar="D,...", help="stage-3 dilation rates")


def _config(args) -> EadnetConfig:
    if len(args.channels) != 3:
        raise UsageError(f"--channels needs three values, got {args.channels}")
    try:
        return EadnetConfig(
            num_classes=args.classes, stage_channels=args.channels, n1=args.n1, n2=args.n2,
            dr_schedule_stage2=args.dr2 if args.dr2 is not None else default_schedule(max(args.n1, 0), 2),
            dr_schedule_stage3=args.dr3 if args.dr3 is not None else default_schedule(max(args.n2, 0), 3),
        )
    except ValueError as exc:
        raise UsageError(f"invalid model configuration: {exc}") from None


def _need_file(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{flag}: no such file {path}")


def _need_parent(path, flag):
    if path is not None and not Path(path).resolve().parent.is_dir():
        raise FileNotFoundError(f"{flag}: directory {Path(path).resolve().parent} does not exist")


def _table(head, rows, out, left=1):
    widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(len(head))]
    fmt = "  ".join(("{:<%d}" if i < left else "{:>%d}") % w for i, w in enumerate(widths))
    for r in [head, *rows]:
        print(fmt.format(*map(str, r)).rstrip(), file=out)


def cmd_summarize(args, out) -> int:
    _need_parent(args.json, "--json")
    report = analyze_graph(eadnet_graph(_config(args)), args.input_size)
    rows = [(l.name, l.kind, "x".join(map(str, l.out_shape)), f"{l.params:,}", f"{l.params_aux:,}",
             f"{l.flops / 1e9:.4f}") for l in report.layers]
    _table(("layer", "kind", "out CxHxW", "params", "bn+prelu", "GFLOPs"), rows, out, left=3)
    h, w = args.input_size
    print(f"total  params {report.total_params:,} ({report.total_params / 1e6:.3f}M)"
          f"  bn+prelu {report.total_params_aux:,}"
          f"  FLOPs {report.total_flops:,} ({report.total_flops / 1e9:.2f}G) at {h}x{w}", file=out)
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_analyze(args, out) -> int:
    _need_parent(args.output, "--output")
    text = analyze_graph(eadnet_graph(_config(args)), args.input_size).to_json() + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return EXIT_OK


def cmd_rf_report(args, out) -> int:
    spec = eadnet_graph(_config(args))
    rows = receptive_field_report(spec)
    table = []
    for r in rows:
        table.append((r.name, r.kind, f"{r.rf[0]}x{r.rf[1]}", f"{r.jump[0]}x{r.jump[1]}", ""))
        for b in r.branches:
            table.append((f"  b{b.index}", f"d=({b.dilation[0]},{b.dilation[1]})",
                          f"{b.feature[0]}x{b.feature[1]}", "", f"({b.image[0]}, {b.image[1]})"))
    _table(("layer", "kind", "rf (HxW px)", "jump", "branch span in px"), table, out, left=2)
    if not args.verify:
        return EXIT_OK

    ok = True
    print("\nimpulse footprints of MMRFC branches (feature level)", file=out)
    dilations = sorted({l["dilation"] for l in spec if l.kind == "mmrfc"})
    for c in footprint.verify_branches(dilations):
        ok &= c.ok
        verdict = "analytic == empirical" if c.ok else "MISMATCH"
        print(f"  dr={c.dilation} b{c.index}: analytic {c.analytic} empirical {c.empirical}  {verdict}", file=out)
    print("\ndependency boxes of layer outputs (input pixels)", file=out)
    for c in footprint.verify_layers(spec, max_side=args.max_side):
        ok &= c.ok
        if c.empirical is None:
            print(f"  {c.name}: analytic {c.analytic}  skipped (needs input above {args.max_side}px)", file=out)
        else:
            verdict = "analytic == empirical" if c.ok else "MISMATCH"
            print(f"  {c.name}: analytic {c.analytic} empirical {c.empirical}  {verdict}", file=out)
    print("\nbranch spans through the network (image span + stem footprint - 1)", file=out)
    for c in footprint.verify_branch_spans(spec, max_side=args.max_side):
        ok &= c.ok
        if c.empirical is None:
            print(f"  {c.layer} b{c.index}: analytic {c.analytic}  skipped (needs input above {args.max_side}px)",
                  file=out)
        else:
            verdict = "analytic == empirical" if c.ok else "MISMATCH"
            print(f"  {c.layer} b{c.index}: analytic {c.analytic} empirical {c.empirical}  {verdict}", file=out)
    return EXIT_OK if ok else EXIT_VERIFY


def _pad_to(x: np.ndarray, multiple: int) -> np.ndarray:
    h, w = x.shape[2:]
    ph, pw = -h % multiple, -w % multiple
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")


def cmd_infer(args, out) -> int:
    _need_file(args.weights, "--weights")
    _need_file(args.input, "--input")
    if args.output is None:
        raise UsageError("--output is required")
    _need_parent(args.output, "--output")
    _need_parent(args.labels_out, "--labels-out")
    if args.palette is not None:
        _need_file(args.palette, "--palette")
    config = _config(args)
    palette = read_palette(args.palette) if args.palette else default_palette(config.num_classes)
    if len(palette) < config.num_classes:
        raise UsageError(f"palette has {len(palette)} colours for {config.num_classes} classes")
    model = load_model(args.weights, eadnet_graph(config))
    x = load_ppm(args.input)
    h, w = x.shape[2:]
    if (h % model.downsample or w % model.downsample) and not args.pad:
        raise UsageError(f"input is {h}x{w}; height and width must be divisible by {model.downsample} "
                         "(pass --pad to pad and crop)")
    labels = predict(model, _pad_to(x, model.downsample))[0, :h, :w].astype(np.uint8)
    write_ppm(labels, args.output, palette)
    if args.labels_out:
        write_pgm(labels, args.labels_out)
    print(f"wrote {args.output} ({h}x{w})", file=out)
    return EXIT_OK


def cmd_train(args, out) -> int:
    if args.weights is None:
        raise UsageError("--weights (output path) is required")
    _need_parent(args.weights, "--weights")
    _need_parent(args.log, "--log")
    if args.data_dir is not None and not Path(args.data_dir).is_dir():
        raise FileNotFoundError(f"--data-dir: no such directory {args.data_dir}")
    config = _config(args)
    if args.data_dir is not None:
        samples = load_dataset_dir(args.data_dir)
        if not samples:
            raise FileNotFoundError(f"--data-dir: no .ppm/.pgm pairs in {args.data_dir}")
        top = max((int(s.labels[s.labels != 255].max(initial=0)) for s in samples), default=0)
        if top >= config.num_classes:
            raise UsageError(f"labels in {args.data_dir} reach class {top}; pass --classes {top + 1} or more")
    else:
        h, w = args.size
        try:
            samples = synth_dataset(args.data_seed, args.samples, (h, w), config.num_classes)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    model = build_eadnet(config, seed=args.seed)
    history = train(model, samples, TrainConfig(iters=args.iters, base_lr=args.base_lr, batch=args.batch,
                                                seed=args.seed))
    save_weights(model.store, args.weights)
    if args.log:
        write_loss_log(history, args.log)
    if history:
        print(f"iters {len(history)}  loss {history[0].loss:.4f} -> {history[-1].loss:.4f}", file=out)
    print(f"wrote {args.weights}", file=out)
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    ops = args.op or list(gradcheck.CASES)
    unknown = [o for o in ops if o not in gradcheck.CASES]
    if unknown:
        raise UsageError(f"unknown op {unknown[0]!r}; choose from {', '.join(gradcheck.CASES)}")
    if args.instances < 1:
        raise UsageError("--instances must be positive")
    failed = []
    for op in ops:
        r = gradcheck.check_op(op, args.instances, args.seed, corrupt=(op == args.corrupt))
        status = "ok" if r.passed else "FAIL"
        print(f"{op:<18} max rel error {r.max_rel_error:.3e}  ({r.instances} instances, "
              f"{r.checked} coords, {r.skipped} at kinks)  {status}", file=out)
        if not r.passed:
            failed.append(op)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=out)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eadnet", description="Lightweight segmentation network: cost model, receptive fields, "
                                           "toy training and inference.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("summarize", help="per-layer parameter and FLOP table")
    _model_flags(s)
    s.add_argument("--input-size", type=_size, default=(1024, 2048), metavar="HxW")
    s.add_argument("--json", metavar="PATH", help="also write the cost report as JSON")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("analyze", help="cost report as JSON")
    _model_flags(s)
    s.add_argument("--input-size", type=_size, default=(1024, 2048), metavar="HxW")
    s.add_argument("--output", metavar="PATH", help="write to a file instead of stdout")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("rf-report", help="receptive fields per layer and per MMRFC branch")
    _model_flags(s)
    s.add_argument("--verify", action="store_true", help="check against empirical impulse footprints")
    s.add_argument("--max-side", type=int, default=512, help="largest probe input side for --verify")
    s.set_defaults(func=cmd_rf_report)

    s = sub.add_parser("infer", help="segment a PPM image")
    _model_flags(s)
    s.add_argument("--weights", metavar="PATH")
    s.add_argument("--input", metavar="PPM")
    s.add_argument("--output", metavar="PPM", help="colourised prediction")
    s.add_argument("--labels-out", metavar="PGM", help="raw class indices")
    s.add_argument("--palette", metavar="PATH", help="'<class> <r> <g> <b>' lines")
    s.add_argument("--pad", action="store_true", help="edge-pad to a multiple of 8 and crop the result")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("train", help="train on a PPM/PGM directory or synthetic scenes")
    _model_flags(s, classes=4)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--base-lr", type=float, default=5e-4)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--data-dir", metavar="DIR", help="<stem>.ppm / <stem>.pgm pairs; synthetic data if omitted")
    s.add_argument("--samples", type=int, default=200, help="synthetic training scenes")
    s.add_argument("--data-seed", type=int, default=42, help="seed of the synthetic scenes")
    s.add_argument("--size", type=_size, default=(64, 64), metavar="HxW", help="synthetic scene size")
    s.add_argument("--weights", metavar="PATH", help="where to save the trained weights")
    s.add_argument("--log", metavar="CSV", help="loss log (iter,lr,loss)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--op", action="append", help="op to check (repeatable; default all)")
    s.add_argument("--instances", type=int, default=gradcheck.DEFAULT_INSTANCES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--corrupt", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    err = sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"eadnet {args.command}: {exc}", file=err)
        return EXIT_USAGE
    except (OSError, NetpbmError, WeightFormatError) as exc:
        print(f"eadnet {args.command}: {exc}", file=err)
        return EXIT_IO
    except GraphError as exc:
        print(f"eadnet {args.command}: {exc}", file=err)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"eadnet {args.command}: {exc}", file=err)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
