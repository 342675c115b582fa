"""Command-line entry point: ``inkseg <subcommand> ...``.

Every run writes its resolved options as JSON next to its main output
(``<output>.run.json`` for files, ``run.json`` inside output directories).
A ``--config`` JSON file, keyed by option name, overrides the flags.
Failures print one ``error: <kind>: <message>`` line to stderr and remove
anything the run had started to write.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InkSegError, UsageError
from .formats import atomic_write, read_corpus, write_corpus

log = logging.getLogger("inkseg")

SAMPLE_CORPUS = "@sample"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _corpus_path(value: str):
    if value == SAMPLE_CORPUS:
        return resources.files("inkseg") / "data" / "sample.jsonl"
    return Path(value)


def _load(value: str):
    path = _corpus_path(value)
    if not path.is_file():
        raise UsageError(f"no such corpus file: {value}")
    return read_corpus(path)


def _dump_json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1) + "\n"


class Outputs:
    """Tracks what a run creates so a failure can take it back."""

    def __init__(self):
        self.paths: list[Path] = []

    def file(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            self.paths.append(path)
        return path

    def directory(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            self.paths.append(path)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def rollback(self):
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _run_config(args) -> dict:
    skip = {"func", "config", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_run_config(outputs: Outputs, args, where: Path):
    target = where / "run.json" if where.is_dir() else where.with_name(where.name + ".run.json")
    atomic_write(outputs.file(target), _dump_json(_run_config(args)))


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, out: Outputs):
    from .synth import SynthConfig, generate, preset

    if args.synth_config:
        cfg = SynthConfig.from_dict(json.loads(Path(args.synth_config).read_text(encoding="utf-8")))
        cfg = cfg.replace(seed=args.seed)
    else:
        cfg = preset(args.preset, seed=args.seed)
    changes = {k: getattr(args, k) for k in ("delayed_stroke_rate", "cursive_join_rate", "spike_jitter",
                                             "spike_drop") if getattr(args, k) is not None}
    if args.no_spikes:
        changes["with_spikes"] = False
    cfg = cfg.replace(**changes)
    samples = generate(cfg, args.n, jobs=args.jobs)
    write_corpus(out.file(args.out), samples)
    args.resolved_synth_config = cfg.to_dict()
    _write_run_config(out, args, Path(args.out))
    log.info("wrote %d samples to %s", len(samples), args.out)


def _approx_one(item):
    sample, noise, seed = item
    from .groundtruth import SyntheticScorer, approximate_truth
    return approximate_truth(sample, SyntheticScorer.for_sample(sample, noise, seed))


def cmd_gt_approx(args, out: Outputs):
    samples = _load(args.input)
    missing = [i for i, s in enumerate(samples) if s.truth is None]
    if missing:
        raise UsageError(f"the synthetic scorer needs generator labels; sample {missing[0]} has none")
    items = [(s, args.noise, args.seed + i) for i, s in enumerate(samples)]
    segs = _map(_approx_one, items, args.jobs)
    result = [s.replace(truth=seg) for s, seg in zip(samples, segs)]
    write_corpus(out.file(args.out), result)
    _write_run_config(out, args, Path(args.out))


def cmd_train(args, out: Outputs):
    from .training import TrainConfig, train

    tc = TrainConfig(peak_lr=args.peak_lr, warmup_steps=args.warmup, weight_decay=args.weight_decay,
                     label_smoothing=args.label_smoothing, ema_decay=args.ema_decay,
                     batch_size=args.batch_size, max_steps=args.steps, seed=args.seed,
                     eval_every=args.eval_every, log_every=args.log_every)
    overrides = {"hidden_dim": args.hidden_dim, "dropout": args.dropout, "heads": args.heads,
                 "use_spikes": not args.no_spikes}
    if args.model == "charquery":
        overrides.update(final_dim=args.final_dim or args.hidden_dim, encoder_layers=args.layers,
                         decoder_layers=args.decoder_layers or args.layers)
    else:
        overrides["layers"] = args.layers
    if args.model == "lstm":
        overrides.pop("heads")
    directory = out.directory(args.out)
    res = train(args.model, _load(args.train), tc, _load(args.val), out_dir=directory,
                model_overrides=overrides)
    args.resolved_train_config = tc.to_dict()
    args.resolved_model_config = res.model.cfg.to_dict()
    _write_run_config(out, args, directory)
    log.info("best validation mIoU %.4f at step %d", res.best_miou, res.best_step)


def _kmeans_one(item):
    from .kmeans import kmeans_segment
    sample, cfg = item
    return kmeans_segment(sample, cfg)


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [fn(i) for i in items]


def _kmeans_config(args):
    from .kmeans import KMeansConfig
    return KMeansConfig(init=args.init, seed=args.seed, max_iters=args.max_iters)


def cmd_segment(args, out: Outputs):
    samples = _load(args.input)
    if args.method == "kmeans":
        cfg = _kmeans_config(args)
        preds = _map(_kmeans_one, [(s, cfg) for s in samples], args.jobs)
    else:
        from .models import load_model, model_kind, segment_with_model
        if not args.checkpoint:
            raise UsageError(f"--checkpoint is required for method {args.method}")
        model, vocab, _ = load_model(args.checkpoint)
        if model_kind(model) != args.method:
            raise UsageError(f"checkpoint holds a {model_kind(model)} model, not {args.method}")
        preds = segment_with_model(model, vocab, samples, args.batch_size)
    write_corpus(out.file(args.out), [s.replace(pred=p) for s, p in zip(samples, preds)])
    _write_run_config(out, args, Path(args.out))


def cmd_eval(args, out: Outputs):
    from .evaluation import evaluate

    samples = _load(args.input)
    svg_dir = out.directory(args.svg_dir) if args.svg_dir else None
    report = evaluate(samples, svg_dir=svg_dir)
    atomic_write(out.file(args.out), report.to_json() + "\n")
    if args.csv:
        atomic_write(out.file(args.csv), report.to_csv())
    _write_run_config(out, args, Path(args.out))
    print(f"corpus mIoU {report.corpus_miou:.4f} over {len(report.per_sample_miou)} samples "
          f"({report.skipped} skipped)", file=sys.stderr)


def cmd_ablate(args, out: Outputs):
    from .evaluation import ablate_kmeans, ablate_models

    samples = _load(args.input)
    if args.method == "kmeans":
        from dataclasses import replace
        report = ablate_kmeans(samples, replace(_kmeans_config(args), init="random"))
    else:
        from .models import load_model
        if not (args.with_checkpoint and args.without_checkpoint):
            raise UsageError("--with-checkpoint and --without-checkpoint are required")
        a = load_model(args.with_checkpoint)
        b = load_model(args.without_checkpoint)
        report = ablate_models(samples, a[:2], b[:2], args.batch_size)
    atomic_write(out.file(args.out), report.to_json() + "\n")
    _write_run_config(out, args, Path(args.out))
    s = report.summary()
    print(f"{s['method']}: with spikes {s['with_spikes']:.4f}, without {s['without_spikes']:.4f}",
          file=sys.stderr)


def cmd_render(args, out: Outputs):
    from .render import render_svg

    samples = _load(args.input)
    directory = out.directory(args.out)
    for i, s in enumerate(samples):
        seg = s.pred if args.which == "pred" else s.truth
        if seg is None:
            seg = np.full(s.num_points, -1, dtype=np.int64)
        atomic_write(directory / f"{i:06d}.svg", render_svg(s.ink, seg, width=args.width))
    _write_run_config(out, args, directory)


def cmd_pe_diag(args, out: Outputs):
    from .models.charquery import pe_diagnostic, pe_diagnostic_csv

    model = None
    if args.checkpoint:
        from .models import load_model, model_kind
        model, _, _ = load_model(args.checkpoint)
        if model_kind(model) != "charquery":
            raise UsageError("pe-diag needs a character query checkpoint")
    elif not args.dim:
        raise UsageError("give --checkpoint or --dim")
    rows = pe_diagnostic(model, args.max_pos, args.dim)
    atomic_write(out.file(args.out), pe_diagnostic_csv(rows))
    _write_run_config(out, args, Path(args.out))


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="single source of randomness")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-sample work")
    common.add_argument("--config", help="JSON file of option values; overrides flags")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="inkseg", description="Segment online handwriting into characters.")
    p.add_argument("--version", action="version", version=f"inkseg {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled corpus")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preset", default="default", help="default, monotone, block or delayed")
    s.add_argument("--synth-config", help="SynthConfig JSON file (replaces --preset)")
    s.add_argument("--delayed-stroke-rate", type=float)
    s.add_argument("--cursive-join-rate", type=float)
    s.add_argument("--spike-jitter", type=int)
    s.add_argument("--spike-drop", type=float)
    s.add_argument("--no-spikes", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gt-approx", parents=[common],
                       help="replace truth with the first-character splitting approximation")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--noise", type=float, default=0.0, help="std of synthetic scorer noise")
    s.set_defaults(func=cmd_gt_approx)

    s = sub.add_parser("train", parents=[common], help="train a neural segmenter")
    s.add_argument("--model", choices=["lstm", "transformer", "charquery"], required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--val", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--steps", type=int, default=20000)
    s.add_argument("--warmup", type=int, default=4000)
    s.add_argument("--peak-lr", type=float)
    s.add_argument("--weight-decay", type=float, default=1e-4)
    s.add_argument("--label-smoothing", type=float, default=0.1)
    s.add_argument("--ema-decay", type=float, default=0.999)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--eval-every", type=int, default=500)
    s.add_argument("--log-every", type=int, default=50)
    s.add_argument("--hidden-dim", type=int, default=256)
    s.add_argument("--final-dim", type=int)
    s.add_argument("--layers", type=int, default=3)
    s.add_argument("--decoder-layers", type=int)
    s.add_argument("--heads", type=int, default=8)
    s.add_argument("--dropout", type=float, default=0.2)
    s.add_argument("--no-spikes", action="store_true", help="ignore spike features")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", parents=[common], help="predict segmentations")
    s.add_argument("--method", choices=["kmeans", "lstm", "transformer", "charquery"], required=True)
    s.add_argument("--in", dest="input", required=True, help=f"corpus file, or {SAMPLE_CORPUS}")
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--init", choices=["random", "ctc_spikes"], default="random")
    s.add_argument("--max-iters", type=int, default=300)
    s.add_argument("--batch-size", type=int, default=32)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", parents=[common], help="score predictions against truth")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="JSON report")
    s.add_argument("--csv")
    s.add_argument("--svg-dir")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate-ctc", parents=[common], help="compare with and without spikes")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=["kmeans", "model"], default="model")
    s.add_argument("--with-checkpoint")
    s.add_argument("--without-checkpoint")
    s.add_argument("--max-iters", type=int, default=300)
    s.add_argument("--init", default="random", help=argparse.SUPPRESS)
    s.add_argument("--batch-size", type=int, default=32)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("render", parents=[common], help="write one SVG per sample")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--which", choices=["pred", "truth"], default="pred")
    s.add_argument("--width", type=float, default=800)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("pe-diag", parents=[common], help="positional-encoding diagnostic CSV")
    s.add_argument("--checkpoint")
    s.add_argument("--dim", type=int)
    s.add_argument("--max-pos", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pe_diag)
    return p


def _apply_config(args, parser):
    if not args.config:
        return args
    try:
        values = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"no such config file: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {args.config}: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("config file must hold a JSON object")
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest.startswith("resolved_") or (dest == "command" and value == args.command):
            continue  # written by a previous run; recomputed here
        if dest in ("func", "command") or not hasattr(args, dest):
            raise UsageError(f"unknown option in config: {key}")
        setattr(args, dest, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    out = Outputs()
    try:
        args = _apply_config(parser.parse_args(argv), parser)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args, out)
    except InkSegError as exc:
        out.rollback()
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    except (OSError, json.JSONDecodeError) as exc:
        out.rollback()
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        out.rollback()
        print("error: interrupted: stopped by user", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
