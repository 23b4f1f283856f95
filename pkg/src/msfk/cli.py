"""Batch command-line pipeline.

Subcommands:
  sample-split   deterministic k-instance support-set sampling
  infer          run a detection head on tensor fixtures
  pseudo-label   adaptive pseudo-labeling and annotation merging
  eval           COCO-style evaluation report and table
  gradcheck      finite-difference verification of analytic gradients

Exit codes: 0 success, 1 usage, 2 I/O, 3 data integrity, 4 numeric check
failure. All output files are deterministic for fixed flags; floats are
serialized with 6 decimals. MSFK_THREADS caps per-image worker threads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import datasets, fusion, gradcheck, jsonio
from .evaluation import EvalConfig, evaluate
from .kernel import ShapeError
from .pseudolabel import PseudoLabelConfig, label_dataset
from .tensorio import FixtureFormatError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(EXIT_USAGE)


def worker_count() -> int:
    """Default worker threads, optionally capped by MSFK_THREADS."""
    workers = os.cpu_count() or 1
    cap = os.environ.get("MSFK_THREADS")
    if cap:
        try:
            workers = max(1, min(workers, int(cap)))
        except ValueError:
            raise ValueError(f"MSFK_THREADS must be an integer, got {cap!r}")
    return workers


def cmd_sample_split(args) -> int:
    ds = datasets.load_coco(args.dataset)
    split = datasets.sample_few_shot(ds, k=args.k, seed=args.seed)
    subset = datasets.subset_by_images(ds, split.image_ids)
    datasets.save_coco(subset, args.out)
    manifest = args.manifest or f"{args.out}.manifest.json"
    datasets.save_split(split, manifest)
    return EXIT_OK


def cmd_infer(args) -> int:
    rgb = fusion.load_modality_features(args.features_rgb, fusion.RGB)
    ir = fusion.load_modality_features(args.features_ir, fusion.IR)
    text = fusion.load_text_embeddings(args.text)
    weights = fusion.load_head_weights(args.weights)
    forward = fusion.forward_msgdino if args.head == "msgdino" else fusion.forward_msyolow
    detections = forward(
        rgb, ir, text, weights,
        image_id=args.image_id,
        image_size=(args.image_width, args.image_height),
    )
    datasets.save_detections(detections, args.out)
    return EXIT_OK


def cmd_pseudo_label(args) -> int:
    ds = datasets.load_coco(args.dataset)
    detections = datasets.load_detections(args.detections)
    cfg = PseudoLabelConfig(
        tau_floor=args.tau_floor,
        delta=args.delta,
        nms_iou=args.nms_iou,
        top_n_stats=args.top_n_stats,
        std_mode=args.std_mode,
    )
    merged, stats = label_dataset(ds, detections, cfg, workers=worker_count())
    datasets.save_coco(merged, args.out)
    jsonio.write_csv(
        args.stats,
        ["image_id", "count", "median", "p75", "tau"],
        [[s.image_id, s.count, s.median, s.p75, s.tau] for s in stats],
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = datasets.load_coco(args.dataset)
    detections = datasets.load_detections(args.detections)
    report = evaluate(ds, detections, EvalConfig())
    jsonio.dump_json(report.to_json_dict(), args.out)
    table = report.format_table()
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8", newline="\n")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_checks(seed=args.seed, inject_fault=args.inject_fault)
    width = max(len(r.name) for r in results)
    print(f"{'operator'.ljust(width)}  max_rel_error  status")
    for r in results:
        status = "ok" if r.passed() else "FAIL"
        print(f"{r.name.ljust(width)}  {r.max_rel_error:13.3e}  {status}")
    if not gradcheck.all_pass(results):
        print(f"gradient check failed (tolerance {gradcheck.TOLERANCE:g})", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msfk", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-split", help="sample a deterministic k-instance support set")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="filtered COCO JSON")
    p.add_argument("--manifest", default=None, help="default: <out>.manifest.json")
    p.set_defaults(func=cmd_sample_split)

    p = sub.add_parser("infer", help="run a detection head on tensor fixtures")
    p.add_argument("--features-rgb", required=True)
    p.add_argument("--features-ir", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--head", choices=("msgdino", "msyolow"), required=True)
    p.add_argument("--out", required=True, help="COCO results JSON")
    p.add_argument("--image-id", type=int, default=1)
    p.add_argument("--image-width", type=int, default=640)
    p.add_argument("--image-height", type=int, default=512)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("pseudo-label", help="pseudo-label a dataset from detection results")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--tau-floor", type=float, default=0.35)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--top-n-stats", type=int, default=50)
    p.add_argument("--std-mode", choices=("population", "sample"), default="population")
    p.add_argument("--out", required=True, help="merged COCO JSON")
    p.add_argument("--stats", required=True, help="per-image stats CSV")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("eval", help="evaluate detection results against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--table", default=None, help="also write the text table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true",
                   help="corrupt one analytic gradient (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return int(exc.code)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"msfk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IsADirectoryError as exc:
        print(f"msfk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PermissionError as exc:
        print(f"msfk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (datasets.ParseError, datasets.IntegrityError, FixtureFormatError,
            ShapeError, KeyError, ValueError) as exc:
        print(f"msfk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"msfk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
