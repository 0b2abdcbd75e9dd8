"""Batch command-line front end.

Subcommands: fuse, eval, compare, gradcheck, validate (and a hidden
gen-fixture that builds the seeded synthetic benchmark). Exit codes:
0 success, 1 failed checks (gradcheck), 2 usage, 3 invalid manifest,
4 missing data, 5 internal error. Every failure writes a single
"error: ..." line to stderr. Identical inputs, flags, and seeds produce
byte-identical outputs regardless of --threads.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .core import STRATEGIES, STRATEGY_CONFIDENCE_GUIDED, FusionConfig, ObjectSet
from .fusion import FrameFusionError, fuse_sequence
from .io import FormatError, load_manifest, validate_manifest
from .losses import GRADCHECK_TOLERANCE, run_gradient_checks
from .metrics import (
    EvalSummary,
    combine_summaries,
    evaluate_sequence,
    records_to_csv,
    round_half_up,
)

__all__ = ["main", "entry_point", "build_parser"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MANIFEST = 3
EXIT_MISSING_DATA = 4
EXIT_INTERNAL = 5

THREADS_ENV_VAR = "FUSEVOS_THREADS"

_STRATEGY_ALIASES = {"confidence": STRATEGY_CONFIDENCE_GUIDED}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    """One resolved batch run: what to fuse, how, and where outputs go."""

    manifest_path: Path
    strategy: str
    tau: "float | None"
    weights: "tuple[float, ...] | None"
    tolerance: "int | None"
    output_dir: Path
    threads: int

    def fusion_config(self, strategy: "str | None" = None) -> FusionConfig:
        return FusionConfig(
            strategy=strategy if strategy is not None else self.strategy,
            tau=self.tau,
            model_weights=self.weights,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_weights(raw: "str | None") -> "tuple[float, ...] | None":
    if raw is None:
        return None
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise CliError(EXIT_USAGE, f"invalid --weights value: {raw!r}")


def _parse_threads(raw: "str | None") -> int:
    if raw is None:
        raw = os.environ.get(THREADS_ENV_VAR) or "1"
    if raw == "auto":
        return os.cpu_count() or 1
    try:
        threads = int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, f"invalid --threads value: {raw!r}")
    if threads < 1:
        raise CliError(EXIT_USAGE, "--threads must be at least 1")
    return threads


def _load_valid_manifest(path_str: str, check_files: bool = True):
    path = Path(path_str)
    if not path.is_file():
        raise CliError(EXIT_MANIFEST, f"manifest not found: {path}")
    try:
        manifest = load_manifest(path)
    except FormatError as exc:
        raise CliError(EXIT_MANIFEST, str(exc))
    schema = validate_manifest(manifest, check_files=False)
    if not schema.ok:
        raise CliError(EXIT_MANIFEST, f"invalid manifest: {'; '.join(schema.violations)}")
    if check_files:
        full = validate_manifest(manifest, check_files=True)
        file_problems = [v for v in full.violations if v not in schema.violations]
        if file_problems:
            raise CliError(EXIT_MISSING_DATA, f"missing data: {'; '.join(file_problems)}")
    return manifest


def _run_config(args, manifest) -> RunConfig:
    raw = getattr(args, "strategy", STRATEGY_CONFIDENCE_GUIDED)
    strategy = _STRATEGY_ALIASES.get(raw, raw)
    run = RunConfig(
        manifest_path=Path(args.manifest),
        strategy=strategy,
        tau=args.tau,
        weights=_parse_weights(args.weights),
        tolerance=getattr(args, "tolerance", None),
        output_dir=Path(args.out),
        threads=_parse_threads(args.threads),
    )
    try:
        run.fusion_config().resolve(len(manifest.models))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    return run


def _run_fusion(manifest, cfg, out_dir, threads):
    try:
        return fuse_sequence(manifest, cfg, out_dir, threads=threads)
    except FrameFusionError as exc:
        if isinstance(exc.cause, (FileNotFoundError, FormatError)):
            raise CliError(EXIT_MISSING_DATA, str(exc))
        raise CliError(EXIT_INTERNAL, str(exc))
    except ValueError as exc:  # configuration rejected before any frame ran
        raise CliError(EXIT_USAGE, str(exc))


_FMT = "{:>8}"


def _fmt(x: float) -> str:
    return f"{round_half_up(x, 4):.4f}"


def format_eval_table(summary: EvalSummary) -> str:
    lines = [f"{'video':<20} {'object':>6} {_FMT.format('J&F')} {_FMT.format('J')} {_FMT.format('F')}"]
    for video in summary.videos:
        for obj in (o for o in summary.objects if o.video == video.video):
            lines.append(
                f"{obj.video:<20} {obj.object_id:>6} "
                f"{_FMT.format(_fmt(obj.jf))} {_FMT.format(_fmt(obj.j))} {_FMT.format(_fmt(obj.f))}"
            )
        lines.append(
            f"{video.video:<20} {'mean':>6} "
            f"{_FMT.format(_fmt(video.jf))} {_FMT.format(_fmt(video.j))} {_FMT.format(_fmt(video.f))}"
        )
    lines.append(
        f"{'global':<20} {'-':>6} "
        f"{_FMT.format(_fmt(summary.jf))} {_FMT.format(_fmt(summary.j))} {_FMT.format(_fmt(summary.f))}"
    )
    return "\n".join(lines)


def _discover_sequences(pred_root: Path, gt_root: Path) -> list[tuple[str, Path, Path]]:
    if not gt_root.is_dir():
        raise CliError(EXIT_MISSING_DATA, f"ground-truth directory not found: {gt_root}")
    if not pred_root.is_dir():
        raise CliError(EXIT_MISSING_DATA, f"prediction directory not found: {pred_root}")
    if any(p.suffix == ".png" for p in gt_root.iterdir()):
        return [(gt_root.name, pred_root, gt_root)]
    videos = sorted(p.name for p in gt_root.iterdir() if p.is_dir())
    if not videos:
        raise CliError(EXIT_MISSING_DATA, f"no PNG frames or sequence subdirectories in {gt_root}")
    out = []
    for video in videos:
        pred_dir = pred_root / video
        if not pred_dir.is_dir():
            raise CliError(EXIT_MISSING_DATA, f"missing prediction directory for video {video}")
        out.append((video, pred_dir, gt_root / video))
    return out


def cmd_fuse(args) -> int:
    manifest = _load_valid_manifest(args.manifest)
    run = _run_config(args, manifest)
    report = _run_fusion(manifest, run.fusion_config(), run.output_dir, run.threads)
    print(f"fused {manifest.num_frames} frames of {manifest.sequence_name!r}")
    print(f"strategy={report.strategy} tau={report.tau} out={run.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    sequences = _discover_sequences(Path(args.pred), Path(args.gt))
    objs = None
    if args.objects:
        try:
            objs = ObjectSet.from_iterable(int(x) for x in args.objects.split(","))
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"invalid --objects value: {exc}")
    all_records = []
    summaries = []
    try:
        for video, pred_dir, gt_dir in sequences:
            records, summary = evaluate_sequence(
                pred_dir, gt_dir, objs, tol=args.tolerance, video=video
            )
            all_records.extend(records)
            summaries.append(summary)
    except FileNotFoundError as exc:
        raise CliError(EXIT_MISSING_DATA, str(exc))
    except (FormatError, ValueError) as exc:
        raise CliError(EXIT_MISSING_DATA, str(exc))
    combined = combine_summaries(summaries)
    print(format_eval_table(combined))
    for warning in combined.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if args.json:
        import json

        Path(args.json).write_text(json.dumps(combined.to_dict(), indent=2) + "\n")
    if args.csv:
        records_to_csv(all_records, args.csv)
    return EXIT_OK


def cmd_compare(args) -> int:
    manifest = _load_valid_manifest(args.manifest)
    run = _run_config(args, manifest)
    gt_dir = Path(args.gt)
    if not gt_dir.is_dir():
        raise CliError(EXIT_MISSING_DATA, f"ground-truth directory not found: {gt_dir}")

    rows = []
    for strategy in STRATEGIES:
        strategy_out = run.output_dir / strategy
        _run_fusion(manifest, run.fusion_config(strategy), strategy_out, run.threads)
        try:
            _, summary = evaluate_sequence(
                strategy_out, gt_dir, manifest.objects, tol=run.tolerance,
                video=manifest.sequence_name,
            )
        except (FileNotFoundError, ValueError) as exc:
            raise CliError(EXIT_MISSING_DATA, str(exc))
        rows.append((strategy, summary.j, summary.f, summary.jf))

    rows.sort(key=lambda r: (-r[3], r[0]))
    lines = [f"{'strategy':<20} {_FMT.format('J&F')} {_FMT.format('J')} {_FMT.format('F')}"]
    for strategy, j, f, jf in rows:
        lines.append(
            f"{strategy:<20} {_FMT.format(_fmt(jf))} {_FMT.format(_fmt(j))} {_FMT.format(_fmt(f))}"
        )
    print("\n".join(lines))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = run_gradient_checks(
        seed=args.seed, trials=args.trials, perturbation=args.self_test_perturb
    )
    ok = True
    print(f"{'kernel':<8} {'max_rel_error':>14}")
    for kernel in ("focal", "dice", "iou", "cls"):
        err = errors[kernel]
        print(f"{kernel:<8} {err:>14.3e}")
        ok = ok and err < GRADCHECK_TOLERANCE
    if not ok:
        print(
            f"error: gradient check failed (seed {args.seed}); see rows above",
            file=sys.stderr,
        )
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise CliError(EXIT_MANIFEST, f"manifest not found: {path}")
    try:
        manifest = load_manifest(path)
    except FormatError as exc:
        raise CliError(EXIT_MANIFEST, str(exc))
    result = validate_manifest(manifest, check_files=True)
    if not result.ok:
        for violation in result.violations:
            print(violation)
        raise CliError(EXIT_MANIFEST, f"manifest invalid: {len(result.violations)} violation(s)")
    print(f"manifest ok: {len(manifest.models)} model(s), {manifest.num_frames} frame(s)")
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    from .synthetic import write_fixture

    manifest_path = write_fixture(
        args.out, args.seed, frames=args.frames, height=args.height, width=args.width,
        tta=args.tta,
    )
    print(f"fixture written: {manifest_path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(
        prog="fusevos",
        description="Multi-model mask fusion and J/F evaluation for video object segmentation.",
    )
    sub = parser.add_subparsers(
        dest="command",
        parser_class=_Parser,
        metavar="{fuse,eval,compare,gradcheck,validate}",
    )

    strategy_choices = sorted(set(STRATEGIES) | set(_STRATEGY_ALIASES))

    p = sub.add_parser("fuse", help="fuse a model zoo's confidence volumes into label masks")
    p.add_argument("--manifest", required=True, help="zoo manifest JSON")
    p.add_argument(
        "--strategy", default=STRATEGY_CONFIDENCE_GUIDED, choices=strategy_choices,
        help="fusion strategy (default: confidence_guided)",
    )
    p.add_argument(
        "--tau", type=float, default=None,
        help="foreground threshold on summed weighted confidence "
        "(default: 0.5 * total weight)",
    )
    p.add_argument(
        "--weights", default=None,
        help="comma-separated per-model weights (default: manifest weights)",
    )
    p.add_argument("--out", required=True, help="output directory for fused masks")
    p.add_argument(
        "--threads", default=None,
        help=f"worker threads or 'auto' (default: ${THREADS_ENV_VAR} or 1)",
    )
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score predictions against ground truth (J, F, J&F)")
    p.add_argument("--pred", required=True, help="prediction mask directory (or root of videos)")
    p.add_argument("--gt", required=True, help="ground-truth mask directory (or root of videos)")
    p.add_argument(
        "--tolerance", type=int, default=None,
        help="boundary match radius in pixels (default: ceil(0.008 * diagonal))",
    )
    p.add_argument("--objects", default=None, help="comma-separated object ids (default: infer)")
    p.add_argument("--json", default=None, help="write the summary as JSON here")
    p.add_argument("--csv", default=None, help="write per-frame records as CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run all fusion strategies and rank them by J&F")
    p.add_argument("--manifest", required=True, help="zoo manifest JSON")
    p.add_argument("--gt", required=True, help="ground-truth mask directory")
    p.add_argument("--out", required=True, help="output root (one subdirectory per strategy)")
    p.add_argument(
        "--tau", type=float, default=None,
        help="confidence-guided threshold (default: 0.5 * total weight)",
    )
    p.add_argument("--weights", default=None, help="comma-separated per-model weights")
    p.add_argument(
        "--tolerance", type=int, default=None,
        help="boundary match radius in pixels (default: ceil(0.008 * diagonal))",
    )
    p.add_argument("--threads", default=None, help="worker threads or 'auto'")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="verify loss-kernel gradients by finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100, help="random inputs per kernel")
    p.add_argument("--self-test-perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("validate", help="validate a manifest and its on-disk layout")
    p.add_argument("--manifest", required=True, help="zoo manifest JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-fixture")  # hidden: synthetic benchmark generator
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--tta", action="store_true")
    p.set_defaults(func=cmd_gen_fixture)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits for usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return exc.code
    except Exception as exc:  # anything unexpected is an internal error
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_INTERNAL


def entry_point() -> None:
    raise SystemExit(main())
