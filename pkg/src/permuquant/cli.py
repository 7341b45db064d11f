"""Command-line interface: calibrate, evaluate, validate, gen-synthetic.

Exit codes: 0 success, 1 validation/consistency failure, 2 I/O or parse error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .formats import FormatError, load_manifest, load_report, save_report
from .pipeline import EVAL_COLUMNS, EvaluationError, calibrate, evaluate, format_table, generate_synthetic, report_table
from .quantizer import QuantConfig
from .reorder import DEFAULT_ALPHA_GRID, PREDECESSORS
from .validation import SUITES, validate

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2

log = logging.getLogger("permuquant")


def _alpha_grid(text: str) -> list[float]:
    try:
        grid = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha grid {text!r}") from None
    if not grid or any(not 0.0 <= a <= 1.0 for a in grid):
        raise argparse.ArgumentTypeError("alpha grid needs values in [0, 1]")
    return grid


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permuquant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="choose per-layer permutations and write a report")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--bits", type=int, default=3, choices=range(2, 9), metavar="{2..8}")
    p.add_argument("--group-size", type=int, default=32)
    p.add_argument("--tau", type=float, default=0.0, help="acceptance threshold in percent")
    p.add_argument(
        "--alpha-grid", type=_alpha_grid, default=list(DEFAULT_ALPHA_GRID),
        help="comma-separated alpha candidates (default 0,0.2,0.4,0.6,0.8,1.0)",
    )
    p.add_argument("--hadamard", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--export-dir", type=Path, help="write folded weights/parameters here")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    p = sub.add_parser("evaluate", help="re-measure the errors recorded in a report")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--out", type=Path, help="also write the table to this file")

    p = sub.add_parser("validate", help="run a seeded invariant suite")
    p.add_argument("--suite", required=True, choices=[*SUITES, "all"])
    p.add_argument("--seed", type=_u64, default=42)

    p = sub.add_parser("gen-synthetic", help="write synthetic layers and a manifest")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--dout", type=int, default=64)
    p.add_argument("--tokens", type=int, default=128)
    p.add_argument("--spread", type=float, default=0.5, help="log-std of channel scales")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument(
        "--predecessors", default="rmsnorm,linear,layernorm_modulated,none",
        help=f"comma list cycled over layers, from {', '.join(PREDECESSORS)}",
    )
    p.add_argument("--out", required=True, type=Path)
    return parser


def cmd_calibrate(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = QuantConfig(args.bits, args.group_size)
    if args.tau < 0:
        log.error("--tau must be nonnegative")
        return EXIT_IO
    report = calibrate(
        manifest,
        cfg,
        tau=args.tau / 100.0,
        alpha_grid=args.alpha_grid,
        hadamard=args.hadamard,
        seed=args.seed,
        jobs=args.jobs,
        export_dir=args.export_dir,
        tau_percent=args.tau,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_report(report, args.out)
    args.out.with_suffix(".tsv").write_text(report_table(report))
    if not args.no_figures:
        from .plotting import render_report_figures

        for path in render_report_figures(report, args.out):
            log.info("wrote %s", path)
    s = report.summary()
    print(
        f"{s['processed']}/{s['layers']} layers calibrated, {s['accepted']} accepted "
        f"(rate {s['acceptance_rate']:.3f}); total error {s['total_e_orig']:.6g} -> "
        f"{s['total_e_deployed']:.6g}; report {args.out}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    report = load_report(args.report)
    rows = evaluate(manifest, report)
    table = format_table([vars(r) for r in rows], EVAL_COLUMNS)
    sys.stdout.write(table)
    if args.out:
        args.out.write_text(table)
    return EXIT_OK if all(r.match for r in rows) else EXIT_FAIL


def cmd_validate(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        result = validate(name, args.seed)
        print(result.line())
        ok &= result.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gen_synthetic(args) -> int:
    kinds = tuple(k.strip() for k in args.predecessors.split(",") if k.strip())
    bad = [k for k in kinds if k not in PREDECESSORS]
    if bad or not kinds:
        log.error("unknown predecessor kinds: %s", ", ".join(bad) or "(none given)")
        return EXIT_IO
    generate_synthetic(
        args.out, args.layers, args.d, args.dout, args.tokens, args.spread, args.seed,
        args.dtype, kinds,
    )
    print(f"wrote {args.layers} layers and {args.out / 'manifest.json'}")
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (FormatError, EvaluationError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
