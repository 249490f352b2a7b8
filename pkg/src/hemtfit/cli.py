"""Command-line entry point: ``hemtfit extract|digitize|ingest-sparams|report``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np


def _cmd_extract(args) -> int:
    from .pipeline import load_config, run_pipeline

    try:
        cfg = load_config(args.config, seed=args.seed, evaluator=args.evaluator, out_dir=args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rep = run_pipeline(cfg, log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({k: getattr(rep, k) for k in ("device", "doc_success", "iv_nrmse_pct", "s_nrmse_pct",
                                                     "iterations", "wall_time_s")}))
    for err in rep.errors:
        print(f"error: {err}", file=sys.stderr)
    return 0 if rep.ok else 1


def _cmd_digitize(args) -> int:
    from .digitize import DigitizeError, digitize, load_calibration, load_labels, load_raster

    try:
        raster = load_raster(args.image)
        chart = digitize(raster, load_calibration(args.calib), load_labels(args.labels), args.x_scale, args.y_scale)
    except (OSError, ValueError, DigitizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    chart.to_iv_dataset().to_csv(args.out)
    log = Path(str(args.out) + ".warnings.log")
    log.write_text("".join(w + "\n" for w in chart.warnings), encoding="utf-8")
    for w in chart.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(chart.curves)} curves written to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    from .sparams import load_sparams, write_canonical_csv

    try:
        ds = load_sparams(args.table)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_canonical_csv(ds, args.out)
    present = int(ds.mask.sum())
    print(f"{len(ds)} frequencies, {present} of {ds.mask.size} entries present -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .iftpe import read_trace

    try:
        names, hist = read_trace(args.trace)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if len(hist) == 0:
        print("trials: 0")
        return 0
    losses = hist.losses
    finite = losses[np.isfinite(losses)]
    print(f"trials: {len(hist)}")
    print(f"failed: {len(hist) - finite.size}")
    print(f"batches: {len({t.batch for t in hist})}")
    if finite.size:
        best = hist.best()
        print(f"best_loss: {best.loss!r}")
        print(f"median_loss: {float(np.median(finite))!r}")
        for n, v in zip(names, best.theta):
            print(f"best.{n}: {float(v)!r}")
        # first trial index reaching within 1% of the final best
        target = best.loss * 1.01 if best.loss > 0 else 0.0
        hit = next(i for i, t in enumerate(hist) if math.isfinite(t.loss) and t.loss <= target)
        print(f"trials_to_within_1pct: {hit + 1}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import CONFIG_HELP

    ap = argparse.ArgumentParser(prog="hemtfit", description="HEMT model extraction from datasheet data.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the full DC/RF extraction from a config file", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True, help="TOML configuration file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--evaluator", choices=("surrogate", "external"), help="override the config evaluator")
    p.add_argument("--out", help="override the output directory")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("digitize", help="turn a chart raster into vgs,vds,id rows")
    p.add_argument("--image", required=True, help="PNG chart")
    p.add_argument("--calib", required=True, help='JSON [{"axis":"x","pixel":..,"value":..}, ...]')
    p.add_argument("--labels", required=True, help='JSON [{"text":"Vgs=0V","value":0,"px":..,"py":..}, ...]')
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--x-scale", default="linear", choices=("linear", "log10"))
    p.add_argument("--y-scale", default="linear", choices=("linear", "log10"))
    p.set_defaults(func=_cmd_digitize)

    p = sub.add_parser("ingest-sparams", help="convert an S-parameter table or .s2p to canonical CSV")
    p.add_argument("--table", required=True, help="delimited table, Touchstone .s2p or canonical CSV")
    p.add_argument("--out", required=True, help="output canonical CSV")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("report", help="summary statistics of an optimizer trace CSV")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
