"""Command-line front end.

Exit codes: 0 on success, 1 on usage errors (bad arguments, configuration
or missing files), 2 on domain errors (for example no nuclei found).
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import tomli

from . import io
from .config import load_config
from .errors import NucleosegError, PipelineError
from .metrics import match_and_report
from .overlay import emit_overlays
from .pipeline import run_pipeline, segment_seeds
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = ["main", "thread_count"]

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def thread_count(environ=os.environ):
    """Worker cap from ``NUCLEOSEG_THREADS`` (default: all cores)."""
    raw = environ.get("NUCLEOSEG_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"NUCLEOSEG_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"NUCLEOSEG_THREADS must be a positive integer, got {raw!r}")
    return n


def _config(args):
    try:
        return load_config(args.config, args.set)
    except (ValueError, TypeError, tomli.TOMLDecodeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _need(path):
    if path is not None and not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return path


def _flush_partial(err, out):
    partial = getattr(err, "partial", {})
    if "seeds" in partial:
        partial["seeds"].to_csv(out / "seeds.csv")
    if "response" in partial:
        io.write_volume(out / "response.tif", partial["response"])
    if "labels" in partial:
        io.write_labels(out / "labels_partial.tif", partial["labels"])


def cmd_segment(args):
    config = _config(args)
    if args.no_refine:
        config = config.with_overrides(["refine=false"])
    vol = io.read_volume(_need(args.input))
    truth = io.read_labels(_need(args.truth)) if args.truth else None
    if truth is not None and truth.shape != vol.dims:
        raise UsageError(f"truth shape {truth.shape} differs from input {vol.dims}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_pipeline(vol, config, truth=truth, workers=thread_count())
    except PipelineError as err:
        _flush_partial(err, out)
        raise
    # single writer, after all stages are done
    io.write_labels(out / "labels.tif", result.labels, vol.spacing)
    result.seeds.to_csv(out / "seeds.csv")
    config.save(out / "config.toml")
    if args.dump_response:
        io.write_volume(out / "response.tif", result.response)
    if result.report is not None:
        result.report.to_json(out / "report.json")
        result.report.to_csv(out / "report.csv")
    print(f"{len(result.seeds)} nuclei -> {out / 'labels.tif'}")
    return EXIT_OK


def cmd_seeds(args):
    config = _config(args)
    vol = io.read_volume(_need(args.input))
    _, _, found = segment_seeds(np.asarray(vol), config)
    found.to_csv(args.out)
    print(f"{len(found)} seeds -> {args.out}")
    return EXIT_OK


def cmd_metrics(args):
    auto = io.read_labels(_need(args.auto))
    truth = io.read_labels(_need(args.truth))
    if auto.shape != truth.shape:
        raise UsageError(f"label volumes differ in shape: {auto.shape} vs {truth.shape}")
    report = match_and_report(auto, truth, rand_domain=args.rand_domain)
    out = Path(args.out)
    report.to_json(out)
    report.to_csv(out.with_suffix(".csv"))
    agg = report.aggregates
    ri = "n/a" if report.rand_index is None else f"{report.rand_index:.4f}"
    print(f"dice {agg['dice']['mean']} rand {ri} -> {out}")
    return EXIT_OK


def cmd_synth(args):
    with open(_need(args.spec), "rb") as fh:
        try:
            spec = SyntheticSpec.from_dict(tomli.load(fh))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid synthetic spec: {exc}") from exc
    vol, truth = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scaled = np.round(np.asarray(vol) * np.iinfo(np.uint16).max).astype(np.uint16)
    io.write_labels(out / "volume.tif", scaled)
    io.write_labels(out / "truth.tif", truth)
    print(f"{int(truth.max())} spheres -> {out}")
    return EXIT_OK


def cmd_overlay(args):
    vol = io.read_volume(_need(args.input))
    labels = io.read_labels(_need(args.labels))
    if labels.shape != vol.dims:
        raise UsageError(f"labels {labels.shape} and volume {vol.dims} differ in shape")
    try:
        paths = emit_overlays(vol, labels, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write overlays: {exc}") from exc
    print(f"{len(paths)} slices -> {args.out}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="nucleoseg", description="3-D cell nucleus segmentation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override one configuration value (repeatable)",
        )

    p = sub.add_parser("segment", help="run the full pipeline on one volume")
    p.add_argument("--input", required=True)
    config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--truth", help="reference labels; adds report.json and report.csv")
    p.add_argument("--dump-response", action="store_true", help="also write response.tif")
    p.add_argument("--no-refine", action="store_true", help="skip level-set refinement")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("seeds", help="detect seeds only")
    p.add_argument("--input", required=True)
    config_args(p)
    p.add_argument("--out", required=True, help="seeds CSV path")
    p.set_defaults(func=cmd_seeds)

    p = sub.add_parser("metrics", help="score a labeling against a reference")
    p.add_argument("--auto", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="report JSON path (CSV written alongside)")
    p.add_argument("--rand-domain", choices=("foreground", "all"), default="foreground")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic volume with ground truth")
    p.add_argument("--spec", required=True, help="TOML synthetic spec")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("overlay", help="write per-slice boundary overlays")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_overlay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nucleoseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NucleosegError, ValueError) as exc:
        print(f"nucleoseg: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
