"""``iqfed`` command line.

Exit codes: 0 success, 2 configuration error, 3 data or format error,
4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from ..io import FormatError
from . import experiments as ex
from .config import DEFAULTS, ConfigError, PRESETS, default_output_dir, merge, resolve, validate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4

EXPERIMENT_COMMANDS = {
    "generate": ex.cmd_generate,
    "train": ex.cmd_train,
    "evaluate": ex.cmd_evaluate,
    "theory": ex.cmd_theory,
    "resources": ex.cmd_resources,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML file with configuration sections")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named preset applied over the file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one value (repeatable)")
    p.add_argument("--manifest", type=Path, help="rerun with the configuration stored in a run manifest")
    p.add_argument("--out", type=Path, help="output directory (default: $IQFED_OUTPUT_ROOT/<kind>-<hash>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iqfed", description="Federated self-supervised modulation classification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "synthesize client datasets (IQDS) and the partition manifest",
        "train": "federated self-supervised encoder training with per-round checkpoints",
        "evaluate": "per-client SVM accuracy, confusion matrices and the SNR sweep",
        "theory": "Monte Carlo checks of the variance, convergence and separability bounds",
        "resources": "parameter count and FLOPs of the encoder",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "train":
            p.add_argument("--no-resume", action="store_true", help="ignore existing round checkpoints")
    p = sub.add_parser("sweep", help="repeat generate/train/evaluate over values of one parameter")
    _add_common(p)
    p.add_argument("--param", required=True, help="dotted key, e.g. data.dirichlet_alpha")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repeats", type=int, default=1, help="seeds per value")
    p = sub.add_parser("ingest", help="convert an external I/Q recording to IQDS")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--descriptor", type=Path, help="YAML descriptor (format, dtype, byte_order, frame_length, scale, labels, classes)")
    p.add_argument("--frame-length", type=int, help="shortcut for a raw float32 file without a descriptor")
    p.add_argument("--labels", type=Path, help="label sidecar, one label per line")
    p = sub.add_parser("show-config", help="print the resolved configuration as YAML")
    _add_common(p)
    return parser


def resolve_args(args) -> dict:
    if args.manifest is not None:
        cfg = merge(DEFAULTS, ex.load_manifest(args.manifest).config)
        for text in args.overrides:
            from .config import parse_override

            cfg = merge(cfg, parse_override(text))
        validate(cfg)
        return cfg
    return resolve(args.config, args.preset, args.overrides)


def _ingest(args) -> dict:
    descriptor = {}
    if args.descriptor is not None:
        try:
            descriptor = yaml.safe_load(args.descriptor.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read descriptor {args.descriptor}: {exc}") from exc
    if args.frame_length is not None:
        descriptor["frame_length"] = args.frame_length
    if args.labels is not None:
        descriptor["labels"] = str(args.labels)
    if descriptor.get("format", "raw") == "raw" and "frame_length" not in descriptor:
        raise ConfigError("raw input needs frame_length (descriptor or --frame-length)")
    return ex.ingest_external(args.input, descriptor, args.output)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            summary = _ingest(args)
        else:
            cfg = resolve_args(args)
            if args.command == "show-config":
                print(yaml.safe_dump(cfg, sort_keys=False), end="")
                return EXIT_OK
            out = args.out if args.out is not None else default_output_dir(cfg)
            if args.command == "sweep":
                values = [yaml.safe_load(v) for v in args.values.split(",")]
                summary = ex.cmd_sweep(cfg, out, args.param, values, args.repeats)
            elif args.command == "train":
                summary = ex.cmd_train(cfg, out, resume=not args.no_resume)
            else:
                summary = EXPERIMENT_COMMANDS[args.command](cfg, out)
            summary = {"output_dir": str(out), **summary}
    except ConfigError as exc:
        print(f"iqfed: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"iqfed: format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ex.DataError, FileNotFoundError) as exc:
        print(f"iqfed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ex.InvariantError as exc:
        print(f"iqfed: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
