"""``blockflow`` command line: validate, schedule, run, codegen, blocks.

Exit codes: 0 ok, 1 model error, 2 plugin error, 3 I/O error, 4 step failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from . import codegen
from .core import BlockError
from .diagnostics import IO, Diagnostic, ModelError
from .engine import Engine, RunConfig, StepError, parse_override
from .graph import GraphModel, ValidationReport, parse_graph, validate
from .plugin import PluginError, PluginRegistry
from .runtime import Pacing, parse_log_target

EXIT_OK, EXIT_MODEL, EXIT_PLUGIN, EXIT_IO, EXIT_STEP = 0, 1, 2, 3, 4

log = logging.getLogger("blockflow")


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _print_diagnostics(report: ValidationReport, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report.to_dict(), indent=2), file=sys.stderr)
    else:
        for d in report.diagnostics:
            print(f"{d.category} error: {d}", file=sys.stderr)


def _load_and_validate(args, overrides=None) -> tuple[GraphModel | None, ValidationReport, PluginRegistry]:
    registry = PluginRegistry(args.plugin_path)
    try:
        model, diags = parse_graph(args.graph)
    except ModelError as exc:
        return None, ValidationReport(exc.diagnostics), registry
    if overrides:
        try:
            model = model.with_overrides(overrides)
        except ModelError as exc:
            return model, ValidationReport(diags + exc.diagnostics), registry
    return model, validate(model, registry, diags), registry


def cmd_validate(args) -> int:
    _, report, _ = _load_and_validate(args)
    _print_diagnostics(report, args.json)
    return report.exit_code


def cmd_schedule(args) -> int:
    _, report, _ = _load_and_validate(args)
    if not report.ok:
        _print_diagnostics(report, args.json)
        return report.exit_code
    sys.stdout.write(report.schedule.to_json())
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        overrides = dict(parse_override(s) for s in args.set)
        cfg = RunConfig(steps=args.steps, pacing=Pacing(args.pace),
                        log_targets=[parse_log_target(t) for t in args.log],
                        parameter_overrides=overrides)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_MODEL
    model, report, registry = _load_and_validate(args, overrides)
    if not report.ok:
        _print_diagnostics(report, args.json)
        return report.exit_code
    try:
        # overrides are already folded into the validated model; pass them along for the report
        engine = Engine.build(model, report.schedule, registry)
        engine.overrides = dict(overrides)
    except PluginError as exc:
        _err(str(exc))
        return EXIT_PLUGIN
    except (BlockError, ModelError) as exc:
        _err(str(exc))
        return EXIT_MODEL

    previous = signal.signal(signal.SIGINT, lambda *_: engine.request_stop())
    try:
        result = engine.run(cfg)
    except StepError as exc:
        _err(f"run stopped at step {exc.step} in block '{exc.instance}': {exc.reason}")
        return EXIT_STEP
    except ModelError as exc:
        _err(str(exc))
        return exc.exit_code
    except OSError as exc:
        _err(f"{exc.filename}: {exc.strerror}")
        return EXIT_IO
    except BlockError as exc:
        _err(str(exc))
        return EXIT_MODEL
    finally:
        signal.signal(signal.SIGINT, previous)
    print(result.to_json())
    return EXIT_OK


def cmd_codegen(args) -> int:
    model, report, registry = _load_and_validate(args)
    if not report.ok:
        _print_diagnostics(report, args.json)
        return report.exit_code
    try:
        bundle = codegen.generate(model, report.schedule, args.out, registry)
    except PluginError as exc:
        _err(str(exc))
        return EXIT_PLUGIN
    except OSError as exc:
        diag = Diagnostic("io", f"cannot write bundle to {args.out}: {exc.strerror or exc}", category=IO)
        _print_diagnostics(ValidationReport([diag]), args.json)
        return EXIT_IO
    print(bundle.manifest)
    return EXIT_OK


def cmd_blocks(args) -> int:
    registry = PluginRegistry(args.plugin_path)
    try:
        plugin = registry.load(args.library)
    except PluginError as exc:
        _err(str(exc))
        return EXIT_PLUGIN
    if args.json:
        print(json.dumps({"library": args.library, "path": str(plugin.path),
                          "abi_version": plugin.manifest.abi_version,
                          "labels": list(plugin.manifest.labels)}, indent=2))
    else:
        print(f"{args.library} ({plugin.path})")
        print(f"abi_version {plugin.manifest.abi_version}")
        for label in plugin.manifest.labels:
            print(f"  {label}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--plugin-path", action="append", default=[], metavar="DIR",
                        help="plugin search directory, searched before $BLOCKFLOW_PLUGIN_PATH (repeatable)")
    common.add_argument("--json", action="store_true", help="machine-readable diagnostics")

    parser = argparse.ArgumentParser(prog="blockflow", description="Synchronous dataflow block-diagram runtime.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", parents=[common], help="check a graph file")
    p.add_argument("graph", type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("schedule", parents=[common], help="print the execution schedule")
    p.add_argument("graph", type=Path)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("run", parents=[common], help="run a graph with the interpreter")
    p.add_argument("graph", type=Path)
    p.add_argument("--steps", type=int, default=None, help="number of steps (default: until interrupted)")
    p.add_argument("--pace", choices=[m.value for m in Pacing], default=Pacing.FREE.value)
    p.add_argument("--log", action="append", default=[], metavar="BLOCK.PORT=PATH",
                   help="write an output port to CSV (repeatable)")
    p.add_argument("--set", action="append", default=[], metavar="BLOCK.PARAM=VALUE",
                   help="override a block parameter for this run (repeatable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("codegen", parents=[common], help="generate a standalone program")
    p.add_argument("graph", type=Path)
    p.add_argument("--out", type=Path, required=True, help="bundle directory")
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("blocks", parents=[common], help="list the labels a plugin library provides")
    p.add_argument("--library", required=True)
    p.set_defaults(func=cmd_blocks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "steps", None) is not None and args.steps < 0:
        _err("--steps must be non-negative")
        return EXIT_MODEL
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
