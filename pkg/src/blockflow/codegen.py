"""Emit a standalone program for a validated model.

The bundle carries the schedule as data tables and loads block logic from
the same plugin files the interpreter uses. Parameters go to ``config.json``
so they can be changed without regenerating anything.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .graph import GraphModel, Schedule
from .plugin import HOST_ABI_VERSION, PluginRegistry

MAIN = "main.py"
TABLE = "schedule_table.py"
CONFIG = "config.json"
MANIFEST = "MANIFEST"

BUILD_COMMAND = "python3 -m compileall -q main.py schedule_table.py"


@dataclass(frozen=True)
class GeneratedBundle:
    out_dir: Path
    source_files: tuple[Path, ...]
    manifest: Path
    runtime_config: Path
    plugin_checksums: dict[str, str]


def _py_tuple(items, indent="    ") -> str:
    if not items:
        return "()"
    return "(\n" + "".join(f"{indent}{item!r},\n" for item in items) + ")"


def emit_schedule_preamble(schedule: Schedule) -> str:
    """Execution order and buffer layout as ordered tables of literals."""
    buffers = [(b.producer, b.port, b.dtype.value, b.width, b.consumers) for b in schedule.buffers]
    return (
        "# block instances in execution order\n"
        f"ORDER = {_py_tuple(schedule.order)}\n"
        "\n"
        "# (producer, port, dtype, width, ((consumer, port), ...)), widths as resolved at generation\n"
        f"BUFFERS = {_py_tuple(buffers)}\n"
    )


def _jsonable(value):
    return list(value) if isinstance(value, tuple) else value


def runtime_config(model: GraphModel) -> dict:
    return {
        "step_size": model.step_size,
        "configuration": dict(model.configuration),
        "blocks": {b.name: {p.name: _jsonable(p.value) for p in b.parameters} for b in model.blocks},
    }


def _schedule_table(model: GraphModel, schedule: Schedule, labels: dict[str, list[str]]) -> str:
    descs = {b.name: b for b in model.blocks}
    blocks = [(n, descs[n].library, descs[n].label) for n in schedule.order]
    conns = [(c.from_block, c.from_port, c.to_block, c.to_port) for c in sorted(model.connections)]
    required = "".join(f"    {lib!r}: {tuple(lbls)!r},\n" for lib, lbls in sorted(labels.items()))
    return (
        '"""Schedule tables generated by blockflow codegen. Do not edit; regenerate instead."""\n'
        "\n"
        f"ABI_VERSION = {HOST_ABI_VERSION}\n"
        "\n"
        + emit_schedule_preamble(schedule) +
        "\n"
        "# (instance, plugin library, factory label) in execution order\n"
        f"BLOCKS = {_py_tuple(blocks)}\n"
        "\n"
        "# (from_block, from_port, to_block, to_port)\n"
        f"CONNECTIONS = {_py_tuple(conns)}\n"
        "\n"
        f"REQUIRED_LABELS = {{\n{required}}}\n"
    )


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def generate(model: GraphModel, schedule: Schedule, out_dir: str | Path,
             registry: PluginRegistry) -> GeneratedBundle:
    """Write main.py, schedule_table.py, config.json and MANIFEST into ``out_dir``.

    Every plugin library the model uses must be loadable now; its checksum
    and the labels the bundle needs are recorded in MANIFEST.
    """
    out = Path(out_dir)
    labels: dict[str, list[str]] = {}
    for b in model.blocks:
        registry.check_label(b.library, b.label)
        labels.setdefault(b.library, [])
        if b.label not in labels[b.library]:
            labels[b.library].append(b.label)
    labels = {lib: sorted(lbls) for lib, lbls in labels.items()}
    plugins = {lib: registry.load(lib) for lib in sorted(labels)}

    main_src = resources.files("blockflow").joinpath("templates/main.py.tmpl").read_text()
    table_src = _schedule_table(model, schedule, labels)
    config_src = json.dumps(runtime_config(model), indent=2, sort_keys=True) + "\n"

    manifest_lines = [
        "# blockflow generated bundle",
        "format 1",
        f"abi_version {HOST_ABI_VERSION}",
        f"build {BUILD_COMMAND}",
        "run python3 main.py --steps N [--pace free|realtime] [--log BLOCK.PORT=PATH] [--plugin-path DIR]",
        f"config {CONFIG}",
    ]
    for lib, plugin in plugins.items():
        manifest_lines.append(f"plugin {lib} sha256={plugin.sha256} labels={','.join(labels[lib])}")
    manifest_lines += [f"source {MAIN} sha256={_sha256(main_src)}",
                       f"source {TABLE} sha256={_sha256(table_src)}"]

    out.mkdir(parents=True, exist_ok=True)
    (out / MAIN).write_text(main_src)
    (out / TABLE).write_text(table_src)
    (out / CONFIG).write_text(config_src)
    (out / MANIFEST).write_text("\n".join(manifest_lines) + "\n")
    return GeneratedBundle(out, (out / MAIN, out / TABLE), out / MANIFEST, out / CONFIG,
                           {lib: p.sha256 for lib, p in plugins.items()})


def read_manifest(path: str | Path) -> dict:
    """Parse a bundle MANIFEST into ``{"abi_version", "plugins", "sources", ...}``."""
    info: dict = {"plugins": {}, "sources": {}}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "plugin":
            name, *fields = rest.split()
            kv = dict(f.split("=", 1) for f in fields)
            info["plugins"][name] = {"sha256": kv["sha256"], "labels": kv["labels"].split(",")}
        elif key == "source":
            name, digest = rest.split()
            info["sources"][name] = digest.split("=", 1)[1]
        elif key in ("format", "abi_version"):
            info[key] = int(rest)
        else:
            info[key] = rest
    return info
