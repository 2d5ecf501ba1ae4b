"""Controller model: loading, width resolution, scheduling and validation."""
from __future__ import annotations

import heapq
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import MISSING, BlockContext, BlockError, DataType, Parameter, normalize_parameter_value
from .diagnostics import IO, PLUGIN, Diagnostic, ModelError, exit_code_for
from .plugin import PluginError, PluginNotFound, PluginRegistry, UnknownLabel
from .ports import BlockPorts, Connection, declare_block_ports, resolve_port_widths


class AlgebraicLoopError(ModelError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        path = " -> ".join(self.cycle + self.cycle[:1])
        super().__init__(Diagnostic("algebraic-loop", f"algebraic loop: {path}"))


# -- model ---------------------------------------------------------------------


@dataclass(frozen=True)
class BlockDescriptor:
    name: str
    library: str
    label: str
    parameters: tuple[Parameter, ...] = ()

    @property
    def params(self) -> dict[str, Any]:
        return {p.name: p.value for p in self.parameters}

    def with_parameter(self, name: str, value: Any) -> BlockDescriptor:
        kept = [p for p in self.parameters if p.name != name]
        return replace(self, parameters=tuple(kept + [Parameter(name, value)]))


def parse_endpoint(text: str) -> tuple[str, int]:
    """``"block.3"`` -> ``("block", 3)``."""
    if not isinstance(text, str):
        raise ValueError(f"endpoint must be a string 'block.port', got {text!r}")
    name, sep, port = text.rpartition(".")
    if not sep or not name or not port.isdigit():
        raise ValueError(f"malformed endpoint {text!r}, expected 'block.port_index'")
    return name, int(port)


@dataclass(frozen=True)
class GraphModel:
    blocks: tuple[BlockDescriptor, ...]
    connections: tuple[Connection, ...]
    step_size: float
    configuration: Mapping[str, Any] = field(default_factory=dict)

    def block(self, name: str) -> BlockDescriptor:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def with_overrides(self, overrides: Mapping[str, Any]) -> GraphModel:
        """Copy with ``{"block.param": value}`` overrides applied."""
        by_name = {b.name: b for b in self.blocks}
        for key, value in overrides.items():
            bname, sep, pname = key.rpartition(".")
            if not sep or bname not in by_name:
                raise ModelError(Diagnostic(
                    "bad-override", f"override '{key}' does not name an existing block parameter"))
            try:
                by_name[bname] = by_name[bname].with_parameter(pname, value)
            except (TypeError, ValueError) as exc:
                raise ModelError(Diagnostic("bad-override", f"override '{key}': {exc}", block=bname))
        return replace(self, blocks=tuple(by_name[b.name] for b in self.blocks))

    def to_dict(self) -> dict[str, Any]:
        def jsonable(v):
            return list(v) if isinstance(v, tuple) else v
        return {
            "step_size": self.step_size,
            "configuration": dict(self.configuration),
            "blocks": [
                {"name": b.name, "library": b.library, "label": b.label,
                 "parameters": {p.name: jsonable(p.value) for p in b.parameters}}
                for b in self.blocks
            ],
            "connections": [{"from": c.source, "to": c.target} for c in self.connections],
        }


# -- loading -------------------------------------------------------------------

_TOP_KEYS = {"step_size", "configuration", "blocks", "connections"}
_BLOCK_KEYS = {"name", "library", "label", "parameters"}


def parse_graph(source: str | Path, *, text: str | None = None) -> tuple[GraphModel, list[Diagnostic]]:
    """Parse a graph file leniently.

    Returns the best-effort model plus every schema and structural problem
    found, so callers can report them all at once. Unreadable files and JSON
    syntax errors are fatal and raise :class:`ModelError` directly.
    """
    if text is None:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ModelError(Diagnostic("io", f"cannot read graph file {source}: {exc.strerror or exc}",
                                        category=IO)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(Diagnostic(
            "parse", f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}")) from None

    diags: list[Diagnostic] = []

    def err(code, msg, block=None):
        diags.append(Diagnostic(code, msg, block=block))

    if not isinstance(doc, dict):
        raise ModelError(Diagnostic("schema", f"{source}: top level must be a JSON object"))
    for key in sorted(set(doc) - _TOP_KEYS):
        err("schema", f"unknown top-level key '{key}'")

    step_size = doc.get("step_size")
    if isinstance(step_size, bool) or not isinstance(step_size, (int, float)):
        err("schema", f"step_size must be a number, got {step_size!r}")
        step_size = math.nan
    step_size = float(step_size)

    configuration = doc.get("configuration", {})
    if not isinstance(configuration, dict):
        err("schema", "configuration must be an object")
        configuration = {}

    blocks = []
    raw_blocks = doc.get("blocks", [])
    if not isinstance(raw_blocks, list):
        err("schema", "blocks must be an array")
        raw_blocks = []
    for i, rb in enumerate(raw_blocks):
        if not isinstance(rb, dict):
            err("schema", f"blocks[{i}] must be an object")
            continue
        name = rb.get("name")
        where = f"block '{name}'" if isinstance(name, str) else f"blocks[{i}]"
        for key in sorted(set(rb) - _BLOCK_KEYS):
            err("schema", f"{where}: unknown key '{key}'", block=name)
        bad = [k for k in ("name", "library", "label") if not isinstance(rb.get(k), str) or not rb.get(k)]
        if bad:
            err("schema", f"{where}: {', '.join(bad)} must be non-empty strings")
            continue
        if "." in name:
            err("schema", f"{where}: block names may not contain '.'", block=name)
            continue
        raw_params = rb.get("parameters", {})
        if not isinstance(raw_params, dict):
            err("schema", f"{where}: parameters must be an object", block=name)
            raw_params = {}
        params = []
        for pname, pvalue in raw_params.items():
            try:
                params.append(Parameter(pname, normalize_parameter_value(pvalue)))
            except (TypeError, ValueError) as exc:
                err("bad-parameter", f"{where}: parameter '{pname}': {exc}", block=name)
        blocks.append(BlockDescriptor(name, rb["library"], rb["label"], tuple(params)))

    connections = []
    raw_conns = doc.get("connections", [])
    if not isinstance(raw_conns, list):
        err("schema", "connections must be an array")
        raw_conns = []
    for i, rc in enumerate(raw_conns):
        if not isinstance(rc, dict) or set(rc) != {"from", "to"}:
            err("schema", f"connections[{i}] must be an object with exactly 'from' and 'to'")
            continue
        try:
            fb, fp = parse_endpoint(rc["from"])
            tb, tp = parse_endpoint(rc["to"])
        except ValueError as exc:
            err("schema", f"connections[{i}]: {exc}")
            continue
        connections.append(Connection(fb, fp, tb, tp))

    model = GraphModel(tuple(blocks), tuple(connections), step_size, configuration)
    return model, diags + check_structure(model)


def check_structure(model: GraphModel) -> list[Diagnostic]:
    """Problems detectable without knowing any block's ports."""
    diags = []
    if not (model.step_size > 0 and math.isfinite(model.step_size)):
        if not math.isnan(model.step_size):
            diags.append(Diagnostic("step-size", "stepSize must be positive"))
    seen = set()
    for b in model.blocks:
        if b.name in seen:
            diags.append(Diagnostic("duplicate-block", f"duplicate block name '{b.name}'", block=b.name))
        seen.add(b.name)
    drivers: dict[tuple[str, int], list[Connection]] = defaultdict(list)
    for c in model.connections:
        for end in (c.from_block, c.to_block):
            if end not in seen:
                diags.append(Diagnostic(
                    "dangling-endpoint", f"connection {c} references undeclared block '{end}'", block=end))
        drivers[(c.to_block, c.to_port)].append(c)
    for (blk, port), conns in sorted(drivers.items()):
        if len(conns) > 1:
            srcs = ", ".join(sorted(c.source for c in conns))
            diags.append(Diagnostic(
                "multiple-drivers", f"input {blk}.{port} is driven by more than one output ({srcs})", block=blk))
    return diags


def load_graph(path: str | Path) -> GraphModel:
    model, diags = parse_graph(path)
    if diags:
        raise ModelError(diags)
    return model


# -- width resolution ----------------------------------------------------------


def resolve_widths(model: GraphModel, declared: Mapping[str, BlockPorts]) -> dict[str, BlockPorts]:
    return resolve_port_widths(model.connections, declared)


# -- scheduling ----------------------------------------------------------------


@dataclass(frozen=True)
class BufferPlan:
    producer: str
    port: int
    dtype: DataType
    width: int
    consumers: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict[str, Any]:
        return {"producer": f"{self.producer}.{self.port}", "dtype": self.dtype.value,
                "width": self.width, "consumers": [f"{b}.{p}" for b, p in self.consumers]}


@dataclass(frozen=True)
class Schedule:
    order: tuple[str, ...]
    buffers: tuple[BufferPlan, ...]

    def position(self, name: str) -> int:
        return self.order.index(name)

    def to_dict(self) -> dict[str, Any]:
        return {"order": list(self.order), "buffers": [b.to_dict() for b in self.buffers]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def dependency_edges(connections: Iterable[Connection],
                     ports: Mapping[str, BlockPorts]) -> set[tuple[str, str]]:
    """Producer->consumer edges through direct-feedthrough inputs only."""
    edges = set()
    for c in connections:
        if ports[c.to_block].inputs[c.to_port].feedthrough:
            edges.add((c.from_block, c.to_block))
    return edges


def order_blocks(names: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str]:
    """Topological order, ties broken by name; raises AlgebraicLoopError on a cycle."""
    names = sorted(set(names))
    succ: dict[str, set[str]] = {n: set() for n in names}
    pred: dict[str, set[str]] = {n: set() for n in names}
    for a, b in edges:
        succ[a].add(b)
        pred[b].add(a)
    indeg = {n: len(pred[n]) for n in names}
    ready = [n for n in names if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    if len(order) < len(names):
        raise AlgebraicLoopError(_find_cycle({n for n in names if indeg[n] > 0}, pred))
    return order


def _find_cycle(stuck: set[str], pred: Mapping[str, set[str]]) -> list[str]:
    # every stuck node has a stuck predecessor, so walking backwards must revisit one
    node = min(stuck)
    trail = []
    seen = {}
    while node not in seen:
        seen[node] = len(trail)
        trail.append(node)
        node = min(p for p in pred[node] if p in stuck)
    cycle = trail[seen[node]:]
    cycle.reverse()
    start = cycle.index(min(cycle))
    return cycle[start:] + cycle[:start]


def compute_schedule(model: GraphModel, ports: Mapping[str, BlockPorts]) -> Schedule:
    """Execution order and buffer layout for a model whose widths are resolved."""
    order = order_blocks(model.names, dependency_edges(model.connections, ports))
    consumers: dict[tuple[str, int], list[tuple[str, int]]] = defaultdict(list)
    for c in model.connections:
        consumers[(c.from_block, c.from_port)].append((c.to_block, c.to_port))
    buffers = []
    for name in order:
        for spec in ports[name].outputs:
            key = (name, spec.index)
            if key in consumers:
                buffers.append(BufferPlan(name, spec.index, spec.dtype, spec.width,
                                          tuple(sorted(consumers[key]))))
    return Schedule(tuple(order), tuple(buffers))


# -- validation ----------------------------------------------------------------


class DeclareContext(BlockContext):
    """Context offered to ``declare_ports`` outside a running engine."""

    def __init__(self, descriptor: BlockDescriptor, step_size: float,
                 configuration: Mapping[str, Any]):
        self.instance_name = descriptor.name
        self._params = descriptor.params
        self._step_size = step_size
        self._configuration = configuration

    def parameter(self, name, default=MISSING):
        return self._params.get(name, default)

    @property
    def input_specs(self):
        raise RuntimeError("port specs are not resolved during declare_ports")

    output_specs = input_specs

    def input(self, index):
        raise RuntimeError("signals are not available during declare_ports")

    def write_output(self, index, values):
        raise RuntimeError("signals are not available during declare_ports")

    @property
    def step_size(self):
        return self._step_size

    @property
    def step_index(self):
        return 0

    @property
    def time(self):
        return 0.0

    def configuration(self, name, default=None):
        return self._configuration.get(name, default)


def _plugin_diagnostic(exc: PluginError, block: str) -> Diagnostic:
    code = "unknown-label" if isinstance(exc, UnknownLabel) else \
        "plugin-not-found" if isinstance(exc, PluginNotFound) else "plugin"
    return Diagnostic(code, str(exc), category=PLUGIN, block=block)


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic]
    ports: dict[str, BlockPorts] | None = None
    schedule: Schedule | None = None

    @property
    def ok(self) -> bool:
        return not self.diagnostics

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.diagnostics)

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "exit_code": self.exit_code,
                "diagnostics": [d.to_dict() for d in self.diagnostics]}


def validate(model: GraphModel, plugins: PluginRegistry,
             diagnostics: Sequence[Diagnostic] | None = None) -> ValidationReport:
    """Run every check that does not need a live engine and collect all findings.

    ``diagnostics`` carries problems already found while parsing (see
    :func:`parse_graph`); structural checks are rerun when it is ``None``.
    """
    diags = list(check_structure(model) if diagnostics is None else diagnostics)
    declared: dict[str, BlockPorts] = {}
    failed_libraries: set[str] = set()
    seen = set()
    for desc in model.blocks:
        if desc.name in seen:
            continue
        seen.add(desc.name)
        if desc.library in failed_libraries:
            continue
        try:
            plugins.load(desc.library)
        except PluginError as exc:
            failed_libraries.add(desc.library)
            diags.append(_plugin_diagnostic(exc, desc.name))
            continue
        try:
            block = plugins.instantiate(desc.library, desc.label)
        except PluginError as exc:
            diags.append(_plugin_diagnostic(exc, desc.name))
            continue
        try:
            declared[desc.name] = declare_block_ports(
                block, DeclareContext(desc, model.step_size, model.configuration))
        except BlockError as exc:
            diags.append(Diagnostic("block-config", str(exc), block=desc.name))

    report = ValidationReport(diags)
    # feedthrough flags are known once ports are declared, so loops among the
    # healthy blocks show up even when widths or other blocks are broken
    inner = [c for c in model.connections if c.from_block in declared and c.to_block in declared
             and c.to_port < len(declared[c.to_block].inputs)]
    loop: list[Diagnostic] = []
    try:
        order_blocks(declared, dependency_edges(inner, declared))
    except AlgebraicLoopError as exc:
        loop = exc.diagnostics
    if diags:
        # widths of a partial model would only produce follow-on noise
        diags.extend(loop)
        return report
    try:
        ports = resolve_widths(model, declared)
    except ModelError as exc:
        diags.extend(loop + exc.diagnostics)
        return report
    if loop:
        diags.extend(loop)
        return report
    report.ports = ports
    report.schedule = compute_schedule(model, ports)
    return report


def validate_file(path: str | Path, plugins: PluginRegistry) -> tuple[GraphModel | None, ValidationReport]:
    try:
        model, diags = parse_graph(path)
    except ModelError as exc:
        return None, ValidationReport(exc.diagnostics)
    return model, validate(model, plugins, diags)
