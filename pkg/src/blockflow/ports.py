"""Port declaration checks and dynamic-width resolution."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from .core import BlockContext, BlockError, PortSpec, split_ports
from .diagnostics import Diagnostic, ModelError


@dataclass(frozen=True, order=True)
class Connection:
    from_block: str
    from_port: int
    to_block: str
    to_port: int

    @property
    def source(self) -> str:
        return f"{self.from_block}.{self.from_port}"

    @property
    def target(self) -> str:
        return f"{self.to_block}.{self.to_port}"

    def __str__(self):
        return f"{self.source} -> {self.target}"


class BlockPorts(NamedTuple):
    inputs: tuple[PortSpec, ...]
    outputs: tuple[PortSpec, ...]


def resolve_port_widths(connections: Sequence[Connection],
                        declared: Mapping[str, BlockPorts]) -> dict[str, BlockPorts]:
    """Replace every DYNAMIC width with a concrete one.

    A DYNAMIC port adopts the width of the port it is connected to, and all
    DYNAMIC ports of one block share a single width (so a gain with dynamic
    input and output passes its input width through). Iterates to a fixed
    point. Raises :class:`ModelError` listing every problem found.
    """
    diags: list[Diagnostic] = []
    conns = sorted(connections)
    widths: dict[tuple[str, str, int], int | None] = {}
    for name, ports in declared.items():
        for kind, group in (("in", ports.inputs), ("out", ports.outputs)):
            for spec in group:
                widths[(name, kind, spec.index)] = None if spec.is_dynamic else spec.width

    valid = []
    for c in conns:
        ok = True
        for blk, kind, idx, what in ((c.from_block, "out", c.from_port, "output"),
                                     (c.to_block, "in", c.to_port, "input")):
            if blk not in declared:
                ok = False
                continue
            if (blk, kind, idx) not in widths:
                n = len(declared[blk].outputs if kind == "out" else declared[blk].inputs)
                diags.append(Diagnostic(
                    "port-range", f"connection {c}: block '{blk}' has no {what} port {idx} "
                                  f"({n} {what}s declared)", block=blk))
                ok = False
        if not ok:
            continue
        src = declared[c.from_block].outputs[c.from_port]
        dst = declared[c.to_block].inputs[c.to_port]
        if src.dtype is not dst.dtype:
            diags.append(Diagnostic(
                "dtype-mismatch", f"connection {c}: dtype mismatch {src.dtype.value} vs {dst.dtype.value}",
                block=c.to_block))
            continue
        valid.append(c)

    connected_inputs = {(c.to_block, c.to_port) for c in conns}
    for name, ports in sorted(declared.items()):
        for spec in ports.inputs:
            if (name, spec.index) not in connected_inputs:
                diags.append(Diagnostic(
                    "unconnected-input", f"input {name}.{spec.index} is not connected", block=name))

    def dynamic_group(block):
        ports = declared[block]
        return [(block, "in", s.index) for s in ports.inputs if s.is_dynamic] + \
               [(block, "out", s.index) for s in ports.outputs if s.is_dynamic]

    def assign(key, width):
        changed = False
        if widths[key] is None:
            for member in dynamic_group(key[0]):
                if widths[member] is None:
                    widths[member] = width
                    changed = True
        return changed

    # the group rule may also pin a dynamic port that a fixed port on the same block forced
    changed = True
    while changed:
        changed = False
        for c in valid:
            src = (c.from_block, "out", c.from_port)
            dst = (c.to_block, "in", c.to_port)
            if widths[src] is None and widths[dst] is not None:
                changed |= assign(src, widths[dst])
            elif widths[dst] is None and widths[src] is not None:
                changed |= assign(dst, widths[src])

    for c in valid:
        ws = widths[(c.from_block, "out", c.from_port)]
        wd = widths[(c.to_block, "in", c.to_port)]
        if ws is not None and wd is not None and ws != wd:
            diags.append(Diagnostic(
                "width-mismatch", f"connection {c}: width mismatch {ws} vs {wd} "
                                  f"({c.source} has width {ws}, {c.target} expects {wd})", block=c.to_block))

    for (name, kind, idx), w in sorted(widths.items()):
        if w is None and not (kind == "in" and (name, idx) not in connected_inputs):
            what = "input" if kind == "in" else "output"
            diags.append(Diagnostic(
                "unresolved-width", f"cannot resolve dynamic width of {what} {name}.{idx}", block=name))

    if diags:
        raise ModelError(diags)
    return {
        name: BlockPorts(
            tuple(s.with_width(widths[(name, "in", s.index)]) for s in ports.inputs),
            tuple(s.with_width(widths[(name, "out", s.index)]) for s in ports.outputs))
        for name, ports in declared.items()
    }


def declare_block_ports(block, ctx: BlockContext) -> BlockPorts:
    """Run ``declare_ports`` and check the result; raises BlockError."""
    try:
        specs = block.declare_ports(ctx)
        return BlockPorts(*split_ports(specs))
    except BlockError as exc:
        if exc.instance is None:
            exc = BlockError(exc.reason, instance=ctx.instance_name)
        raise exc from None
    except (TypeError, ValueError) as exc:
        raise BlockError(f"invalid port declaration: {exc}", instance=ctx.instance_name) from exc
