"""Drive a single block without an engine.

:class:`BlockHarness` plays the engine's part through a :class:`MockContext`:
it declares ports, resolves dynamic widths with the same rule the engine uses,
feeds inputs step by step and records every lifecycle call. Plugin authors can
use it for unit tests; blockflow's own conformance suite is built on it.
"""
from __future__ import annotations

from typing import Any, Mapping, Sequence

from .core import MISSING, BlockContext, DataType, PortSpec, Signal, output_port
from .ports import BlockPorts, Connection, declare_block_ports, resolve_port_widths


class MockContext(BlockContext):
    def __init__(self, parameters: Mapping[str, Any] | None = None, *, step_size: float = 0.01,
                 configuration: Mapping[str, Any] | None = None, name: str = "dut"):
        self.instance_name = name
        self.parameters = dict(parameters or {})
        self._step_size = step_size
        self._configuration = dict(configuration or {})
        self.k = 0
        self.inputs: list[list] = []
        self.outputs: list[Signal] = []
        self.in_specs: tuple[PortSpec, ...] = ()
        self.out_specs: tuple[PortSpec, ...] = ()

    def parameter(self, name, default=MISSING):
        return self.parameters.get(name, default)

    @property
    def input_specs(self):
        return self.in_specs

    @property
    def output_specs(self):
        return self.out_specs

    def input(self, index):
        return self.inputs[index]

    def write_output(self, index, values):
        self.outputs[index].write(values)

    @property
    def step_size(self):
        return self._step_size

    @property
    def step_index(self):
        return self.k

    @property
    def time(self):
        return self.k * self._step_size

    def configuration(self, name, default=None):
        return self._configuration.get(name, default)


class BlockHarness:
    """Lifecycle driver for one block instance.

    ``input_widths`` gives the width of the signal feeding each input (the
    harness pretends a fixed-width source is connected there). Inputs
    declared non-feedthrough see the value fed on the previous step, exactly
    as under the engine.
    """

    def __init__(self, block, parameters: Mapping[str, Any] | None = None, *,
                 input_widths: Sequence[int] = (), input_dtypes: Sequence[DataType] | None = None,
                 step_size: float = 0.01, configuration: Mapping[str, Any] | None = None,
                 name: str = "dut"):
        self.block = block
        self.ctx = MockContext(parameters, step_size=step_size, configuration=configuration, name=name)
        self.input_widths = list(input_widths)
        self.input_dtypes = list(input_dtypes) if input_dtypes else None
        self.calls: list[str] = []
        self.ports: BlockPorts | None = None
        self._initialized = False
        self._terminated = False
        self._latched: dict[int, list] = {}

    def declare(self) -> BlockPorts:
        self.calls.append("declare_ports")
        self.declared = declare_block_ports(self.block, self.ctx)
        return self.declared

    def resolve(self) -> BlockPorts:
        declared = {self.ctx.instance_name: self.declared}
        conns = []
        n_in = len(self.declared.inputs)
        if len(self.input_widths) != n_in:
            raise ValueError(f"block declares {n_in} inputs, harness got {len(self.input_widths)} widths")
        for i, width in enumerate(self.input_widths):
            dtype = self.input_dtypes[i] if self.input_dtypes else self.declared.inputs[i].dtype
            declared[f"__src{i}"] = BlockPorts((), (output_port(0, width, dtype),))
            conns.append(Connection(f"__src{i}", 0, self.ctx.instance_name, i))
        self.ports = resolve_port_widths(conns, declared)[self.ctx.instance_name]
        ctx = self.ctx
        ctx.in_specs, ctx.out_specs = self.ports.inputs, self.ports.outputs
        ctx.inputs = [[s.dtype.zero()] * s.width for s in self.ports.inputs]
        ctx.outputs = [Signal(s.dtype, s.width) for s in self.ports.outputs]
        return self.ports

    def initialize(self) -> None:
        self.calls.append("initialize")
        self.block.initialize(self.ctx)
        self._initialized = True

    def setup(self) -> BlockHarness:
        """declare + resolve + initialize."""
        self.declare()
        self.resolve()
        self.initialize()
        return self

    def step(self, *inputs: Sequence[Any]) -> list[list]:
        """Feed one value list per input port, call ``output``, return the outputs."""
        ctx = self.ctx
        if len(inputs) != len(ctx.in_specs):
            raise ValueError(f"expected {len(ctx.in_specs)} inputs, got {len(inputs)}")
        for i, (spec, values) in enumerate(zip(ctx.in_specs, inputs)):
            values = [spec.dtype.coerce(v) for v in values]
            if len(values) != spec.width:
                raise ValueError(f"input {i}: expected width {spec.width}, got {len(values)}")
            if spec.feedthrough:
                ctx.inputs[i] = values
            else:
                ctx.inputs[i] = self._latched.get(i, [spec.dtype.zero()] * spec.width)
                self._latched[i] = values
        self.calls.append("output")
        self.block.output(ctx)
        ctx.k += 1
        return [list(sig.values) for sig in ctx.outputs]

    def run(self, input_sequence: Sequence[Sequence[Sequence[Any]]]) -> list[list[list]]:
        return [self.step(*inputs) for inputs in input_sequence]

    def terminate(self) -> None:
        self.calls.append("terminate")
        self.block.terminate(self.ctx)
        self._terminated = True


def scalar_outputs(outputs: Sequence[list[list]], port: int = 0) -> list:
    """Flatten per-step outputs of a width-1 port into a plain list."""
    return [step[port][0] for step in outputs]
