"""Interpreting engine: builds block instances from a model and steps them."""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import MISSING, BlockContext, BlockError, PortSpec, Signal
from .graph import (BlockDescriptor, BlockPorts, Diagnostic, GraphModel, ModelError, Schedule,
                    declare_block_ports, dependency_edges, resolve_widths)
from .plugin import PluginError, PluginRegistry
from .runtime import MIN_REALTIME_STEP, CsvLog, Pacer, Pacing, RunReport, parse_log_target

log = logging.getLogger(__name__)

__all__ = ["Engine", "EngineContext", "RunConfig", "RunReport", "StepError", "Pacing",
           "build_engine", "parse_override"]


class StepError(BlockError):
    """A block failed while the engine was stepping; carries step index and instance."""


@dataclass
class RunConfig:
    steps: int | None = 0
    pacing: Pacing = Pacing.FREE
    log_targets: Sequence[tuple[str, int, Path]] = ()
    parameter_overrides: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.pacing = Pacing(self.pacing)
        if self.steps is not None and self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        self.log_targets = [parse_log_target(t) if isinstance(t, str) else t for t in self.log_targets]


def parse_override(text: str) -> tuple[str, Any]:
    """``"pid.Kp=12.5"`` -> ``("pid.Kp", 12.5)``; values are JSON, else plain strings."""
    key, sep, raw = text.partition("=")
    blk, dot, param = key.rpartition(".")
    if not sep or not dot or not blk or not param.isidentifier():
        raise ValueError(f"override {text!r} must look like block.param=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


class _Clock:
    __slots__ = ("k", "t", "dt")

    def __init__(self, dt: float):
        self.k = 0
        self.t = 0.0
        self.dt = dt


class EngineContext(BlockContext):
    def __init__(self, descriptor: BlockDescriptor, clock: _Clock, configuration: Mapping[str, Any]):
        self.instance_name = descriptor.name
        self._params = descriptor.params
        self._clock = clock
        self._configuration = configuration
        self._in_specs: tuple[PortSpec, ...] = ()
        self._out_specs: tuple[PortSpec, ...] = ()
        self.inputs: list[list] = []
        self.outputs: list[Signal] = []

    def parameter(self, name, default=MISSING):
        return self._params.get(name, default)

    @property
    def input_specs(self):
        return self._in_specs

    @property
    def output_specs(self):
        return self._out_specs

    def input(self, index):
        return self.inputs[index]

    def write_output(self, index, values):
        try:
            self.outputs[index].write(values)
        except (ValueError, TypeError, OverflowError) as exc:
            raise self.fail(f"output {index}: {exc}") from None

    @property
    def step_size(self):
        return self._clock.dt

    @property
    def step_index(self):
        return self._clock.k

    @property
    def time(self):
        return self._clock.t

    def configuration(self, name, default=None):
        return self._configuration.get(name, default)


class Engine:
    """A built, initialized controller ready to step.

    Use :meth:`build` (or :func:`build_engine`) rather than the constructor.
    """

    def __init__(self, model: GraphModel, schedule: Schedule, registry: PluginRegistry,
                 overrides: Mapping[str, Any]):
        self.model = model
        self.schedule = schedule
        self.registry = registry
        self.overrides = dict(overrides)
        self._clock = _Clock(model.step_size)
        self.blocks: dict[str, Any] = {}
        self.contexts: dict[str, EngineContext] = {}
        self.ports: dict[str, BlockPorts] = {}
        self._initialized: list[str] = []
        self._plan: list[tuple[str, Any, EngineContext, list[tuple[int, Signal]]]] = []
        self._logs: list[tuple[CsvLog, Signal]] = []
        self._latches: list[tuple[list, list]] = []
        self._block_time: dict[str, float] = {}
        self._stop = threading.Event()
        self._terminated = False

    # -- construction ----------------------------------------------------------

    @classmethod
    def build(cls, model: GraphModel, schedule: Schedule, registry: PluginRegistry,
              overrides: Mapping[str, Any] | None = None) -> Engine:
        overrides = dict(overrides or {})
        if overrides:
            model = model.with_overrides(overrides)
        eng = cls(model, schedule, registry, overrides)
        eng._instantiate()
        eng._allocate()
        eng._initialize()
        return eng

    def _instantiate(self):
        descs = {b.name: b for b in self.model.blocks}
        if sorted(descs) != sorted(self.schedule.order) or len(descs) != len(self.model.blocks):
            raise ModelError(Diagnostic("schedule-mismatch", "schedule does not cover the model's blocks"))
        declared = {}
        for name in self.schedule.order:
            desc = descs[name]
            try:
                block = self.registry.instantiate(desc.library, desc.label)
            except PluginError as exc:
                raise PluginError(f"block '{name}': {exc}") from exc
            ctx = EngineContext(desc, self._clock, self.model.configuration)
            declared[name] = declare_block_ports(block, ctx)
            self.blocks[name] = block
            self.contexts[name] = ctx
        self.ports = resolve_widths(self.model, declared)
        pos = {n: i for i, n in enumerate(self.schedule.order)}
        for a, b in dependency_edges(self.model.connections, self.ports):
            if pos[a] >= pos[b]:
                raise ModelError(Diagnostic(
                    "schedule-mismatch", f"schedule runs '{b}' before its producer '{a}'"))

    def _allocate(self):
        signals: dict[tuple[str, int], Signal] = {}
        for name in self.schedule.order:
            ctx = self.contexts[name]
            ports = self.ports[name]
            ctx._in_specs, ctx._out_specs = ports.inputs, ports.outputs
            ctx.outputs = [Signal(s.dtype, s.width) for s in ports.outputs]
            for s, sig in zip(ports.outputs, ctx.outputs):
                signals[(name, s.index)] = sig
        feeds = {(c.to_block, c.to_port): (c.from_block, c.from_port) for c in self.model.connections}
        for name in self.schedule.order:
            ctx = self.contexts[name]
            ctx.inputs = []
            for s in self.ports[name].inputs:
                src = signals[feeds[(name, s.index)]].values
                if s.feedthrough:
                    # shares the producer's list, so this step's write is visible without copying
                    ctx.inputs.append(src)
                else:
                    # non-feedthrough inputs see the producer's value as of the end of the previous step
                    latch = list(src)
                    self._latches.append((latch, src))
                    ctx.inputs.append(latch)
            checks = [(s.index, ctx.outputs[s.index]) for s in self.ports[name].outputs if s.finite_only]
            self._plan.append((name, self.blocks[name], ctx, checks))
            self._block_time[name] = 0.0
        self._signals = signals

    def _initialize(self):
        for name in self.schedule.order:
            try:
                self.blocks[name].initialize(self.contexts[name])
            except Exception as exc:
                reason = exc.reason if isinstance(exc, BlockError) else f"{type(exc).__name__}: {exc}"
                self._terminate_initialized()
                raise BlockError(f"initialize failed: {reason}", instance=name) from exc
            self._initialized.append(name)

    # -- execution -------------------------------------------------------------

    @property
    def step_index(self) -> int:
        return self._clock.k

    @property
    def time(self) -> float:
        return self._clock.t

    def signal(self, block: str, port: int) -> Signal:
        try:
            return self._signals[(block, port)]
        except KeyError:
            raise ModelError(Diagnostic("bad-target", f"no output port {block}.{port}")) from None

    def request_stop(self) -> None:
        """Ask a running loop to stop at the next step boundary (thread-safe)."""
        self._stop.set()

    def step(self) -> None:
        if self._terminated:
            raise RuntimeError("engine has been terminated")
        clock = self._clock
        k = clock.k
        clock.t = k * clock.dt
        perf = time.perf_counter
        block_time = self._block_time
        for name, block, ctx, checks in self._plan:
            t0 = perf()
            try:
                block.output(ctx)
            except BlockError as exc:
                raise StepError(exc.reason, instance=name, step=k) from exc
            except Exception as exc:
                raise StepError(f"{type(exc).__name__}: {exc}", instance=name, step=k) from exc
            block_time[name] += perf() - t0
            for idx, sig in checks:
                if not sig.is_finite():
                    raise StepError(f"non-finite value on output {idx}: {sig.values}", instance=name, step=k)
        for csv_log, sig in self._logs:
            csv_log.write(clock.t, sig.values)
        for latch, src in self._latches:
            latch[:] = src
        clock.k = k + 1

    def run(self, cfg: RunConfig) -> RunReport:
        """Step according to ``cfg`` and terminate every block, even on failure."""
        pacer = None
        try:
            if cfg.pacing is Pacing.REALTIME:
                if self.model.step_size < MIN_REALTIME_STEP:
                    raise ModelError(Diagnostic(
                        "pacing", f"realtime pacing needs stepSize >= {MIN_REALTIME_STEP} s, "
                                  f"got {self.model.step_size}"))
                pacer = Pacer(self.model.step_size)
            for block, port, path in cfg.log_targets:
                sig = self.signal(block, port)
                self._logs.append((CsvLog(path, sig.width), sig))
            t_start = pacer.start() if pacer else time.perf_counter()
            executed = 0
            while (cfg.steps is None or executed < cfg.steps) and not self._stop.is_set():
                if pacer:
                    pacer.wait_for(executed)
                    pacer.step_started(executed)
                self.step()
                if pacer:
                    pacer.step_finished(executed)
                executed += 1
            if pacer:
                pacer.wait_for(executed)
            wall = time.perf_counter() - t_start
        finally:
            if pacer:
                pacer.stop()
            for csv_log, _ in self._logs:
                csv_log.close()
            self.terminate()
        return RunReport(
            executed_steps=executed,
            wall_time=wall,
            per_block_time=dict(self._block_time),
            overruns=pacer.overruns if pacer else 0,
            requested_steps=cfg.steps,
            pacing=cfg.pacing.value,
            overrides=dict(self.overrides),
            plugins=self.plugin_info(),
            mean_start_error=pacer.mean_start_error if pacer else 0.0,
            logs={f"{b}.{p}": str(path) for b, p, path in cfg.log_targets},
        )

    def plugin_info(self) -> dict[str, dict[str, Any]]:
        used = {b.library for b in self.model.blocks}
        return {name: p.describe() for name, p in sorted(self.registry.loaded.items()) if name in used}

    def _terminate_initialized(self) -> list[BlockError]:
        errors = []
        for name in reversed(self._initialized):
            try:
                self.blocks[name].terminate(self.contexts[name])
            except Exception as exc:
                log.error("terminate of '%s' failed: %s", name, exc)
                errors.append(BlockError(f"terminate failed: {exc}", instance=name))
        self._initialized.clear()
        return errors

    def terminate(self) -> None:
        """Terminate all initialized blocks; safe to call more than once."""
        if self._terminated:
            return
        self._terminated = True
        errors = self._terminate_initialized()
        if errors:
            raise errors[0]


def build_engine(model: GraphModel, schedule: Schedule, registry: PluginRegistry,
                 overrides: Mapping[str, Any] | None = None) -> Engine:
    return Engine.build(model, schedule, registry, overrides)
