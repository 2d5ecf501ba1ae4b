"""Block lifecycle and engine-information contracts.

A block only ever talks to the engine through a :class:`BlockContext`, and the
engine only ever drives a block through the four :class:`Block` lifecycle
methods. Nothing else crosses the boundary, which is what lets one plugin be
run by the interpreter, by a generated program, or by :mod:`blockflow.testing`
without any change.
"""
from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Any, Sequence, Tuple, Union

DYNAMIC = -1
"""Width sentinel: the port adopts the width of whatever it is connected to."""


class BlockflowError(Exception):
    """Base class of every error raised by blockflow."""


class BlockError(BlockflowError):
    """A block rejected its configuration or failed during a lifecycle call."""

    def __init__(self, message: str, instance: str | None = None, step: int | None = None):
        self.instance = instance
        self.step = step
        self.reason = message
        prefix = []
        if instance is not None:
            prefix.append(f"block '{instance}'")
        if step is not None:
            prefix.append(f"step {step}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)


class DataType(enum.Enum):
    FLOAT64 = "float64"
    INT32 = "int32"
    BOOL = "bool"

    def coerce(self, value: Any) -> float | int | bool:
        if self is DataType.FLOAT64:
            return float(value)
        if self is DataType.INT32:
            v = int(value)
            if not -(2**31) <= v < 2**31:
                raise OverflowError(f"{v} does not fit in int32")
            return v
        return bool(value)

    def zero(self) -> float | int | bool:
        return {DataType.FLOAT64: 0.0, DataType.INT32: 0, DataType.BOOL: False}[self]


class Direction(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


@dataclass(frozen=True)
class PortSpec:
    """Declared shape of one port.

    ``feedthrough`` only matters for inputs: ``False`` means the current-step
    value of this input does not influence the current-step outputs, so the
    scheduler may drop the dependency edge (unit delays). ``finite_only`` only
    matters for outputs: the engine faults the step if a non-finite value is
    written there.
    """

    index: int
    width: int = DYNAMIC
    dtype: DataType = DataType.FLOAT64
    direction: Direction = Direction.INPUT
    feedthrough: bool = True
    finite_only: bool = False

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"port index must be non-negative, got {self.index}")
        if self.width != DYNAMIC and self.width <= 0:
            raise ValueError(f"port width must be positive or DYNAMIC, got {self.width}")

    @property
    def is_dynamic(self) -> bool:
        return self.width == DYNAMIC

    def with_width(self, width: int) -> PortSpec:
        return replace(self, width=width)

    def describe(self) -> dict[str, Any]:
        d = {
            "index": self.index,
            "width": "dynamic" if self.is_dynamic else self.width,
            "dtype": self.dtype.value,
        }
        if self.direction is Direction.INPUT:
            d["feedthrough"] = self.feedthrough
        else:
            d["finite_only"] = self.finite_only
        return d


def input_port(index: int, width: int = DYNAMIC, dtype: DataType = DataType.FLOAT64,
               feedthrough: bool = True) -> PortSpec:
    return PortSpec(index, width, dtype, Direction.INPUT, feedthrough=feedthrough)


def output_port(index: int, width: int = DYNAMIC, dtype: DataType = DataType.FLOAT64,
                finite_only: bool = False) -> PortSpec:
    return PortSpec(index, width, dtype, Direction.OUTPUT, finite_only=finite_only)


def split_ports(specs: Sequence[PortSpec]) -> tuple[tuple[PortSpec, ...], tuple[PortSpec, ...]]:
    """Split a declarePorts result into (inputs, outputs), both sorted by index.

    Raises ValueError unless indices are contiguous from 0 in each direction.
    """
    inputs = sorted((s for s in specs if s.direction is Direction.INPUT), key=lambda s: s.index)
    outputs = sorted((s for s in specs if s.direction is Direction.OUTPUT), key=lambda s: s.index)
    for kind, group in (("input", inputs), ("output", outputs)):
        got = [s.index for s in group]
        if got != list(range(len(group))):
            raise ValueError(f"{kind} port indices must be contiguous from 0, got {got}")
    return tuple(inputs), tuple(outputs)


class Signal:
    """Fixed-width typed buffer written by one output port and read by its consumers."""

    __slots__ = ("dtype", "width", "values")

    def __init__(self, dtype: DataType, width: int):
        if width <= 0:
            raise ValueError(f"signal width must be positive, got {width}")
        self.dtype = dtype
        self.width = width
        self.values = [dtype.zero()] * width

    def write(self, values: Sequence[Any]) -> None:
        if len(values) != self.width:
            raise ValueError(f"expected {self.width} values, got {len(values)}")
        coerce = self.dtype.coerce
        # slice assignment keeps the list identity readers hold on to
        self.values[:] = [coerce(v) for v in values]

    def is_finite(self) -> bool:
        if self.dtype is not DataType.FLOAT64:
            return True
        return all(math.isfinite(v) for v in self.values)

    def __repr__(self):
        return f"Signal({self.dtype.value}, {self.values!r})"


# -- parameters ---------------------------------------------------------------

ParameterValue = Union[float, int, bool, str, Tuple[float, ...]]


def normalize_parameter_value(value: Any) -> ParameterValue:
    """Coerce a raw (JSON-ish) value into one of the five parameter kinds.

    Lists of numbers become float64 vectors; anything nested is rejected.
    """
    if isinstance(value, bool):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        return value
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError(f"vector parameters may only hold numbers, got {v!r}")
            out.append(float(v))
        return tuple(out)
    raise TypeError(f"unsupported parameter value {value!r} ({type(value).__name__})")


@dataclass(frozen=True)
class Parameter:
    name: str
    value: ParameterValue

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValueError(f"parameter name {self.name!r} is not an identifier")
        object.__setattr__(self, "value", normalize_parameter_value(self.value))


MISSING = object()


class BlockContext(ABC):
    """Everything a block may learn from, or hand to, the engine.

    Subclasses supply the storage; the typed parameter getters are shared so
    every engine reports bad parameters the same way.
    """

    instance_name: str = "<block>"

    @abstractmethod
    def parameter(self, name: str, default: Any = MISSING) -> Any:
        """Raw parameter value, or ``default`` when the block has no such parameter."""

    @property
    @abstractmethod
    def input_specs(self) -> Sequence[PortSpec]:
        """Resolved input specs (available from initialize onwards)."""

    @property
    @abstractmethod
    def output_specs(self) -> Sequence[PortSpec]:
        """Resolved output specs (available from initialize onwards)."""

    @abstractmethod
    def input(self, index: int) -> Sequence[Any]:
        """Current-step values on input ``index``. Do not mutate."""

    @abstractmethod
    def write_output(self, index: int, values: Sequence[Any]) -> None:
        """Publish this step's values on output ``index``."""

    @property
    @abstractmethod
    def step_size(self) -> float: ...

    @property
    @abstractmethod
    def step_index(self) -> int: ...

    @property
    @abstractmethod
    def time(self) -> float: ...

    @abstractmethod
    def configuration(self, name: str, default: Any = None) -> Any:
        """Model-level configuration entry."""

    # typed helpers

    def fail(self, message: str) -> BlockError:
        return BlockError(message, instance=self.instance_name)

    def _get(self, name, default):
        value = self.parameter(name, default)
        if value is MISSING:
            raise self.fail(f"missing required parameter '{name}'")
        return value

    def get_float(self, name: str, default: Any = MISSING) -> float:
        v = self._get(name, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.fail(f"parameter '{name}' must be a number, got {v!r}")
        return float(v)

    def get_int(self, name: str, default: Any = MISSING) -> int:
        v = self._get(name, default)
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.fail(f"parameter '{name}' must be an integer, got {v!r}")
        return v

    def get_bool(self, name: str, default: Any = MISSING) -> bool:
        v = self._get(name, default)
        if not isinstance(v, bool):
            raise self.fail(f"parameter '{name}' must be a bool, got {v!r}")
        return v

    def get_str(self, name: str, default: Any = MISSING) -> str:
        v = self._get(name, default)
        if not isinstance(v, str):
            raise self.fail(f"parameter '{name}' must be a string, got {v!r}")
        return v

    def get_vector(self, name: str, default: Any = MISSING) -> tuple[float, ...]:
        """Vector parameter; a scalar is accepted as a length-1 vector."""
        v = self._get(name, default)
        if isinstance(v, bool):
            raise self.fail(f"parameter '{name}' must be numeric, got {v!r}")
        if isinstance(v, (int, float)):
            return (float(v),)
        if isinstance(v, (tuple, list)) and v and all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            return tuple(float(x) for x in v)
        raise self.fail(f"parameter '{name}' must be a non-empty numeric vector, got {v!r}")


class Block(ABC):
    """Lifecycle every block implements.

    The engine calls, per instance, exactly: ``declare_ports`` once,
    ``initialize`` once, ``output`` once per step, ``terminate`` once.
    Failures are reported by raising :class:`BlockError`.
    """

    @abstractmethod
    def declare_ports(self, ctx: BlockContext) -> list[PortSpec]:
        ...

    def initialize(self, ctx: BlockContext) -> None:
        pass

    @abstractmethod
    def output(self, ctx: BlockContext) -> None:
        ...

    def terminate(self, ctx: BlockContext) -> None:
        pass


def format_value(v: float | int | bool) -> str:
    """Text form used in CSV logs; 17 significant digits round-trip a float64 exactly."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    return "%.17g" % v


def step_time(step_index: int, step_size: float) -> float:
    """Simulation time of a step, from the integer index (no accumulated drift)."""
    return step_index * step_size
