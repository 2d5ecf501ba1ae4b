"""Standard block library: sources, arithmetic, filters, PID, sinks and a pendulum plant.

Loaded by the engine as a plugin; nothing in blockflow imports this file directly.
"""
from __future__ import annotations

import math

from blockflow.core import (DYNAMIC, Block, DataType, format_value, input_port,
                            output_port)

ABI_VERSION = 1


def _broadcast(value: tuple, width: int) -> list:
    return list(value) * width if len(value) == 1 else list(value)


class Constant(Block):
    def declare_ports(self, ctx):
        value = ctx.get_vector("value")
        dtype = ctx.get_str("dtype", "float64")
        try:
            self.dtype = DataType(dtype)
        except ValueError:
            raise ctx.fail(f"unknown dtype '{dtype}'") from None
        self.value = [self.dtype.coerce(v) for v in value]
        return [output_port(0, len(value), self.dtype)]

    def output(self, ctx):
        ctx.write_output(0, self.value)


class SineSource(Block):
    """offset + amplitude * sin(2*pi*frequency*t + phase)."""

    def declare_ports(self, ctx):
        self.amplitude = ctx.get_float("amplitude", 1.0)
        self.frequency = ctx.get_float("frequency", 1.0)
        self.phase = ctx.get_float("phase", 0.0)
        self.offset = ctx.get_float("offset", 0.0)
        if self.frequency < 0:
            raise ctx.fail(f"frequency must be non-negative, got {self.frequency}")
        return [output_port(0, 1)]

    def output(self, ctx):
        ctx.write_output(0, [self.offset + self.amplitude * math.sin(
            2.0 * math.pi * self.frequency * ctx.time + self.phase)])


class StepSource(Block):
    def declare_ports(self, ctx):
        self.value = ctx.get_vector("value", 1.0)
        self.initial = ctx.get_vector("initial", 0.0)
        self.step_time = ctx.get_float("step_time", 0.0)
        if len(self.initial) not in (1, len(self.value)):
            raise ctx.fail("'initial' must be a scalar or match the length of 'value'")
        return [output_port(0, len(self.value))]

    def initialize(self, ctx):
        n = ctx.output_specs[0].width
        self.before = _broadcast(self.initial, n)
        self.after = list(self.value)

    def output(self, ctx):
        # small slack so that k*dt landing a rounding error short of step_time still switches
        late = ctx.time + 1e-9 * ctx.step_size >= self.step_time
        ctx.write_output(0, self.after if late else self.before)


class Gain(Block):
    def declare_ports(self, ctx):
        self.gain = ctx.get_vector("gain")
        width = len(self.gain) if len(self.gain) > 1 else DYNAMIC
        return [input_port(0, width), output_port(0, width)]

    def initialize(self, ctx):
        self.k = _broadcast(self.gain, ctx.output_specs[0].width)

    def output(self, ctx):
        ctx.write_output(0, [k * u for k, u in zip(self.k, ctx.input(0))])


class Sum(Block):
    """Signed elementwise sum; ``signs`` holds one '+' or '-' per input."""

    def declare_ports(self, ctx):
        signs = ctx.get_str("signs", "++")
        if not signs or set(signs) - {"+", "-"}:
            raise ctx.fail(f"signs must be a non-empty string of '+'/'-', got {signs!r}")
        self.signs = [1.0 if s == "+" else -1.0 for s in signs]
        return [input_port(i) for i in range(len(signs))] + [output_port(0)]

    def output(self, ctx):
        acc = None
        for i, sign in enumerate(self.signs):
            u = ctx.input(i)
            if acc is None:
                acc = list(u) if sign > 0 else [-x for x in u]
            elif sign > 0:
                acc = [a + x for a, x in zip(acc, u)]
            else:
                acc = [a - x for a, x in zip(acc, u)]
        ctx.write_output(0, acc)


class Saturation(Block):
    def declare_ports(self, ctx):
        self.lower = ctx.get_float("lower", -math.inf)
        self.upper = ctx.get_float("upper", math.inf)
        return [input_port(0), output_port(0)]

    def initialize(self, ctx):
        if self.lower > self.upper:
            raise ctx.fail(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    def output(self, ctx):
        lo, hi = self.lower, self.upper
        ctx.write_output(0, [lo if u < lo else hi if u > hi else u for u in ctx.input(0)])


class UnitDelay(Block):
    """One-step delay.

    Its input is declared non-feedthrough, so the engine hands it the value
    the producer held at the end of the previous step; the block only has to
    substitute the initial condition on step 0.
    """

    def declare_ports(self, ctx):
        self.x0 = ctx.get_vector("initial_condition", 0.0)
        width = len(self.x0) if len(self.x0) > 1 else DYNAMIC
        return [input_port(0, width, feedthrough=False), output_port(0, width)]

    def initialize(self, ctx):
        self.initial = _broadcast(self.x0, ctx.output_specs[0].width)

    def output(self, ctx):
        ctx.write_output(0, self.initial if ctx.step_index == 0 else ctx.input(0))


class Selector(Block):
    """Picks elements of the input by index."""

    def declare_ports(self, ctx):
        raw = ctx.get_vector("indices")
        if any(not x.is_integer() or x < 0 for x in raw):
            raise ctx.fail(f"indices must be non-negative integers, got {list(raw)}")
        self.indices = [int(x) for x in raw]
        return [input_port(0), output_port(0, len(self.indices))]

    def initialize(self, ctx):
        width = ctx.input_specs[0].width
        bad = [i for i in self.indices if i >= width]
        if bad:
            raise ctx.fail(f"indices {bad} out of range for input width {width}")

    def output(self, ctx):
        u = ctx.input(0)
        ctx.write_output(0, [u[i] for i in self.indices])


class DiscreteFilter(Block):
    """IIR filter in direct form II transposed, applied to each element independently.

    y[k] = sum_i b[i] u[k-i] - sum_{j>=1} a[j] y[k-j], after scaling so a[0] == 1.
    """

    def declare_ports(self, ctx):
        self.b = ctx.get_vector("numerator")
        self.a = ctx.get_vector("denominator", 1.0)
        return [input_port(0), output_port(0)]

    def initialize(self, ctx):
        a0 = self.a[0]
        if a0 == 0:
            raise ctx.fail("non-normalizable denominator (leading coefficient is 0)")
        n = max(len(self.a), len(self.b))
        self.bn = [x / a0 for x in self.b] + [0.0] * (n - len(self.b))
        self.an = [x / a0 for x in self.a] + [0.0] * (n - len(self.a))
        self.state = [[0.0] * (n - 1) for _ in range(ctx.input_specs[0].width)]

    def output(self, ctx):
        b, a = self.bn, self.an
        order = len(b) - 1
        y = []
        for u, z in zip(ctx.input(0), self.state):
            yk = b[0] * u + (z[0] if order else 0.0)
            for i in range(order - 1):
                z[i] = b[i + 1] * u + z[i + 1] - a[i + 1] * yk
            if order:
                z[order - 1] = b[order] * u - a[order] * yk
            y.append(yk)
        ctx.write_output(0, y)


class PID(Block):
    """Discrete PID on the error signal, elementwise.

    u = Kp*e + Ki*I + Kd*(e - e_prev)/dt with I = dt * running sum of e,
    optionally clamped to [integral_min, integral_max]. The previous error
    starts at 0.
    """

    def declare_ports(self, ctx):
        self.kp = ctx.get_float("Kp", 0.0)
        self.ki = ctx.get_float("Ki", 0.0)
        self.kd = ctx.get_float("Kd", 0.0)
        self.i_min = ctx.get_float("integral_min", -math.inf)
        self.i_max = ctx.get_float("integral_max", math.inf)
        return [input_port(0), output_port(0, finite_only=True)]

    def initialize(self, ctx):
        dt = ctx.step_size
        if not dt > 0:
            raise ctx.fail(f"sample time must be positive, got {dt}")
        if self.i_min > self.i_max:
            raise ctx.fail(f"integral_min {self.i_min} exceeds integral_max {self.i_max}")
        self.dt = dt
        width = ctx.input_specs[0].width
        self.integral = [0.0] * width
        self.prev = [0.0] * width

    def output(self, ctx):
        dt, lo, hi = self.dt, self.i_min, self.i_max
        u = []
        for i, e in enumerate(ctx.input(0)):
            acc = self.integral[i] + dt * e
            acc = lo if acc < lo else hi if acc > hi else acc
            self.integral[i] = acc
            u.append(self.kp * e + self.ki * acc + self.kd * (e - self.prev[i]) / dt)
            self.prev[i] = e
        ctx.write_output(0, u)


class Pendulum(Block):
    """Torque-driven pendulum, theta = 0 hanging straight down.

    Semi-implicit Euler: velocity first, then angle with the new velocity.
    Output is [theta, omega] after the update.
    """

    def declare_ports(self, ctx):
        self.m = ctx.get_float("mass", 1.0)
        self.l = ctx.get_float("length", 1.0)
        self.c = ctx.get_float("damping", 0.0)
        self.g = ctx.get_float("gravity", 9.81)
        self.theta0 = ctx.get_float("theta0", 0.0)
        self.omega0 = ctx.get_float("omega0", 0.0)
        if self.m <= 0 or self.l <= 0:
            raise ctx.fail(f"mass and length must be positive (mass={self.m}, length={self.l})")
        return [input_port(0, 1), output_port(0, 2, finite_only=True)]

    def initialize(self, ctx):
        self.theta = self.theta0
        self.omega = self.omega0
        self.inertia = self.m * self.l * self.l

    def output(self, ctx):
        dt = ctx.step_size
        tau = ctx.input(0)[0]
        self.omega += dt * (tau - self.m * self.g * self.l * math.sin(self.theta) - self.c * self.omega) / self.inertia
        self.theta += dt * self.omega
        ctx.write_output(0, [self.theta, self.omega])


class CsvSink(Block):
    """Writes its input to ``path`` as ``time,v0,...`` rows, one per step."""

    def __init__(self):
        self._fh = None
        self.rows = 0

    def declare_ports(self, ctx):
        self.path = ctx.get_str("path")
        return [input_port(0)]

    def initialize(self, ctx):
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise ctx.fail(f"cannot open {self.path}: {exc.strerror}") from None
        width = ctx.input_specs[0].width
        self._fh.write(",".join(["time"] + [f"v{i}" for i in range(width)]) + "\n")

    def output(self, ctx):
        self._fh.write(format_value(ctx.time) + "," + ",".join(map(format_value, ctx.input(0))) + "\n")
        self.rows += 1

    def terminate(self, ctx):
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError as exc:
                raise ctx.fail(f"cannot finalize {self.path}: {exc.strerror}") from None
            self._fh = None


_FACTORY = {cls.__name__: cls for cls in (
    Constant, SineSource, StepSource, Gain, Sum, Saturation, UnitDelay, Selector,
    DiscreteFilter, PID, Pendulum, CsvSink)}


def blockflow_plugin_manifest():
    return {"abi_version": ABI_VERSION, "labels": sorted(_FACTORY)}


def blockflow_create(label):
    cls = _FACTORY.get(label)
    return cls() if cls is not None else None
