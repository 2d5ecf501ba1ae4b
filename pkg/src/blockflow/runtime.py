"""Services shared by the interpreter and by generated programs.

Kept free of any graph-file or scheduling code: a generated bundle imports
this module at run time and nothing from the front end.
"""
from __future__ import annotations

import enum
import gc
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .core import format_value

MIN_REALTIME_STEP = 1e-3
_SPIN_WINDOW = 2e-4


class Pacing(str, enum.Enum):
    FREE = "free"
    REALTIME = "realtime"


def parse_log_target(text: str) -> tuple[str, int, Path]:
    """``"plant.0=out.csv"`` -> ``("plant", 0, Path("out.csv"))``."""
    target, sep, path = text.partition("=")
    block, dot, port = target.rpartition(".")
    if not sep or not path or not dot or not block or not port.isdigit():
        raise ValueError(f"log target {text!r} must look like block.port=path")
    return block, int(port), Path(path)


class CsvLog:
    """One CSV file per logged output port: ``time,v0,v1,...`` then a row per step."""

    def __init__(self, path: Path | str, width: int):
        self.path = Path(path)
        self.width = width
        self.rows = 0
        self._fh = open(self.path, "w", newline="")
        self._fh.write(",".join(["time"] + [f"v{i}" for i in range(width)]) + "\n")

    def write(self, t: float, values: Sequence[Any]) -> None:
        self._fh.write(format_value(t) + "," + ",".join(map(format_value, values)) + "\n")
        self.rows += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


class Pacer:
    """Holds step ``k`` back until ``k * step_size`` after :meth:`start`.

    Late steps are not skipped; the loop simply carries on and the step that
    ran long is counted as an overrun. The cyclic garbage collector is paused
    between :meth:`start` and :meth:`stop` so a full collection cannot land
    in the middle of a step.
    """

    def __init__(self, step_size: float, clock=time.perf_counter, sleep=time.sleep):
        self.step_size = step_size
        self.overruns = 0
        self.start_errors: list[float] = []
        self._clock = clock
        self._sleep = sleep
        self._t0 = 0.0
        self._gc_was_enabled = False

    def start(self) -> float:
        """Begin pacing; returns the instant step 0 is due."""
        self._gc_was_enabled = gc.isenabled()
        gc.collect()
        gc.disable()
        self._t0 = self._clock()
        return self._t0

    def stop(self) -> None:
        if self._gc_was_enabled:
            gc.enable()
            self._gc_was_enabled = False

    def wait_for(self, k: int) -> None:
        deadline = self._t0 + k * self.step_size
        remaining = deadline - self._clock()
        if remaining > _SPIN_WINDOW:
            self._sleep(remaining - _SPIN_WINDOW)
        while self._clock() < deadline:
            pass

    def step_started(self, k: int) -> None:
        self.start_errors.append(self._clock() - (self._t0 + k * self.step_size))

    def step_finished(self, k: int) -> None:
        if self._clock() > self._t0 + (k + 1) * self.step_size:
            self.overruns += 1

    @property
    def mean_start_error(self) -> float:
        return sum(self.start_errors) / len(self.start_errors) if self.start_errors else 0.0


@dataclass
class RunReport:
    executed_steps: int
    wall_time: float
    per_block_time: dict[str, float]
    overruns: int = 0
    requested_steps: int | None = None
    pacing: str = Pacing.FREE.value
    overrides: dict[str, Any] = field(default_factory=dict)
    plugins: dict[str, dict[str, Any]] = field(default_factory=dict)
    mean_start_error: float = 0.0
    logs: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["overrides"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.overrides.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
