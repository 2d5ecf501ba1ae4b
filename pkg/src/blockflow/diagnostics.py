"""Diagnostics shared by validation, the engine and generated programs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .core import BlockflowError

MODEL = "model"
PLUGIN = "plugin"
IO = "io"

EXIT_CODES = {MODEL: 1, PLUGIN: 2, IO: 3}


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    category: str = MODEL
    block: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {"code": self.code, "category": self.category, "message": self.message}
        if self.block is not None:
            d["block"] = self.block
        return d

    def __str__(self):
        return f"[{self.code}] {self.message}"


def exit_code_for(diagnostics: Iterable[Diagnostic]) -> int:
    """I/O beats plugin beats model; 0 when there is nothing to report."""
    return max((EXIT_CODES[d.category] for d in diagnostics), default=0)


class ModelError(BlockflowError):
    """One or more problems with a controller model."""

    def __init__(self, diagnostics: Sequence[Diagnostic] | Diagnostic):
        if isinstance(diagnostics, Diagnostic):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.diagnostics) or 1
