"""blockflow: synchronous dataflow runtime for plugin-based block diagrams."""
import importlib

from .core import (DYNAMIC, Block, BlockContext, BlockError, BlockflowError, DataType, PortSpec,
                   Signal, input_port, output_port)
from .diagnostics import Diagnostic, ModelError
from .plugin import HOST_ABI_VERSION, PluginError, PluginRegistry

__version__ = "0.1.0"

# Front-end names load on first use, so a generated program that imports
# blockflow.core never drags in the graph loader or scheduler.
_LAZY = {
    "Engine": "engine", "RunConfig": "engine", "RunReport": "runtime", "StepError": "engine",
    "build_engine": "engine",
    "AlgebraicLoopError": "graph", "GraphModel": "graph", "Schedule": "graph",
    "compute_schedule": "graph", "load_graph": "graph", "resolve_widths": "graph", "validate": "graph",
}

__all__ = ["DYNAMIC", "Block", "BlockContext", "BlockError", "BlockflowError", "DataType", "PortSpec",
           "Signal", "input_port", "output_port", "Diagnostic", "ModelError", "HOST_ABI_VERSION",
           "PluginError", "PluginRegistry", *_LAZY]


def __getattr__(name):
    if name in _LAZY:
        value = getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
        globals()[name] = value
        return value
    raise AttributeError(f"module 'blockflow' has no attribute {name!r}")
