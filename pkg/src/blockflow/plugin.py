"""Runtime discovery and loading of block plugin libraries.

A plugin library is any file Python can load as a module, either a ``.py``
source file or a compiled extension module, that exports two symbols:

``blockflow_plugin_manifest``
    a callable returning ``{"abi_version": int, "labels": [str, ...]}``
``blockflow_create``
    a factory taking a label and returning a fresh block instance

The host never imports the block classes directly. It only knows a library
basename and a label, the same two facts a C++ factory plugin would need.
"""
from __future__ import annotations

import difflib
import hashlib
import importlib.machinery
import importlib.util
import logging
import os
import sys
import threading
from dataclasses import dataclass
from pathlib import Path
from types import ModuleType
from typing import Iterable, Sequence

from .core import Block, BlockflowError

log = logging.getLogger(__name__)

HOST_ABI_VERSION = 1
PLUGIN_PATH_ENV = "BLOCKFLOW_PLUGIN_PATH"
MANIFEST_SYMBOL = "blockflow_plugin_manifest"
FACTORY_SYMBOL = "blockflow_create"
BUILTIN_PLUGIN_DIR = Path(__file__).resolve().parent / "plugins"

_LIFECYCLE = ("declare_ports", "initialize", "output", "terminate")


class PluginError(BlockflowError):
    """Anything that goes wrong finding, loading or using a plugin library."""


class PluginNotFound(PluginError):
    def __init__(self, library: str, probed: Sequence[Path]):
        self.library = library
        self.probed = list(probed)
        listing = "\n".join(f"  {p}" for p in self.probed) or "  (no search paths configured)"
        super().__init__(f"plugin library '{library}' not found; probed:\n{listing}")


class ABIMismatch(PluginError):
    def __init__(self, path: Path, plugin_abi: int, host_abi: int = HOST_ABI_VERSION):
        self.path = path
        self.plugin_abi = plugin_abi
        self.host_abi = host_abi
        super().__init__(f"{path}: plugin ABI {plugin_abi}, host ABI {host_abi}")


class UnknownLabel(PluginError):
    def __init__(self, library: str, label: str, available: Sequence[str]):
        self.library = library
        self.label = label
        self.available = list(available)
        close = difflib.get_close_matches(label, self.available, n=1)
        self.suggestion = close[0] if close else None
        hint = f"; did you mean '{self.suggestion}'?" if self.suggestion else ""
        super().__init__(
            f"library '{library}' has no block '{label}'{hint} "
            f"(available: {', '.join(self.available)})")


@dataclass(frozen=True)
class PluginManifest:
    abi_version: int
    labels: tuple[str, ...]

    @classmethod
    def from_raw(cls, raw, path: Path) -> PluginManifest:
        try:
            abi = raw["abi_version"]
            labels = tuple(raw["labels"])
        except (TypeError, KeyError) as exc:
            raise PluginError(f"{path}: malformed manifest ({exc!r})") from None
        if isinstance(abi, bool) or not isinstance(abi, int):
            raise PluginError(f"{path}: manifest abi_version must be an integer, got {abi!r}")
        if not labels:
            raise PluginError(f"{path}: manifest lists no labels")
        if not all(isinstance(lbl, str) and lbl for lbl in labels):
            raise PluginError(f"{path}: manifest labels must be non-empty strings")
        if len(set(labels)) != len(labels):
            dupes = sorted({lbl for lbl in labels if labels.count(lbl) > 1})
            raise PluginError(f"{path}: duplicate labels in manifest: {', '.join(dupes)}")
        return cls(abi, labels)


@dataclass(frozen=True)
class LoadedPlugin:
    name: str
    path: Path
    sha256: str
    manifest: PluginManifest
    module: ModuleType

    def describe(self) -> dict:
        return {"path": str(self.path), "sha256": self.sha256,
                "abi_version": self.manifest.abi_version}


def library_filenames(basename: str) -> list[str]:
    """Candidate file names for a library basename, in probe order."""
    return [basename + suffix for suffix in importlib.machinery.EXTENSION_SUFFIXES] + [basename + ".py"]


def env_search_paths(environ=None) -> list[Path]:
    raw = (os.environ if environ is None else environ).get(PLUGIN_PATH_ENV, "")
    return [Path(p) for p in raw.split(os.pathsep) if p]


def discover(basename: str, search_paths: Iterable[Path]) -> Path:
    """First matching library file along ``search_paths``."""
    if not basename or os.sep in basename or (os.altsep and os.altsep in basename):
        raise PluginError(f"invalid plugin library name {basename!r}")
    probed = []
    for directory in search_paths:
        for fname in library_filenames(basename):
            candidate = Path(directory) / fname
            probed.append(candidate)
            if candidate.is_file():
                return candidate.resolve()
    raise PluginNotFound(basename, probed)


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# process-wide: one module object per library file, whichever registry asks
_MODULE_CACHE: dict[Path, ModuleType] = {}
_LOAD_LOCK = threading.Lock()


def _load_module(path: Path) -> ModuleType:
    path = path.resolve()
    with _LOAD_LOCK:
        cached = _MODULE_CACHE.get(path)
        if cached is not None:
            return cached
        stem = path.name.split(".")[0]
        if path.suffix == ".py":
            mod_name = f"_blockflow_plugin_{stem}_{hashlib.sha1(str(path).encode()).hexdigest()[:10]}"
            loader = importlib.machinery.SourceFileLoader(mod_name, str(path))
        else:
            # extension modules must be imported under their PyInit_<name>
            mod_name = stem
            loader = importlib.machinery.ExtensionFileLoader(mod_name, str(path))
        spec = importlib.util.spec_from_file_location(mod_name, str(path), loader=loader)
        try:
            module = importlib.util.module_from_spec(spec)
            sys.modules[mod_name] = module
            spec.loader.exec_module(module)
        except Exception as exc:
            sys.modules.pop(mod_name, None)
            raise PluginError(f"failed to load plugin {path}: {type(exc).__name__}: {exc}") from exc
        _MODULE_CACHE[path] = module
        log.debug("loaded plugin %s as %s", path, mod_name)
        return module


def _read_manifest(module: ModuleType, path: Path) -> PluginManifest:
    entry = getattr(module, MANIFEST_SYMBOL, None)
    if entry is None:
        raise PluginError(f"{path}: missing entry symbol '{MANIFEST_SYMBOL}'")
    raw = entry() if callable(entry) else entry
    manifest = PluginManifest.from_raw(raw, path)
    if manifest.abi_version != HOST_ABI_VERSION:
        raise ABIMismatch(path, manifest.abi_version, HOST_ABI_VERSION)
    if not callable(getattr(module, FACTORY_SYMBOL, None)):
        raise PluginError(f"{path}: missing factory symbol '{FACTORY_SYMBOL}'")
    return manifest


def load_manifest(path: Path | str) -> PluginManifest:
    path = Path(path)
    if not path.is_file():
        raise PluginError(f"plugin file {path} does not exist")
    return _read_manifest(_load_module(path), path)


class PluginRegistry:
    """Resolves library basenames to loaded plugins and instantiates blocks.

    Search order: ``search_paths`` as given (command-line flags), then the
    entries of ``BLOCKFLOW_PLUGIN_PATH``, then the directory holding the
    bundled libraries.
    """

    def __init__(self, search_paths: Iterable[Path | str] = (), *, use_env: bool = True,
                 include_builtin: bool = True, environ=None):
        paths = [Path(p) for p in search_paths]
        if use_env:
            paths += env_search_paths(environ)
        if include_builtin:
            paths.append(BUILTIN_PLUGIN_DIR)
        self.search_paths: tuple[Path, ...] = tuple(paths)
        self._loaded: dict[str, LoadedPlugin] = {}
        self._lock = threading.Lock()

    @property
    def loaded(self) -> dict[str, LoadedPlugin]:
        return dict(self._loaded)

    def discover(self, library: str) -> Path:
        return discover(library, self.search_paths)

    def load(self, library: str) -> LoadedPlugin:
        with self._lock:
            plugin = self._loaded.get(library)
            if plugin is None:
                path = self.discover(library)
                module = _load_module(path)
                manifest = _read_manifest(module, path)
                plugin = LoadedPlugin(library, path, file_sha256(path), manifest, module)
                self._loaded[library] = plugin
            return plugin

    def manifest(self, library: str) -> PluginManifest:
        return self.load(library).manifest

    def check_label(self, library: str, label: str) -> None:
        labels = self.manifest(library).labels
        if label not in labels:
            raise UnknownLabel(library, label, labels)

    def instantiate(self, library: str, label: str) -> Block:
        plugin = self.load(library)
        self.check_label(library, label)
        factory = getattr(plugin.module, FACTORY_SYMBOL)
        try:
            block = factory(label)
        except Exception as exc:
            raise PluginError(f"factory of '{library}' failed for '{label}': {exc}") from exc
        if block is None:
            raise PluginError(f"factory of '{library}' returned nothing for '{label}'")
        missing = [m for m in _LIFECYCLE if not callable(getattr(block, m, None))]
        if missing:
            raise PluginError(
                f"'{library}:{label}' does not implement the block lifecycle (missing {', '.join(missing)})")
        return block
