"""Atomic file writes, content hashing, and run manifests."""

from __future__ import annotations

import contextlib
import datetime
import hashlib
import json
import os
import platform
import tempfile
from collections.abc import Iterable, Mapping
from pathlib import Path


@contextlib.contextmanager
def atomic_open(path: str | Path, mode: str = "w"):
    """Open a temp file in the target directory; rename over the target
    only after the body completes without raising."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".tmp")
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8"}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    with atomic_open(path, "w") as fh:
        fh.write(text)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    with atomic_open(path, "wb") as fh:
        fh.write(data)


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(
    manifest_path: str | Path,
    command: str,
    parameters: Mapping,
    inputs: Iterable[str | Path],
    outputs: Iterable[str | Path],
) -> dict:
    """Record a run: parameters plus content hashes of inputs and outputs.

    The timestamp is the only non-deterministic field; artifact files
    themselves never carry one.
    """
    import numpy

    from . import __version__

    manifest = {
        "command": command,
        "parameters": {k: v for k, v in sorted(parameters.items())},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "versions": {
            "topicmix": __version__,
            "python": platform.python_version(),
            "numpy": numpy.__version__,
        },
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    atomic_write_json(manifest_path, manifest)
    return manifest
