"""Self-describing, byte-deterministic artifact containers.

Checkpoints and dictionaries are stored as .npz archives holding the
arrays plus a single JSON metadata entry.  np.savez output is
byte-stable across processes (unlike pickle-based formats), which the
reproducibility contract relies on.  Every container carries a format
version and the fingerprints of the configs it was produced under.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError, DataError

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def config_fingerprint(config_dict: dict) -> str:
    """Short stable hash of a JSON-serializable config mapping."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write arrays + metadata to path as a deterministic npz container."""
    if _META_KEY in arrays:
        raise ValueError(f"array name {_META_KEY!r} is reserved")
    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta}
    payload = {name: np.ascontiguousarray(arr) for name, arr in sorted(arrays.items())}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **{_META_KEY: np.array(json.dumps(header, sort_keys=True))},
                 **payload)


def load_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; returns (meta, arrays). Checks kind when given."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            if _META_KEY not in npz:
                raise DataError(f"{path}: not a speechscrub container (missing metadata)")
            header = json.loads(str(npz[_META_KEY]))
            arrays = {name: npz[name] for name in npz.files if name != _META_KEY}
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load container {path}: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version "
                        f"{header.get('format_version')}")
    if kind is not None and header.get("kind") != kind:
        raise DataError(f"{path}: expected a {kind!r} container, found "
                        f"{header.get('kind')!r}")
    return header["meta"], arrays


def check_fingerprint(expected: str, actual: str, what: str) -> None:
    if expected != actual:
        raise CheckpointMismatchError(
            f"{what} fingerprint mismatch: checkpoint was built under {expected}, "
            f"current configuration is {actual}"
        )
