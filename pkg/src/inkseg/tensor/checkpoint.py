"""Parameter checkpoints: a flat little-endian float64 blob plus a JSON manifest.

The manifest lists every tensor as ``{"name", "shape", "offset"}`` where the
offset is in bytes into ``params.bin``; free-form model metadata rides along
under ``"meta"``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import InputError
from ..formats import atomic_write

FORMAT = "inkseg-params"
VERSION = 1
PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"


def save_checkpoint(directory, params: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, value in params.items():
        a = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = {"format": FORMAT, "version": VERSION, "dtype": "<f8",
                "tensors": entries, "meta": meta or {}}
    atomic_write(directory / PARAMS_FILE, b"".join(chunks))
    atomic_write(directory / MANIFEST_FILE, json.dumps(manifest, indent=1, ensure_ascii=False, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_FILE).read_text("utf-8"))
        blob = (directory / PARAMS_FILE).read_bytes()
    except FileNotFoundError as exc:
        raise InputError(f"checkpoint not found: {exc.filename}") from None
    if manifest.get("format") != FORMAT:
        raise InputError(f"{directory}: not an {FORMAT} checkpoint")
    params = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"])
        params[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return params, manifest.get("meta", {})
