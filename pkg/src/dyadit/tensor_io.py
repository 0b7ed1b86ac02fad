"""On-disk tensor formats.

Tensor sets (datasets, generated clips): a directory holding ``manifest.json``
and one raw little-endian float32 file per clip field, ``clip_{i}_{field}.f32``.

Checkpoints: a directory holding ``meta.json`` and one raw little-endian
float32 file per named tensor of a module's state dict.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, IoError

SCHEMA_VERSION = 1
CHECKPOINT_FORMAT = 1
_F32 = np.dtype("<f4")


def _write_f32(path: Path, array) -> None:
    np.ascontiguousarray(np.asarray(array), dtype=_F32).tofile(path)


def _read_f32(path: Path, shape) -> np.ndarray:
    expected = int(np.prod(shape)) * _F32.itemsize
    try:
        size = path.stat().st_size
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if size != expected:
        raise FormatError(f"{path.name}: expected {expected} bytes for shape {list(shape)}, found {size}")
    return np.fromfile(path, dtype=_F32).reshape(shape)


def write_tensor_set(path, clips: list[dict], meta: dict | None = None, schema: str = "dyad-dataset") -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    entries = []
    for i, clip in enumerate(clips):
        fields = {}
        for name, array in clip.items():
            fname = f"clip_{i}_{name}.f32"
            _write_f32(path / fname, array)
            fields[name] = {"shape": list(np.shape(array)), "file": fname}
        entries.append({"index": i, "fields": fields})
    manifest = {"schema": schema, "schema_version": SCHEMA_VERSION, "clips": entries}
    manifest.update(meta or {})
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest in {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest.json is not valid JSON: {exc}") from exc
    found = manifest.get("schema_version")
    if found != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema version: found {found}, expected {SCHEMA_VERSION}")
    return manifest


def read_tensor_set(path) -> tuple[list[dict], dict]:
    path = Path(path)
    manifest = read_manifest(path)
    clips = []
    for entry in manifest["clips"]:
        clips.append({
            name: _read_f32(path / spec["file"], spec["shape"]) for name, spec in entry["fields"].items()
        })
    return clips, manifest


def save_checkpoint(path, module: torch.nn.Module, meta: dict) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    tensors = {}
    for name, tensor in module.state_dict().items():
        fname = f"{name}.f32"
        _write_f32(path / fname, tensor.detach().cpu().numpy())
        tensors[name] = {"shape": list(tensor.shape), "file": fname, "dtype": str(tensor.dtype)}
    doc = {"format_version": CHECKPOINT_FORMAT, "tensors": tensors}
    doc.update(meta)
    (path / "meta.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def read_checkpoint_meta(path) -> dict:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except OSError as exc:
        raise IoError(f"cannot read checkpoint meta in {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise FormatError(
            f"unsupported checkpoint format: found {meta.get('format_version')}, expected {CHECKPOINT_FORMAT}"
        )
    return meta


def load_state(path, module: torch.nn.Module) -> dict:
    """Load tensors into ``module`` in place; returns the checkpoint meta."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    own = module.state_dict()
    state = {}
    for name, spec in meta["tensors"].items():
        if name not in own:
            raise FormatError(f"checkpoint tensor {name} not present in module")
        array = _read_f32(path / spec["file"], spec["shape"])
        state[name] = torch.from_numpy(array.copy()).to(own[name].dtype)
    module.load_state_dict(state)
    return meta
