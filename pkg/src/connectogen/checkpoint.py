"""Single-file checkpoint container: JSON manifest plus raw named tensors.

Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON manifest,
then the concatenated tensor payload. The manifest records name/dtype/shape/offset
for every tensor and an arbitrary JSON "meta" block (configs, schedule constants,
RNG states, loss history), so checkpoints are self-describing and byte-stable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"NTENSOR1"


def write_container(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta}, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError(f"{path}: not a tensor container")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    try:
        manifest = json.loads(blob[16 : 16 + mlen].decode())
        entries = manifest["tensors"]
        meta = manifest["meta"]
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest: {exc}") from exc
    payload = blob[16 + mlen :]
    tensors = {}
    for entry in entries:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise FormatError(f"{path}: tensor {entry['name']} overruns payload")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=entry["dtype"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, meta


def state_dict_to_tensors(module: torch.nn.Module, prefix: str = "model") -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_dict_tensors(
    module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "model"
) -> None:
    state = {}
    head = prefix + "/"
    for name, arr in tensors.items():
        if name.startswith(head):
            state[name[len(head):]] = torch.from_numpy(arr.copy())
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise FormatError(f"checkpoint missing tensors: {sorted(missing)[:5]}")
    module.load_state_dict(state)
