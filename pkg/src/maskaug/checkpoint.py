"""Tensor archive: ``manifest.json`` (names, shapes, dtypes, offsets) + ``tensors.bin``.

Payloads are raw little-endian bytes laid out in manifest order, so an
archive reloads bit-exactly and re-saving it reproduces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT = "maskaug-archive/1"
MANIFEST = "manifest.json"
PAYLOAD = "tensors.bin"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


class IncompatibleCheckpoint(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CheckpointBundle:
    """Named tensors plus JSON-serializable metadata."""

    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))

    def save(self, directory: str | os.PathLike) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries, offset = [], 0
        tmp_payload = directory / (PAYLOAD + ".tmp")
        with open(tmp_payload, "wb") as fh:
            for name, t in self.tensors.items():
                t = t.detach().cpu().contiguous()
                if t.dtype not in _DTYPES:
                    raise TypeError(f"unsupported dtype {t.dtype} for {name}")
                raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
                entries.append(
                    {
                        "name": name,
                        "shape": list(t.shape),
                        "dtype": _DTYPES[t.dtype],
                        "offset": offset,
                        "nbytes": len(raw),
                    }
                )
                fh.write(raw)
                offset += len(raw)
        manifest = {"format": FORMAT, "meta": self.meta, "tensors": entries}
        tmp_manifest = directory / (MANIFEST + ".tmp")
        tmp_manifest.write_text(canonical_json(manifest))
        os.replace(tmp_payload, directory / PAYLOAD)
        os.replace(tmp_manifest, directory / MANIFEST)
        return directory

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "CheckpointBundle":
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST).read_text())
        if manifest.get("format") != FORMAT:
            raise IncompatibleCheckpoint(f"{directory}: unknown archive format {manifest.get('format')!r}")
        payload = (directory / PAYLOAD).read_bytes()
        tensors = {}
        for e in manifest["tensors"]:
            chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise IncompatibleCheckpoint(f"{directory}: truncated payload for {e['name']}")
            arr = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
            tensors[e["name"]] = torch.from_numpy(arr.copy())
        return cls(tensors, manifest["meta"])
