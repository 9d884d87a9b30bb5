"""Checkpoint file format: human-readable manifest + binary payload.

Layout:
    magic (10 bytes)  b"RWKVPv4MP\\0"
    u32 little-endian manifest byte length
    manifest: canonical JSON (sorted keys, no whitespace), holding the
        format version, the model config, the tensor directory
        (name/shape/offset/length into the payload), the freeze mask, and
        the seed lineage
    payload: contiguous little-endian float32 tensor data, directory order

Tensors are written sorted by name, so save -> load -> save is
byte-identical and the format is platform independent.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from rwkvp.model import ModelConfig
from rwkvp.params import FreezeMask, ParamStore

MAGIC = b"RWKVPv4MP\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


def save_checkpoint(store: ParamStore, config: ModelConfig, mask: FreezeMask,
                    path, seeds=()) -> None:
    names = sorted(store.names())
    directory = []
    offset = 0
    blobs = []
    for name in names:
        blob = np.ascontiguousarray(store[name].data, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(store[name].shape),
                          "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "tensors": directory,
        "freeze_mask": {n: bool(mask[n]) for n in names},
        "seeds": list(seeds),
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(mbytes)))
        f.write(mbytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[ParamStore, ModelConfig, FreezeMask, list]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (mlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    mstart = len(MAGIC) + 4
    try:
        manifest = json.loads(raw[mstart:mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable manifest: {e}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {manifest.get('version')}, "
                                   f"expected {FORMAT_VERSION}")
    payload = raw[mstart + mlen:]
    store = ParamStore()
    seen = set()
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name in seen:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        seen.add(name)
        lo, hi = entry["offset"], entry["offset"] + entry["length"]
        if hi > len(payload):
            raise TruncatedPayloadError(f"{path}: payload truncated at tensor {name!r} "
                                        f"(need {hi} bytes, have {len(payload)})")
        expected = int(np.prod(shape)) if shape else 1
        if entry["length"] != expected * 4:
            raise CheckpointError(f"{path}: tensor {name!r} length {entry['length']} "
                                  f"does not match shape {shape}")
        data = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(shape)
        store.add(name, data.copy())
    config = ModelConfig.from_dict(manifest["config"])
    mask = FreezeMask({k: bool(v) for k, v in manifest["freeze_mask"].items()})
    if set(mask) != set(store.names()):
        raise CheckpointError(f"{path}: freeze mask does not cover tensor directory")
    store.apply_freeze(mask)
    return store, config, mask, list(manifest.get("seeds", []))
