"""Self-describing binary container for tensors and model checkpoints.

Layout (all integers little-endian):

    bytes 0..3   magic "ONGC"
    bytes 4..7   format version (u32)
    body:
        u64   metadata length, then that many bytes of UTF-8 JSON
        u64   tensor count
        per tensor:
            u32   name length, then the UTF-8 name
            u64   rows, u64 cols
            rows*cols float64 values, raw little-endian
    trailer:
        u32   CRC-32 of the body

Raw float64 bytes round-trip bit-exactly. The CRC rejects truncated or
corrupted files before any tensor is handed back.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .network import Conv2d, Flatten, Linear, Network, ReLU, init_network

MAGIC = b"ONGC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_container(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    parts = [struct.pack("<Q", 0), struct.pack("<Q", len(tensors))]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts[0] = struct.pack("<Q", len(meta_bytes)) + meta_bytes
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(tensor, dtype="<f8")
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise CheckpointError(f"tensor {name!r} must be 1D or 2D, got shape {tensor.shape}")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)) + name_bytes)
        parts.append(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    blob = MAGIC + struct.pack("<I", VERSION) + body + struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated container {self.path}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CheckpointError(f"truncated container {path}")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a container (bad magic {raw[:4]!r})")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {VERSION}")
    body, (crc,) = raw[8:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"checksum failure reading {path}")

    reader = _Reader(body, path)
    meta = json.loads(reader.take(reader.u64()).decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u64()):
        name = reader.take(reader.u32()).decode("utf-8")
        rows = reader.u64()
        cols = reader.u64()
        data = np.frombuffer(reader.take(rows * cols * 8), dtype="<f8")
        tensors[name] = data.reshape(rows, cols).copy()
    if reader.pos != len(body):
        raise CheckpointError(f"{path} has {len(body) - reader.pos} trailing bytes")
    return meta, tensors


def _spec_to_dict(spec) -> dict:
    if isinstance(spec, Linear):
        return {
            "kind": "linear",
            "in_features": spec.in_features,
            "out_features": spec.out_features,
            "prunable": spec.prunable,
        }
    if isinstance(spec, Conv2d):
        return {
            "kind": "conv2d",
            "in_channels": spec.in_channels,
            "out_channels": spec.out_channels,
            "kernel_h": spec.kernel_h,
            "kernel_w": spec.kernel_w,
            "stride": spec.stride,
            "padding": spec.padding,
            "prunable": spec.prunable,
        }
    if isinstance(spec, ReLU):
        return {"kind": "relu"}
    if isinstance(spec, Flatten):
        return {"kind": "flatten"}
    raise CheckpointError(f"unknown layer spec {spec!r}")


def _spec_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "linear":
        return Linear(d["in_features"], d["out_features"], d["prunable"])
    if kind == "conv2d":
        return Conv2d(
            d["in_channels"], d["out_channels"], d["kernel_h"], d["kernel_w"],
            d["stride"], d["padding"], d["prunable"],
        )
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    raise CheckpointError(f"unknown layer kind {kind!r} in checkpoint")


def save_checkpoint(net: Network, path) -> None:
    """Write specs, seed, weights, biases and masks; round-trips bit-exactly."""
    meta = {
        "kind": "checkpoint",
        "seed": net.seed,
        "specs": [_spec_to_dict(s) for s in net.specs],
        "prunable": {l.layer_id: l.prunable for l in net.weighted_layers},
    }
    tensors: dict[str, np.ndarray] = {}
    for layer in net.weighted_layers:
        tensors[f"{layer.layer_id}.weight"] = layer.weights
        tensors[f"{layer.layer_id}.bias"] = layer.bias
        if layer.mask is not None:
            tensors[f"{layer.layer_id}.mask"] = layer.mask
    write_container(path, meta, tensors)


def load_checkpoint(path) -> Network:
    """Rebuild a network from a checkpoint; raises before returning anything
    partial."""
    meta, tensors = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is a {meta.get('kind')!r} container, not a checkpoint")
    specs = [_spec_from_dict(d) for d in meta["specs"]]
    net = init_network(specs, meta["seed"])
    for layer in net.weighted_layers:
        # Restore the stored prunable resolution, then overwrite parameters.
        layer.prunable = meta["prunable"][layer.layer_id]
        try:
            weight = tensors[f"{layer.layer_id}.weight"]
            bias = tensors[f"{layer.layer_id}.bias"]
        except KeyError as exc:
            raise CheckpointError(f"missing tensor {exc} in {path}") from None
        if weight.shape != layer.weights.shape:
            raise CheckpointError(
                f"checkpoint weight shape {weight.shape} does not match "
                f"{layer.weights.shape} for {layer.layer_id!r}"
            )
        layer.weights = weight
        layer.bias = bias.reshape(layer.bias.shape)
        mask = tensors.get(f"{layer.layer_id}.mask")
        if mask is not None:
            frozen = mask.copy()
            frozen.flags.writeable = False
            layer.mask = frozen
    net.invalidate_cache()
    return net
