"""Model checkpoints: a text index followed by raw little-endian float64 blobs.

Layout::

    DUALHEAD-CKPT 1
    config_hash <sha256 of the architecture config>
    meta <key> <value>            (zero or more)
    entry <name> <shape> <offset> <nbytes>   (one per array)
    end
    <blob bytes>

Offsets count from the first blob byte.  Entries are parameters (``param:``),
batch-norm buffers (``buffer:``) and momentum buffers (``velocity:``) in
declaration order.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import DualHeadNet

MAGIC = "DUALHEAD-CKPT 1"
_LE = np.dtype("<f8")


def _entries(net: DualHeadNet) -> list[tuple[str, np.ndarray]]:
    out = []
    params = list(net.named_parameters())
    out += [(f"param:{n}", p.data) for n, p in params]
    out += [(f"buffer:{n}", b) for n, b in net.named_buffers()]
    out += [(f"velocity:{n}", p.velocity) for n, p in params]
    return out


def _shape_text(shape: tuple[int, ...]) -> str:
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def encode_checkpoint(net: DualHeadNet, meta: dict[str, str] | None = None) -> bytes:
    blobs, lines, offset = [], [MAGIC, f"config_hash {net.cfg.arch_hash()}"], 0
    for key, value in (meta or {}).items():
        if any(c.isspace() for c in f"{key}{value}"):
            raise ValueError(f"checkpoint metadata must not contain whitespace: {key}={value!r}")
        lines.append(f"meta {key} {value}")
    for name, arr in _entries(net):
        raw = np.ascontiguousarray(arr, dtype=_LE).tobytes()
        lines.append(f"entry {name} {_shape_text(arr.shape)} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def decode_checkpoint(data: bytes) -> tuple[str, dict[str, str], dict[str, np.ndarray]]:
    """Return (config_hash, meta, arrays) from checkpoint bytes."""
    pos, lines = 0, []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise FormatError("checkpoint index is truncated", pos)
        line = data[pos:nl].decode("ascii", errors="replace")
        lines.append((pos, line))
        pos = nl + 1
        if line == "end":
            break
    if lines[0][1] != MAGIC:
        raise FormatError(f"not a checkpoint (expected {MAGIC!r} header)", 0)
    config_hash, meta, spec = None, {}, []
    for off, line in lines[1:-1]:
        parts = line.split(" ")
        if parts[0] == "config_hash" and len(parts) == 2:
            config_hash = parts[1]
        elif parts[0] == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
        elif parts[0] == "entry" and len(parts) == 5:
            spec.append((off, parts[1], _parse_shape(parts[2]), int(parts[3]), int(parts[4])))
        else:
            raise FormatError(f"malformed checkpoint index line {line!r}", off)
    if config_hash is None:
        raise FormatError("checkpoint index has no config_hash", 0)
    arrays = {}
    for off, name, shape, start, nbytes in spec:
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"entry {name}: {nbytes} bytes does not match shape {shape}", off)
        lo, hi = pos + start, pos + start + nbytes
        if hi > len(data):
            raise FormatError(f"entry {name} runs past the end of the file", len(data))
        arrays[name] = np.frombuffer(data[lo:hi], dtype=_LE).reshape(shape).astype(np.float64)
    return config_hash, meta, arrays


def save_checkpoint(path, net: DualHeadNet, meta: dict[str, str] | None = None) -> None:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(net, meta))
    os.replace(tmp, path)


def load_checkpoint(path, net: DualHeadNet) -> dict[str, str]:
    """Restore parameters, buffers and velocities into ``net``; returns the metadata.

    Raises FormatError if the stored config hash differs from ``net``'s or any
    array is missing or misshapen.  ``net`` is untouched on failure.
    """
    config_hash, meta, arrays = decode_checkpoint(Path(path).read_bytes())
    want = net.cfg.arch_hash()
    if config_hash != want:
        raise FormatError(f"checkpoint config hash {config_hash[:12]} does not match model {want[:12]}; "
                          f"architecture differs", 0)
    targets = _entries(net)
    for name, arr in targets:
        if name not in arrays:
            raise FormatError(f"checkpoint lacks entry {name}", 0)
        if arrays[name].shape != arr.shape:
            raise FormatError(f"entry {name} has shape {arrays[name].shape}, model expects {arr.shape}", 0)
    for name, arr in targets:
        arr[...] = arrays[name]
    return meta
