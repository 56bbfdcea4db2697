"""On-disk formats: binary PGM images and the model checkpoint.

Checkpoint layout (all integers little-endian)::

    b"RARU" | u32 version | u32 n | n bytes of canonical JSON
    | u32 parameter count
    | per parameter, in lexicographic name order:
        u16 name length | name (utf-8) | u8 rank | u32 x rank dims | float32 values

The JSON block holds ``{"arch": <ArchConfig>, "meta": {...}}``.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .arch import ArchConfig, RARUNet, plan_parameters

MAGIC = b"RARU"
VERSION = 1


class PGMError(ValueError):
    pass


class UnsupportedFormatError(PGMError):
    """A netpbm variant other than binary graymap (P5)."""


class MalformedHeaderError(PGMError):
    pass


class TruncatedPayloadError(PGMError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------- PGM

def pgm_bytes(pixels: np.ndarray) -> bytes:
    a = np.asarray(pixels)
    if a.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.min() < 0 or a.max() > 255:
            raise ValueError("PGM pixel values must lie in [0, 255]")
        a = a.astype(np.uint8)
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(a).tobytes()


def write_pgm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(pixels))


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)")


def parse_pgm(data: bytes) -> np.ndarray:
    if len(data) < 2 or data[:1] != b"P":
        raise MalformedHeaderError("missing netpbm magic number")
    if data[:2] != b"P5":
        raise UnsupportedFormatError(f"unsupported netpbm format {data[:2]!r}; only binary P5 is read")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise MalformedHeaderError("could not parse width, height and maxval")
        values.append(int(m.group(1)))
        pos = m.end()
    w, h, maxval = values
    if w < 1 or h < 1:
        raise MalformedHeaderError(f"invalid dimensions {w}x{h}")
    if maxval != 255:
        raise MalformedHeaderError(f"only 8-bit PGM (maxval 255) is supported, got {maxval}")
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeaderError("header must end with a single whitespace byte")
    pos += 1
    payload = data[pos:]
    if len(payload) < w * h:
        raise TruncatedPayloadError(f"expected {w * h} pixel bytes, found {len(payload)}")
    if len(payload) > w * h:
        raise MalformedHeaderError(f"{len(payload) - w * h} unexpected bytes after the pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 127


# ---------------------------------------------------------------- checkpoints

def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    arch: ArchConfig
    params: Dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model: RARUNet, **meta) -> "Checkpoint":
        return cls(model.config, {name: model.params[name].data.astype(np.float32) for name in model.params}, dict(meta))

    def to_model(self, dtype=np.float32) -> RARUNet:
        model = RARUNet(self.arch, seed=0, dtype=dtype)
        model.params.load_values(self.params)
        return model

    def encode(self) -> bytes:
        header = canonical_json({"arch": self.arch.to_dict(), "meta": self.meta})
        parts = [MAGIC, struct.pack("<II", self.version, len(header)), header, struct.pack("<I", len(self.params))]
        for name in sorted(self.params):
            values = np.asarray(self.params[name], dtype="<f4")
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", values.ndim))
            parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
            parts.append(np.ascontiguousarray(values).tobytes())
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
        try:
            version, n = struct.unpack_from("<II", data, 4)
            if version != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            pos = 12
            header = json.loads(data[pos:pos + n].decode("utf-8"))
            pos += n
            arch = ArchConfig.from_dict(header["arch"])
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            params = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                name = data[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<B", data, pos)
                pos += 1
                dims = struct.unpack_from(f"<{rank}I", data, pos)
                pos += 4 * rank
                size = int(np.prod(dims)) if rank else 1
                if pos + 4 * size > len(data):
                    raise CheckpointError("checkpoint truncated inside parameter data")
                params[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
                pos += 4 * size
        except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc
        if pos != len(data):
            raise CheckpointError(f"checkpoint length mismatch: {len(data) - pos} trailing bytes")
        plan = plan_parameters(arch)
        if set(plan) != set(params):
            raise CheckpointError("parameter names do not match the stored architecture")
        for name, p in plan.items():
            if tuple(params[name].shape) != p.shape:
                raise CheckpointError(f"{name}: stored shape {params[name].shape} but config implies {p.shape}")
        return cls(arch, params, header.get("meta", {}), version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.encode())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.decode(Path(path).read_bytes())
