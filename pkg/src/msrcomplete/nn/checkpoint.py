"""Binary checkpoints, little-endian.

header:  magic "MSRN", version u32, mode u8, two_m u32, m1 u32, p u32,
         p row indices u32, p column indices u32
tensors: count u32, then per tensor
         name length u32, utf-8 name, rank u32, extents rank*u32, data f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Network, NetworkSpec

MAGIC = b"MSRN"
VERSION = 1
MODE_CODES = {"phased": 0, "phaseless": 1, "subsampled": 2}
MODE_NAMES = {v: k for k, v in MODE_CODES.items()}


@dataclass
class Checkpoint:
    mode: str
    two_m: int
    m1: int
    rows: tuple[int, ...] = ()
    cols: tuple[int, ...] = ()
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.rows)


def to_bytes(ck: Checkpoint) -> bytes:
    if len(ck.rows) != len(ck.cols):
        raise ValueError("row and column index lists must have equal length")
    out = [struct.pack("<4sIBIII", MAGIC, VERSION, MODE_CODES[ck.mode], ck.two_m, ck.m1, ck.p)]
    out.append(struct.pack(f"<{ck.p}I", *ck.rows))
    out.append(struct.pack(f"<{ck.p}I", *ck.cols))
    out.append(struct.pack("<I", len(ck.tensors)))
    for name, arr in ck.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def from_bytes(buf: bytes) -> Checkpoint:
    magic, version, mode, two_m, m1, p = struct.unpack_from("<4sIBIII", buf, 0)
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = struct.calcsize("<4sIBIII")
    rows = struct.unpack_from(f"<{p}I", buf, pos)
    cols = struct.unpack_from(f"<{p}I", buf, pos + 4 * p)
    pos += 8 * p
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4 : pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", buf, pos)
        shape = struct.unpack_from(f"<{rank}I", buf, pos + 4)
        pos += 4 + 4 * rank
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ValueError("trailing bytes in checkpoint")
    return Checkpoint(MODE_NAMES[mode], two_m, m1, tuple(rows), tuple(cols), tensors)


def save(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ck))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def network_tensors(net: Network) -> dict[str, np.ndarray]:
    spec = net.spec
    meta = {
        "meta.input_shape": np.array(spec.input_shape, dtype=float),
        "meta.kernels": np.array(spec.kernels, dtype=float),
        "meta.bn": np.array([spec.bn_momentum, spec.bn_eps]),
    }
    return {**meta, **net.state_dict()}


def network_from_tensors(tensors: dict[str, np.ndarray], two_m: int) -> Network:
    input_shape = tuple(int(v) for v in tensors["meta.input_shape"])
    kernels = tuple(int(v) for v in tensors["meta.kernels"])
    channels = tuple(int(tensors[f"block{i}.conv.w"].shape[3]) for i in range(len(kernels)))
    momentum, eps = (float(v) for v in tensors["meta.bn"])
    spec = NetworkSpec(input_shape, two_m, channels, kernels, bn_momentum=momentum, bn_eps=eps)
    net = Network(spec)
    net.load_state_dict(tensors)
    return net
