"""Named parameter sets, initialization, and the binary checkpoint format.

Checkpoint layout (little-endian): magic ``GSLB``, version uint32, float
width uint8 (32 or 64), then one record per parameter: name length uint32,
UTF-8 name, rank uint32, dims uint32 each, raw row-major values. Round trips
are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import Tensor

MAGIC = b"GSLB"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class ParameterSet:
    """Ordered mapping of unique names to trainable tensors."""

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.ascontiguousarray(data), requires_grad=True)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def zero_grads(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def float_width(self) -> int:
        widths = {t.data.dtype.itemsize * 8 for t in self._tensors.values()}
        if len(widths) != 1:
            raise CheckpointError(f"mixed float widths in parameter set: {sorted(widths)}")
        return widths.pop()

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, tensor in self._tensors.items():
            out.add(name, tensor.data.copy())
        return out

    def astype(self, float_width: int) -> "ParameterSet":
        dtype = np.float64 if float_width == 64 else np.float32
        out = ParameterSet()
        for name, tensor in self._tensors.items():
            out.add(name, tensor.data.astype(dtype))
        return out

    def load_values(self, other: "ParameterSet") -> None:
        if self.names() != other.names():
            raise CheckpointError("parameter names differ; cannot load values")
        for name, tensor in self._tensors.items():
            src = other[name]
            if src.data.shape != tensor.data.shape:
                raise CheckpointError(f"shape mismatch for {name!r}")
            tensor.data = src.data.astype(tensor.data.dtype)


def save_checkpoint(path: str | Path, params: ParameterSet) -> None:
    width = params.float_width()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<B", width))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            shape = tensor.data.shape
            fh.write(struct.pack("<I", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.data.astype(f"<f{width // 8}", copy=False).tobytes(order="C"))


def load_checkpoint(path: str | Path) -> ParameterSet:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (width,) = struct.unpack_from("<B", raw, 8)
    if width not in (32, 64):
        raise CheckpointError(f"{path}: bad float width {width}")
    dtype = np.dtype(f"<f{width // 8}")
    params = ParameterSet()
    offset = 9
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += count * dtype.itemsize
        params.add(name, values.reshape(shape).copy())
    return params


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    # Scaled uniform +-1/sqrt(fan_in); fan_in is the first dimension.
    limit = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def embedding_init(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape).astype(dtype)


def zeros_init(shape: tuple[int, ...], dtype) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def ones_init(shape: tuple[int, ...], dtype) -> np.ndarray:
    return np.ones(shape, dtype=dtype)
