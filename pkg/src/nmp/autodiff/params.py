"""Named parameters, optimizers and the binary checkpoint format.

Checkpoint layout (little-endian)::

    b"NMPC"  u32 version  u32 entry_count
    per entry: u32 name_len, name bytes (utf-8), u32 ndim, u32 dims[ndim], f32 data
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"NMPC"
CHECKPOINT_VERSION = 1
_STATE_PREFIX = "__state__/"


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered mapping of parameter name -> leaf Tensor, plus optimizer moments."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype).copy(), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def n_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast (used for double-precision checks)."""
        out = ParamStore(dtype)
        for name, p in self._params.items():
            out.add(name, p.data)
        return out

    def snapshot(self) -> dict:
        return {k: v.data.copy() for k, v in self._params.items()}

    def restore(self, values: dict) -> None:
        for k, v in values.items():
            self._params[k].data = np.asarray(v, dtype=self.dtype).copy()

    # ------------------------------------------------------------ checkpoints

    def to_bytes(self, include_state: bool = False) -> bytes:
        entries = [(k, v.data) for k, v in self._params.items()]
        if include_state:
            entries += [(_STATE_PREFIX + k, v) for k, v in self.state.items()]
            entries.append((_STATE_PREFIX + "step", np.array([self.step_count], dtype=np.float32)))
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return buf.getvalue()

    def save(self, path, include_state: bool = False) -> None:
        Path(path).write_bytes(self.to_bytes(include_state))

    @classmethod
    def from_bytes(cls, blob: bytes, dtype=np.float32) -> "ParamStore":
        view = memoryview(blob)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("truncated checkpoint")
            chunk = bytes(view[pos : pos + n])
            pos += n
            return chunk

        if take(4) != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        version, count = struct.unpack("<II", take(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        store = cls(dtype)
        for _ in range(count):
            (name_len,) = struct.unpack("<I", take(4))
            name = take(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
            if name.startswith(_STATE_PREFIX):
                key = name[len(_STATE_PREFIX) :]
                if key == "step":
                    store.step_count = int(arr[0])
                else:
                    store.state[key] = arr.astype(np.float32).copy()
            else:
                store.add(name, arr)
        if pos != len(view):
            raise CheckpointError("trailing bytes after checkpoint entries")
        return store

    @classmethod
    def load(cls, path, dtype=np.float32) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes(), dtype)


def _require_grads(store: ParamStore) -> None:
    missing = [k for k, p in store.items() if p.grad is None]
    if missing:
        raise ValueError(f"missing gradients for {missing[:5]}")


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.9, clip_norm: float | None = None) -> None:
    """Classic momentum: v <- mu v + g ; p <- p - lr v. Clears gradients."""
    _require_grads(store)
    factor = _clip_factor(store, clip_norm)
    for name, p in store.items():
        g = p.grad * factor
        if momentum:
            v = store.state.get("m/" + name)
            v = g if v is None else momentum * v + g
            store.state["m/" + name] = v.astype(store.dtype)
            g = v
        p.data = (p.data - lr * g).astype(store.dtype)
        p.grad = None
    store.step_count += 1


def adam_step(
    store: ParamStore,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    clip_norm: float | None = None,
) -> None:
    _require_grads(store)
    factor = _clip_factor(store, clip_norm)
    store.step_count += 1
    b1, b2 = betas
    t = store.step_count
    for name, p in store.items():
        g = p.grad * factor
        m = store.state.get("m/" + name, np.zeros_like(p.data))
        v = store.state.get("v/" + name, np.zeros_like(p.data))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        store.state["m/" + name] = m.astype(store.dtype)
        store.state["v/" + name] = v.astype(store.dtype)
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(store.dtype)
        p.grad = None


def _clip_factor(store: ParamStore, clip_norm: float | None) -> float:
    if not clip_norm:
        return 1.0
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in store.items())))
    if not np.isfinite(total):
        raise FloatingPointError("non-finite gradient norm")
    return min(1.0, clip_norm / max(total, 1e-12))


def global_grad_norm(store: ParamStore) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in store.items() if p.grad is not None)))
