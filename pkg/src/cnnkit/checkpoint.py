"""Binary model checkpoints with integrity checking.

Layout (all integers little-endian):

    magic   4 bytes  b"CCNN"
    version u32      (currently 1)
    header  u32 length + UTF-8 JSON: num_classes, class_names,
            model_config, train_config snapshot, best_val_loss
    tensors u32 count, then per tensor:
            u32 name length + name bytes, u32 rank, rank * u64 dims,
            raw float32 payload
    optim   u8 presence flag; if 1: u64 step, f64 lr, u32 count,
            then moment tensors in the same entry format
    crc32   u32 of every preceding byte

Any magic/version/length/checksum violation raises CheckpointError. A
round-trip reproduces parameters, buffers and moments bit-identically.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import CustomCNN, ModelConfig

MAGIC = b"CCNN"
VERSION = 1


def _tensor_bytes(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    parts = [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint file is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode("utf-8")
        rank = self.u32()
        if rank > 8:
            raise CheckpointError(f"implausible tensor rank {rank} for '{name}'")
        dims = struct.unpack(f"<{rank}Q", self.take(8 * rank))
        count = 1
        for d in dims:
            count *= d
        if count > 2**33:
            raise CheckpointError(f"implausible tensor size for '{name}'")
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims)
        return name, data


def save_checkpoint(path, model: CustomCNN, class_names, train_config: dict | None = None,
                    best_val_loss: float | None = None, optimizer=None) -> None:
    if len(class_names) != model.config.num_classes:
        raise CheckpointError(
            f"{len(class_names)} class names for a {model.config.num_classes}-class model"
        )
    header = json.dumps(
        {
            "num_classes": model.config.num_classes,
            "class_names": list(class_names),
            "model_config": model.config.to_dict(),
            "train_config": train_config or {},
            "best_val_loss": best_val_loss,
        },
        sort_keys=True,
    ).encode("utf-8")

    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header]
    named = model.named_params()
    entries = [(n, p.value) for n, p in named] + list(model.named_buffers())
    parts.append(struct.pack("<I", len(entries)))
    parts.extend(_tensor_bytes(n, a) for n, a in entries)
    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q", optimizer.t))
        parts.append(struct.pack("<d", optimizer.lr))
        moments = [(f"{n}.adam_m", p.adam_m) for n, p in named]
        moments += [(f"{n}.adam_v", p.adam_v) for n, p in named]
        parts.append(struct.pack("<I", len(moments)))
        parts.extend(_tensor_bytes(n, a) for n, a in moments)

    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


@dataclass
class LoadedCheckpoint:
    model: CustomCNN
    class_names: list[str]
    train_config: dict
    best_val_loss: float | None
    optimizer_step: int | None
    optimizer_lr: float | None


def load_checkpoint(path) -> LoadedCheckpoint:
    """Parse, verify and materialize a checkpoint into a fresh model."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError("checkpoint file is truncated")
    body, stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != stored:
        raise CheckpointError("checkpoint checksum mismatch (corrupt file)")

    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
        model_config = ModelConfig.from_dict(header["model_config"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc

    tensors = dict(r.tensor() for _ in range(r.u32()))
    flag = r.u8()
    opt_step = opt_lr = None
    moments: dict[str, np.ndarray] = {}
    if flag == 1:
        opt_step = r.u64()
        opt_lr = r.f64()
        moments = dict(r.tensor() for _ in range(r.u32()))
    elif flag != 0:
        raise CheckpointError(f"invalid optimizer presence flag {flag}")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")

    model = CustomCNN(model_config)
    expected = [n for n, _ in model.named_params()] + [n for n, _ in model.named_buffers()]
    if set(expected) != set(tensors):
        raise CheckpointError("checkpoint tensor names do not match the model registry")
    if moments:
        want = {f"{n}.adam_{k}" for n, _ in model.named_params() for k in ("m", "v")}
        if set(moments) != want:
            raise CheckpointError("optimizer moment names do not match the model registry")
    for name, param in model.named_params():
        _assign(param.value, tensors[name], name)
        if moments:
            _assign(param.adam_m, moments[f"{name}.adam_m"], f"{name}.adam_m")
            _assign(param.adam_v, moments[f"{name}.adam_v"], f"{name}.adam_v")
    for name, buf in model.named_buffers():
        _assign(buf, tensors[name], name)

    return LoadedCheckpoint(
        model=model.eval(),
        class_names=list(header["class_names"]),
        train_config=dict(header.get("train_config") or {}),
        best_val_loss=header.get("best_val_loss"),
        optimizer_step=opt_step,
        optimizer_lr=opt_lr,
    )


def _assign(dst: np.ndarray, src: np.ndarray, name: str) -> None:
    if dst.shape != src.shape:
        raise CheckpointError(f"tensor '{name}' has shape {src.shape}, expected {dst.shape}")
    dst[...] = src
