"""Binary checkpoint format.

Layout (little-endian): magic ``CKQTI1``, then sections of
``tag[4] | u64 length | payload``:

* ``CONF`` config as ``key = value`` text
* ``VOCH`` 32-byte vocabulary hash
* ``STEP`` u64 step counter
* ``PARM`` named float64 arrays
* ``STAT`` normalization channels (mean, var, initialized) and the frozen flag
* ``OPTM`` Adam step count and first/second moments
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ckqti.config import Config
from ckqti.optim import AdamState
from ckqti.scorer import CKModel, NormState, Statistics
from ckqti.tensor import Tensor

MAGIC = b"CKQTI1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: Config
    vocab_hash: bytes
    params: dict[str, np.ndarray]
    stats: Statistics
    optimizer: AdamState = field(default_factory=AdamState)
    step: int = 0

    @classmethod
    def from_model(cls, model: CKModel, vocab_hash: bytes, optimizer: AdamState | None = None,
                   step: int = 0) -> "Checkpoint":
        st = model.stats
        stats = Statistics(**{k: NormState(v.mean, v.var, v.initialized)
                              for k, v in st.channels().items()}, frozen=st.frozen)
        opt = AdamState()
        if optimizer is not None:
            opt = AdamState(optimizer.step, {k: v.copy() for k, v in optimizer.m.items()},
                            {k: v.copy() for k, v in optimizer.v.items()})
        return cls(model.cfg, vocab_hash, {k: p.data.copy() for k, p in model.params.items()},
                   stats, opt, step)

    def to_model(self) -> CKModel:
        params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        stats = Statistics(**{k: NormState(v.mean, v.var, v.initialized)
                              for k, v in self.stats.channels().items()}, frozen=self.stats.frozen)
        return CKModel(self.config, params, stats)

    # -- serialization ----------------------------------------------------------
    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        _section(out, b"CONF", self.config.dumps().encode("utf-8"))
        _section(out, b"VOCH", self.vocab_hash)
        _section(out, b"STEP", struct.pack("<Q", self.step))
        _section(out, b"PARM", _pack_arrays(self.params))
        stat = io.BytesIO()
        channels = self.stats.channels()
        stat.write(struct.pack("<I", len(channels)))
        for name, s in channels.items():
            _write_name(stat, name)
            stat.write(struct.pack("<ddB", s.mean, s.var, int(s.initialized)))
        stat.write(struct.pack("<B", int(self.stats.frozen)))
        _section(out, b"STAT", stat.getvalue())
        opt = io.BytesIO()
        opt.write(struct.pack("<Q", self.optimizer.step))
        opt.write(_pack_arrays(self.optimizer.m))
        opt.write(_pack_arrays(self.optimizer.v))
        _section(out, b"OPTM", opt.getvalue())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if not blob.startswith(MAGIC):
            raise CheckpointError("not a checkpoint (bad magic)")
        sections = {}
        buf = io.BytesIO(blob[len(MAGIC):])
        while True:
            head = buf.read(12)
            if not head:
                break
            if len(head) < 12:
                raise CheckpointError("truncated checkpoint")
            tag, length = head[:4], struct.unpack("<Q", head[4:])[0]
            payload = buf.read(length)
            if len(payload) != length:
                raise CheckpointError("truncated checkpoint")
            sections[tag] = payload
        missing = {b"CONF", b"VOCH", b"STEP", b"PARM", b"STAT", b"OPTM"} - sections.keys()
        if missing:
            raise CheckpointError(f"checkpoint missing sections {sorted(missing)}")
        try:
            config = Config.loads(sections[b"CONF"].decode("utf-8"))
            step = struct.unpack("<Q", sections[b"STEP"])[0]
            params = _unpack_arrays(io.BytesIO(sections[b"PARM"]))
            stat = io.BytesIO(sections[b"STAT"])
            channels = {}
            for _ in range(struct.unpack("<I", stat.read(4))[0]):
                name = _read_name(stat)
                mean, var, init = struct.unpack("<ddB", stat.read(17))
                channels[name] = NormState(mean, var, bool(init))
            frozen = bool(struct.unpack("<B", stat.read(1))[0])
            opt = io.BytesIO(sections[b"OPTM"])
            opt_step = struct.unpack("<Q", opt.read(8))[0]
            m = _unpack_arrays(opt)
            v = _unpack_arrays(opt)
        except (struct.error, UnicodeDecodeError, ValueError) as e:
            raise CheckpointError(f"corrupt checkpoint: {e}") from e
        return cls(config, sections[b"VOCH"], params, Statistics(**channels, frozen=frozen),
                   AdamState(opt_step, m, v), step)

    def hash(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _section(out, tag: bytes, payload: bytes) -> None:
    out.write(tag)
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)


def _write_name(out, name: str) -> None:
    raw = name.encode("utf-8")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _read_name(buf) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def _pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        _write_name(out, name)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return out.getvalue()


def _unpack_arrays(buf) -> dict[str, np.ndarray]:
    arrays = {}
    (count,) = struct.unpack("<I", buf.read(4))
    for _ in range(count):
        name = _read_name(buf)
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        raw = buf.read(8 * size)
        if len(raw) != 8 * size:
            raise ValueError(f"array {name!r} truncated")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return arrays
