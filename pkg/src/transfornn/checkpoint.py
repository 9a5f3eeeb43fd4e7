"""Binary checkpoint format (version 1).

Layout, all integers little-endian::

    b"TFRN"  u32 version  u32 config_length  config (UTF-8 key=value lines)
    then per tensor: u16 name_length, name (UTF-8), u8 rank, u64[rank] dims,
                     f32[prod(dims)] data

Tensors run to end of file.  Loading is strict: unknown config keys, unknown
or missing tensors and shape disagreements are all errors.
"""

import dataclasses
import io
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ConfigError, CheckpointError, ShapeMismatchError, TruncatedCheckpointError, VersionError
from .models import LanguageModel, ModelConfig

MAGIC = b"TFRN"
VERSION = 1


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_value(field: dataclasses.Field, raw: str):
    kind = str(field.type)
    if "bool" in kind:
        if raw not in ("true", "false"):
            raise CheckpointError(f"config {field.name}: expected true/false, got {raw!r}")
        return raw == "true"
    if "int" in kind:
        try:
            return int(raw)
        except ValueError:
            raise CheckpointError(f"config {field.name}: expected integer, got {raw!r}") from None
    return raw


def encode_config(config: ModelConfig) -> bytes:
    lines = [f"{f.name}={_format_value(getattr(config, f.name))}\n" for f in dataclasses.fields(config)]
    return "".join(lines).encode("utf-8")


def decode_config(block: bytes) -> ModelConfig:
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    values = {}
    try:
        text = block.decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError("config block is not valid UTF-8") from None
    for line in text.splitlines():
        key, sep, raw = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        if key not in fields:
            raise CheckpointError(f"unknown config key {key!r}")
        if key in values:
            raise CheckpointError(f"duplicate config key {key!r}")
        values[key] = _parse_value(fields[key], raw)
    try:
        return ModelConfig(**values)
    except TypeError as exc:
        raise CheckpointError(f"incomplete config: {exc}") from None
    except ConfigError as exc:
        raise CheckpointError(f"invalid config: {exc}") from None


def to_bytes(model: LanguageModel) -> bytes:
    buf = io.BytesIO()
    config = encode_config(model.config)
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(config)))
    buf.write(config)
    for name, p in model.named_parameters():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}Q", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: LanguageModel, path):
    Path(path).write_bytes(to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"file ends inside {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self):
        return self.pos == len(self.data)


def from_bytes(data: bytes) -> LanguageModel:
    r = _Reader(data)
    if len(data) < 4 or r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    version, config_len = r.unpack("<II", "header")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    config = decode_config(r.take(config_len, "config block"))
    model = LanguageModel(config)
    params = dict(model.named_parameters())
    loaded = {}
    while not r.done:
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * count, f"data of {name}"), dtype="<f4").reshape(dims)
        if name not in params:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if name in loaded:
            raise CheckpointError(f"duplicate tensor {name!r}")
        if tuple(dims) != params[name].shape:
            raise ShapeMismatchError(f"tensor {name!r} has shape {tuple(dims)}, config implies {params[name].shape}")
        loaded[name] = arr
    missing = [n for n in params if n not in loaded]
    if missing:
        raise TruncatedCheckpointError(f"checkpoint is missing tensors: {', '.join(missing)}")
    # assign only once everything parsed, so a failed load never yields a partial model
    for name, arr in loaded.items():
        params[name].data = arr.astype(np.float32)
    return model


def load_checkpoint(path) -> LanguageModel:
    return from_bytes(Path(path).read_bytes())
