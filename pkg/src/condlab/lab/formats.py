"""Little-endian binary containers with a trailing CRC32.

Dataset ("CNDD"):
    header   magic 4s, version u16, family 8s, K u16, seed u64,
             x_min f64, x_max f64, nx u32, y_min f64, y_max f64, ny u32,
             n_records u64, n_samples u32, 6 f64 parameter ranges
    records  K*6 params, nx*ny joint, nx*ny kernel (all f64)
    trailer  crc32 u32 over everything before it

Checkpoint ("CNOP"):
    magic 4s, version u16, json_len u32, json bytes, n_params u64,
    n_params f64, crc32 u32
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError, InvalidArgument
from ..grid import Grid2D, GridDensity2D, KernelField
from ..mixture import MixtureParams, N_PARAM_COLUMNS, ParamRanges

DATASET_MAGIC = b"CNDD"
CHECKPOINT_MAGIC = b"CNOP"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
FAMILIES = ("gmm_k1", "gmm_k3", "gmm", "kde")

_HEADER = struct.Struct("<4sH8sHQddIddIQI6d")
_CRC = struct.Struct("<I")
_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class DatasetHeader:
    family: str
    K: int
    seed: int
    grid: Grid2D
    n_records: int
    n_samples: int = 0
    ranges: ParamRanges = ParamRanges()
    version: int = DATASET_VERSION

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown family tag {self.family!r}")
        if self.K < 1 or self.n_records < 0 or self.n_samples < 0 or self.seed < 0:
            raise InvalidArgument("bad counts in dataset header")

    def pack(self) -> bytes:
        g = self.grid
        r = self.ranges
        return _HEADER.pack(DATASET_MAGIC, self.version, self.family.encode("ascii").ljust(8, b"\0"),
                            self.K, self.seed, g.x_min, g.x_max, g.nx, g.y_min, g.y_max, g.ny,
                            self.n_records, self.n_samples, *r.mean_range, *r.sigma_range,
                            *r.corr_range)

    @classmethod
    def unpack(cls, buf: bytes) -> "DatasetHeader":
        if len(buf) < _HEADER.size:
            raise FormatError("file too short for a dataset header")
        (magic, version, fam, K, seed, x0, x1, nx, y0, y1, ny, n, ns,
         m0, m1, s0, s1, c0, c1) = _HEADER.unpack_from(buf)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        try:
            return cls(fam.rstrip(b"\0").decode("ascii"), K, seed, Grid2D(x0, x1, nx, y0, y1, ny), n, ns,
                       ParamRanges((m0, m1), (s0, s1), (c0, c1)), version)
        except (InvalidArgument, UnicodeDecodeError) as exc:
            raise FormatError(f"invalid dataset header: {exc}") from exc

    def record_floats(self) -> int:
        return self.K * N_PARAM_COLUMNS + 2 * self.grid.nx * self.grid.ny

    def describe(self) -> str:
        g = self.grid
        return (f"family={self.family} K={self.K} seed={self.seed} records={self.n_records} "
                f"samples={self.n_samples} grid=[{g.x_min}, {g.x_max}]x[{g.y_min}, {g.y_max}] "
                f"{g.nx}x{g.ny} version={self.version}")


@dataclass(eq=False)
class Dataset:
    header: DatasetHeader
    params: np.ndarray  # (N, K, 6)
    joints: np.ndarray  # (N, nx, ny)
    kernels: np.ndarray  # (N, nx, ny)

    def __post_init__(self):
        h = self.header
        n, shape = h.n_records, h.grid.shape
        if (self.params.shape != (n, h.K, N_PARAM_COLUMNS) or self.joints.shape != (n, *shape)
                or self.kernels.shape != (n, *shape)):
            raise InvalidArgument("record arrays do not match the header counts")

    def __len__(self):
        return self.header.n_records

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def record(self, i: int) -> tuple[MixtureParams, GridDensity2D, KernelField]:
        if not 0 <= i < len(self):
            raise IndexError(f"record {i} out of range for {len(self)} records")
        g = self.header.grid
        return (MixtureParams.from_array(self.params[i]), GridDensity2D(g, self.joints[i]),
                KernelField(g, self.kernels[i]))

    def record_bytes(self, i: int) -> bytes:
        return _record_block(self.params[i], self.joints[i], self.kernels[i])

    def to_bytes(self) -> bytes:
        body = bytearray(self.header.pack())
        for i in range(len(self)):
            body += self.record_bytes(i)
        return bytes(body) + _CRC.pack(zlib.crc32(body))

    def arrays(self):
        """(inputs, targets) for training."""
        from ..nop.train import ArrayDataset
        return ArrayDataset(self.joints, self.kernels)


def _record_block(params, joint, kernel) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in (params, joint, kernel))


def _check_crc(buf: bytes, what: str) -> bytes:
    if len(buf) < _CRC.size:
        raise FormatError(f"{what} too short for a checksum")
    body, (crc,) = buf[:-_CRC.size], _CRC.unpack(buf[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{what} checksum mismatch (stored {crc:#010x}, computed {zlib.crc32(body):#010x})")
    return body


def dataset_from_bytes(buf: bytes, strict: bool = False) -> Dataset:
    body = _check_crc(buf, "dataset")
    h = DatasetHeader.unpack(body)
    per = h.record_floats()
    expect = _HEADER.size + 8 * per * h.n_records
    if len(body) != expect:
        raise FormatError(f"dataset body is {len(body)} bytes, header implies {expect}")
    block = np.frombuffer(body, dtype=_F64, offset=_HEADER.size).reshape(h.n_records, per)
    block = block.astype(np.float64)
    kp = h.K * N_PARAM_COLUMNS
    nn = h.grid.nx * h.grid.ny
    params = block[:, :kp].reshape(h.n_records, h.K, N_PARAM_COLUMNS)
    joints = block[:, kp:kp + nn].reshape(h.n_records, *h.grid.shape)
    kernels = block[:, kp + nn:].reshape(h.n_records, *h.grid.shape)
    ds = Dataset(h, params, joints, kernels)
    if strict:
        for i in range(len(ds)):
            try:
                ds.record(i)
            except InvalidArgument as exc:
                raise FormatError(f"record {i} fails validation: {exc}") from exc
    return ds


def write_bytes(path, data: bytes):
    """Write via a sibling temp file so readers never see a partial file."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_dataset(path, ds: Dataset):
    write_bytes(path, ds.to_bytes())


def read_dataset(path, strict: bool = False) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read(), strict)


# -- checkpoints -------------------------------------------------------------

_CK_HEAD = struct.Struct("<4sHI")
_U64 = struct.Struct("<Q")


@dataclass(eq=False)
class Checkpoint:
    meta: dict
    flat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_bytes(self) -> bytes:
        js = json.dumps(self.meta, sort_keys=True).encode("utf-8")
        flat = np.ascontiguousarray(self.flat, dtype=_F64)
        body = (_CK_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(js)) + js
                + _U64.pack(flat.size) + flat.tobytes())
        return body + _CRC.pack(zlib.crc32(body))

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


def checkpoint_from_bytes(buf: bytes) -> Checkpoint:
    body = _check_crc(buf, "checkpoint")
    if len(body) < _CK_HEAD.size:
        raise FormatError("checkpoint too short")
    magic, version, n = _CK_HEAD.unpack_from(body)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = _CK_HEAD.size
    try:
        meta = json.loads(body[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint metadata is not valid JSON: {exc}") from exc
    pos += n
    if len(body) < pos + _U64.size:
        raise FormatError("checkpoint truncated before the parameter block")
    (count,) = _U64.unpack_from(body, pos)
    pos += _U64.size
    if len(body) != pos + 8 * count:
        raise FormatError(f"parameter block holds {(len(body) - pos) // 8} floats, header says {count}")
    flat = np.frombuffer(body, dtype=_F64, offset=pos).astype(np.float64)
    return Checkpoint(meta, flat)


def write_checkpoint(path, ck: Checkpoint):
    write_bytes(path, ck.to_bytes())


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def model_checkpoint(model, extra: dict | None = None) -> Checkpoint:
    meta = {"kind": "no", "model": model.describe()}
    if extra:
        meta["extra"] = extra
    return Checkpoint(meta, model.flat())


def oracle_checkpoint(grid: Grid2D) -> Checkpoint:
    """Passthrough predictor that emits the stored target (eval plumbing check)."""
    return Checkpoint({"kind": "oracle", "grid": list(grid.key())})


def load_predictor(ck: Checkpoint):
    """Model from a checkpoint, or the string "oracle"."""
    kind = ck.meta.get("kind")
    if kind == "oracle":
        return "oracle"
    if kind != "no":
        raise FormatError(f"unknown checkpoint kind {kind!r}")
    from ..nop.model import NOModel
    desc = ck.meta["model"]
    shell = NOModel.from_description(desc)
    return NOModel.from_description(desc, params=shell.unflat(ck.flat))


def checkpoint_grid(ck: Checkpoint) -> Grid2D:
    key = ck.meta["grid"] if ck.meta.get("kind") == "oracle" else ck.meta["model"]["grid"]
    return Grid2D(*key)
