"""File formats: the PVTN binary tensor record, the multi-tensor checkpoint
container, ASCII point-cloud ingestion, key=value run configs and CSV.

PVTN record layout (little-endian throughout):

    magic   4 bytes  b"PVTN"
    version 1 byte   (currently 1)
    rank    u32
    extents rank x u64
    data    float32, row-major

A checkpoint is a b"PVTC" container holding a UTF-8 key=value header plus
named PVTN records for every parameter and running-statistics buffer.
"""

from __future__ import annotations

import struct

import numpy as np

from .cloud import PointCloud
from .errors import CheckpointError, ConfigError, EmptyInputError, ParseError

TENSOR_MAGIC = b"PVTN"
CONTAINER_MAGIC = b"PVTC"
FORMAT_VERSION = 1


# -- single tensors ----------------------------------------------------------


def write_tensor(fh, array: np.ndarray):
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<B", FORMAT_VERSION))
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise CheckpointError(f"bad tensor magic {magic!r}")
    (version,) = struct.unpack("<B", fh.read(1))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported tensor format version {version}")
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(shape)) if rank else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise CheckpointError("truncated tensor data")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def save_tensor(path, array: np.ndarray):
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


# -- checkpoint container ----------------------------------------------------


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Named tensors plus a key=value metadata header (seed, epoch, spec
    echo, ...). Iteration is sorted by name so identical state produces an
    identical file."""
    meta = meta or {}
    header = "".join(f"{k}={v}\n" for k, v in sorted(meta.items())).encode()
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            write_tensor(fh, arrays[name])


def load_checkpoint(path):
    """Returns (meta dict, name -> array dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CONTAINER_MAGIC:
            raise CheckpointError(f"bad container magic {magic!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        meta = {}
        for line in fh.read(hlen).decode().splitlines():
            if line:
                key, _, value = line.partition("=")
                meta[key] = value
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            arrays[name] = read_tensor(fh)
    return meta, arrays


def save_model(path, model, meta: dict | None = None):
    arrays = {f"param:{k}": v for k, v in model.store.state_arrays().items()}
    arrays.update({f"buffer:{k}": v for k, v in model.buffers().items()})
    save_checkpoint(path, arrays, meta)


def load_model(path, model) -> dict:
    """Load a checkpoint into an already-built model; returns the metadata."""
    meta, arrays = load_checkpoint(path)
    params = {k[len("param:"):]: v for k, v in arrays.items() if k.startswith("param:")}
    buffers = {k[len("buffer:"):]: v for k, v in arrays.items() if k.startswith("buffer:")}
    model.store.load_state_arrays(params)
    model.load_buffers(buffers)
    return meta


# -- point-cloud ingestion ---------------------------------------------------


def load_cloud(path, n_points: int | None = None, seed: int = 0) -> PointCloud:
    """ASCII XYZ (``x y z [r g b] [label]`` per line) or a rank-2 PVTN
    record with the same column schema. Optionally resamples to ``n_points``
    with a seeded uniform selection."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == TENSOR_MAGIC:
        table = load_tensor(path)
        if table.ndim != 2:
            raise ParseError(f"{path}: expected a rank-2 point table, got rank {table.ndim}")
        rows = table.astype(np.float64)
    else:
        rows = _parse_xyz(path)
    cloud = _cloud_from_columns(rows, path)
    if n_points is not None:
        cloud = resample(cloud, n_points, seed)
    return cloud


def _parse_xyz(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise EmptyInputError(f"{path}: no points")
    return np.asarray(rows, dtype=np.float64)


def _cloud_from_columns(rows: np.ndarray, path) -> PointCloud:
    width = rows.shape[1]
    if width not in (3, 4, 6, 7):
        raise ParseError(
            f"{path}: unsupported column count {width}; expected 3 (xyz), "
            "4 (xyz label), 6 (xyz rgb) or 7 (xyz rgb label)"
        )
    pos = rows[:, :3]
    attrs = rows[:, 3:6] if width >= 6 else None
    labels = rows[:, -1].astype(np.int64) if width in (4, 7) else None
    return PointCloud(pos=pos, attrs=attrs, labels=labels)


def resample(cloud: PointCloud, n_points: int, seed: int = 0) -> PointCloud:
    """Seeded uniform resample; without replacement when shrinking."""
    if n_points < 1:
        raise ConfigError(f"resample: n_points must be >= 1, got {n_points}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(cloud.n_points, size=n_points,
                     replace=n_points > cloud.n_points)
    return cloud.subsample(idx)


# -- run configs -------------------------------------------------------------


def parse_config(path, schema: dict) -> dict:
    """Key=value config with ``#`` comments. ``schema`` maps key -> a
    (converter, default) pair; a default of ``None`` marks the key required.
    All violations are reported at once."""
    values = {}
    problems = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                problems.append(f"line {lineno}: expected key=value, got {text!r}")
                continue
            key, _, value = text.partition("=")
            key, value = key.strip(), value.strip()
            if key not in schema:
                problems.append(f"line {lineno}: unknown key {key!r}")
                continue
            if key in values:
                problems.append(f"line {lineno}: duplicate key {key!r}")
                continue
            conv, _ = schema[key]
            try:
                values[key] = conv(value)
            except (TypeError, ValueError):
                problems.append(f"line {lineno}: bad value for {key!r}: {value!r}")
    for key, (_, default) in schema.items():
        if key in values:
            continue
        if default is None:
            problems.append(f"missing required key {key!r}")
        else:
            values[key] = default
    if problems:
        raise ConfigError(f"invalid config {path}: " + "; ".join(problems))
    return values


def parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# -- CSV ---------------------------------------------------------------------


def write_csv(path, header, rows):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise EmptyInputError(f"{path}: empty CSV")
    return rows[0], rows[1:]
