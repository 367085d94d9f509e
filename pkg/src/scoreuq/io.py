"""File formats: UDT1 tensors, binary PGM/PPM images, CSV metric tables.

UDT1 layout (little-endian)::

    bytes 0-3   b"UDT1"
    byte  4     dtype code, 0x01 = float64
    byte  5     ndim
    bytes 6-7   zero
    ndim x u32  dims
    payload     row-major float64 values
"""

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, StorageError

MAGIC = b"UDT1"
DTYPE_F64 = 0x01


def encode_tensor(values, shape=None):
    arr = np.asarray(values, dtype="<f8")
    shape = tuple(arr.shape) if shape is None else tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ConfigError(f"tensor dims must be positive, got {shape}")
    if int(np.prod(shape, dtype=np.int64)) != arr.size:
        raise ConfigError(f"{arr.size} values do not fill shape {shape}")
    if len(shape) > 255:
        raise ConfigError("too many dimensions for UDT1")
    header = MAGIC + bytes([DTYPE_F64, len(shape), 0, 0]) + struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(arr.reshape(shape)).tobytes()


def decode_tensor(blob):
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise StorageError("not a UDT1 tensor (bad magic)")
    if blob[4] != DTYPE_F64:
        raise StorageError(f"unsupported UDT1 dtype code 0x{blob[4]:02x}")
    ndim = blob[5]
    end = 8 + 4 * ndim
    if len(blob) < end:
        raise StorageError("truncated UDT1 header")
    shape = struct.unpack(f"<{ndim}I", blob[8:end])
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) != end + 8 * count:
        raise StorageError(f"UDT1 payload has {len(blob) - end} bytes, expected {8 * count}")
    return tuple(shape), np.frombuffer(blob, dtype="<f8", offset=end).astype(np.float64).reshape(shape)


def _write_bytes(path, data):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def write_tensor(path, shape, values):
    _write_bytes(path, encode_tensor(values, shape))


def read_tensor(path):
    """Return ``(shape, values)`` with ``values`` already reshaped."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return decode_tensor(blob)


def _normalise(values):
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_image_map(path, width, height, values):
    """Binary PGM (P5) of a min-max normalised map; a constant map is all zeros."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size != width * height:
        raise ConfigError(f"{v.size} values do not fill a {width}x{height} image")
    data = f"P5\n{width} {height}\n255\n".encode("ascii") + _normalise(v).tobytes()
    _write_bytes(path, data)


def write_rgb_image(path, width, height, values):
    """Binary PPM (P6); values in [0, 1] (clamped), shape (height, width, 3) row-major."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size != width * height * 3:
        raise ConfigError(f"{v.size} values do not fill a {width}x{height} RGB image")
    px = np.rint(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_bytes(path, f"P6\n{width} {height}\n255\n".encode("ascii") + px.tobytes())


def write_csv(path, header, rows, append=False):
    """Write (or append to) a CSV file; the header is written only for a new file."""
    path = Path(path)
    new = not (append and path.exists())
    try:
        with path.open("a" if append else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, doc):
    _write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def save_mlp(directory, params, config):
    """One UDT1 file per tensor plus ``model.json`` holding the config and tensor order."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {directory}: {exc}") from exc
    names = []
    for name, arr in params.tensors():
        write_tensor(directory / f"{name}.udt", arr.shape, arr)
        names.append(name)
    write_json(directory / "model.json", {"config": config.to_dict(), "tensors": names})
    return [directory / f"{n}.udt" for n in names] + [directory / "model.json"]


def load_mlp(directory):
    """Inverse of ``save_mlp``; returns an MlpPredictor."""
    from .mlp import MlpConfig, MlpParams, MlpPredictor

    directory = Path(directory)
    try:
        doc = json.loads((directory / "model.json").read_text())
    except OSError as exc:
        raise StorageError(f"cannot read {directory / 'model.json'}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"model.json in {directory} is not valid JSON: {exc}") from exc
    config = MlpConfig(**doc["config"])
    tensors = [(n, read_tensor(directory / f"{n}.udt")[1]) for n in doc["tensors"]]
    return MlpPredictor(MlpParams.from_tensors(tensors), config)
