"""Loading and saving volumes in the NIfTI-1 subset or the raw+JSON format.

The raw format is a ``<name>.json`` header::

    {"shape": [X, Y, Z, C], "dtype": "f32", "affine": [16 numbers, row-major],
     "byte_order": "LE"}

next to ``<name>.raw`` holding X*Y*Z*C little-endian samples in C order.
Besides "f32", label maps are written with the integer dtypes "u8" / "i16".
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from . import nifti
from .errors import DataError, FormatError
from .volume import LabelMap, ProbVolume, Volume

RAW_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("<u1"), "i16": np.dtype("<i2")}
RAW_SUFFIXES = (".json", ".raw")
_CLASSES_TAG = re.compile(r"num_classes=(\d+)")


def is_raw_path(path) -> bool:
    return Path(path).suffix in RAW_SUFFIXES


def raw_paths(path) -> tuple[Path, Path]:
    """(header, payload) paths for a raw volume named by either file or its stem."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in RAW_SUFFIXES else p
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".raw")


def write_raw(path, data: np.ndarray, affine, dtype: str = "f32", **extra) -> Path:
    if dtype not in RAW_DTYPES:
        raise FormatError(f"unsupported raw dtype {dtype!r}")
    data = np.asarray(data)
    if data.ndim == 3:
        data = data[..., None]
    if data.ndim != 4:
        raise FormatError(f"raw volumes are 4D (X,Y,Z,C), got {data.ndim}D")
    header_path, payload_path = raw_paths(path)
    header = {
        "shape": [int(n) for n in data.shape],
        "dtype": dtype,
        "affine": [float(x) for x in np.asarray(affine, dtype=np.float64).ravel()],
        "byte_order": "LE",
        **extra,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(header, indent=2))
    payload_path.write_bytes(np.ascontiguousarray(data, dtype=RAW_DTYPES[dtype]).tobytes(order="C"))
    return header_path


def read_raw(path) -> tuple[np.ndarray, np.ndarray, dict]:
    header_path, payload_path = raw_paths(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{header_path}: invalid JSON header ({exc})") from exc
    for key in ("shape", "dtype", "affine"):
        if key not in header:
            raise FormatError(f"{header_path}: header missing {key!r}")
    if header.get("byte_order", "LE") != "LE":
        raise FormatError(f"{header_path}: only little-endian raw files are supported")
    dtype = header["dtype"]
    if dtype not in RAW_DTYPES:
        raise FormatError(f"{header_path}: unsupported dtype {dtype!r}")
    shape = tuple(int(n) for n in header["shape"])
    if len(shape) != 4:
        raise FormatError(f"{header_path}: shape must have 4 entries")
    if len(header["affine"]) != 16:
        raise FormatError(f"{header_path}: affine must have 16 entries")
    payload = payload_path.read_bytes()
    expected = int(np.prod(shape)) * RAW_DTYPES[dtype].itemsize
    if len(payload) != expected:
        raise FormatError(f"{payload_path}: expected {expected} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=RAW_DTYPES[dtype]).reshape(shape)
    affine = np.asarray(header["affine"], dtype=np.float64).reshape(4, 4)
    return data, affine, header


def _read_any(path) -> tuple[np.ndarray, np.ndarray, dict]:
    path = Path(path)
    if is_raw_path(path):
        header_path, payload_path = raw_paths(path)
        for p in (header_path, payload_path):
            if not p.exists():
                raise FileNotFoundError(f"no such file: {p}")
        return read_raw(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    data, affine, hdr = nifti.read(path)
    if data.ndim == 3:
        data = data[..., None]
    meta = {"descrip": hdr["descrip"].decode("ascii", "replace"), "datatype": int(hdr["datatype"])}
    match = _CLASSES_TAG.search(meta["descrip"])
    if match:
        meta["num_classes"] = int(match.group(1))
    return data, affine, meta


def first_percentile(data: np.ndarray) -> float:
    return float(np.percentile(data, 1.0))


def load_volume(path) -> Volume:
    """Load an image; background_fill starts as the 1st-percentile intensity."""
    data, affine, _ = _read_any(path)
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: volume contains non-finite values")
    return Volume(data, affine, first_percentile(data))


def load_labels(path, num_classes: int | None = None) -> LabelMap:
    """Load a label map; the class count comes from the argument, the file, or max+1."""
    data, affine, meta = _read_any(path)
    if data.shape[3] != 1:
        raise DataError(f"{path}: label maps must have a single channel")
    labels = np.asarray(data[..., 0])
    if num_classes is None:
        num_classes = meta.get("num_classes") or int(labels.max()) + 1
    return LabelMap(labels, affine, max(int(num_classes), 1))


def _label_dtype(num_classes: int) -> str:
    if num_classes <= 256:
        return "u8"
    if num_classes <= 32768:
        return "i16"
    raise FormatError(f"too many classes ({num_classes}) for an integer label file")


def save_volume(obj: Volume | LabelMap | ProbVolume, path) -> None:
    """Write any container; raw when the path ends in .json/.raw, NIfTI otherwise.

    Real-valued data is stored as float32, label maps as uint8/int16 and
    probability volumes as a 4D image whose last axis holds the classes.
    """
    path = Path(path)
    extra = {}
    if isinstance(obj, LabelMap):
        data, dtype, extra = obj.labels, _label_dtype(obj.num_classes), {"num_classes": obj.num_classes}
    elif isinstance(obj, ProbVolume):
        data, dtype = obj.probs, "f32"
    elif isinstance(obj, Volume):
        data, dtype = obj.data, "f32"
    else:
        raise TypeError(f"cannot save object of type {type(obj).__name__}")

    if is_raw_path(path):
        write_raw(path, data, obj.affine, dtype, **extra)
        return
    code = {"f32": nifti.DT_FLOAT32, "u8": nifti.DT_UINT8, "i16": nifti.DT_INT16}[dtype]
    descrip = f"multiplanar num_classes={extra['num_classes']}" if extra else "multiplanar"
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    path.parent.mkdir(parents=True, exist_ok=True)
    nifti.write(path, data, obj.affine, code, descrip)
