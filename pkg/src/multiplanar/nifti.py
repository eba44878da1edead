"""Minimal NIfTI-1 single-file codec.

Supports little-endian ``.nii`` (optionally gzip-compressed, detected by magic
bytes) with datatypes uint8, int16 and float32 and dim[0] in {3, 4}.
"""
from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from .errors import FormatError, GeometryError

HEADER_SIZE = 348
VOX_OFFSET = 352
GZIP_MAGIC = b"\x1f\x8b"

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

DATATYPES = {
    DT_UINT8: np.dtype("<u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
}
NIFTI_CODES = {v: k for k, v in DATATYPES.items()}

HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE


def is_gzip(raw: bytes) -> bool:
    return raw[:2] == GZIP_MAGIC


def quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    """Rotation matrix for the unit quaternion (a, b, c, d) with a >= 0 implied."""
    b, c, d = float(b), float(c), float(d)
    aa = 1.0 - (b * b + c * c + d * d)
    if aa < 1e-7:
        # numerically a 180 degree rotation; renormalise (b, c, d)
        norm = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
        a = 0.0
    else:
        a = np.sqrt(aa)
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )


def matrix_to_quaternion(rot: np.ndarray) -> tuple[float, float, float]:
    """(b, c, d) of a proper rotation matrix, with the scalar part kept >= 0."""
    r = np.asarray(rot, dtype=np.float64)
    trace = np.trace(r)
    if trace > 0:
        s = 2.0 * np.sqrt(1.0 + trace)
        a = 0.25 * s
        b = (r[2, 1] - r[1, 2]) / s
        c = (r[0, 2] - r[2, 0]) / s
        d = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        a = (r[2, 1] - r[1, 2]) / s
        b = 0.25 * s
        c = (r[0, 1] + r[1, 0]) / s
        d = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        a = (r[0, 2] - r[2, 0]) / s
        b = (r[0, 1] + r[1, 0]) / s
        c = 0.25 * s
        d = (r[1, 2] + r[2, 1]) / s
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        a = (r[1, 0] - r[0, 1]) / s
        b = (r[0, 2] + r[2, 0]) / s
        c = (r[1, 2] + r[2, 1]) / s
        d = 0.25 * s
    if a < 0:
        b, c, d = -b, -c, -d
    return float(b), float(c), float(d)


def qform_affine(hdr) -> np.ndarray:
    rot = quaternion_to_matrix(hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"])
    pixdim = hdr["pixdim"].astype(np.float64)
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    zooms = np.array([pixdim[1], pixdim[2], qfac * pixdim[3]])
    affine = np.eye(4)
    affine[:3, :3] = rot * zooms
    affine[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return affine


def sform_affine(hdr) -> np.ndarray:
    affine = np.eye(4)
    affine[0] = hdr["srow_x"]
    affine[1] = hdr["srow_y"]
    affine[2] = hdr["srow_z"]
    return affine


def header_affine(hdr) -> np.ndarray:
    """sform when its code is set, else qform; GeometryError if neither is."""
    if hdr["sform_code"] > 0:
        return sform_affine(hdr)
    if hdr["qform_code"] > 0:
        return qform_affine(hdr)
    raise GeometryError("NIfTI file declares neither an sform nor a qform")


def parse(raw: bytes) -> tuple[np.ndarray, np.ndarray, np.void]:
    """Decode file bytes into (array in X,Y,Z[,C] order, affine, header)."""
    if is_gzip(raw):
        raw = gzip.decompress(raw)
    if len(raw) < HEADER_SIZE:
        raise FormatError("file too short for a NIfTI-1 header")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if hdr["sizeof_hdr"] != HEADER_SIZE:
        if int.from_bytes(raw[:4], "big") == HEADER_SIZE:
            raise FormatError("big-endian NIfTI files are not supported")
        raise FormatError("not a NIfTI-1 file (sizeof_hdr != 348)")
    if hdr["magic"] != b"n+1":
        raise FormatError(f"unsupported NIfTI magic {hdr['magic']!r}; only single-file n+1")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise FormatError(f"unsupported NIfTI datatype code {code}")
    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise FormatError(f"dim[0] must be 3 or 4, got {ndim}")
    shape = tuple(int(n) for n in hdr["dim"][1 : ndim + 1])
    if min(shape) < 1:
        raise FormatError(f"invalid dimensions {shape}")
    dtype = DATATYPES[code]
    offset = int(hdr["vox_offset"])
    count = int(np.prod(shape))
    end = offset + count * dtype.itemsize
    if offset < HEADER_SIZE or len(raw) < end:
        raise FormatError("NIfTI data section truncated")
    data = np.frombuffer(raw[offset:end], dtype=dtype).reshape(shape, order="F")
    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if np.isfinite(slope) and slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data.astype(np.float64) * slope + inter
    affine = header_affine(hdr)
    return data, affine, hdr


def read(path) -> tuple[np.ndarray, np.ndarray, np.void]:
    return parse(Path(path).read_bytes())


def encode(data: np.ndarray, affine, datatype: int, descrip: str = "") -> bytes:
    if datatype not in DATATYPES:
        raise FormatError(f"cannot write NIfTI datatype code {datatype}")
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise FormatError(f"can only write 3D or 4D arrays, got {data.ndim}D")
    affine = np.asarray(affine, dtype=np.float64)
    dtype = DATATYPES[datatype]

    hdr = np.zeros((), dtype=HEADER_DTYPE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1 : data.ndim + 1] = data.shape
    hdr["dim"] = dim
    hdr["datatype"] = datatype
    hdr["bitpix"] = dtype.itemsize * 8
    spacing = np.linalg.norm(affine[:3, :3], axis=0)
    pixdim = np.ones(8, dtype=np.float32)
    pixdim[1:4] = spacing
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["descrip"] = descrip.encode("ascii")[:79]
    hdr["sform_code"] = 2
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]

    rot = affine[:3, :3] / spacing
    qfac = 1.0
    if np.linalg.det(rot) < 0:
        qfac = -1.0
        rot[:, 2] *= -1
    if np.allclose(rot.T @ rot, np.eye(3), atol=1e-6):
        b, c, d = matrix_to_quaternion(rot)
        hdr["qform_code"] = 2
        hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = b, c, d
        hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = affine[:3, 3]
    pixdim[0] = qfac
    hdr["pixdim"] = pixdim
    hdr["magic"] = b"n+1"

    body = np.asarray(data, dtype=dtype).tobytes(order="F")
    return hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + body


def write(path, data: np.ndarray, affine, datatype: int, descrip: str = "") -> None:
    payload = encode(data, affine, datatype, descrip)
    path = Path(path)
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
