"""Tensor, image, metrics and trajectory files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError

TENSOR_HEADER = b"ADAPS-TENSOR v1\n"


def write_tensor(path, array) -> None:
    """Header line, ASCII dims line, then little-endian float64 values in row-major order."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    dims = " ".join(str(d) for d in arr.shape).encode("ascii") + b"\n"
    Path(path).write_bytes(TENSOR_HEADER + dims + arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(TENSOR_HEADER):
        raise ConfigurationError(f"{path}: not an ADAPS tensor file")
    rest = data[len(TENSOR_HEADER):]
    line, _, payload = rest.partition(b"\n")
    shape = tuple(int(t) for t in line.split())
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != 8 * count:
        raise ConfigurationError(f"{path}: expected {count} values, found {len(payload) // 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def write_pgm(path, image, lo=-1.0, hi=1.0) -> None:
    """8-bit binary PGM (2-D) or PPM (H x W x 3), mapping [lo, hi] to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    q = np.clip(np.round((img - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 2:
        magic = b"P5"
    elif q.ndim == 3 and q.shape[2] == 3:
        magic = b"P6"
    else:
        raise ConfigurationError(f"cannot export array of shape {img.shape} as an image")
    header = magic + f"\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_trajectory_csv(path, t, xi, d_norm, alignment) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "xi", "d_norm", "alignment"])
        for k in range(len(t)):
            w.writerow([k, int(t[k]), repr(float(xi[k])), repr(float(d_norm[k])), repr(float(alignment[k]))])
