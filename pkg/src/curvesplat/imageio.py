"""Minimal readers/writers for binary PPM (P6), PGM (P5) and PFM images."""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def to_u8(img) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _read_header(fh, n_fields):
    fields = []
    while len(fields) < n_fields:
        line = fh.readline()
        if not line:
            raise ImageFormatError("truncated header")
        line = line.split(b"#", 1)[0]
        fields.extend(line.split())
    return fields


def write_ppm(path: str, rgb) -> None:
    """8-bit colour; float input in [0, 1] is quantised."""
    data = rgb if np.asarray(rgb).dtype == np.uint8 else to_u8(rgb)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ImageFormatError(f"PPM needs H x W x 3, got {data.shape}")
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(data).tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Returns uint8 H x W x 3."""
    with open(path, "rb") as fh:
        magic, w, h, maxval = _read_header(fh, 4)
        if magic != b"P6" or int(maxval) != 255:
            raise ImageFormatError(f"{path}: not an 8-bit P6 file")
        w, h = int(w), int(h)
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    if data.size != w * h * 3:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3)


def write_pgm(path: str, gray) -> None:
    """8-bit grey; boolean input is written as 0/255."""
    g = np.asarray(gray)
    if g.dtype == bool:
        g = g.astype(np.uint8) * 255
    elif g.dtype != np.uint8:
        g = to_u8(g)
    h, w = g.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(g).tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, w, h, maxval = _read_header(fh, 4)
        if magic != b"P5" or int(maxval) != 255:
            raise ImageFormatError(f"{path}: not an 8-bit P5 file")
        w, h = int(w), int(h)
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    if data.size != w * h:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return data.reshape(h, w)


def write_pfm(path: str, values) -> None:
    """Little-endian float32; H x W (grey) or H x W x 3 (colour).  Rows are
    stored bottom-to-top as the format requires."""
    v = np.asarray(values, dtype="<f4")
    if v.ndim == 2:
        magic = b"Pf"
    elif v.ndim == 3 and v.shape[2] == 3:
        magic = b"PF"
    else:
        raise ImageFormatError(f"PFM needs H x W or H x W x 3, got {v.shape}")
    h, w = v.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n-1.0\n".encode())
        fh.write(np.ascontiguousarray(v[::-1]).tobytes())


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, w, h, scale = _read_header(fh, 4)
        w, h, scale = int(w), int(h), float(scale)
        channels = {b"Pf": 1, b"PF": 3}.get(magic)
        if channels is None:
            raise ImageFormatError(f"{path}: not a PFM file")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * channels * 4), dtype=dtype)
    if data.size != w * h * channels:
        raise ImageFormatError(f"{path}: truncated pixel data")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float32)
