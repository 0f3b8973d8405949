"""Readers and writers for PGM, PFM, plain-text grids and dictionary files."""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .denoise import DepthMap
from .model import Dictionary

DICT_MAGIC = b"NSSC-DICT"
DICT_VERSION = 1
_DICT_HEADER = struct.Struct("<9sIIII")
_DIGEST = 32


class FormatError(ValueError):
    """Malformed or truncated file.  ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class IntegrityError(ValueError):
    pass


class UnsupportedVersionError(FormatError):
    pass


# -- PGM ---------------------------------------------------------------------

def _header_tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte
    that ends the last one.
    """
    tokens = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError("header ended early", pos)
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        begin = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((data[begin:pos], begin))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError("expected whitespace after header", pos)
    return tokens, pos + 1


def _int_token(tok, what):
    raw, offset = tok
    try:
        value = int(raw)
    except ValueError:
        raise FormatError(f"bad {what} {raw!r}", offset) from None
    if value <= 0:
        raise FormatError(f"{what} must be positive, got {value}", offset)
    return value


def read_pgm(path) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary) PGM as a float grid of raw values."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported PGM variant {magic!r}", 0)
    tokens, pos = _header_tokens(data, 3, 2)
    width = _int_token(tokens[0], "width")
    height = _int_token(tokens[1], "height")
    maxval = _int_token(tokens[2], "maxval")
    if maxval > 65535:
        raise FormatError(f"maxval {maxval} exceeds 65535", tokens[2][1])
    count = width * height

    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        expected = count * dtype.itemsize
        found = len(data) - pos
        if found < expected:
            raise FormatError(
                f"truncated P5 payload: expected {expected} bytes, found {found}",
                pos,
            )
        values = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        parts = data[pos:].split()
        if len(parts) < count:
            raise FormatError(
                f"truncated P2 payload: expected {count} values, found {len(parts)}",
                pos,
            )
        try:
            values = np.array([int(p) for p in parts[:count]])
        except ValueError as err:
            raise FormatError(f"bad P2 sample: {err}", pos) from None
    if values.max(initial=0) > maxval:
        raise FormatError(f"sample exceeds maxval {maxval}", pos)
    return values.reshape(height, width).astype(np.float64)


def write_pgm(path, grid, maxval=None, binary=True):
    """Write integer-valued samples; values are rounded and clipped."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("PGM needs a 2-D grid")
    ints = np.rint(grid).astype(np.int64)
    if maxval is None:
        maxval = max(255, int(ints.max(initial=0)))
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    ints = np.clip(ints, 0, maxval)
    h, w = ints.shape
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
        Path(path).write_bytes(header + ints.astype(dtype).tobytes())
    else:
        lines = [f"P2\n{w} {h}\n{maxval}"]
        lines += [" ".join(str(v) for v in row) for row in ints]
        Path(path).write_text("\n".join(lines) + "\n")


# -- PFM ---------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM (``Pf``); rows are stored bottom-to-top."""
    data = Path(path).read_bytes()
    if data[:2] == b"PF":
        raise FormatError("colour PFM (PF) is not supported", 0)
    if data[:2] != b"Pf":
        raise FormatError(f"not a PFM file: magic {data[:2]!r}", 0)
    tokens, pos = _header_tokens(data, 3, 2)
    width = _int_token(tokens[0], "width")
    height = _int_token(tokens[1], "height")
    try:
        scale = float(tokens[2][0])
    except ValueError:
        raise FormatError(f"bad PFM scale {tokens[2][0]!r}", tokens[2][1]) from None
    if scale == 0:
        raise FormatError("PFM scale must be nonzero", tokens[2][1])
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * 4
    found = len(data) - pos
    if found < expected:
        raise FormatError(
            f"truncated PFM payload: expected {expected} bytes, found {found}", pos
        )
    values = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return values.reshape(height, width)[::-1].astype(np.float64)


def write_pfm(path, grid, little_endian=True):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("PFM needs a 2-D grid")
    h, w = grid.shape
    scale = -1.0 if little_endian else 1.0
    dtype = "<f4" if little_endian else ">f4"
    header = f"Pf\n{w} {h}\n{scale}\n".encode("ascii")
    Path(path).write_bytes(header + grid[::-1].astype(dtype).tobytes())


# -- plain-text grid ---------------------------------------------------------

def read_grid(path) -> np.ndarray:
    """Text grid: a first line ``H W`` followed by H*W numbers."""
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    try:
        h, w = (int(t) for t in first.split())
    except ValueError:
        raise FormatError(f"bad grid header {first!r}", 0) from None
    values = np.array(rest.split(), dtype=np.float64)
    if values.size != h * w:
        raise FormatError(
            f"grid declares {h}x{w} values, found {values.size}", len(first) + 1
        )
    return values.reshape(h, w)


def write_grid(path, grid):
    grid = np.asarray(grid, dtype=np.float64)
    lines = [f"{grid.shape[0]} {grid.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n")


def read_map(path, zero_is_missing=False, scale=1.0) -> DepthMap:
    """Load any supported grid format as a DepthMap.

    ``scale`` divides the raw values (e.g. 16 for Tsukuba disparities).
    With ``zero_is_missing``, raw zeros become missing pixels.
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        raw = read_pfm(path)
    elif suffix in (".pgm", ".pnm"):
        raw = read_pgm(path)
    else:
        raw = read_grid(path)
    mask = (raw == 0) if zero_is_missing else None
    return DepthMap(raw / scale, mask)


def write_map(path, grid, fmt=None, scale=1.0):
    fmt = fmt or Path(path).suffix.lstrip(".").lower()
    if fmt == "pfm":
        write_pfm(path, grid)
    elif fmt == "pgm":
        write_pgm(path, np.asarray(grid) * scale)
    else:
        write_grid(path, grid)


# -- dictionary file ---------------------------------------------------------

def dictionary_bytes(dictionary: Dictionary) -> bytes:
    h, w = dictionary.patch_dims
    k = dictionary.atom_count
    header = _DICT_HEADER.pack(DICT_MAGIC, DICT_VERSION, h, w, k)
    # K atoms of N values each, row-major
    payload = np.ascontiguousarray(dictionary.atoms.T).astype("<f8").tobytes()
    body = header + payload
    return body + hashlib.sha256(body).digest()


def write_dictionary(path, dictionary: Dictionary):
    Path(path).write_bytes(dictionary_bytes(dictionary))


def read_dictionary(path) -> Dictionary:
    data = Path(path).read_bytes()
    if len(data) < _DICT_HEADER.size + _DIGEST:
        raise FormatError(f"dictionary file too short ({len(data)} bytes)", 0)
    magic, version, h, w, k = _DICT_HEADER.unpack_from(data, 0)
    if magic != DICT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != DICT_VERSION:
        raise UnsupportedVersionError(
            f"dictionary format version {version} is not supported "
            f"(expected {DICT_VERSION})", 9,
        )
    expected = h * w * k * 8
    found = len(data) - _DICT_HEADER.size - _DIGEST
    if found != expected:
        raise FormatError(
            f"payload is {found} bytes but header declares {h}x{w}x{k} "
            f"({expected} bytes)", _DICT_HEADER.size,
        )
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("dictionary checksum mismatch")
    atoms = np.frombuffer(body, dtype="<f8", offset=_DICT_HEADER.size)
    return Dictionary(atoms.reshape(k, h * w).T.astype(np.float64), (h, w))
