"""Bit-exact on-disk formats.

RTDF (region tensor data file): one image's bottom-up features.
    magic "RTDF" | u32 version=1 | u32 N | u32 n1 | u32 n2 | u32 D
    payload: global vector (D f32), then N grids of n1*n2*D f32 each in
    row, col, channel order. Everything little-endian. Feature payloads
    are f32 on disk (detector outputs are f32 natively); readers widen
    to f64.

RTDC (checkpoint): named f64 tensors.
    magic "RTDC" | u32 version=1 | u32 tensor_count
    per tensor: u16 name length | name UTF-8 | u8 rank | rank x u32 dims |
    f64 data little-endian
    trailer: u32 CRC32 over all preceding bytes.
    The CRC is verified before anything else is parsed, so any single
    corrupted byte is caught no matter where it lands.

Vocabulary: UTF-8 text, one token per line, index = line number, lines
0..3 exactly the reserved sentinels.

Manifest: JSON-lines rows {"image_id": str, "features": relative path,
"refs": [str, ...]}.

Readers never trust lengths: every size is validated against the actual
byte count before allocation.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .features import FeatureRecord, RegionGrid
from .vocab import RESERVED_TOKENS, Vocabulary

RTDF_MAGIC = b"RTDF"
RTDF_VERSION = 1
CKPT_MAGIC = b"RTDC"
CKPT_VERSION = 1

_MAX_SANE_DIM = 1 << 24


class DataFormatError(Exception):
    """Base for all file-format violations."""


class BadMagic(DataFormatError):
    pass


class VersionMismatch(DataFormatError):
    pass


class Truncated(DataFormatError):
    pass


class CrcMismatch(DataFormatError):
    pass


class ShapeConflict(DataFormatError):
    pass


class VocabFormatError(DataFormatError):
    pass


# -- RTDF ---------------------------------------------------------------------------


def write_rtdf(record: FeatureRecord, path) -> None:
    n = record.num_regions
    n1, n2 = record.grid_shape
    d = record.depth
    parts = [RTDF_MAGIC, struct.pack("<5I", RTDF_VERSION, n, n1, n2, d)]
    if not np.all(np.isfinite(record.global_feat)):
        raise ValueError("refusing to write non-finite global feature")
    parts.append(record.global_feat.astype("<f4").tobytes())
    for g in record.grids:
        if not np.all(np.isfinite(g.cells)):
            raise ValueError("refusing to write non-finite grid cells")
        parts.append(g.cells.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_rtdf(path) -> FeatureRecord:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise Truncated(f"{path}: header needs 24 bytes, file has {len(raw)}")
    if raw[:4] != RTDF_MAGIC:
        raise BadMagic(f"{path}: magic {raw[:4]!r} is not {RTDF_MAGIC!r}")
    version, n, n1, n2, d = struct.unpack("<5I", raw[4:24])
    if version != RTDF_VERSION:
        raise VersionMismatch(f"{path}: version {version}, reader supports {RTDF_VERSION}")
    if min(n, n1, n2, d) < 1 or max(n, n1, n2, d) > _MAX_SANE_DIM:
        raise DataFormatError(f"{path}: implausible dims N={n} n1={n1} n2={n2} D={d}")
    expected = 24 + 4 * d * (1 + n * n1 * n2)
    if len(raw) != expected:
        raise Truncated(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=24).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{path}: payload contains non-finite values")
    global_feat = values[:d]
    cells = values[d:].reshape(n, n1 * n2, d)
    grids = [RegionGrid(cells[i], n1, n2) for i in range(n)]
    return FeatureRecord(image_id=Path(path).stem, grids=grids, global_feat=global_feat)


# -- RTDC checkpoints -----------------------------------------------------------------


def save_checkpoint(arrays: dict[str, np.ndarray], path) -> None:
    names = list(arrays)
    if len(set(names)) != len(names):
        raise ValueError("tensor names must be unique")
    parts = [CKPT_MAGIC, struct.pack("<2I", CKPT_VERSION, len(names))]
    for name in names:
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"refusing to checkpoint non-finite tensor {name!r}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path, expected_shapes: dict[str, tuple[int, ...]] | None = None
                    ) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise Truncated(f"{path}: too short to be a checkpoint ({len(raw)} bytes)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CrcMismatch(f"{path}: CRC32 does not match; file is corrupt")
    if body[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: magic {body[:4]!r} is not {CKPT_MAGIC!r}")
    version, count = struct.unpack("<2I", body[4:12])
    if version != CKPT_VERSION:
        raise VersionMismatch(f"{path}: version {version}, reader supports {CKPT_VERSION}")

    out: dict[str, np.ndarray] = {}
    offset = 12
    for _ in range(count):
        if offset + 2 > len(body):
            raise Truncated(f"{path}: tensor table ends early")
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        if offset + name_len + 1 > len(body):
            raise Truncated(f"{path}: tensor name ends early")
        name = body[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", body, offset)
        offset += 1
        if offset + 4 * rank > len(body):
            raise Truncated(f"{path}: dims of {name!r} end early")
        dims = struct.unpack_from(f"<{rank}I", body, offset) if rank else ()
        offset += 4 * rank
        if any(dim > _MAX_SANE_DIM for dim in dims):
            raise DataFormatError(f"{path}: implausible dims {dims} for {name!r}")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 8 * size
        if offset + nbytes > len(body):
            raise Truncated(f"{path}: data of {name!r} ends early")
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=offset).reshape(dims).copy()
        offset += nbytes
        if name in out:
            raise DataFormatError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr
    if offset != len(body):
        raise Truncated(f"{path}: {len(body) - offset} trailing bytes after tensor table")

    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in out:
                raise ShapeConflict(f"{path}: missing tensor {name!r}")
            if out[name].shape != tuple(shape):
                raise ShapeConflict(
                    f"{path}: tensor {name!r} has shape {out[name].shape}, expected {tuple(shape)}"
                )
        unknown = set(out) - set(expected_shapes)
        if unknown:
            raise ShapeConflict(f"{path}: unknown tensor names {sorted(unknown)[:5]}")
    return out


# -- vocabulary ------------------------------------------------------------------------


def save_vocab(vocab: Vocabulary, path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(lines[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
        raise VocabFormatError(
            f"{path}: first {len(RESERVED_TOKENS)} lines must be {RESERVED_TOKENS}"
        )
    seen: dict[str, int] = {}
    for i, tok in enumerate(lines):
        if not tok:
            raise VocabFormatError(f"{path}:{i + 1}: empty token line")
        if tok in seen:
            raise VocabFormatError(
                f"{path}:{i + 1}: duplicate token {tok!r} (first at line {seen[tok] + 1})"
            )
        seen[tok] = i
    return Vocabulary(lines)


# -- manifest --------------------------------------------------------------------------


def write_manifest(rows: list[dict], path) -> None:
    ids = [r["image_id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError("manifest image_ids must be unique")
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(
                {"image_id": row["image_id"], "features": row["features"], "refs": row["refs"]}
            ) + "\n")


def read_manifest(path) -> list[dict]:
    rows = []
    seen = set()
    base = Path(path).parent
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            for key in ("image_id", "features", "refs"):
                if key not in row:
                    raise DataFormatError(f"{path}:{line_no}: missing key {key!r}")
            if row["image_id"] in seen:
                raise DataFormatError(f"{path}:{line_no}: duplicate image_id {row['image_id']!r}")
            seen.add(row["image_id"])
            feat_path = base / row["features"]
            if not feat_path.exists():
                raise DataFormatError(f"{path}:{line_no}: feature file {feat_path} does not exist")
            rows.append({"image_id": row["image_id"], "features": str(feat_path),
                         "refs": list(row["refs"])})
    return rows
