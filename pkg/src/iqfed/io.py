"""Binary file formats: IQDS datasets, ENCP checkpoints, SVML models, and CSV helpers.

All multi-byte fields are little-endian.

IQDS v1::

    b"IQDS" | u16 version=1 | u16 flags | u32 frame_count | u32 N
    frame_count x ( u8 label | 2N x f32 interleaved I0,Q0,I1,Q1,... )
    [if flags & 1] frame_count x 4 x f64 (gain, phase_offset, cfo, snr_db)

Label 255 marks an unlabeled frame.

ENCP::

    b"ENCP" | u32 config_len | config JSON (utf-8) | u64 n | n x f64 | u32 crc32

The CRC covers every preceding byte.

SVML::

    b"SVML" | u32 num_classes | u32 dim | W (num_classes x dim f64, row-major) | b (num_classes f64)
"""
from __future__ import annotations

import csv
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .signal import FrameSet

IQDS_MAGIC = b"IQDS"
IQDS_VERSION = 1
IQDS_HAS_METADATA = 0x0001
UNLABELED = 255
_IQDS_HEADER = struct.Struct("<4sHHII")

ENCP_MAGIC = b"ENCP"
SVML_MAGIC = b"SVML"


class FormatError(ValueError):
    """A file does not match its declared binary layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------- IQDS


def encode_iqds(frames: FrameSet, metadata: bool = True) -> bytes:
    n_frames, n = frames.samples.shape
    if np.any(frames.labels > 3) or np.any(frames.labels < -1):
        raise ValueError("IQDS labels must be class indices 0-3 or -1 (unlabeled)")
    flags = IQDS_HAS_METADATA if metadata else 0
    header = _IQDS_HEADER.pack(IQDS_MAGIC, IQDS_VERSION, flags, n_frames, n)

    record = np.dtype([("label", "u1"), ("iq", "<f4", (2 * n,))])
    body = np.empty(n_frames, dtype=record)
    body["label"] = np.where(frames.labels < 0, UNLABELED, frames.labels).astype(np.uint8)
    iq = body["iq"].reshape(n_frames, n, 2)
    iq[..., 0] = frames.samples.real
    iq[..., 1] = frames.samples.imag
    parts = [header, body.tobytes()]
    if metadata:
        parts.append(np.ascontiguousarray(frames.channel, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_iqds(payload: bytes) -> FrameSet:
    if len(payload) < _IQDS_HEADER.size:
        raise FormatError(f"truncated IQDS header: {len(payload)} bytes", len(payload))
    magic, version, flags, n_frames, n = _IQDS_HEADER.unpack_from(payload, 0)
    if magic != IQDS_MAGIC:
        raise FormatError(f"bad IQDS magic {magic!r}", 0)
    if version != IQDS_VERSION:
        raise FormatError(f"unsupported IQDS version {version}", 4)
    rec_size = 1 + 8 * n
    body_end = _IQDS_HEADER.size + n_frames * rec_size
    meta_end = body_end + (32 * n_frames if flags & IQDS_HAS_METADATA else 0)
    if len(payload) < body_end:
        complete = (len(payload) - _IQDS_HEADER.size) // rec_size
        raise FormatError(
            f"truncated IQDS body: frame {complete} of {n_frames} is incomplete",
            _IQDS_HEADER.size + complete * rec_size,
        )
    if len(payload) < meta_end:
        raise FormatError("truncated IQDS metadata block", len(payload))
    if len(payload) > meta_end:
        raise FormatError(f"{len(payload) - meta_end} trailing bytes after IQDS content", meta_end)

    record = np.dtype([("label", "u1"), ("iq", "<f4", (2 * n,))])
    body = np.frombuffer(payload, dtype=record, count=n_frames, offset=_IQDS_HEADER.size)
    raw = body["label"].astype(np.int64)
    if np.any((raw > 3) & (raw != UNLABELED)):
        bad = int(np.flatnonzero((raw > 3) & (raw != UNLABELED))[0])
        raise FormatError(f"invalid label {raw[bad]}", _IQDS_HEADER.size + bad * rec_size)
    labels = np.where(raw == UNLABELED, -1, raw)
    iq = body["iq"].astype(np.float64).reshape(n_frames, n, 2)
    samples = iq[..., 0] + 1j * iq[..., 1]
    channel = None
    if flags & IQDS_HAS_METADATA:
        channel = np.frombuffer(payload, dtype="<f8", count=4 * n_frames, offset=body_end).reshape(n_frames, 4)
    if n_frames == 0:
        samples = np.zeros((0, n), complex)
    return FrameSet(samples, labels, None if channel is None else channel.copy())


def write_iqds(path, frames: FrameSet, metadata: bool = True) -> None:
    _atomic_write(path, encode_iqds(frames, metadata))


def read_iqds(path) -> FrameSet:
    return decode_iqds(Path(path).read_bytes())


def read_iqds_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(_IQDS_HEADER.size)
    if len(head) < _IQDS_HEADER.size:
        raise FormatError("truncated IQDS header", len(head))
    magic, version, flags, n_frames, n = _IQDS_HEADER.unpack(head)
    if magic != IQDS_MAGIC:
        raise FormatError(f"bad IQDS magic {magic!r}", 0)
    return {"version": version, "flags": flags, "frame_count": n_frames, "frame_length": n}


# ---------------------------------------------------------------- ENCP


def encode_checkpoint(config: dict, flat: np.ndarray) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    flat = np.ascontiguousarray(flat, dtype="<f8")
    body = b"".join([ENCP_MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<Q", flat.size), flat.tobytes()])
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(payload: bytes) -> tuple[dict, np.ndarray]:
    if payload[:4] != ENCP_MAGIC:
        raise FormatError(f"bad ENCP magic {payload[:4]!r}", 0)
    if len(payload) < 8:
        raise FormatError("truncated ENCP header", len(payload))
    (cfg_len,) = struct.unpack_from("<I", payload, 4)
    pos = 8 + cfg_len
    if len(payload) < pos + 8:
        raise FormatError("truncated ENCP config block", len(payload))
    config = json.loads(payload[8:pos].decode("utf-8"))
    (n,) = struct.unpack_from("<Q", payload, pos)
    pos += 8
    end = pos + 8 * n
    if len(payload) != end + 4:
        raise FormatError(f"ENCP length {len(payload)} does not match {n} parameters", min(len(payload), end))
    (crc,) = struct.unpack_from("<I", payload, end)
    if crc != zlib.crc32(payload[:end]):
        raise FormatError("ENCP checksum mismatch", end)
    return config, np.frombuffer(payload, dtype="<f8", count=n, offset=pos).astype(np.float64)


def write_checkpoint(path, config: dict, flat: np.ndarray) -> None:
    _atomic_write(path, encode_checkpoint(config, flat))


def read_checkpoint(path) -> tuple[dict, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------- SVML


def encode_svm(weights: np.ndarray, bias: np.ndarray) -> bytes:
    weights = np.ascontiguousarray(weights, dtype="<f8")
    k, d = weights.shape
    return SVML_MAGIC + struct.pack("<II", k, d) + weights.tobytes() + np.ascontiguousarray(bias, dtype="<f8").tobytes()


def decode_svm(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    if payload[:4] != SVML_MAGIC:
        raise FormatError(f"bad SVML magic {payload[:4]!r}", 0)
    k, d = struct.unpack_from("<II", payload, 4)
    expected = 12 + 8 * (k * d + k)
    if len(payload) != expected:
        raise FormatError(f"SVML payload is {len(payload)} bytes, expected {expected}", min(len(payload), expected))
    w = np.frombuffer(payload, "<f8", k * d, 12).reshape(k, d).astype(np.float64)
    b = np.frombuffer(payload, "<f8", k, 12 + 8 * k * d).astype(np.float64)
    return w, b


def write_svm(path, weights, bias) -> None:
    _atomic_write(path, encode_svm(weights, bias))


def read_svm(path):
    return decode_svm(Path(path).read_bytes())


# ---------------------------------------------------------------- CSV


def fmt(x) -> str:
    """Stable text for CSV cells: shortest round-trip repr for floats."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
