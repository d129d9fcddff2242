"""Single-file checkpoint container.

Layout: magic ``SMCK``, u32 format version, u64 header length, a JSON
header, then a packed payload of little-endian float32 arrays in header
order. The header records each array's name, shape, and byte span plus a
SHA-256 of the payload, so corruption is detected at load time and
unknown versions are rejected instead of misread.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError, DataError, VersionError

MAGIC = b"SMCK"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sIQ")


def _canon(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(arr), dtype="<f4")


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Write arrays (converted to float32) plus JSON-able metadata."""
    if not arrays:
        raise DataError("refusing to write a checkpoint with no arrays")
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = _canon(arrays[name])
        entries.append({"name": name, "shape": list(a.shape), "dtype": "<f4",
                        "offset": offset, "nbytes": a.nbytes})
        chunks.append(a.tobytes())
        offset += a.nbytes
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "arrays": entries,
        "meta": meta or {},
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back; returns (arrays, meta).

    Raises VersionError for an unknown format version and
    CorruptCheckpointError when the payload checksum does not match.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read checkpoint: {e}") from e
    if len(raw) < _HEAD.size or raw[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    magic, version, header_len = _HEAD.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    body = raw[_HEAD.size:]
    if len(body) < header_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(body[:header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header: {exc}") from exc
    payload = body[header_len:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptCheckpointError(f"{path}: payload checksum mismatch")
    arrays: dict[str, np.ndarray] = {}
    for ent in header["arrays"]:
        start, n = ent["offset"], ent["nbytes"]
        if start + n > len(payload):
            raise CorruptCheckpointError(f"{path}: array {ent['name']} out of bounds")
        buf = payload[start:start + n]
        arrays[ent["name"]] = np.frombuffer(buf, dtype="<f4").reshape(ent["shape"]).copy()
    return arrays, header.get("meta", {})
