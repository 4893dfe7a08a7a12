"""Versioned binary checkpoint container.

Layout: magic "HASD1", format version, sha256 of the embedded config JSON,
then named length-prefixed sections (JSON, float64 arrays little-endian, or
raw bytes such as network fragments). Loading verifies magic, version, and
hash and refuses anything that does not match.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"HASD1"
VERSION = 1

_KIND_JSON = 0
_KIND_ARRAY = 1
_KIND_BYTES = 2


class CheckpointError(RuntimeError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _encode_array(arr: np.ndarray) -> bytes:
    # ascontiguousarray would promote 0-d to (1,); tobytes copies anyway
    arr = np.asarray(arr, dtype="<f8")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _decode_array(blob: bytes) -> np.ndarray:
    (ndim,) = struct.unpack_from("<I", blob, 0)
    shape = struct.unpack_from(f"<{ndim}Q", blob, 4)
    data = np.frombuffer(blob, dtype="<f8", offset=4 + 8 * ndim)
    return data.reshape(shape).astype(np.float64)


def write_container(path, config: dict, sections: dict) -> None:
    """Sections may hold dicts (JSON), numpy arrays, or raw bytes."""
    cfg_json = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    digest = hashlib.sha256(cfg_json).hexdigest().encode()
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<I", len(digest)) + digest)
    parts.append(struct.pack("<I", len(cfg_json)) + cfg_json)
    parts.append(struct.pack("<I", len(sections)))
    for name, payload in sections.items():
        if isinstance(payload, dict):
            kind, blob = _KIND_JSON, json.dumps(payload, sort_keys=True).encode()
        elif isinstance(payload, np.ndarray):
            kind, blob = _KIND_ARRAY, _encode_array(payload)
        elif isinstance(payload, (bytes, bytearray)):
            kind, blob = _KIND_BYTES, bytes(payload)
        else:
            raise TypeError(f"unsupported section type for {name!r}: {type(payload)}")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<BQ", kind, len(blob)) + blob)
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_container(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic header")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    digest = blob[off : off + hlen].decode()
    off += hlen
    (clen,) = struct.unpack_from("<I", blob, off)
    off += 4
    cfg_json = blob[off : off + clen]
    off += clen
    if hashlib.sha256(cfg_json).hexdigest() != digest:
        raise CheckpointError("config hash mismatch: checkpoint corrupted")
    config = json.loads(cfg_json)
    (n_sections,) = struct.unpack_from("<I", blob, off)
    off += 4
    sections = {}
    for _ in range(n_sections):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode()
        off += nlen
        kind, plen = struct.unpack_from("<BQ", blob, off)
        off += 9
        payload = blob[off : off + plen]
        off += plen
        if kind == _KIND_JSON:
            sections[name] = json.loads(payload)
        elif kind == _KIND_ARRAY:
            sections[name] = _decode_array(payload)
        elif kind == _KIND_BYTES:
            sections[name] = payload
        else:
            raise CheckpointError(f"unknown section kind {kind}")
    return config, sections
