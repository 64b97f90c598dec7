"""Binary container for diagonal-Fisher and parameter snapshots.

Layout on disk:

    bytes 0-7   magic ``FIMDIAG1``
    bytes 8-11  little-endian uint32 header length
    ...         UTF-8 JSON header {version, kind, mode, n_samples,
                model_fingerprint, layout: [{layer, offset, len}, ...]}
    ...         payload: little-endian float64 values in layout order
    last 4      little-endian uint32 CRC-32C over header + payload

The same container stores both Fisher diagonals (kind ``fim``) and parameter
vectors such as pretraining snapshots (kind ``params``). Round-trips are
lossless including metadata, and every corruption class raises a distinct
error: bad magic, unsupported version, malformed header, truncation, or
checksum mismatch. Nothing is ever silently repaired.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .fim import DiagFim
from .nn import ParamVector, Segment, layout_fingerprint

MAGIC = b"FIMDIAG1"
VERSION = 1


class ArtifactError(ValueError):
    """Base class for container format failures."""


class BadMagicError(ArtifactError):
    pass


class UnsupportedVersionError(ArtifactError):
    pass


class MalformedHeaderError(ArtifactError):
    pass


class TruncatedFileError(ArtifactError):
    pass


class ChecksumError(ArtifactError):
    pass


class WrongKindError(ArtifactError):
    pass


def _crc32c_table() -> np.ndarray:
    poly = 0x82F63B78  # reflected Castagnoli polynomial
    table = np.zeros(256, dtype=np.uint32)
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table[n] = c
    return table


_CRC_TABLE = _crc32c_table()


def crc32c(data: bytes) -> int:
    """CRC-32C (Castagnoli) of a byte string."""
    crc = 0xFFFFFFFF
    table = _CRC_TABLE
    for b in data:
        crc = (crc >> 8) ^ int(table[(crc ^ b) & 0xFF])
    return crc ^ 0xFFFFFFFF


def _encode(kind: str, values: np.ndarray, layout, mode: str | None,
            n_samples: int, fingerprint: str) -> bytes:
    header = {
        "version": VERSION,
        "kind": kind,
        "mode": mode,
        "n_samples": n_samples,
        "model_fingerprint": fingerprint,
        "layout": [
            {"layer": seg.name, "offset": seg.offset, "len": seg.length}
            for seg in layout
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    body = header_bytes + payload
    return (
        MAGIC
        + struct.pack("<I", len(header_bytes))
        + body
        + struct.pack("<I", crc32c(body))
    )


def save_fim(fim: DiagFim, path) -> None:
    blob = _encode("fim", fim.values, fim.layout, fim.mode, fim.n_samples,
                   fim.model_fingerprint)
    with open(path, "wb") as fh:
        fh.write(blob)


def save_params(params: ParamVector, path) -> None:
    """Store a parameter snapshot (e.g. pretraining weights) in the container."""
    blob = _encode("params", params.values, params.layout, None, 0,
                   layout_fingerprint(params))
    with open(path, "wb") as fh:
        fh.write(blob)


def _decode(raw: bytes) -> tuple[dict, np.ndarray]:
    if len(raw) < len(MAGIC) + 4:
        raise TruncatedFileError("file shorter than magic and header length")
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not a FIMDIAG1 container")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    header_start = len(MAGIC) + 4
    if len(raw) < header_start + header_len + 4:
        raise TruncatedFileError("declared header exceeds file size")
    header_bytes = raw[header_start : header_start + header_len]
    body = raw[header_start:-4]
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if crc32c(body) != stored_crc:
        raise ChecksumError("CRC-32C mismatch")
    try:
        header = json.loads(header_bytes.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "version" not in header:
        raise MalformedHeaderError("header missing version")
    if header["version"] != VERSION:
        raise UnsupportedVersionError(f"unsupported version {header['version']!r}")
    try:
        layout = tuple(
            Segment(e["layer"], int(e["offset"]), int(e["len"]))
            for e in header["layout"]
        )
        kind = header["kind"]
    except (KeyError, TypeError) as exc:
        raise MalformedHeaderError(f"header missing fields: {exc}") from exc
    total = sum(seg.length for seg in layout)
    payload = raw[header_start + header_len : -4]
    if len(payload) != 8 * total:
        raise TruncatedFileError(
            f"payload holds {len(payload)} bytes, layout needs {8 * total}"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if kind not in ("fim", "params"):
        raise MalformedHeaderError(f"unknown kind {kind!r}")
    header["_layout"] = layout
    return header, values


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def load_fim(path) -> DiagFim:
    """Load a Fisher artifact; bit-identical to what was saved."""
    header, values = _decode(_read(path))
    if header["kind"] != "fim":
        raise WrongKindError(f"expected a fim artifact, found {header['kind']!r}")
    return DiagFim(
        values,
        header["_layout"],
        mode=header["mode"],
        n_samples=int(header["n_samples"]),
        model_fingerprint=header["model_fingerprint"],
    )


def load_params(path) -> ParamVector:
    header, values = _decode(_read(path))
    if header["kind"] != "params":
        raise WrongKindError(f"expected a params artifact, found {header['kind']!r}")
    return ParamVector(values, header["_layout"])
