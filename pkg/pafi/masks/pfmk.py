# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
PFMK mask container.

    b"PFMK" | version u16 | provenance (32 raw SHA-256 bytes) |
    scope u8 | selector u8 | policy u8 (bit0 tune_norm, bit1 tune_embed) |
    sparsity f64 | seed u64 | group count u32
    per group: name length u16 | UTF-8 name | group size u64 | count u64 |
               LEB128 varints: first index, then successive gaps
    CRC32 u32 over every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

from pafi.errors import ContractError, MaskChecksumError, MaskFormatError, MaskVersionError
from pafi.masks.base import (
    SCOPE_CODES,
    SELECTOR_CODES,
    MaskGroup,
    MaskPolicy,
    SparseMask,
)

MAGIC = b"PFMK"
VERSION = 1

_SCOPES = {v: k for k, v in SCOPE_CODES.items()}
_SELECTORS = {v: k for k, v in SELECTOR_CODES.items()}
_HEAD = struct.Struct("<BBBdQI")


def _varint(value: int, out: bytearray) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = result = 0
    while True:
        if pos >= len(data):
            raise MaskFormatError("varint runs past end of mask body")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise MaskFormatError("varint longer than 64 bits")


def encode_mask(mask: SparseMask) -> bytes:
    try:
        provenance = bytes.fromhex(mask.provenance)
    except ValueError:
        raise MaskFormatError(f"provenance is not a hex digest: {mask.provenance!r}") from None
    if len(provenance) != 32:
        raise MaskFormatError("provenance must be a SHA-256 digest")
    buf = bytearray(MAGIC)
    buf += struct.pack("<H", VERSION)
    buf += provenance
    buf += _HEAD.pack(
        SCOPE_CODES[mask.scope], SELECTOR_CODES[mask.selector], mask.policy.to_byte(),
        mask.sparsity, mask.seed, len(mask),
    )
    for g in mask:
        name = g.name.encode("utf-8")
        buf += struct.pack("<H", len(name)) + name
        buf += struct.pack("<QQ", g.size, g.count)
        prev = 0
        for i, idx in enumerate(g.indices.tolist()):
            _varint(idx if i == 0 else idx - prev, buf)
            prev = idx
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def decode_mask(data: bytes) -> SparseMask:
    min_len = 4 + 2 + 32 + _HEAD.size + 4
    if len(data) < min_len or data[:4] != MAGIC:
        raise MaskFormatError("not a PFMK mask file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise MaskVersionError(f"unsupported PFMK version {version} (expected {VERSION})")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    body = data[:-4]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise MaskChecksumError("mask checksum mismatch")

    provenance = body[6:38].hex()
    scope_b, selector_b, policy_b, sparsity, seed, count = _HEAD.unpack_from(body, 38)
    if scope_b not in _SCOPES or selector_b not in _SELECTORS:
        raise MaskFormatError(f"unknown scope/selector byte ({scope_b}, {selector_b})")
    pos = 38 + _HEAD.size
    groups: list[MaskGroup] = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            if pos + name_len > len(body):
                raise MaskFormatError("group name runs past end of mask body")
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            size, n = struct.unpack_from("<QQ", body, pos)
            pos += 16
            # every index takes at least one varint byte
            if n > size or n > len(body) - pos:
                raise MaskFormatError(f"group {name!r}: count {n} does not fit size {size}")
            idx = np.empty(n, dtype=np.uint64)
            prev = 0
            for i in range(n):
                step, pos = _read_varint(body, pos)
                prev = step if i == 0 else prev + step
                if prev >= size:
                    raise MaskFormatError(f"group {name!r}: index {prev} out of range for size {size}")
                idx[i] = prev
            groups.append(MaskGroup(name, size, idx))
        if pos != len(body):
            raise MaskFormatError(f"{len(body) - pos} unparsed byte(s) in mask body")
        return SparseMask(
            groups, sparsity=sparsity, scope=_SCOPES[scope_b], selector=_SELECTORS[selector_b],
            policy=MaskPolicy.from_byte(policy_b), provenance=provenance, seed=seed,
        )
    except (struct.error, UnicodeDecodeError, ContractError, OverflowError, ValueError,
            MemoryError) as e:
        raise MaskFormatError(f"malformed mask body: {e}") from None


def serialize_mask(mask: SparseMask, path: str | Path) -> str:
    """Write the mask; returns the file's SHA-256."""
    data = encode_mask(mask)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def deserialize_mask(path: str | Path) -> SparseMask:
    return decode_mask(Path(path).read_bytes())
