# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
PFRG checkpoint container.

Layout, all integers little-endian:

    b"PFRG" | version u16 | group count u32
    per group: name length u16 | UTF-8 name | role u8 | rank u8 |
               dims u64 × rank | payload (f32 for version 1, f64 for version 2)
    CRC32 u32 over every preceding byte

A sibling ``<path>.json`` manifest mirrors names, roles and shapes, and
records the model meta when the store carries one.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from pafi.config import get_cfg
from pafi.errors import (
    CorruptHeaderError,
    CorruptPayloadError,
    NumericError,
    PafiError,
    ShapeMetaMismatchError,
)
from pafi.log import get_logger
from pafi.numerics import Tensor
from pafi.stores.base import CODE_ROLES, ROLE_CODES, ModelMeta, ParameterStore, ParamGroup

MAGIC = b"PFRG"
PRECISIONS = {"f32": (1, "<f4"), "f64": (2, "<f8")}
_VERSION_DTYPES = {v: dt for v, dt in PRECISIONS.values()}

log = get_logger()


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def encode_store(store: ParameterStore, precision: str = "f32") -> bytes:
    try:
        version, dtype = PRECISIONS[precision]
    except KeyError:
        raise PafiError(f"unknown checkpoint precision {precision!r}", code="invalid_config") from None
    buf = bytearray(MAGIC)
    buf += struct.pack("<HI", version, len(store))
    for g in store:
        name = g.name.encode("utf-8")
        buf += struct.pack("<H", len(name))
        buf += name
        buf += struct.pack("<BB", ROLE_CODES[g.role], g.tensor.ndim)
        buf += struct.pack(f"<{g.tensor.ndim}Q", *g.shape)
        buf += g.tensor.data.astype(dtype).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str, err: type[PafiError] = CorruptHeaderError) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise err(f"truncated {what} at byte {self.pos} (need {n}, have {len(self.data) - self.pos})")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str, what: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_store(data: bytes) -> tuple[int, list[ParamGroup]]:
    """Parse PFRG bytes into (version, groups); payloads are widened to f64."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CorruptHeaderError("not a PFRG checkpoint (bad magic)")
    version, count = r.unpack("<HI", "header")
    dtype = _VERSION_DTYPES.get(version)
    if dtype is None:
        raise CorruptHeaderError(f"unsupported PFRG version {version}")
    width = np.dtype(dtype).itemsize

    groups: list[ParamGroup] = []
    for i in range(count):
        (name_len,) = r.unpack("<H", f"group {i} name length")
        try:
            name = r.take(name_len, f"group {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptHeaderError(f"group {i}: name is not valid UTF-8") from None
        role_code, rank = r.unpack("<BB", f"group {name!r} role/rank")
        role = CODE_ROLES.get(role_code)
        if role is None:
            raise CorruptHeaderError(f"group {name!r}: unknown role byte {role_code}")
        if rank not in (1, 2):
            raise CorruptHeaderError(f"group {name!r}: unsupported rank {rank}")
        dims = r.unpack(f"<{rank}Q", f"group {name!r} dims")
        if any(dim == 0 for dim in dims):
            raise CorruptHeaderError(f"group {name!r}: zero dimension in {list(dims)}")
        payload = r.take(math.prod(dims) * width, f"group {name!r} payload", CorruptPayloadError)
        arr = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(dims)
        try:
            tensor = Tensor._adopt(arr)
        except NumericError as e:
            raise CorruptPayloadError(f"group {name!r}: {e.message}") from None
        try:
            groups.append(ParamGroup(name, role, tensor))
        except PafiError as e:
            raise ShapeMetaMismatchError(e.message) from None

    body_end = r.pos
    (crc,) = struct.unpack("<I", r.take(4, "checksum", CorruptPayloadError))
    if r.pos != len(data):
        raise CorruptPayloadError(f"{len(data) - r.pos} trailing byte(s) after checksum")
    if zlib.crc32(data[:body_end]) & 0xFFFFFFFF != crc:
        raise CorruptPayloadError("checksum mismatch")
    return version, groups


def _manifest(store: ParameterStore, version: int, digest: str) -> dict[str, Any]:
    return {
        "format": "PFRG",
        "version": version,
        "sha256": digest,
        "total": store.total,
        "meta": store.meta.to_dict() if store.meta else None,
        "groups": [
            {"name": g.name, "role": g.role.value, "shape": list(g.shape)} for g in store
        ],
    }


def save_checkpoint(store: ParameterStore, path: str | Path,
                    precision: str | None = None) -> str:
    """Write the PFRG file plus its JSON manifest; returns the file's SHA-256."""
    precision = precision or str(get_cfg().get("checkpoint.precision", "f32"))
    data = encode_store(store, precision)
    digest = hashlib.sha256(data).hexdigest()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    manifest = _manifest(store, PRECISIONS[precision][0], digest)
    manifest_path(p).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    log.debug(f"saved {p} ({len(store)} groups, {store.total} params, {precision})")
    return digest


def _manifest_meta(mp: Path, p: Path, groups: list[ParamGroup]) -> ModelMeta | None:
    """Meta recorded in a sibling manifest, checked against the decoded groups."""
    try:
        manifest = json.loads(mp.read_text(encoding="utf-8"))
        listed = [(m["name"], tuple(m["shape"])) for m in manifest.get("groups", [])]
        meta = ModelMeta.from_dict(manifest["meta"]) if manifest.get("meta") else None
    except (ValueError, KeyError, TypeError, AttributeError, PafiError) as e:
        raise CorruptHeaderError(f"unreadable manifest {mp}: {e!r}") from None
    if listed != [(g.name, g.shape) for g in groups]:
        raise ShapeMetaMismatchError(f"manifest {mp.name} does not describe {p.name}")
    return meta


def load_checkpoint(path: str | Path, heads: int | None = None) -> ParameterStore:
    """
    Read a PFRG file. Meta comes from the sibling manifest when present
    (and is validated against the shapes), otherwise it is inferred from the
    groups when they form a full toy model.
    """
    p = Path(path)
    data = p.read_bytes()
    _version, groups = decode_store(data)

    mp = manifest_path(p)
    meta = _manifest_meta(mp, p, groups) if mp.is_file() else None
    if meta is None:
        if heads is None:
            heads = int(get_cfg().get("model.heads", 1))
        meta = ModelMeta.infer(groups, heads=heads)
        if meta is not None:
            try:
                meta.validate(groups)
            except ShapeMetaMismatchError:
                meta = None
    return ParameterStore(groups, meta=meta)
