"""
Binary checkpoint format for named float64 tensors.

Layout (little-endian):
    magic      8 bytes  b"SSILCKPT"
    version    u32
    count      u32
    per tensor:
        name length u16, UTF-8 name, rank u8, dims (u32 each), float64 data
    crc32      u32 over every preceding byte

Tensors are written in the order given, so save → load → save is
byte-identical.
"""

import struct
import zlib
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .agents import LMParams, Seq2SeqParams
from .autodiff import Tensor
from .errors import CheckpointError

MAGIC = b"SSILCKPT"
VERSION = 1


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        raw_name = name.encode("utf-8")
        value = np.asarray(value, dtype=np.float64)
        if len(raw_name) > 0xFFFF or value.ndim > 0xFF:
            raise CheckpointError(f"tensor '{name}' cannot be stored (name or rank too large)")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a driftlab checkpoint (bad magic)")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    version, count = struct.unpack_from("<II", payload, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = len(MAGIC) + 8
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            tensors[name] = data.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from e
    if offset != len(payload):
        raise CheckpointError(f"{len(payload) - offset} trailing bytes in checkpoint")
    return tensors


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    return path


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


# --------------------------------------------------------------------------- #
# Agent bundles
# --------------------------------------------------------------------------- #
FREEZE_HASH_KEY = "lm.freeze_hash"


def pack_agents(
    sender: Optional[Seq2SeqParams] = None,
    receiver: Optional[Seq2SeqParams] = None,
    lm: Optional[LMParams] = None,
) -> dict[str, np.ndarray]:
    """Flatten agents into ``role.param`` entries; the LM freeze hash is stored as byte values."""
    tensors: dict[str, np.ndarray] = {}
    for role, store in (("sender", sender), ("receiver", receiver), ("lm", lm)):
        if store is None:
            continue
        for name, value in store.state_dict().items():
            tensors[f"{role}.{name}"] = value
    if lm is not None and lm.freeze_hash is not None:
        tensors[FREEZE_HASH_KEY] = np.frombuffer(bytes.fromhex(lm.freeze_hash), dtype=np.uint8).astype(np.float64)
    return tensors


def unpack_agents(tensors: Mapping[str, np.ndarray]) -> dict:
    """Inverse of ``pack_agents``; returns a dict with whichever roles are present."""
    grouped: dict[str, dict[str, Tensor]] = {}
    for key, value in tensors.items():
        if key == FREEZE_HASH_KEY:
            continue
        role, _, name = key.partition(".")
        grouped.setdefault(role, {})[name] = Tensor(np.array(value), requires_grad=role != "lm", name=name)
    out = {}
    for role in ("sender", "receiver"):
        if role in grouped:
            out[role] = Seq2SeqParams(grouped[role])
    if "lm" in grouped:
        freeze_hash = None
        if FREEZE_HASH_KEY in tensors:
            freeze_hash = bytes(np.asarray(tensors[FREEZE_HASH_KEY]).astype(np.uint8)).hex()
        lm = LMParams(grouped["lm"], freeze_hash=freeze_hash)
        if freeze_hash is not None:
            lm.check_frozen()
        out["lm"] = lm
    return out
