"""One-way chains of trigger inputs derived from a secret seed.

The chain is built backwards from the seed: ``B_L = F(seed)`` and
``B_{i-1} = F(B_i)``.  Disclosing ``B_1..B_n`` therefore reveals nothing
about ``B_{n+1}..B_L`` without the seed.  ``F`` stretches a hash to the size
of one model input by hashing ``input || LE32(counter)`` for successive
counters and concatenating the digests.
"""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, InvalidParameter

MAX_SEED_LEN = 1024
CHAIN_MAGIC = b"CMK1"


class HashAlg(IntEnum):
    """Hash algorithms; the integer value is the id stored in chain files."""

    SHA256 = 0
    SHA1 = 1
    MD5 = 2

    @property
    def hashlib_name(self) -> str:
        return self.name.lower()

    @property
    def digest_size(self) -> int:
        return hashlib.new(self.hashlib_name).digest_size

    @classmethod
    def parse(cls, value) -> "HashAlg":
        if isinstance(value, HashAlg):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper().replace("-", "")]
            except KeyError:
                pass
        raise InvalidParameter(f"unsupported hash algorithm: {value!r}")


# kept for comparison runs only
DEPRECATED_ALGS = frozenset({HashAlg.SHA1, HashAlg.MD5})


@dataclass(frozen=True)
class InputShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise InvalidParameter(f"shape dims must be positive, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @property
    def byte_len(self) -> int:
        return math.prod(self.dims)

    @classmethod
    def parse(cls, text: str) -> "InputShape":
        """Parse ``"3x32x32"`` style strings."""
        try:
            return cls(tuple(int(p) for p in text.lower().split("x")))
        except ValueError:
            raise InvalidParameter(f"bad shape string: {text!r}") from None

    def __str__(self):
        return "x".join(str(d) for d in self.dims)


@dataclass(frozen=True)
class TriggerBlock:
    raw: bytes
    index: int


@dataclass(frozen=True)
class TriggerChain:
    shape: InputShape
    hash_alg: HashAlg
    blocks: tuple[TriggerBlock, ...]

    @property
    def length(self) -> int:
        return len(self.blocks)

    def features(self) -> np.ndarray:
        """All blocks as a ``(L, byte_len)`` float array in ``[0, 1]``."""
        return blocks_to_features(self.blocks)


def _check_seed(seed: bytes) -> bytes:
    seed = bytes(seed)
    if not 1 <= len(seed) <= MAX_SEED_LEN:
        raise InvalidParameter(
            f"seed must be 1..{MAX_SEED_LEN} bytes, got {len(seed)}"
        )
    return seed


def expand(data: bytes, shape: InputShape | int, hash_alg=HashAlg.SHA256) -> bytes:
    """Stretch ``data`` to ``byte_len`` bytes with a counter-mode hash."""
    if not data:
        raise InvalidParameter("expand input must be non-empty")
    byte_len = shape if isinstance(shape, int) else shape.byte_len
    alg = HashAlg.parse(hash_alg)
    prefix = hashlib.new(alg.hashlib_name, data)
    n_digests = -(-byte_len // alg.digest_size)
    out = bytearray()
    for j in range(n_digests):
        h = prefix.copy()
        h.update(struct.pack("<I", j))
        out += h.digest()
    return bytes(out[:byte_len])


def generate_chain(
    seed: bytes, shape: InputShape, length: int, hash_alg=HashAlg.SHA256
) -> TriggerChain:
    seed = _check_seed(seed)
    alg = HashAlg.parse(hash_alg)
    if length < 1:
        raise InvalidParameter(f"chain length must be >= 1, got {length}")
    if alg in DEPRECATED_ALGS:
        warnings.warn(
            f"{alg.name} is deprecated for trigger chains; prefer SHA256",
            DeprecationWarning,
            stacklevel=2,
        )
    raws = [expand(seed, shape, alg)]
    for _ in range(length - 1):
        raws.append(expand(raws[-1], shape, alg))
    # raws[0] is B_L; flip into index order B_1..B_L
    raws.reverse()
    blocks = tuple(TriggerBlock(raw, i + 1) for i, raw in enumerate(raws))
    return TriggerChain(shape, alg, blocks)


def verify_chain(blocks: Sequence[TriggerBlock], hash_alg=HashAlg.SHA256) -> bool:
    """True iff every consecutive pair satisfies ``B_{i-1} == F(B_i)``."""
    if len(blocks) < 2:
        raise InvalidParameter("verify_chain needs at least 2 blocks")
    byte_len = len(blocks[0].raw)
    if any(len(b.raw) != byte_len for b in blocks):
        raise InvalidParameter("trigger blocks have mismatched lengths")
    alg = HashAlg.parse(hash_alg)
    return all(
        expand(later.raw, byte_len, alg) == earlier.raw
        for earlier, later in zip(blocks, blocks[1:])
    )


def disclose_prefix(chain: TriggerChain, n: int) -> list[TriggerBlock]:
    if not 1 <= n <= chain.length:
        raise InvalidParameter(f"prefix length must be in 1..{chain.length}, got {n}")
    return list(chain.blocks[:n])


def block_to_features(block: TriggerBlock | bytes) -> np.ndarray:
    raw = block.raw if isinstance(block, TriggerBlock) else block
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0


def blocks_to_features(blocks: Iterable[TriggerBlock]) -> np.ndarray:
    raws = [b.raw for b in blocks]
    arr = np.frombuffer(b"".join(raws), dtype=np.uint8).reshape(len(raws), -1)
    return arr.astype(np.float64) / 255.0


def features_to_block(features: np.ndarray, index: int) -> TriggerBlock:
    """Quantize ``[0, 1]`` features back to bytes (used for forged inputs)."""
    values = np.clip(np.rint(np.asarray(features) * 255.0), 0, 255).astype(np.uint8)
    return TriggerBlock(values.tobytes(), index)


# -- container file -------------------------------------------------------


def dump_chain(chain: TriggerChain | Sequence[TriggerBlock], shape=None, hash_alg=None) -> bytes:
    if isinstance(chain, TriggerChain):
        shape, hash_alg, blocks = chain.shape, chain.hash_alg, chain.blocks
    else:
        blocks = chain
    if shape is None or hash_alg is None:
        raise InvalidParameter("shape and hash_alg required when dumping raw blocks")
    alg = HashAlg.parse(hash_alg)
    if len(shape.dims) > 255:
        raise InvalidParameter("too many dims for chain file")
    out = bytearray(CHAIN_MAGIC)
    out += struct.pack("<BB", int(alg), len(shape.dims))
    out += struct.pack(f"<{len(shape.dims)}I", *shape.dims)
    out += struct.pack("<I", len(blocks))
    for b in blocks:
        if len(b.raw) != shape.byte_len:
            raise InvalidParameter("block length does not match shape")
        out += b.raw
    return bytes(out)


def load_chain(data: bytes) -> TriggerChain:
    """Parse a chain container; blocks are assigned indices 1..L."""
    if len(data) < 6:
        raise FormatError("truncated chain header", offset=len(data))
    if data[:4] != CHAIN_MAGIC:
        raise FormatError(f"bad chain magic {data[:4]!r}", offset=0)
    alg_id, ndims = data[4], data[5]
    try:
        alg = HashAlg(alg_id)
    except ValueError:
        raise FormatError(f"unknown hash id {alg_id}", offset=4) from None
    pos = 6
    need = pos + 4 * ndims + 4
    if len(data) < need:
        raise FormatError("truncated chain header", offset=len(data))
    dims = struct.unpack_from(f"<{ndims}I", data, pos)
    pos += 4 * ndims
    try:
        shape = InputShape(dims)
    except InvalidParameter as exc:
        raise FormatError(str(exc), offset=6) from None
    (length,) = struct.unpack_from("<I", data, pos)
    pos += 4
    expected = pos + length * shape.byte_len
    if len(data) != expected:
        raise FormatError(
            f"chain body has {len(data) - pos} bytes, expected "
            f"{length * shape.byte_len}",
            offset=min(len(data), expected),
        )
    bl = shape.byte_len
    blocks = tuple(
        TriggerBlock(bytes(data[pos + i * bl : pos + (i + 1) * bl]), i + 1)
        for i in range(length)
    )
    return TriggerChain(shape, alg, blocks)


def save_chain(chain, path) -> None:
    Path(path).write_bytes(dump_chain(chain))


def read_chain(path) -> TriggerChain:
    return load_chain(Path(path).read_bytes())
