"""Owner signature <-> base-C target label sequence."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import InvalidParameter

MAX_SIGNATURE_LEN = 512


@dataclass(frozen=True)
class LabelSequence:
    """Target labels, most significant digit first (``c_1`` pairs with ``B_1``).

    ``adjustment`` records how :func:`pad_or_truncate` changed the natural
    digit string: ``{"padded": k}`` or ``{"truncated": k}``.
    """

    C: int
    digits: tuple[int, ...]
    adjustment: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.C < 2:
            raise InvalidParameter(f"class count must be >= 2, got {self.C}")
        digits = tuple(int(d) for d in self.digits)
        if not digits:
            raise InvalidParameter("label sequence must be non-empty")
        bad = [d for d in digits if not 0 <= d < self.C]
        if bad:
            raise InvalidParameter(f"digit {bad[0]} out of range for base {self.C}")
        object.__setattr__(self, "digits", digits)

    def __len__(self):
        return len(self.digits)

    def to_json(self) -> dict:
        return {"C": self.C, "labels": list(self.digits)}


def signature_from_owner(name: str) -> bytes:
    """Convenience signature: SHA-256 of the UTF-8 owner name."""
    return hashlib.sha256(name.encode("utf-8")).digest()


def _check_signature(sig: bytes) -> bytes:
    sig = bytes(sig)
    if not 1 <= len(sig) <= MAX_SIGNATURE_LEN:
        raise InvalidParameter(
            f"signature must be 1..{MAX_SIGNATURE_LEN} bytes, got {len(sig)}"
        )
    return sig


def encode_signature(sig: bytes, C: int) -> LabelSequence:
    if C < 2:
        raise InvalidParameter(f"class count must be >= 2, got {C}")
    value = int.from_bytes(_check_signature(sig), "big")
    if value == 0:
        return LabelSequence(C, (0,))
    digits = []
    while value:
        value, r = divmod(value, C)
        digits.append(r)
    digits.reverse()
    return LabelSequence(C, tuple(digits))


def decode_labels(labels: LabelSequence) -> bytes:
    """Inverse of :func:`encode_signature`, as a minimal big-endian byte string."""
    value = 0
    for d in labels.digits:
        value = value * labels.C + d
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def pad_or_truncate(labels: LabelSequence, target_len: int) -> LabelSequence:
    if target_len < 1:
        raise InvalidParameter(f"target length must be >= 1, got {target_len}")
    n = len(labels)
    if n < target_len:
        digits = (0,) * (target_len - n) + labels.digits
        return LabelSequence(labels.C, digits, {"padded": target_len - n})
    if n > target_len:
        return LabelSequence(labels.C, labels.digits[:target_len], {"truncated": n - target_len})
    return LabelSequence(labels.C, labels.digits)
