"""Watermark keys, their byte-exact serialization, and keyed pseudo-randomness.

All pseudo-randomness in the toolkit flows from SHA-256 in counter mode so
that independent implementations reproduce identical uniforms, Gumbel
variates, and permutations bit for bit.  A faster generator may be layered on
top elsewhere, but the hash-based stream defined here is the conformance
reference: a generator and a detector must derive the same permutation from
the same key, and golden files under ``tests/golden`` pin the construction.

Key encoding (normative layout)
-------------------------------
``encode_key`` emits, in order:

* 1 tag byte: ``0x01`` n-gram context, ``0x02`` position, ``0x03`` fixed index;
* the 128 secret-key bytes;
* for n-gram: a 4-byte big-endian token count, then each token id as 4-byte
  big-endian; for position / fixed index: the index as 8-byte big-endian.

Uniform stream (normative construction)
---------------------------------------
``block_i = SHA-256(digest || i)`` with ``i`` as an 8-byte big-endian counter;
each block is split into four 8-byte big-endian chunks and each chunk maps to
``u = chunk / 2**64`` evaluated in IEEE-754 double precision.  Values that
round up to 1.0 (the top ~2**11 chunk values) are clamped to the largest
double below 1 so every variate lies in [0, 1).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import Permutation, TokenSequence
from .errors import EmptyVocabulary, InvalidArgument

SECRET_KEY_BYTES = 128
DIGEST_BYTES = 32

# Context tag bytes of the normative encoding.
TAG_NGRAM = 0x01
TAG_POSITION = 0x02
TAG_FIXED_INDEX = 0x03

# Defaults used throughout: n-gram width, fixed key-set size, and the cap on
# positions for position hashing (maximum generation length).
DEFAULT_NGRAM = 5
DEFAULT_FIXED_SET_SIZE = 256
DEFAULT_POSITION_CAP = 4096

_TWO64 = float(2**64)
_BELOW_ONE = float(np.nextafter(1.0, 0.0))
# Clamp range applied to uniforms before the double-log Gumbel transform.
_GUMBEL_LO = 2.0**-64
_GUMBEL_HI = 1.0 - 2.0**-16


@dataclass(frozen=True)
class SecretKey:
    """A 1024-bit opaque secret, carried as exactly 128 bytes."""

    data: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.data, bytes) or len(self.data) != SECRET_KEY_BYTES:
            raise InvalidArgument(f"secret key must be {SECRET_KEY_BYTES} bytes")

    @classmethod
    def from_hex(cls, hex_string: str) -> "SecretKey":
        """Parse the 256-hex-char form used in config files."""
        return cls(bytes.fromhex(hex_string.strip()))

    def to_hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_seed(cls, seed: int) -> "SecretKey":
        """Derive a deterministic key from an integer seed (tests, experiments)."""
        out = b"".join(
            hashlib.sha256(b"wmkit.secret" + seed.to_bytes(16, "big", signed=True) + bytes([i]))
            .digest()
            for i in range(SECRET_KEY_BYTES // DIGEST_BYTES)
        )
        return cls(out)


@dataclass(frozen=True)
class NGram:
    """Context key holding the most recent prefix tokens."""

    tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


@dataclass(frozen=True)
class Position:
    """Context key holding a token position."""

    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise InvalidArgument("position index must be >= 0")


@dataclass(frozen=True)
class FixedIndex:
    """Context key addressing one slot of a fixed key set."""

    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise InvalidArgument("fixed key index must be >= 0")


ContextKey = NGram | Position | FixedIndex


@dataclass(frozen=True)
class WatermarkKey:
    """(secret key, context key) pair seeding one sampling step."""

    secret: SecretKey
    context: ContextKey


class KeyHistory:
    """Set of context keys already consumed during one generation.

    Membership is exact on the serialized context bytes; the secret key is
    constant within a generation so only contexts are stored.
    """

    def __init__(self) -> None:
        self._seen: set[bytes] = set()

    def __contains__(self, context: ContextKey) -> bool:
        return encode_context(context) in self._seen

    def add(self, context: ContextKey) -> None:
        self._seen.add(encode_context(context))

    def seen_encoded(self, encoded: bytes) -> bool:
        return encoded in self._seen

    def add_encoded(self, encoded: bytes) -> None:
        self._seen.add(encoded)

    def __len__(self) -> int:
        return len(self._seen)


@dataclass(frozen=True)
class Digest:
    """A 32-byte SHA-256 output used as a pseudo-randomness seed."""

    data: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.data, bytes) or len(self.data) != DIGEST_BYTES:
            raise InvalidArgument(f"digest must be {DIGEST_BYTES} bytes")


def encode_context(context: ContextKey) -> bytes:
    """Tag byte plus the context payload of the normative key layout."""
    if isinstance(context, NGram):
        body = len(context.tokens).to_bytes(4, "big")
        body += b"".join(int(t).to_bytes(4, "big") for t in context.tokens)
        return bytes([TAG_NGRAM]) + body
    if isinstance(context, Position):
        return bytes([TAG_POSITION]) + context.index.to_bytes(8, "big")
    if isinstance(context, FixedIndex):
        return bytes([TAG_FIXED_INDEX]) + context.index.to_bytes(8, "big")
    raise InvalidArgument(f"unknown context key type: {type(context).__name__}")


def encode_key(key: WatermarkKey) -> bytes:
    """Deterministic, injective byte encoding of a watermark key."""
    ctx = encode_context(key.context)
    return ctx[:1] + key.secret.data + ctx[1:]


def key_digest(key: WatermarkKey) -> Digest:
    """SHA-256 of ``encode_key``; bit-exact across platforms."""
    return Digest(hashlib.sha256(encode_key(key)).digest())


# Precomputed 8-byte big-endian counters for the common block range.
_COUNTER_BYTES = tuple(i.to_bytes(8, "big") for i in range(4096))


def _stream_blocks(digest: Digest, nblocks: int, start: int = 0) -> bytes:
    seed = digest.data
    sha256 = hashlib.sha256
    end = start + nblocks
    if end <= len(_COUNTER_BYTES):
        return b"".join(
            [sha256(seed + c).digest() for c in _COUNTER_BYTES[start:end]]
        )
    return b"".join(
        [sha256(seed + i.to_bytes(8, "big")).digest() for i in range(start, end)]
    )


def derive_uniforms(digest: Digest, count: int, offset: int = 0) -> np.ndarray:
    """The stream's uniforms ``offset .. offset+count-1`` as a float64 array."""
    if count < 0 or offset < 0:
        raise InvalidArgument("count and offset must be >= 0")
    if count == 0:
        return np.empty(0, dtype=np.float64)
    first_block, first_idx = divmod(offset, 4)
    nblocks = (first_idx + count + 3) // 4
    raw = _stream_blocks(digest, nblocks, start=first_block)
    chunks = np.frombuffer(raw, dtype=">u8")[first_idx : first_idx + count]
    u = chunks / _TWO64
    return np.minimum(u, _BELOW_ONE)


class UniformStream:
    """Cursor over the uniform stream of one digest.

    Each instance owns an independent position; concurrent use is safe with
    one cursor per consumer.
    """

    def __init__(self, digest: Digest) -> None:
        self._digest = digest
        self._offset = 0

    def take(self, count: int) -> np.ndarray:
        out = derive_uniforms(self._digest, count, self._offset)
        self._offset += count
        return out

    def next(self) -> float:
        return float(self.take(1)[0])


def derive_stream(digest: Digest) -> UniformStream:
    """Fresh cursor at the start of the digest's uniform stream."""
    return UniformStream(digest)


def derive_uniform(digest: Digest) -> float:
    """First variate of the digest's stream, in [0, 1)."""
    return float(derive_uniforms(digest, 1)[0])


def derive_gumbel(digest: Digest, n: int) -> np.ndarray:
    """``n`` standard Gumbel variates from consecutive stream uniforms.

    ``g = -ln(-ln(u))`` with ``u`` clamped to ``[2**-64, 1 - 2**-16]`` before
    the logs so both are finite.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    u = np.clip(derive_uniforms(digest, n), _GUMBEL_LO, _GUMBEL_HI)
    return -np.log(-np.log(u))


def shuffled_identity(digest: Digest, n: int) -> list[int]:
    """Fisher-Yates shuffle of ``[0..n-1]`` driven by the digest's stream.

    Step ``j`` (for j = 1..n-1) swaps slot ``j`` with slot
    ``floor(u_{j-1} * (j+1))``, consuming one stream variate per step; this
    inside-out walk makes every one of the n! orderings equally likely under
    uniform variates.
    """
    if n < 1:
        raise EmptyVocabulary("cannot permute an empty vocabulary")
    arr = list(range(n))
    if n == 1:
        return arr
    us = derive_uniforms(digest, n - 1).tolist()
    for j, u in enumerate(us, 1):
        i = int(u * (j + 1))
        arr[j], arr[i] = arr[i], arr[j]
    return arr


def derive_permutation(digest: Digest, n: int) -> Permutation:
    """Uniformly distributed token permutation seeded by ``digest``."""
    return Permutation.from_order(shuffled_identity(digest, n))


def ngram_key(sk: SecretKey, prefix: TokenSequence, a: int = DEFAULT_NGRAM) -> WatermarkKey:
    """N-gram context key: the last ``min(a, len(prefix))`` prefix tokens.

    When fewer than ``a`` tokens precede the step, all of them are used; an
    empty prefix yields an empty n-gram.
    """
    if a < 1:
        raise InvalidArgument("n-gram parameter a must be >= 1")
    tokens = prefix.tokens[-a:] if len(prefix.tokens) > a else prefix.tokens
    return WatermarkKey(secret=sk, context=NGram(tokens))


def position_key(sk: SecretKey, i: int) -> WatermarkKey:
    """Position-hashing context key for generation step ``i`` (0-based)."""
    return WatermarkKey(secret=sk, context=Position(i))


def fixed_set_key(sk: SecretKey, n0: int, i: int, r: int) -> WatermarkKey | None:
    """Fixed-key-set slot ``(i + r) mod n0`` for step ``i``, or None.

    Returns None once ``i >= n0`` (the key set is exhausted and the caller
    must sample unwatermarked).  ``r`` is the per-generation offset.
    """
    if n0 < 1:
        raise InvalidArgument("fixed key set size n0 must be >= 1")
    if i < 0 or r < 0:
        raise InvalidArgument("step index and offset must be >= 0")
    if i >= n0:
        return None
    return WatermarkKey(secret=sk, context=FixedIndex((i + r) % n0))
