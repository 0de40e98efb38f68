"""Vocabularies, token distributions, token sequences, and permutations.

Token ids are 0-based integers ``0 .. N-1``; an abstract token set maps to
ids by position.  All values here are immutable after construction and every
operation is a pure function, so they are safe to share across threads.

Tolerances: externally supplied probability vectors must sum to 1 within
``SUM_TOL_INPUT`` (accepts JSON round-off); vectors produced by this toolkit
hold the tighter ``SUM_TOL_OUTPUT``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyVocabulary, InvalidDistribution

SUM_TOL_INPUT = 1e-9
SUM_TOL_OUTPUT = 1e-12


@dataclass(frozen=True)
class Vocabulary:
    """A token set of ``size`` ids, 0 .. size-1."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 1:
            raise EmptyVocabulary(f"vocabulary size must be >= 1, got {self.size}")


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TokenDistribution:
    """Probability mass per token id.

    Raises :class:`InvalidDistribution` unless every entry is >= 0 and the
    entries sum to 1 within ``SUM_TOL_INPUT``.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidDistribution("probs must be a nonempty 1-d vector")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InvalidDistribution("probs must be finite and nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > SUM_TOL_INPUT:
            raise InvalidDistribution(f"probs sum to {total!r}, expected 1")
        object.__setattr__(self, "probs", _as_readonly(probs))

    @classmethod
    def _unchecked(cls, probs: np.ndarray) -> "TokenDistribution":
        """Wrap a vector whose validity is guaranteed by construction.

        Internal fast path for mass-preserving transforms; external input
        must go through the validating constructor.
        """
        self = object.__new__(cls)
        object.__setattr__(self, "probs", _as_readonly(probs))
        return self

    @property
    def vocab_size(self) -> int:
        return int(self.probs.size)

    def to_json(self) -> str:
        return json.dumps({"probs": self.probs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "TokenDistribution":
        return cls(np.asarray(json.loads(text)["probs"], dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)


@dataclass(frozen=True)
class TokenSequence:
    """An ordered list of token ids drawn from a vocabulary of ``vocab_size``."""

    tokens: tuple[int, ...]
    vocab_size: int

    def __post_init__(self) -> None:
        tokens = tuple(int(t) for t in self.tokens)
        if self.vocab_size < 1:
            raise EmptyVocabulary(f"vocab_size must be >= 1, got {self.vocab_size}")
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise DimensionMismatch(
                    f"token id {t} out of range for vocab_size {self.vocab_size}"
                )
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens), "vocab_size": self.vocab_size})

    @classmethod
    def from_json(cls, text: str) -> "TokenSequence":
        obj = json.loads(text)
        return cls(tuple(obj["tokens"]), int(obj["vocab_size"]))


@dataclass(frozen=True)
class Permutation:
    """A bijection from token ids onto ranks ``1 .. N``.

    ``rank[t]`` is the 1-based rank of token ``t``; ranks are 1-based so that
    ``rank/N`` attains 1 at the top of the permutation.  ``inverse[r-1]`` is
    the token holding rank ``r``.
    """

    rank: np.ndarray
    inverse: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        rank = np.asarray(self.rank, dtype=np.int64)
        inverse = np.asarray(self.inverse, dtype=np.int64)
        n = rank.size
        if n == 0:
            raise EmptyVocabulary("permutation over empty vocabulary")
        if not np.array_equal(np.sort(rank), np.arange(1, n + 1)):
            raise DimensionMismatch("rank is not a bijection onto 1..N")
        if not np.array_equal(rank[inverse], np.arange(1, n + 1)):
            raise DimensionMismatch("inverse does not invert rank")
        object.__setattr__(self, "rank", _as_readonly(rank))
        object.__setattr__(self, "inverse", _as_readonly(inverse))

    @property
    def size(self) -> int:
        return int(self.rank.size)

    @classmethod
    def from_order(cls, order: Sequence[int]) -> "Permutation":
        """Build from ``order`` where ``order[j]`` is the token at rank ``j+1``.

        The rank array is derived from ``order`` itself, so the pair is
        consistent by construction; a non-bijective ``order`` fails the
        scatter shape check.
        """
        inverse = np.asarray(order, dtype=np.int64)
        if inverse.size == 0:
            raise EmptyVocabulary("permutation over empty vocabulary")
        if inverse.min() < 0 or not np.array_equal(
            np.bincount(inverse, minlength=inverse.size), np.ones(inverse.size)
        ):
            raise DimensionMismatch("order is not a bijection on 0..N-1")
        rank = np.empty_like(inverse)
        rank[inverse] = np.arange(1, inverse.size + 1)
        self = object.__new__(cls)
        object.__setattr__(self, "rank", _as_readonly(rank))
        object.__setattr__(self, "inverse", _as_readonly(inverse))
        return self

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls.from_order(np.arange(n))


def normalize(raw: Sequence[float] | np.ndarray) -> TokenDistribution:
    """Scale a nonnegative vector to a probability vector.

    Raises :class:`InvalidDistribution` if any entry is negative or all
    entries are zero.  The output sums to 1 within ``SUM_TOL_OUTPUT`` and is
    proportional to the input; normalizing twice is a no-op.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise InvalidDistribution("input must be a nonempty 1-d vector")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise InvalidDistribution("input entries must be finite and nonnegative")
    total = float(raw.sum())
    if total <= 0.0:
        raise InvalidDistribution("input must have at least one positive entry")
    return TokenDistribution._unchecked(raw / total)


def one_hot(n: int, token: int) -> TokenDistribution:
    """Dirac distribution on ``token`` over a size-``n`` vocabulary."""
    probs = np.zeros(n, dtype=np.float64)
    probs[token] = 1.0
    return TokenDistribution(probs)


def total_variation(p: TokenDistribution, q: TokenDistribution) -> float:
    """Total variation distance ``1 - sum_t min(p_t, q_t)``.

    Symmetric, in [0, 1], and 0 iff ``p == q``.  Equals
    ``0.5 * sum_t |p_t - q_t|`` for probability vectors.
    """
    if p.vocab_size != q.vocab_size:
        raise DimensionMismatch(
            f"vocab sizes differ: {p.vocab_size} vs {q.vocab_size}"
        )
    return float(1.0 - np.minimum(p.probs, q.probs).sum())
