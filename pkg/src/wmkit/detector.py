"""Model-agnostic watermark detection.

The beta detector needs only the token sequence and the secret key.  Every
position from the second token on is scored: the n-gram context key of the
position seeds a token permutation, and the observed token's 1-based rank
``r`` in it scores ``sigmoid(C * (r/N - 0.5))``.  Scores lie in (0, 1), so
Hoeffding's inequality bounds the null tail of the centered sum:
``Pr(S - m*m0 > t*sqrt(m)) <= exp(-2 t^2)`` with ``m`` the scored-position
count and ``m0`` the exact per-token null mean (the rank of a key-independent
token is uniform on 1..N).

The centered statistic is used rather than the raw sum because only it
carries the Hoeffding guarantee; the raw sum is still reported.  The green
count test for the soft baseline and the max-statistic multi-key variant live
here too.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import TokenSequence
from .errors import InvalidArgument, TooShort
from .keying import (
    DEFAULT_NGRAM,
    Digest,
    SecretKey,
    TAG_NGRAM,
    shuffled_identity,
)

DEFAULT_SCORE_SCALE = 10.0
DEFAULT_FPR = 0.01


@dataclass(frozen=True)
class ScoreFunction:
    """Sigmoid rank score with scaling parameter ``C > 0``."""

    C: float = DEFAULT_SCORE_SCALE

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise InvalidArgument(f"C must be > 0, got {self.C}")


@dataclass(frozen=True)
class DetectionResult:
    raw_sum: float
    centered: float
    z: float
    p_bound: float
    scored_count: int
    decision: bool
    threshold: float

    def to_dict(self) -> dict:
        return {
            "raw_sum": self.raw_sum,
            "centered": self.centered,
            "z": self.z,
            "p_bound": self.p_bound,
            "scored_count": self.scored_count,
            "decision": self.decision,
            "threshold": self.threshold,
        }


def beta_score(rank: int, n: int, C: float = DEFAULT_SCORE_SCALE) -> float:
    """``sigmoid(C * (rank/n - 0.5))`` for a 1-based rank; strictly increasing."""
    if not 1 <= rank <= n:
        raise InvalidArgument(f"rank must be in [1, {n}], got {rank}")
    if not C > 0:
        raise InvalidArgument(f"C must be > 0, got {C}")
    return float(expit(C * (rank / n - 0.5)))


def null_mean(n: int, C: float = DEFAULT_SCORE_SCALE) -> float:
    """Exact per-token score mean under a uniform rank on 1..n."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return float(expit(C * (ranks / n - 0.5)).mean())


def z_for_fpr(alpha: float) -> float:
    """Threshold with Hoeffding false-positive bound ``alpha``:
    ``sqrt(ln(1/alpha) / 2)``."""
    if not 0.0 < alpha <= 1.0:
        raise InvalidArgument(f"alpha must be in (0, 1], got {alpha}")
    return math.sqrt(math.log(1.0 / alpha) / 2.0)


def p_value_bound(z: float) -> float:
    """Hoeffding tail bound ``min(1, exp(-2 z^2))`` for ``z >= 0``, else 1."""
    if z < 0:
        return 1.0
    return min(1.0, math.exp(-2.0 * z * z))


def scored_ranks(
    text: TokenSequence,
    sk: SecretKey,
    a: int = DEFAULT_NGRAM,
    *,
    dedup: bool = False,
) -> np.ndarray:
    """1-based permutation ranks of tokens 2..n under their n-gram keys.

    Position ``i`` is keyed by the previous ``min(a, i-1)`` tokens; the first
    token has no context key and is never scored.  With ``dedup`` enabled,
    positions whose context key already appeared are skipped, mirroring the
    generator's collision behavior (off by default: the detection loop itself
    keeps no history and scores every position).
    """
    if a < 1:
        raise InvalidArgument("n-gram parameter a must be >= 1")
    tokens = text.tokens
    if len(tokens) < 2:
        raise TooShort(f"need at least 2 tokens, got {len(tokens)}")
    n_vocab = text.vocab_size
    prefix = bytes([TAG_NGRAM]) + sk.data
    seen: set[bytes] | None = set() if dedup else None
    ranks: list[int] = []
    for i in range(1, len(tokens)):
        ctx = tokens[max(0, i - a) : i]
        payload = len(ctx).to_bytes(4, "big") + b"".join(
            t.to_bytes(4, "big") for t in ctx
        )
        if seen is not None:
            if payload in seen:
                continue
            seen.add(payload)
        digest = Digest(hashlib.sha256(prefix + payload).digest())
        order = shuffled_identity(digest, n_vocab)
        ranks.append(order.index(tokens[i]) + 1)
    return np.asarray(ranks, dtype=np.int64)


def beta_z(
    text: TokenSequence,
    sk: SecretKey,
    a: int = DEFAULT_NGRAM,
    C: float = DEFAULT_SCORE_SCALE,
    *,
    dedup: bool = False,
) -> float:
    """Centered beta statistic ``(S - m*m0) / sqrt(m)`` without the report."""
    ranks = scored_ranks(text, sk, a, dedup=dedup)
    scores = expit(C * (ranks / text.vocab_size - 0.5))
    m = ranks.size
    return float((scores.sum() - m * null_mean(text.vocab_size, C)) / math.sqrt(m))


def detect_beta(
    text: TokenSequence,
    sk: SecretKey,
    a: int = DEFAULT_NGRAM,
    C: float = DEFAULT_SCORE_SCALE,
    z: float | None = None,
    *,
    dedup: bool = False,
) -> DetectionResult:
    """Score ``text`` against ``sk`` and test the centered sum at threshold ``z``.

    ``z`` defaults to the 1% Hoeffding threshold.  The decision is
    ``centered > z * sqrt(m)``, i.e. statistic ``> z``.
    """
    threshold = z_for_fpr(DEFAULT_FPR) if z is None else z
    ranks = scored_ranks(text, sk, a, dedup=dedup)
    scores = expit(C * (ranks / text.vocab_size - 0.5))
    m = int(ranks.size)
    raw = float(scores.sum())
    centered = raw - m * null_mean(text.vocab_size, C)
    stat = centered / math.sqrt(m)
    return DetectionResult(
        raw_sum=raw,
        centered=centered,
        z=stat,
        p_bound=p_value_bound(stat),
        scored_count=m,
        decision=stat > threshold,
        threshold=threshold,
    )


def detect_soft(
    text: TokenSequence,
    sk: SecretKey,
    a: int = DEFAULT_NGRAM,
    gamma: float = 0.5,
    z: float | None = None,
    *,
    dedup: bool = False,
) -> DetectionResult:
    """Green-count test for the soft baseline.

    A scored token is green when its rank is within the first
    ``floor(gamma * N)`` slots of its key's permutation.  The statistic is the
    binomial z-score ``(g - gamma*m) / sqrt(m*gamma*(1-gamma))``; ``p_bound``
    reports the Hoeffding bound of the same centered count for comparability
    with the beta detector.
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidArgument(f"gamma must be in (0, 1), got {gamma}")
    threshold = 1.645 if z is None else z
    ranks = scored_ranks(text, sk, a, dedup=dedup)
    green_cut = int(np.floor(gamma * text.vocab_size))
    g = float(np.count_nonzero(ranks <= green_cut))
    m = int(ranks.size)
    centered = g - gamma * m
    stat = centered / math.sqrt(m * gamma * (1.0 - gamma))
    return DetectionResult(
        raw_sum=g,
        centered=centered,
        z=stat,
        p_bound=p_value_bound(centered / math.sqrt(m)),
        scored_count=m,
        decision=stat > threshold,
        threshold=threshold,
    )


def multikey_fpr(p0: float, m_keys: int) -> float:
    """False-positive rate of the max statistic over ``m_keys`` independent
    keys: ``1 - (1 - p0)**m_keys``."""
    if not 0.0 <= p0 <= 1.0:
        raise InvalidArgument(f"p0 must be in [0, 1], got {p0}")
    if m_keys < 1:
        raise InvalidArgument(f"need at least one key, got {m_keys}")
    return float(1.0 - (1.0 - p0) ** m_keys)


def detect_multikey(
    text: TokenSequence,
    sks: list[SecretKey],
    a: int = DEFAULT_NGRAM,
    C: float = DEFAULT_SCORE_SCALE,
) -> tuple[float, int]:
    """Maximum centered beta statistic over several secret keys.

    Returns ``(max z, index of the key achieving it)``.  With a single key
    this equals :func:`detect_beta`'s statistic.
    """
    if not sks:
        raise InvalidArgument("need at least one secret key")
    zs = [beta_z(text, sk, a, C) for sk in sks]
    best = int(np.argmax(zs))
    return zs[best], best
