"""Pseudo-random distribution adjustment rules.

Four distortion-free rules plus the soft green-list baseline, all as pure
transforms of a probability vector:

* ``gumbel``   - argmax of log-probabilities plus keyed Gumbel noise; returns
  a token (the adjusted distribution is a Dirac and the step is fully
  deterministic given the key).
* ``inverse``  - the token whose cumulative interval contains a keyed
  uniform; also Dirac / deterministic given the key.
* ``pr``       - permute-reweight: lay the probabilities on [0, 1] in keyed
  permutation order, zero the [0, 1/2] half, double the rest.
* ``beta:b``   - scale the [0, 1/2] half to total mass ``b`` and the upper
  half to ``1 - b``; ``b = 0`` recovers permute-reweight and ``b = 0.5``
  returns the input unchanged.
* ``soft:delta=d,gamma=g`` - boost a keyed green subset by ``d`` in log
  space (not distortion-free; kept as the comparison baseline).

Reweighting rules return a distribution that the caller samples with true
randomness; Dirac rules return the chosen token id directly (use
:func:`wmkit.core.one_hot` where a distribution view is needed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Permutation, TokenDistribution
from .errors import DimensionMismatch, InvalidArgument
from .keying import Digest, WatermarkKey, derive_gumbel, derive_permutation, derive_uniform, key_digest

# Boundary-at-1/2 classification drives correctness of the interval rules;
# plain float64 cumulative sums are exact enough below this size, above it a
# compensated (Kahan) sum keeps the drift under the output tolerance.
_KAHAN_THRESHOLD = 10_000


@dataclass(frozen=True)
class Gumbel:
    """Keyed Gumbel-noise argmax selection."""


@dataclass(frozen=True)
class InverseSampling:
    """Keyed-uniform inverse transform selection."""


@dataclass(frozen=True)
class PermuteReweight:
    """Zero the lower permuted half, double the upper."""


@dataclass(frozen=True)
class Beta:
    """Lower permuted half scaled to ``beta``, upper to ``1 - beta``."""

    beta: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 0.5:
            raise InvalidArgument(f"beta must be in [0, 0.5], got {self.beta}")


@dataclass(frozen=True)
class Soft:
    """Green-list logit boost by ``delta`` over a fraction ``gamma``."""

    delta: float
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise InvalidArgument(f"delta must be >= 0, got {self.delta}")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgument(f"gamma must be in (0, 1), got {self.gamma}")


PdaRule = Gumbel | InverseSampling | PermuteReweight | Beta | Soft


def parse_rule(text: str) -> PdaRule:
    """Parse config strings: ``gumbel``, ``inverse``, ``pr``, ``beta:0.2``,
    ``soft:delta=1.0,gamma=0.5``."""
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "gumbel":
        return Gumbel()
    if name == "inverse":
        return InverseSampling()
    if name == "pr":
        return PermuteReweight()
    if name == "beta":
        if not arg:
            raise InvalidArgument("beta rule needs a value, e.g. beta:0.2")
        return Beta(float(arg))
    if name == "soft":
        params = {}
        for part in filter(None, arg.split(",")):
            k, _, v = part.partition("=")
            params[k.strip()] = float(v)
        unknown = set(params) - {"delta", "gamma"}
        if unknown or "delta" not in params:
            raise InvalidArgument("soft rule syntax: soft:delta=1.0[,gamma=0.5]")
        return Soft(delta=params["delta"], gamma=params.get("gamma", 0.5))
    raise InvalidArgument(f"unknown rule {text!r}")


def rule_label(rule: PdaRule) -> tuple[str, str]:
    """(name, parameter) pair used in CSV output and config echoes."""
    if isinstance(rule, Gumbel):
        return "gumbel", ""
    if isinstance(rule, InverseSampling):
        return "inverse", ""
    if isinstance(rule, PermuteReweight):
        return "pr", ""
    if isinstance(rule, Beta):
        return "beta", format(rule.beta, "g")
    if isinstance(rule, Soft):
        return "soft", f"delta={rule.delta:g},gamma={rule.gamma:g}"
    raise InvalidArgument(f"unknown rule type {type(rule).__name__}")


def is_dirac_rule(rule: PdaRule) -> bool:
    """True for rules whose output is a single deterministic token per key."""
    return isinstance(rule, (Gumbel, InverseSampling))


def _cumsum(x: np.ndarray) -> np.ndarray:
    if x.size <= _KAHAN_THRESHOLD:
        return np.cumsum(x)
    out = np.empty_like(x)
    total = 0.0
    comp = 0.0
    for i, v in enumerate(x.tolist()):
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[i] = total
    return out


def apply_gumbel(p: TokenDistribution, digest: Digest) -> int:
    """Token maximizing ``g_t + ln p_t`` with keyed Gumbel noise ``g``.

    Zero-probability tokens score -inf and are never selected; exact ties
    break toward the lowest token id (a measure-zero event, fixed so the
    outcome is deterministic).
    """
    g = derive_gumbel(digest, p.vocab_size)
    with np.errstate(divide="ignore"):
        scores = g + np.log(p.probs)
    return int(np.argmax(scores))


def inverse_select(p: TokenDistribution, r: float) -> int:
    """Smallest token ``m`` with cumulative mass through ``m`` exceeding ``r``.

    Cumulative intervals are left-closed: a variate landing exactly on a
    boundary selects the interval starting there.
    """
    if not 0.0 <= r < 1.0:
        raise InvalidArgument(f"r must be in [0, 1), got {r}")
    cum = _cumsum(p.probs)
    idx = int(np.searchsorted(cum, r, side="right"))
    if idx >= p.vocab_size:
        idx = p.vocab_size - 1
    while idx > 0 and p.probs[idx] == 0.0:
        idx -= 1
    return idx


def apply_inverse(p: TokenDistribution, digest: Digest) -> int:
    """Inverse-transform selection with the digest's first uniform."""
    return inverse_select(p, derive_uniform(digest))


def _interval_bounds(p: TokenDistribution, perm: Permutation) -> tuple[np.ndarray, np.ndarray]:
    """Each token's [a, b] slice of [0, 1] in permutation-rank order."""
    if perm.size != p.vocab_size:
        raise DimensionMismatch(
            f"permutation size {perm.size} != vocab size {p.vocab_size}"
        )
    p_ord = p.probs[perm.inverse]
    b = _cumsum(p_ord)
    return b - p_ord, b


def apply_permute_reweight(p: TokenDistribution, perm: Permutation) -> TokenDistribution:
    """Map each token's permuted interval to twice its overlap with [1/2, 1]."""
    a, b = _interval_bounds(p, perm)
    mass_ord = 2.0 * (np.maximum(b, 0.5) - np.maximum(a, 0.5))
    out = np.empty_like(mass_ord)
    out[perm.inverse] = mass_ord
    return TokenDistribution._unchecked(out)


def apply_beta(p: TokenDistribution, perm: Permutation, beta: float) -> TokenDistribution:
    """Mixture form of the beta rule.

    ``(1 - beta)`` times the permute-reweight mass plus ``beta`` times the
    reverse-cumulative term ``max(2c - 1, 0) - max(2d - 1, 0)`` where ``c``
    and ``d`` are the tail sums including and excluding the token.  Equals
    :func:`apply_beta_intervals` to within float round-off.
    """
    if not 0.0 <= beta <= 0.5:
        raise InvalidArgument(f"beta must be in [0, 0.5], got {beta}")
    if beta == 0.5:
        # The two halves scale identically: the rule is the identity.
        return p
    a, b = _interval_bounds(p, perm)
    total = b[-1]
    forward = np.maximum(2.0 * b - 1.0, 0.0) - np.maximum(2.0 * a - 1.0, 0.0)
    c = total - a
    d = total - b
    reverse = np.maximum(2.0 * c - 1.0, 0.0) - np.maximum(2.0 * d - 1.0, 0.0)
    mass_ord = (1.0 - beta) * forward + beta * reverse
    out = np.empty_like(mass_ord)
    out[perm.inverse] = mass_ord
    return TokenDistribution._unchecked(out)


def apply_beta_intervals(p: TokenDistribution, perm: Permutation, beta: float) -> TokenDistribution:
    """Interval form of the beta rule.

    Each token's permuted interval contributes ``2*beta`` times its overlap
    with [0, 1/2] plus ``2*(1 - beta)`` times its overlap with [1/2, 1].
    """
    if not 0.0 <= beta <= 0.5:
        raise InvalidArgument(f"beta must be in [0, 0.5], got {beta}")
    if beta == 0.5:
        return p
    a, b = _interval_bounds(p, perm)
    lo = np.minimum(b, 0.5) - np.minimum(a, 0.5)
    hi = np.maximum(b, 0.5) - np.maximum(a, 0.5)
    mass_ord = 2.0 * beta * lo + 2.0 * (1.0 - beta) * hi
    out = np.empty_like(mass_ord)
    out[perm.inverse] = mass_ord
    return TokenDistribution._unchecked(out)


def green_set(digest: Digest, n: int, gamma: float) -> set[int]:
    """The ``floor(gamma * n)`` tokens with the lowest keyed-permutation ranks."""
    if not 0.0 < gamma < 1.0:
        raise InvalidArgument(f"gamma must be in (0, 1), got {gamma}")
    perm = derive_permutation(digest, n)
    count = int(np.floor(gamma * n))
    return set(int(t) for t in perm.inverse[:count])


def apply_soft(p: TokenDistribution, green: set[int], delta: float) -> TokenDistribution:
    """Scale green-token mass by ``exp(delta)`` and renormalize."""
    if delta < 0:
        raise InvalidArgument(f"delta must be >= 0, got {delta}")
    weights = p.probs.copy()
    if green:
        idx = np.fromiter(green, dtype=np.int64)
        weights[idx] *= np.exp(delta)
    return TokenDistribution._unchecked(weights / weights.sum())


def apply_rule(
    rule: PdaRule, p: TokenDistribution, key: WatermarkKey
) -> int | TokenDistribution:
    """Apply ``rule`` to ``p`` seeded by ``key``.

    Dirac rules (gumbel, inverse) return the selected token id; reweighting
    rules return the adjusted distribution for the caller to sample with true
    randomness.
    """
    return apply_rule_digest(rule, p, key_digest(key))


def apply_rule_digest(
    rule: PdaRule, p: TokenDistribution, digest: Digest
) -> int | TokenDistribution:
    """:func:`apply_rule` for callers that already hold the key digest."""
    if isinstance(rule, Gumbel):
        return apply_gumbel(p, digest)
    if isinstance(rule, InverseSampling):
        return apply_inverse(p, digest)
    if isinstance(rule, PermuteReweight):
        return apply_permute_reweight(p, derive_permutation(digest, p.vocab_size))
    if isinstance(rule, Beta):
        return apply_beta(p, derive_permutation(digest, p.vocab_size), rule.beta)
    if isinstance(rule, Soft):
        return apply_soft(p, green_set(digest, p.vocab_size, rule.gamma), rule.delta)
    raise InvalidArgument(f"unknown rule type {type(rule).__name__}")
