"""Watermarked autoregressive generation.

The loop: at every step, build a watermark key from the configured sampler;
if that key's context was already consumed in this generation (or the sampler
has run out of keys), sample the raw model distribution with true randomness
and mark the step unwatermarked; otherwise record the context, adjust the
distribution with the PDA rule, and emit a token.

Two randomness sources are deliberately kept apart: key-derived
pseudo-randomness (hash stream) decides the adjustment, while a seeded
generator-owned stream supplies the true randomness used to sample
reweighted or unwatermarked distributions.  Prompt tokens feed n-gram
contexts but are never watermarked or scored themselves.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import TokenDistribution, TokenSequence, one_hot
from .errors import DimensionMismatch, InvalidArgument, InvalidDistribution
from .keying import (
    DEFAULT_FIXED_SET_SIZE,
    DEFAULT_NGRAM,
    DEFAULT_POSITION_CAP,
    ContextKey,
    Digest,
    FixedIndex,
    KeyHistory,
    NGram,
    Position,
    SecretKey,
    encode_context,
)
from .pda import PdaRule, apply_rule_digest


class NextTokenModel(Protocol):
    """Anything that maps a context token list to a next-token distribution.

    Must be deterministic: the same context always yields the same
    distribution.
    """

    def __call__(self, context: Sequence[int]) -> TokenDistribution: ...


@dataclass(frozen=True)
class NGramSampler:
    """Keys from the most recent ``a`` tokens of the context."""

    a: int = DEFAULT_NGRAM

    def __post_init__(self) -> None:
        if self.a < 1:
            raise InvalidArgument("n-gram parameter a must be >= 1")


@dataclass(frozen=True)
class PositionSampler:
    """Keys from the 0-based generation step, capped at ``l0`` positions."""

    l0: int = DEFAULT_POSITION_CAP

    def __post_init__(self) -> None:
        if self.l0 < 1:
            raise InvalidArgument("position cap l0 must be >= 1")


@dataclass(frozen=True)
class FixedSetSampler:
    """Keys from a size-``n0`` fixed set, rotated by a per-generation offset."""

    n0: int = DEFAULT_FIXED_SET_SIZE

    def __post_init__(self) -> None:
        if self.n0 < 1:
            raise InvalidArgument("fixed key set size n0 must be >= 1")


KeySampler = NGramSampler | PositionSampler | FixedSetSampler


def parse_sampler(text: str) -> KeySampler:
    """Parse config strings ``ngram:5``, ``position``, ``fixed:256``."""
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "ngram":
        return NGramSampler(int(arg)) if arg else NGramSampler()
    if name == "position":
        return PositionSampler(int(arg)) if arg else PositionSampler()
    if name == "fixed":
        return FixedSetSampler(int(arg)) if arg else FixedSetSampler()
    raise InvalidArgument(f"unknown sampler {text!r}")


def sampler_label(sampler: KeySampler) -> str:
    if isinstance(sampler, NGramSampler):
        return f"ngram:{sampler.a}"
    if isinstance(sampler, PositionSampler):
        return "position"
    if isinstance(sampler, FixedSetSampler):
        return f"fixed:{sampler.n0}"
    raise InvalidArgument(f"unknown sampler type {type(sampler).__name__}")


@dataclass(frozen=True)
class GeneratorConfig:
    rule: PdaRule
    sampler: KeySampler
    secret: SecretKey
    max_len: int = DEFAULT_POSITION_CAP
    sampling_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_len < 1:
            raise InvalidArgument("max_len must be >= 1")


@dataclass(frozen=True)
class StepRecord:
    """One generation step: the context key used (None when the sampler had
    none), whether the step was watermarked, and optionally the raw / adjusted
    distributions."""

    context: ContextKey | None
    watermarked: bool
    pre: TokenDistribution | None = None
    post: TokenDistribution | None = None


@dataclass(frozen=True)
class GenerationTrace:
    steps: tuple[StepRecord, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def watermarked_flags(self) -> list[bool]:
        return [s.watermarked for s in self.steps]


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """One true-random draw from a probability vector via its cumsum."""
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    if idx >= probs.size:
        idx = probs.size - 1
    while idx > 0 and probs[idx] == 0.0:
        idx -= 1
    return idx


def _context_key_for_step(
    sampler: KeySampler, full_context: list[int], step: int, fixed_offset: int
) -> ContextKey | None:
    if isinstance(sampler, NGramSampler):
        return NGram(tuple(full_context[-sampler.a :]))
    if isinstance(sampler, PositionSampler):
        return Position(step) if step < sampler.l0 else None
    if isinstance(sampler, FixedSetSampler):
        if step >= sampler.n0:
            return None
        return FixedIndex((step + fixed_offset) % sampler.n0)
    raise InvalidArgument(f"unknown sampler type {type(sampler).__name__}")


def generate(
    model: NextTokenModel,
    prompt: TokenSequence,
    n: int,
    cfg: GeneratorConfig,
    *,
    record_distributions: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[TokenSequence, GenerationTrace]:
    """Generate exactly ``n`` watermarked tokens after ``prompt``.

    Steps whose context key collides with this generation's history (or whose
    sampler is exhausted) fall back to the raw model distribution with true
    randomness and are flagged unwatermarked in the trace.  Identical
    (model, prompt, cfg) with the same ``sampling_seed`` reproduce identical
    output.  ``rng`` overrides the seeded stream (used by :func:`regenerate`
    to give each run its own substream).
    """
    if n < 1:
        raise InvalidArgument("generation length n must be >= 1")
    if n > cfg.max_len:
        raise InvalidArgument(f"n={n} exceeds max_len={cfg.max_len}")
    if rng is None:
        rng = np.random.default_rng(cfg.sampling_seed)

    history = KeyHistory()
    fixed_offset = 0
    if isinstance(cfg.sampler, FixedSetSampler):
        # One offset per generation; a per-token offset would decorrelate the
        # key window and destroy detectability.
        fixed_offset = int(rng.integers(cfg.sampler.n0))

    context: list[int] = list(prompt.tokens)
    tokens: list[int] = []
    steps: list[StepRecord] = []
    vocab_size: int | None = None

    for step in range(n):
        try:
            p = model(context)
        except InvalidDistribution as exc:
            raise InvalidDistribution(f"model failed at step {step}: {exc}") from exc
        if not isinstance(p, TokenDistribution):
            raise InvalidDistribution(
                f"model returned {type(p).__name__} at step {step}"
            )
        if vocab_size is None:
            vocab_size = p.vocab_size
            if prompt.vocab_size != vocab_size:
                raise DimensionMismatch(
                    f"prompt vocab {prompt.vocab_size} != model vocab {vocab_size}"
                )
        elif p.vocab_size != vocab_size:
            raise InvalidDistribution(
                f"model changed vocab size at step {step}: "
                f"{p.vocab_size} != {vocab_size}"
            )

        ctx_key = _context_key_for_step(cfg.sampler, context, step, fixed_offset)
        watermarked = False
        if ctx_key is not None:
            encoded = encode_context(ctx_key)
            watermarked = not history.seen_encoded(encoded)

        post: TokenDistribution | None = None
        if watermarked:
            history.add_encoded(encoded)
            digest = Digest(
                hashlib.sha256(encoded[:1] + cfg.secret.data + encoded[1:]).digest()
            )
            outcome = apply_rule_digest(cfg.rule, p, digest)
            if isinstance(outcome, TokenDistribution):
                token = _sample_index(outcome.probs, rng)
                post = outcome
            else:
                token = outcome
                if record_distributions:
                    post = one_hot(vocab_size, token)
        else:
            token = _sample_index(p.probs, rng)
            if record_distributions:
                post = p

        steps.append(
            StepRecord(
                context=ctx_key,
                watermarked=watermarked,
                pre=p if record_distributions else None,
                post=post if record_distributions else None,
            )
        )
        tokens.append(token)
        context.append(token)

    return TokenSequence(tuple(tokens), vocab_size), GenerationTrace(tuple(steps))


def regenerate(
    model: NextTokenModel,
    prompt: TokenSequence,
    n: int,
    cfg: GeneratorConfig,
    times: int,
    *,
    record_distributions: bool = False,
) -> list[TokenSequence]:
    """Run :func:`generate` ``times`` times with the same secret key.

    The context-key history resets for every run and each run draws from its
    own true-randomness substream, so runs are independent except through the
    shared watermark keys.
    """
    if times < 1:
        raise InvalidArgument("times must be >= 1")
    out: list[TokenSequence] = []
    for run in range(times):
        rng = np.random.default_rng([cfg.sampling_seed, run])
        seq, _ = generate(
            model, prompt, n, cfg, record_distributions=record_distributions, rng=rng
        )
        out.append(seq)
    return out
