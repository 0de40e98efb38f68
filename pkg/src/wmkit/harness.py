"""Toy language model and desk-scale experiment protocols.

Everything here is seeded and bit-reproducible: the toy model realizes a
Dirichlet conditional per context lazily from a hash stream, prompts and
sampling substreams derive from the experiment seed, and attacks share one
seed per text so that increasing the attack strength only extends the set of
replaced positions.

Experiment outputs are plain lists of row dataclasses plus CSV writers with
fixed schemas (long format, plot-ready, no plotting dependency):

* delta table:     rule, param, delta, baseline_delta, stderr
* detection table: rule, param, threshold, tnr, tpr, n_pos, n_neg
* attack sweep:    rule, epsilon, auc
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import TokenDistribution, TokenSequence
from .detector import beta_z, detect_soft, z_for_fpr
from .errors import DimensionMismatch, InvalidArgument
from .generator import GeneratorConfig, NGramSampler, generate
from .keying import Digest, SecretKey, derive_uniforms
from .pda import Beta, PdaRule, PermuteReweight, Soft, rule_label

_GAMMA_PPF_CLIP = (2.0**-64, 1.0 - 2.0**-16)


@dataclass(frozen=True)
class ToyLM:
    """Order-``order`` Markov model with Dirichlet(``concentration``) conditionals.

    The conditional for a context is realized lazily and deterministically:
    the last ``order`` context tokens are hashed together with ``model_seed``
    into a uniform stream, the stream is pushed through the Gamma quantile
    function (for concentration 1 this is just ``-ln u``), and the variates
    are normalized.  Identical fields give identical conditionals, and with
    ``order == 0`` every context shares one distribution.
    """

    vocab_size: int
    order: int
    concentration: float
    model_seed: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, context: Sequence[int]) -> TokenDistribution:
        key = tuple(int(t) for t in context[len(context) - self.order :]) if self.order else ()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        body = self.model_seed.to_bytes(8, "big", signed=True)
        body += len(key).to_bytes(4, "big")
        body += b"".join(t.to_bytes(4, "big") for t in key)
        digest = Digest(hashlib.sha256(b"wmkit.toylm" + body).digest())
        u = np.clip(derive_uniforms(digest, self.vocab_size), *_GAMMA_PPF_CLIP)
        if self.concentration == 1.0:
            w = -np.log(u)
        else:
            from scipy.stats import gamma

            w = gamma.ppf(u, self.concentration)
        # w is finite and nonnegative by the clip, so normalization is direct.
        dist = TokenDistribution._unchecked(w / w.sum())
        self._cache[key] = dist
        return dist


def build_toylm(
    vocab_size: int, order: int, concentration: float, model_seed: int
) -> ToyLM:
    if vocab_size < 2:
        raise InvalidArgument("toy model needs vocab_size >= 2")
    if order < 0:
        raise InvalidArgument("context order must be >= 0")
    if not concentration > 0:
        raise InvalidArgument("concentration must be > 0")
    return ToyLM(vocab_size, order, concentration, model_seed)


@dataclass(frozen=True)
class ExperimentSpec:
    """Design of one experiment: ``prompts`` prompts, ``responses_per_prompt``
    responses each, ``length`` tokens per response."""

    prompts: int
    responses_per_prompt: int
    length: int
    rules: tuple[PdaRule, ...] = ()
    metric: str = "mean_logprob"
    seed: int = 0
    prompt_len: int = 5
    ngram: int = 5

    def __post_init__(self) -> None:
        if min(self.prompts, self.responses_per_prompt, self.length) < 1:
            raise InvalidArgument("prompts, responses_per_prompt, length must be >= 1")
        if self.prompt_len < 1 or self.ngram < 1:
            raise InvalidArgument("prompt_len and ngram must be >= 1")


def default_delta_spec(rules: tuple[PdaRule, ...] = (), seed: int = 0) -> ExperimentSpec:
    """Desk-scale repeated-generation design.

    Many short responses per prompt concentrate the key collisions where they
    are guaranteed (the shared prompt context), which is what separates the
    rules' quality gaps at this scale; pair with a peaked toy model
    (concentration well below 1) so responses keep revisiting shared
    contexts.
    """
    return ExperimentSpec(
        prompts=200, responses_per_prompt=150, length=5, rules=rules, seed=seed
    )


def default_detection_spec(rules: tuple[PdaRule, ...] = (), seed: int = 0) -> ExperimentSpec:
    """Desk-scale detection design.

    Text length is tuned so detection power sits inside (0, 1) across the
    beta grid on the moderate-entropy toy model; longer texts saturate every
    rule to perfect detection and flatten the trends.
    """
    return ExperimentSpec(
        prompts=2000, responses_per_prompt=1, length=22, rules=rules, seed=seed
    )


def default_attack_spec(rules: tuple[PdaRule, ...] = (), seed: int = 0) -> ExperimentSpec:
    """Desk-scale attack-sweep design.

    Long texts keep an attacked watermark detectable: a replacement corrupts
    the n-gram windows around it, so only the roughly ``(1 - eps)^(a+1)``
    clean fraction of positions carries signal and its total grows with
    length.  Pair with a lower-entropy model (concentration around 0.1) so
    the residual signal stays stratified across the beta grid.
    """
    return ExperimentSpec(
        prompts=600, responses_per_prompt=1, length=200, rules=rules, seed=seed
    )


def _spec_prompts(spec: ExperimentSpec, vocab_size: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 1001])
    return rng.integers(0, vocab_size, size=(spec.prompts, spec.prompt_len))


def mean_logprob(lm: ToyLM, prompt: Sequence[int], tokens: Sequence[int]) -> float:
    """Mean per-token log-probability of a response under the toy model."""
    context = list(prompt)
    total = 0.0
    for t in tokens:
        total += math.log(max(float(lm(context).probs[t]), 1e-300))
        context.append(t)
    return total / len(tokens)


def delta_terms(
    no_wm: Sequence[Sequence[float]], wm: Sequence[Sequence[float]]
) -> np.ndarray:
    """Per-prompt ``(1/m) |sum_j Met(no_wm_ij) - sum_j Met(wm_ij)|``."""
    if len(no_wm) != len(wm):
        raise DimensionMismatch(
            f"prompt counts differ: {len(no_wm)} vs {len(wm)}"
        )
    terms = np.empty(len(no_wm))
    for i, (a, b) in enumerate(zip(no_wm, wm)):
        if len(a) != len(b):
            raise DimensionMismatch(
                f"prompt {i}: response counts differ ({len(a)} vs {len(b)})"
            )
        terms[i] = abs(float(np.sum(a)) - float(np.sum(b))) / len(a)
    return terms


def delta_metric(
    no_wm: Sequence[Sequence[float]], wm: Sequence[Sequence[float]]
) -> float:
    """Mean absolute per-prompt gap between averaged response metrics."""
    return float(delta_terms(no_wm, wm).mean())


def collect_metrics(
    lm: ToyLM,
    spec: ExperimentSpec,
    rule: PdaRule | None,
    secret: SecretKey,
    *,
    arm: int,
    fresh_keys: bool = False,
) -> list[list[float]]:
    """Per-prompt, per-response metric values for one experiment arm.

    ``rule=None`` samples the raw model.  One secret key is shared by every
    response (forcing cross-generation key collisions) unless ``fresh_keys``
    draws a new one per response.  Response ``j`` to prompt ``i`` uses the
    substream ``[seed, arm, i, j]``, so arms are reproducible and independent.
    """
    prompts = _spec_prompts(spec, lm.vocab_size)
    out: list[list[float]] = []
    for i in range(spec.prompts):
        prompt_tokens = [int(t) for t in prompts[i]]
        prompt = TokenSequence(tuple(prompt_tokens), lm.vocab_size)
        row: list[float] = []
        for j in range(spec.responses_per_prompt):
            rng = np.random.default_rng([spec.seed, arm, i, j])
            if rule is None:
                tokens = _raw_sample(lm, prompt_tokens, spec.length, rng)
            else:
                sk = secret
                if fresh_keys:
                    sk = SecretKey.from_seed(((spec.seed * 1_000_003 + arm) * 1_000_003 + i) * 1_000_003 + j)
                cfg = GeneratorConfig(
                    rule=rule,
                    sampler=NGramSampler(spec.ngram),
                    secret=sk,
                    max_len=max(spec.length, 1),
                    sampling_seed=0,
                )
                seq, _ = generate(lm, prompt, spec.length, cfg, rng=rng)
                tokens = list(seq.tokens)
            row.append(mean_logprob(lm, prompt_tokens, tokens))
        out.append(row)
    return out


def _raw_sample(
    lm: ToyLM, prompt: list[int], length: int, rng: np.random.Generator
) -> list[int]:
    context = list(prompt)
    tokens: list[int] = []
    for _ in range(length):
        probs = lm(context).probs
        cum = np.cumsum(probs)
        idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        idx = min(idx, probs.size - 1)
        tokens.append(idx)
        context.append(idx)
    return tokens


@dataclass(frozen=True)
class DeltaRow:
    rule: str
    param: str
    delta: float
    baseline_delta: float
    stderr: float


def run_strong_experiment(
    lm: ToyLM, spec: ExperimentSpec, secret: SecretKey | None = None
) -> list[DeltaRow]:
    """Repeated-generation quality-gap table.

    Every watermarked arm reuses one fixed secret key across all responses of
    all prompts, so cross-generation key collisions are guaranteed; the
    baseline row is the gap between two independent unwatermarked arms.
    """
    if secret is None:
        secret = SecretKey.from_seed(spec.seed)
    reference = collect_metrics(lm, spec, None, secret, arm=0)
    second = collect_metrics(lm, spec, None, secret, arm=1)
    baseline_terms = delta_terms(reference, second)
    baseline = float(baseline_terms.mean())
    rows = [
        DeltaRow(
            rule="none",
            param="",
            delta=baseline,
            baseline_delta=baseline,
            stderr=float(baseline_terms.std(ddof=1) / math.sqrt(spec.prompts)),
        )
    ]
    for arm, rule in enumerate(spec.rules, start=2):
        wm = collect_metrics(lm, spec, rule, secret, arm=arm)
        terms = delta_terms(reference, wm)
        name, param = rule_label(rule)
        rows.append(
            DeltaRow(
                rule=name,
                param=param,
                delta=float(terms.mean()),
                baseline_delta=baseline,
                stderr=float(terms.std(ddof=1) / math.sqrt(spec.prompts)),
            )
        )
    return rows


def paraphrase_attack(seq: TokenSequence, epsilon: float, seed: int) -> TokenSequence:
    """Replace ``ceil(epsilon * n)`` uniformly chosen positions with uniform
    random token ids (which may repeat the original token by chance).

    The positions are the first ``ceil(epsilon * n)`` entries of a seeded
    random ordering, so the same seed at a larger ``epsilon`` attacks a
    superset of the positions with identical replacements on the shared ones.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgument(f"epsilon must be in [0, 1], got {epsilon}")
    n = len(seq)
    k = math.ceil(epsilon * n)
    if k == 0:
        return seq
    rng = np.random.default_rng(seed)
    positions = rng.permutation(n)[:k]
    replacements = rng.integers(0, seq.vocab_size, size=k)
    tokens = list(seq.tokens)
    for pos, repl in zip(positions, replacements):
        tokens[int(pos)] = int(repl)
    return TokenSequence(tuple(tokens), seq.vocab_size)


@dataclass(frozen=True)
class RocCurve:
    """Threshold-swept ROC points (monotone in fpr) and the trapezoidal AUC,
    which equals the probability a random positive outscores a random
    negative with ties counted 1/2."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> RocCurve:
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidArgument("both score lists must be nonempty")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        tpr.append(float(np.count_nonzero(pos >= t) / pos.size))
        fpr.append(float(np.count_nonzero(neg >= t) / neg.size))
    fpr_arr = np.asarray(fpr)
    tpr_arr = np.asarray(tpr)
    auc = float(np.trapezoid(tpr_arr, fpr_arr))
    return RocCurve(fpr=fpr_arr, tpr=tpr_arr, auc=auc)


def generate_texts(
    lm: ToyLM,
    spec: ExperimentSpec,
    rule: PdaRule | None,
    secret: SecretKey,
    *,
    arm: int,
) -> list[TokenSequence]:
    """One text per (prompt, response) cell, shared secret key throughout."""
    prompts = _spec_prompts(spec, lm.vocab_size)
    texts: list[TokenSequence] = []
    for i in range(spec.prompts):
        prompt_tokens = [int(t) for t in prompts[i]]
        prompt = TokenSequence(tuple(prompt_tokens), lm.vocab_size)
        for j in range(spec.responses_per_prompt):
            rng = np.random.default_rng([spec.seed, arm, i, j])
            if rule is None:
                tokens = _raw_sample(lm, prompt_tokens, spec.length, rng)
                texts.append(TokenSequence(tuple(tokens), lm.vocab_size))
            else:
                seq, _ = generate(
                    lm,
                    prompt,
                    spec.length,
                    GeneratorConfig(
                        rule=rule,
                        sampler=NGramSampler(spec.ngram),
                        secret=secret,
                        max_len=max(spec.length, 1),
                        sampling_seed=0,
                    ),
                    rng=rng,
                )
                texts.append(seq)
    return texts


def _detection_scores(
    texts: list[TokenSequence],
    rule: PdaRule,
    secret: SecretKey,
    a: int,
    C: float,
) -> np.ndarray:
    """Per-text detection statistic appropriate to the rule family."""
    if isinstance(rule, (Beta, PermuteReweight)):
        return np.asarray([beta_z(t, secret, a, C) for t in texts])
    if isinstance(rule, Soft):
        return np.asarray(
            [detect_soft(t, secret, a, rule.gamma).z for t in texts]
        )
    raise InvalidArgument(
        "only beta/permute-reweight and soft rules have detectors"
    )


@dataclass(frozen=True)
class DetectionRow:
    rule: str
    param: str
    threshold: float
    tnr: float
    tpr: float
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class DetectionTable:
    rows: tuple[DetectionRow, ...]
    calibrated: bool


def run_detection_table(
    lm: ToyLM,
    spec: ExperimentSpec,
    rules: Sequence[PdaRule],
    fprs: Sequence[float],
    *,
    secret: SecretKey | None = None,
    C: float = 10.0,
    calibrate: bool = False,
) -> DetectionTable:
    """TNR/TPR per rule per threshold over watermarked and null corpora.

    Thresholds come from the Hoeffding inverse by default; with ``calibrate``
    they are the empirical (1 - alpha) quantiles of the null statistics, which
    pins TNR to 1 - alpha up to quantile granularity.
    """
    if secret is None:
        secret = SecretKey.from_seed(spec.seed)
    null_texts = generate_texts(lm, spec, None, secret, arm=10_000)
    rows: list[DetectionRow] = []
    for ridx, rule in enumerate(rules):
        wm_texts = generate_texts(lm, spec, rule, secret, arm=20_000 + ridx)
        z_pos = _detection_scores(wm_texts, rule, secret, spec.ngram, C)
        z_neg = _detection_scores(null_texts, rule, secret, spec.ngram, C)
        name, param = rule_label(rule)
        for alpha in fprs:
            if calibrate:
                threshold = float(np.quantile(z_neg, 1.0 - alpha))
            else:
                threshold = z_for_fpr(alpha)
            rows.append(
                DetectionRow(
                    rule=name,
                    param=param,
                    threshold=threshold,
                    tnr=float(np.mean(z_neg <= threshold)),
                    tpr=float(np.mean(z_pos > threshold)),
                    n_pos=len(wm_texts),
                    n_neg=len(null_texts),
                )
            )
    return DetectionTable(rows=tuple(rows), calibrated=calibrate)


@dataclass(frozen=True)
class AttackRow:
    rule: str
    epsilon: float
    auc: float


def run_attack_sweep(
    lm: ToyLM,
    spec: ExperimentSpec,
    rule: PdaRule,
    epsilons: Sequence[float],
    *,
    secret: SecretKey | None = None,
    C: float = 10.0,
) -> list[AttackRow]:
    """AUC of watermark detection after replacing an ``epsilon`` fraction of
    tokens, per attack strength.

    Each text keeps one attack seed across the sweep, so stronger attacks
    strictly extend weaker ones and the comparison across strengths is
    paired.
    """
    if secret is None:
        secret = SecretKey.from_seed(spec.seed)
    wm_texts = generate_texts(lm, spec, rule, secret, arm=30_000)
    null_texts = generate_texts(lm, spec, None, secret, arm=10_000)
    z_neg = _detection_scores(null_texts, rule, secret, spec.ngram, C)
    name, param = rule_label(rule)
    label = f"{name}:{param}" if param else name
    rows: list[AttackRow] = []
    for eps in epsilons:
        attacked = [
            paraphrase_attack(t, eps, seed=spec.seed * 1_000_003 + idx)
            for idx, t in enumerate(wm_texts)
        ]
        z_pos = _detection_scores(attacked, rule, secret, spec.ngram, C)
        rows.append(AttackRow(rule=label, epsilon=float(eps), auc=roc_auc(z_pos, z_neg).auc))
    return rows


def write_delta_csv(path: str, rows: Sequence[DeltaRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rule", "param", "delta", "baseline_delta", "stderr"])
        for r in rows:
            w.writerow([r.rule, r.param, f"{r.delta:.10g}", f"{r.baseline_delta:.10g}", f"{r.stderr:.10g}"])


def write_detection_csv(path: str, table: DetectionTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rule", "param", "threshold", "tnr", "tpr", "n_pos", "n_neg"])
        for r in table.rows:
            w.writerow(
                [r.rule, r.param, f"{r.threshold:.10g}", f"{r.tnr:.10g}", f"{r.tpr:.10g}", r.n_pos, r.n_neg]
            )


def write_attack_csv(path: str, rows: Sequence[AttackRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rule", "epsilon", "auc"])
        for r in rows:
            w.writerow([r.rule, f"{r.epsilon:g}", f"{r.auc:.10g}"])
