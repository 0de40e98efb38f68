"""Distortion-free language-model watermarking on integer token streams.

Generation adjusts next-token distributions with keyed pseudo-randomness,
detection runs a model-agnostic rank test with a Hoeffding tail bound, and
the bias lab quantifies the distribution bias each rule exhibits once
watermark keys repeat.
"""

__version__ = "0.1.0"

from .core import (
    Permutation,
    TokenDistribution,
    TokenSequence,
    Vocabulary,
    normalize,
    one_hot,
    total_variation,
)
from .detector import (
    DetectionResult,
    beta_score,
    detect_beta,
    detect_multikey,
    detect_soft,
    multikey_fpr,
    null_mean,
    p_value_bound,
    z_for_fpr,
)
from .generator import (
    FixedSetSampler,
    GenerationTrace,
    GeneratorConfig,
    NGramSampler,
    PositionSampler,
    generate,
    regenerate,
)
from .keying import (
    Digest,
    FixedIndex,
    KeyHistory,
    NGram,
    Position,
    SecretKey,
    WatermarkKey,
    derive_gumbel,
    derive_permutation,
    derive_stream,
    derive_uniform,
    encode_key,
    fixed_set_key,
    key_digest,
    ngram_key,
    position_key,
)
from .pda import (
    Beta,
    Gumbel,
    InverseSampling,
    PdaRule,
    PermuteReweight,
    Soft,
    apply_beta,
    apply_beta_intervals,
    apply_gumbel,
    apply_inverse,
    apply_permute_reweight,
    apply_rule,
    apply_soft,
    green_set,
    inverse_select,
    parse_rule,
)

__all__ = [name for name in dir() if not name.startswith("_")]
