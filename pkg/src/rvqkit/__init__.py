"""Residual vector quantization toolkit.

Building blocks for hierarchical (residual) vector quantization of latent
vectors: single-layer codebooks with EMA updates and dead-code restarts,
low-dimensional projected quantization, training loops for both regimes,
code-utilization analytics, and two token-generation schedulers (masked
parallel decoding with annealed classifier-free guidance, and AR + NAR
layer-wise generation) driven by pluggable score models.
"""

from .analytics import UtilizationReport, rank_frequency, utilization
from .arnar import (
    ArModel,
    ArNarStats,
    CyclingArModel,
    EosArModel,
    GenConfig,
    NarModel,
    NgramArModel,
    OracleArModel,
    OracleNarModel,
    generate_ar,
    generate_nar,
    generate_text_to_tokens,
    sample_with_temperature,
    sequence_perplexity,
    train_ngram_ar,
)
from .errors import (
    DegenerateInputError,
    EmptyGenerationError,
    FormatError,
    NumericalError,
)
from .io import (
    load_quantizer,
    read_token_streams,
    read_vectors,
    save_quantizer,
    write_token_streams,
    write_vectors,
)
from .mlm import (
    MASKED,
    DecodeSchedule,
    GenerationStats,
    MaskState,
    OracleScoreModel,
    ScoreModel,
    UniformScoreModel,
    anneal_coeff,
    cfg_combine,
    confidence_select,
    cosine_unmask_fractions,
    generate_parallel,
    span_mask,
)
from .rvq import (
    EncodeTrace,
    RvqQuantizer,
    TokenFrame,
    TokenStream,
    bitrate_bps,
    code_bits,
    rvq_decode,
    rvq_decode_batch,
    rvq_encode,
    rvq_encode_batch,
)
from .training import (
    CorpusSpec,
    ProjectedParams,
    TrainConfig,
    TrainReport,
    make_corpus,
    projected_assign,
    projected_grads,
    projected_loss,
    straight_through,
    train_quantizer,
)
from .vq import (
    Codebook,
    ProjectionPair,
    VqAssignment,
    codebook_loss,
    commitment_loss,
    ema_update,
    kmeans_init,
    nearest_code,
    nearest_codes,
    project_in,
    project_out,
    restart_dead_codes,
    snake,
)

__version__ = "0.1.0"

__all__ = [
    "ArModel",
    "ArNarStats",
    "Codebook",
    "CorpusSpec",
    "CyclingArModel",
    "DecodeSchedule",
    "DegenerateInputError",
    "EmptyGenerationError",
    "EncodeTrace",
    "EosArModel",
    "FormatError",
    "GenConfig",
    "GenerationStats",
    "MASKED",
    "MaskState",
    "NarModel",
    "NgramArModel",
    "NumericalError",
    "OracleArModel",
    "OracleNarModel",
    "OracleScoreModel",
    "ProjectedParams",
    "ProjectionPair",
    "RvqQuantizer",
    "ScoreModel",
    "TokenFrame",
    "TokenStream",
    "TrainConfig",
    "TrainReport",
    "UniformScoreModel",
    "UtilizationReport",
    "VqAssignment",
    "anneal_coeff",
    "bitrate_bps",
    "cfg_combine",
    "code_bits",
    "codebook_loss",
    "commitment_loss",
    "confidence_select",
    "cosine_unmask_fractions",
    "ema_update",
    "generate_ar",
    "generate_nar",
    "generate_parallel",
    "generate_text_to_tokens",
    "kmeans_init",
    "load_quantizer",
    "make_corpus",
    "nearest_code",
    "nearest_codes",
    "project_in",
    "project_out",
    "projected_assign",
    "projected_grads",
    "projected_loss",
    "rank_frequency",
    "read_token_streams",
    "read_vectors",
    "restart_dead_codes",
    "rvq_decode",
    "rvq_decode_batch",
    "rvq_encode",
    "rvq_encode_batch",
    "sample_with_temperature",
    "save_quantizer",
    "sequence_perplexity",
    "snake",
    "span_mask",
    "straight_through",
    "train_ngram_ar",
    "train_quantizer",
    "utilization",
    "write_token_streams",
    "write_vectors",
]
