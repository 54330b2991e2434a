"""View-diversity toolkit: constrained positive-pair crops scored by
entropic optimal transport over patch features."""

from .geometry import CropScale, ExtentTooSmall, ImageExtent, Rect, contains, iou, sample_rrc
from .pairgen import (
    AnnotatedImage,
    ConfigKind,
    ManifestError,
    MissingPartner,
    NoInstances,
    PairConfig,
    UnknownImage,
    Unsatisfiable,
    ViewPair,
    generate_pair,
    load_corpus,
    satisfies_config,
)
from .patches import GridStrategy, PatchSet, SampledStrategy, grid_patches, sampled_patches, strategy_from_name
from .features import (
    FeatureMap,
    NonFiniteValue,
    ZeroNormWarning,
    encode_patches,
    load_embeddings,
    toy_encode,
    write_embeddings,
)
from .transport import (
    Marginals,
    NumericalUnderflow,
    SinkhornParams,
    TransportPlan,
    cost_matrix,
    exact_plan,
    run_oracle_suite,
    similarity,
    sinkhorn,
)
from .losses import ContrastiveBatch, DistillPair, NonFiniteLogits, dino_ce, info_nce
from .pipeline import (
    EncoderMismatch,
    MissingAnchor,
    RangeRule,
    RunSpec,
    SimilarityReport,
    derive_seed,
    fraction_study,
    range_rule,
    run,
    sample_pairs,
)
from .synthetic import make_synthetic_corpus

__all__ = [name for name in dir() if not name.startswith("_")]
