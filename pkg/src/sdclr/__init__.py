"""Contrastive pre-training with a pruned self-competitor branch, plus the
long-tail dataset construction and balancedness-evaluation machinery needed
to study it at desk scale.
"""

from .augment import AugmentationChain, augment, augment_pair, simclr_chain
from .backend import backend_name
from .datasets import DataSource, get_source, synthetic_shapes
from .encoder import Encoder, EncoderSpec
from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    DataError,
    InvalidParameterError,
    InvalidSpecError,
    SdclrError,
    TrainingDiverged,
)
from .longtail import (
    ClassCountProfile,
    DatasetSplit,
    GroupAssignment,
    LongTailSpec,
    assign_groups,
    exp_profile,
    pareto_profile,
    sample_balanced_counterpart,
    sample_longtail,
    sample_validation,
)
from .losses import EmbeddingBatch, block_pairs, ntxent_loss, similarity
from .pruning import (
    PruneMask,
    SparsityReport,
    all_ones_mask,
    apply_mask,
    layerwise_sparsity,
    magnitude_mask,
    random_dropout_mask,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentationChain", "augment", "augment_pair", "simclr_chain",
    "backend_name",
    "DataSource", "get_source", "synthetic_shapes",
    "CapacityError", "ConfigError", "ContractError", "DataError",
    "InvalidParameterError", "InvalidSpecError", "SdclrError", "TrainingDiverged",
    "ClassCountProfile", "DatasetSplit", "GroupAssignment", "LongTailSpec",
    "assign_groups", "exp_profile", "pareto_profile",
    "sample_balanced_counterpart", "sample_longtail", "sample_validation",
    "EmbeddingBatch", "block_pairs", "ntxent_loss", "similarity",
    "Encoder", "EncoderSpec",
    "PruneMask", "SparsityReport", "all_ones_mask", "apply_mask",
    "layerwise_sparsity", "magnitude_mask", "random_dropout_mask",
    "__version__",
]
