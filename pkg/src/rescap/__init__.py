"""rescap: region-feature caption generation with residual top-down attention.

A desk-scale, fully inspectable stack: a float64 autodiff core, the two
residual attention blocks (grid pooling and region attention), a
two-LSTM caption decoder with ablation flags, training and beam-search
decoding, from-scratch caption metrics, a synthetic scene generator, and
bit-exact binary formats for features and checkpoints.
"""

from .tensor import Tensor, grad_check, no_grad
from .features import FeatureRecord, RegionGrid
from .attention import (
    GridPoolerParams,
    RegionAttentionParams,
    RegionSet,
    average_pool,
    restd1_pool,
    restd2_attend,
)
from .vocab import Caption, Vocabulary, PAD, BOS, EOS, UNK
from .decoder import (
    CaptionModel,
    DecoderState,
    ModelDims,
    VariantFlags,
    forward_teacher_forced,
    init_model,
    make_variant,
    restd_lstm_step,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "grad_check",
    "no_grad",
    "FeatureRecord",
    "RegionGrid",
    "GridPoolerParams",
    "RegionAttentionParams",
    "RegionSet",
    "average_pool",
    "restd1_pool",
    "restd2_attend",
    "Caption",
    "Vocabulary",
    "PAD",
    "BOS",
    "EOS",
    "UNK",
    "CaptionModel",
    "DecoderState",
    "ModelDims",
    "VariantFlags",
    "forward_teacher_forced",
    "init_model",
    "make_variant",
    "restd_lstm_step",
    "__version__",
]
