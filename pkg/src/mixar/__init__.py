"""Discrete-prior-guided continuous masked autoregressive image generation
at desk scale: trainable tokenizers, a masked discrete generator, guidance
mixing (token substitution, prefix self-attention, cross-attention), a
training-inference blending schedule, and exact cost accounting.
"""

from .backbone import BackboneConfig, BackboneOutput, GuidanceBackbone, GuidanceVariant
from .data import DatasetSpec, ImageBatch, ToyDataset, generate_dataset
from .diffusion import DenoiserHead, DiffusionSchedule, denoise_loss, forward_noising, sample_token
from .discrete import (
    DiscreteARModel,
    DiscreteModelConfig,
    generate_discrete,
    infill_discrete,
    mask_discrete_sequence,
    train_step_discrete,
)
from .errors import ConfigError, ContractError, DependencyError, MixarError, NumericsError
from .masking import (
    DecodeSchedule,
    MaskSpec,
    RatioConfig,
    build_decode_schedule,
    build_mask,
    sample_mask_ratio,
)
from .metrics import ProbeClassifier, frechet_surrogate, train_probe
from .mixture import MixedSequence, Provenance, TIMixConfig, dc_mix, lambda_schedule, ti_mix
from .profiling import CostReport, ProfileDims, profile_variant
from .tokenizers import (
    ContinuousTokenizer,
    TokenizerConfig,
    TokenizerTrainConfig,
    VQTokenizer,
    quantize,
    train_tokenizers,
)
from .training import (
    MetricsRecord,
    MixarModel,
    SeedBundle,
    TrainConfig,
    generate_images,
    train_eval_gap,
    train_mixar,
)

__version__ = "0.1.0"
