"""compositegan: layered image generation with alpha-blended multi-generator GANs.

Multiple RGBA generators, conditioned by a recurrent network over a noise
sequence, emit translucent layers that are composed into one opaque image by
differentiable alpha blending. Training is adversarial, optionally combined
with an encoder bank (variational reconstruction) and an alpha-budget loss;
sample quality is measured by a best-match windowed-similarity score.
"""

from .compositor import (
    Composite,
    LayerImage,
    blend_step,
    blend_translucent,
    compose_first,
    compose_stack,
)
from .config import TrainConfig, read_config, write_config
from .data import DatasetSpec, ImageDataset, SyntheticRecipe, load_dataset, make_synthetic
from .errors import (
    CheckpointError,
    CompositeGanError,
    NonFiniteLossError,
    RangeError,
    ShapeError,
    VariantError,
)
from .losses import (
    AlphaLossConfig,
    LossReport,
    alpha_loss,
    gan_loss,
    kl_term,
    recon_feature,
    recon_pixel,
    vae_loss,
)
from .metrics import QReport, SsimParams, q_metric, ssim
from .nets import (
    ConditionerState,
    DiscriminatorOutput,
    EncoderOutput,
    LatentSeq,
    ModelBundle,
    Variant,
    reparameterize,
    sample_prior,
)
from .persist import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .trainer import (
    TrainState,
    fit,
    initialize,
    train_step,
    train_step_cgan,
    train_step_cgan_vae,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaLossConfig",
    "CheckpointError",
    "Composite",
    "CompositeGanError",
    "ConditionerState",
    "DatasetSpec",
    "DiscriminatorOutput",
    "EncoderOutput",
    "ImageDataset",
    "LatentSeq",
    "LayerImage",
    "LoadedCheckpoint",
    "LossReport",
    "ModelBundle",
    "NonFiniteLossError",
    "QReport",
    "RangeError",
    "ShapeError",
    "SsimParams",
    "SyntheticRecipe",
    "TrainConfig",
    "TrainState",
    "Variant",
    "VariantError",
    "alpha_loss",
    "blend_step",
    "blend_translucent",
    "compose_first",
    "compose_stack",
    "fit",
    "gan_loss",
    "initialize",
    "kl_term",
    "load_checkpoint",
    "load_dataset",
    "make_synthetic",
    "q_metric",
    "read_config",
    "recon_feature",
    "recon_pixel",
    "reparameterize",
    "sample_prior",
    "save_checkpoint",
    "ssim",
    "train_step",
    "train_step_cgan",
    "train_step_cgan_vae",
    "vae_loss",
    "write_config",
]
