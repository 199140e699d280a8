"""Fine-grained image clustering with a scene-decomposing GAN.

The discriminator embeds images next to learned cluster centroids; the
generator composes a background, a foreground mask and a foreground texture
conditioned on a categorical code. Clustering real images is a nearest
centroid lookup in the discriminator's embedding space.
"""

from .core import (
    ConfigError,
    LatentCode,
    RealBatch,
    RunConfig,
    load_config,
    make_rng,
    validate_config,
)
from .data import augment_pair, load_dataset, read_manifest, synth_shapes
from .discriminator import Discriminator, posterior
from .evaluation import assign, contingency, evaluate, hungarian_accuracy, nmi
from .generator import Generator, compose
from .losses import (
    LossReport,
    entropy_reg,
    hinge_d,
    hinge_g,
    img_contrastive,
    info_loss,
    mask_reg,
    total_objective,
)
from .perturb import policy_for, sample_affine, warp
from .trainer import Trainer, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Discriminator",
    "Generator",
    "LatentCode",
    "LossReport",
    "RealBatch",
    "RunConfig",
    "Trainer",
    "assign",
    "augment_pair",
    "compose",
    "contingency",
    "entropy_reg",
    "evaluate",
    "hinge_d",
    "hinge_g",
    "hungarian_accuracy",
    "img_contrastive",
    "info_loss",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "make_rng",
    "mask_reg",
    "nmi",
    "policy_for",
    "posterior",
    "read_manifest",
    "sample_affine",
    "save_checkpoint",
    "synth_shapes",
    "total_objective",
    "train",
    "validate_config",
    "warp",
]
