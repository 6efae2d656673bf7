"""Group-conditional modeling of generator latent spaces.

A contrastive autoencoder disentangles labeled latent vectors, one Gaussian
mixture per demographic group models the bottleneck, and group-conditional
samples are decoded back to the generator's latent space.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    EmptyGroupError,
    FormatError,
    GroupLatentError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .dataset import (  # noqa: E402
    DemographicSchema,
    GroupSelector,
    LatentDataset,
    Standardizer,
    fit_standardizer,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_toy_dataset,
)
from .autoencoder import AutoencoderConfig, AutoencoderModel, init_autoencoder, load_model, save_model  # noqa: E402
from .contrastive import ContrastiveConfig, lifted_structured_loss, train_autoencoder  # noqa: E402
from .gmm import EmConfig, GmmModel, em_fit, gmm_sample, load_gmm, save_gmm  # noqa: E402

__all__ = [
    "__version__",
    "GroupLatentError", "ValidationError", "ConfigError", "EmptyGroupError", "ShapeError",
    "FormatError", "NumericError",
    "DemographicSchema", "GroupSelector", "LatentDataset", "Standardizer", "fit_standardizer",
    "load_dataset", "save_dataset", "split_dataset", "synth_toy_dataset",
    "AutoencoderConfig", "AutoencoderModel", "init_autoencoder", "load_model", "save_model",
    "ContrastiveConfig", "lifted_structured_loss", "train_autoencoder",
    "EmConfig", "GmmModel", "em_fit", "gmm_sample", "load_gmm", "save_gmm",
]
