"""Source generator attribution by inversion."""

__version__ = "0.1.0"

from .attribution import (AttributionReport, InversionConfig, InversionResult, attribute,
                          attribute_many, invert, invert_many, one_vs_rest_score, pair_score,
                          reconstruction_loss)
from .data import LabeledDataset, load_idx, load_mnist
from .evaluation import RocCurve, auc, histogram, roc
from .exceptions import GenAttribError
from .network import ImageTensor, Layer, MlpGenerator, forward, grad_latent, grad_params
from .optim import AdamState, PlateauScheduler, adam_step, multistart_minimize
from .perturb import CompressionConfig, apply_compression, jpeg_roundtrip
from .train import TrainConfig, load_generator, save_generator, train_autoencoder

__all__ = [
    "AdamState", "AttributionReport", "CompressionConfig", "GenAttribError", "ImageTensor",
    "InversionConfig", "InversionResult", "LabeledDataset", "Layer", "MlpGenerator",
    "PlateauScheduler", "RocCurve", "TrainConfig", "adam_step", "apply_compression",
    "attribute", "attribute_many", "auc", "forward", "grad_latent", "grad_params", "histogram",
    "invert", "invert_many", "jpeg_roundtrip", "load_generator", "load_idx", "load_mnist",
    "multistart_minimize", "one_vs_rest_score", "pair_score", "reconstruction_loss", "roc",
    "save_generator", "train_autoencoder",
]
