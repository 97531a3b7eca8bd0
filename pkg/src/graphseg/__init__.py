"""Semantic segmentation through self-constructed latent graphs.

A CNN backbone produces a stride-16 feature map; a graph constructor turns it
into node features plus a learned weighted adjacency; two graph layers
propagate and classify; predictions project back to pixels. Everything runs on
the package's own numpy-backed autodiff engine.
"""

from .backbone import Backbone, BackboneConfig
from .config import ModelConfig, TrainConfig, load_config, save_config
from .data import ClassPalette, PatchSampler, TileDataset, augment, load_dataset
from .errors import DataError, DimensionError, NumericError
from .evaluate import evaluate_dataset
from .gnn import GCNLayer, GINLayer, normalize_adjacency
from .graph import GraphBundle, GraphConstructor
from .inference import relation_maps, sliding_window, tta_probabilities
from .losses import dice_loss, one_hot, total_loss
from .metrics import ConfusionMatrix, MetricsReport, compute_metrics
from .model import STANDARD_VARIANTS, ForwardResult, SegmentationModel, build_variant
from .nn import BatchNorm, Conv2d, Linear, Module, Parameter, parameter_count
from .optim import Adam, LearningRateSchedule, build_param_groups
from .tensor import Tensor, default_dtype, no_grad, set_default_dtype
from .train import fit, make_optimizer, train_step

__version__ = "0.1.0"

__all__ = [
    "Adam", "Backbone", "BackboneConfig", "BatchNorm", "ClassPalette",
    "ConfusionMatrix", "Conv2d", "DataError", "DimensionError", "ForwardResult",
    "GCNLayer", "GINLayer", "GraphBundle", "GraphConstructor",
    "LearningRateSchedule", "Linear", "MetricsReport", "ModelConfig", "Module",
    "NumericError", "Parameter", "PatchSampler", "STANDARD_VARIANTS",
    "SegmentationModel", "Tensor", "TileDataset", "TrainConfig", "augment",
    "build_param_groups", "build_variant", "compute_metrics", "default_dtype",
    "dice_loss", "evaluate_dataset", "fit", "load_config", "load_dataset",
    "make_optimizer", "no_grad", "normalize_adjacency", "one_hot",
    "parameter_count", "relation_maps", "save_config", "set_default_dtype",
    "sliding_window", "total_loss", "train_step", "tta_probabilities",
]
