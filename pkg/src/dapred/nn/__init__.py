"""Small numpy neural-network engine: layers, networks, Adam training."""
from .layers import (Activation, Conv1D, Dense, Flatten, Layer, MaxPool1D, Reshape,
                     ShapeMismatch, Upsample1D, layer_from_spec, sigmoid, swish, swish_grad)
from .network import Network, mse_loss
from .optim import (AdamState, EpochRecord, NonFiniteLoss, PlateauSchedule, TrainConfig,
                    adam_step, train)

__all__ = [
    "Activation", "Conv1D", "Dense", "Flatten", "Layer", "MaxPool1D", "Reshape",
    "ShapeMismatch", "Upsample1D", "layer_from_spec", "sigmoid", "swish", "swish_grad",
    "Network", "mse_loss",
    "AdamState", "EpochRecord", "NonFiniteLoss", "PlateauSchedule", "TrainConfig",
    "adam_step", "train",
]
