"""From-scratch stacked bidirectional LSTM equalizer with exact BPTT and Adam."""

from .adam import AdamConfig, AdamState, adam_step
from .layers import LstmParams, init_lstm_params, lstm_cell_forward
from .model import DenseParams, EqualizerModel, ModelConfig, mse_loss
from .serialize import load_model, save_model
from .train import TrainConfig, train

__all__ = [
    "AdamConfig",
    "AdamState",
    "adam_step",
    "LstmParams",
    "init_lstm_params",
    "lstm_cell_forward",
    "DenseParams",
    "EqualizerModel",
    "ModelConfig",
    "mse_loss",
    "load_model",
    "save_model",
    "TrainConfig",
    "train",
]
