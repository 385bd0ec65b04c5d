"""Fiber transmission laboratory and recurrent NN equalizer.

Simulates dual-polarization 16-QAM over multi-span standard single-mode
fiber (Manakov split-step Fourier propagation, EDFA/ASE noise, receiver
CDC), trains a stacked bidirectional LSTM symbol equalizer on windowed
received symbols, and compares single-task against multi-task training
across launch power, symbol rate, and transmission distance.
"""

__version__ = "0.1.0"

from . import channel, config, dataset, dsp, evaluation, rng, signal
from .errors import (
    ConfigError,
    DegenerateInput,
    FormatError,
    InvalidLength,
    MteqError,
    NumericsError,
    QUndefined,
    ShapeError,
    StateError,
)

__all__ = [
    "channel",
    "config",
    "dataset",
    "dsp",
    "evaluation",
    "rng",
    "signal",
    "MteqError",
    "InvalidLength",
    "DegenerateInput",
    "ShapeError",
    "StateError",
    "NumericsError",
    "FormatError",
    "ConfigError",
    "QUndefined",
]
