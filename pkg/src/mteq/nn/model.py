"""Stacked biLSTM + dense equalizer model.

Each bidirectional layer runs the full sequence in both directions and
concatenates the per-timestep outputs (forward half first), which feeds
the next layer.  The dense readout consumes only the center timestep of
the last layer and emits the real and imaginary parts of the recovered
X-polarization symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, StateError
from ..rng import stream
from .layers import (
    LstmGrads,
    LstmParams,
    SequenceCache,
    init_lstm_params,
    lstm_sequence_backward,
    lstm_sequence_forward,
)

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    """Architecture and numeric precision of the equalizer."""

    n_layers: int = 4
    hidden: int = 100
    input_features: int = 4
    window: int = 141
    output_dim: int = 2
    dtype: str = "f32"

    def validate(self) -> None:
        if min(self.n_layers, self.hidden, self.input_features, self.window, self.output_dim) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.input_features not in (4, 5):
            raise ValueError(f"input_features must be 4 or 5, got {self.input_features}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def center(self) -> int:
        return self.window // 2


@dataclass
class DenseParams:
    w: np.ndarray  # (output_dim, 2H)
    b: np.ndarray  # (output_dim,)


@dataclass
class LayerCache:
    fw: SequenceCache
    bw: SequenceCache
    out: np.ndarray  # (T, B, 2H) true time order


@dataclass
class ForwardCache:
    layers: list[LayerCache]
    center_in: np.ndarray  # (B, 2H) dense input


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over the batch and both output components."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def dense_readout(h: np.ndarray, params: DenseParams) -> np.ndarray:
    """Affine readout (linear activation) of the center-timestep feature vector."""
    if h.shape[-1] != params.w.shape[1]:
        raise ShapeError(f"readout input {h.shape} incompatible with weight {params.w.shape}")
    return h @ params.w.T + params.b


class EqualizerModel:
    """Parameter container plus forward/backward/predict."""

    def __init__(self, config: ModelConfig, layers: list[dict], dense: DenseParams):
        config.validate()
        self.config = config
        self.layers = layers  # [{"fw": LstmParams, "bw": LstmParams}, ...]
        self.dense = dense

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "EqualizerModel":
        config.validate()
        dt = config.np_dtype
        rng = stream(seed, "model-init")
        layers = []
        d_in = config.input_features
        for _ in range(config.n_layers):
            layers.append(
                {
                    "fw": init_lstm_params(d_in, config.hidden, rng, dt),
                    "bw": init_lstm_params(d_in, config.hidden, rng, dt),
                }
            )
            d_in = 2 * config.hidden
        bound = 1.0 / np.sqrt(2 * config.hidden)
        dense = DenseParams(
            w=rng.uniform(-bound, bound, size=(config.output_dim, 2 * config.hidden)).astype(dt),
            b=np.zeros(config.output_dim, dtype=dt),
        )
        return cls(config, layers, dense)

    def parameters(self) -> dict[str, np.ndarray]:
        """Stable name -> tensor mapping (the serialization and Adam order)."""
        params: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers):
            for dirn in ("fw", "bw"):
                p: LstmParams = layer[dirn]
                params[f"layer{idx}.{dirn}.w"] = p.w
                params[f"layer{idx}.{dirn}.u"] = p.u
                params[f"layer{idx}.{dirn}.b"] = p.b
        params["dense.w"] = self.dense.w
        params["dense.b"] = self.dense.b
        return params

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(values):
            raise ShapeError("parameter name mismatch")
        for name, arr in own.items():
            if arr.shape != values[name].shape:
                raise ShapeError(f"{name}: shape {values[name].shape} != {arr.shape}")
            arr[...] = values[name]

    def forward(self, x: np.ndarray, need_cache: bool = True) -> tuple[np.ndarray, ForwardCache | None]:
        """Forward pass over a batch of windows ``x`` of shape (B, T, D)."""
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.window or x.shape[2] != cfg.input_features:
            raise ShapeError(f"input {x.shape} != (B, {cfg.window}, {cfg.input_features})")
        seq = np.ascontiguousarray(np.transpose(x, (1, 0, 2)), dtype=cfg.np_dtype)
        layer_caches = []
        for layer in self.layers:
            h_fw, c_fw = lstm_sequence_forward(seq, layer["fw"], reverse=False, need_cache=need_cache)
            h_bw, c_bw = lstm_sequence_forward(seq, layer["bw"], reverse=True, need_cache=need_cache)
            seq = np.concatenate([h_fw, h_bw], axis=2)
            if need_cache:
                layer_caches.append(LayerCache(fw=c_fw, bw=c_bw, out=seq))
        center_in = seq[cfg.center]
        pred = dense_readout(center_in, self.dense)
        cache = ForwardCache(layers=layer_caches, center_in=center_in) if need_cache else None
        return pred, cache

    def backward(self, dpred: np.ndarray, cache: ForwardCache | None) -> dict[str, np.ndarray]:
        """Gradients of every parameter given d(loss)/d(pred)."""
        if cache is None:
            raise StateError("backward called without a forward cache")
        cfg = self.config
        h = cfg.hidden
        grads: dict[str, np.ndarray] = {
            "dense.w": dpred.T @ cache.center_in,
            "dense.b": dpred.sum(axis=0),
        }
        t_len, batch = cfg.window, dpred.shape[0]
        dseq = np.zeros((t_len, batch, 2 * h), dtype=cfg.np_dtype)
        dseq[cfg.center] = dpred @ self.dense.w
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            lc = cache.layers[idx]
            dx_fw, g_fw = lstm_sequence_backward(np.ascontiguousarray(dseq[:, :, :h]), lc.fw, layer["fw"])
            dx_bw, g_bw = lstm_sequence_backward(np.ascontiguousarray(dseq[:, :, h:]), lc.bw, layer["bw"])
            _store(grads, idx, "fw", g_fw)
            _store(grads, idx, "bw", g_bw)
            dseq = dx_fw + dx_bw
        return grads

    def loss_and_grads(
        self, x: np.ndarray, target: np.ndarray, microbatch: int = 0
    ) -> tuple[float, dict[str, np.ndarray]]:
        """MSE loss and its exact gradients, accumulated over micro-batches.

        Micro-batching bounds the BPTT cache memory; the accumulation
        order is fixed, so results are deterministic for a given
        ``microbatch`` value.
        """
        n = len(x)
        if len(target) != n:
            raise ShapeError("batch/target size mismatch")
        step = n if microbatch in (0, None) else min(microbatch, n)
        total = None
        loss_sum = 0.0
        for lo in range(0, n, step):
            xb = x[lo : lo + step]
            tb = np.asarray(target[lo : lo + step], dtype=self.config.np_dtype)
            pred, cache = self.forward(xb, need_cache=True)
            err = pred - tb
            loss_sum += float(np.sum(err * err))
            grads = self.backward(2.0 * err, cache)
            if total is None:
                total = grads
            else:
                for k in total:
                    total[k] += grads[k]
        denom = n * self.config.output_dim
        for k in total:
            total[k] /= denom
        return loss_sum / denom, total

    def predict(self, features: np.ndarray, microbatch: int = 4096) -> np.ndarray:
        """Equalized X-polarization symbols (complex) for a window batch."""
        out = np.empty(len(features), dtype=np.complex128)
        for lo in range(0, len(features), microbatch):
            pred, _ = self.forward(features[lo : lo + microbatch], need_cache=False)
            out[lo : lo + len(pred)] = pred[:, 0].astype(np.float64) + 1j * pred[:, 1].astype(np.float64)
        return out


def _store(grads: dict, idx: int, dirn: str, g: LstmGrads) -> None:
    grads[f"layer{idx}.{dirn}.w"] = g.w
    grads[f"layer{idx}.{dirn}.u"] = g.u
    grads[f"layer{idx}.{dirn}.b"] = g.b
