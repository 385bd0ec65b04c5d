"""LSTM layer primitives: vectorized forward and exact backward.

Gate order in all stacked parameter/activation tensors is
(input, forget, cell, output): rows ``[0:H]`` of the kernels belong to the
input gate, ``[H:2H]`` to the forget gate, ``[2H:3H]`` to the cell
candidate, ``[3H:4H]`` to the output gate.

Sequence tensors are time-major ``(T, B, ...)`` internally so each
timestep slice is contiguous for the recurrent matmul.  The input
projection ``x @ W^T`` and all weight-gradient reductions are single
large GEMMs over the flattened ``(T*B, ...)`` axes; only the recurrence
itself loops over time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class LstmParams:
    """One direction of one LSTM layer: kernels (4H x D), (4H x H), bias (4H,)."""

    w: np.ndarray
    u: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.u.shape[1]

    def check(self) -> None:
        h = self.hidden
        if self.w.shape[0] != 4 * h or self.u.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ShapeError(
                f"inconsistent LSTM shapes: w{self.w.shape} u{self.u.shape} b{self.b.shape}"
            )
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.b))):
            raise ShapeError("non-finite LSTM parameters")


def init_lstm_params(d_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32) -> LstmParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) kernels; zero biases except forget = 1."""
    bound = 1.0 / np.sqrt(hidden)
    w = rng.uniform(-bound, bound, size=(4 * hidden, d_in)).astype(dtype)
    u = rng.uniform(-bound, bound, size=(4 * hidden, hidden)).astype(dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias stabilizes early training
    return LstmParams(w=w, u=u, b=b)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    np.negative(np.abs(z), out=out)
    np.exp(out, out=out)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    neg = ~pos
    out[neg] = out[neg] / (1.0 + out[neg])
    return out


def lstm_cell_forward(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmParams
) -> tuple[np.ndarray, np.ndarray, dict]:
    """One LSTM step on a batch: returns (h_t, c_t, cache of pre/post activations)."""
    params.check()
    h = params.hidden
    if x_t.ndim != 2 or x_t.shape[1] != params.w.shape[1]:
        raise ShapeError(f"x_t shape {x_t.shape} incompatible with kernel {params.w.shape}")
    if h_prev.shape != (x_t.shape[0], h) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"state shapes {h_prev.shape}/{c_prev.shape} != ({x_t.shape[0]}, {h})")
    z = x_t @ params.w.T + h_prev @ params.u.T + params.b
    i = _sigmoid(z[:, :h])
    f = _sigmoid(z[:, h : 2 * h])
    g = np.tanh(z[:, 2 * h : 3 * h])
    o = _sigmoid(z[:, 3 * h :])
    c_t = f * c_prev + i * g
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c
    cache = {"i": i, "f": f, "g": g, "o": o, "c_prev": c_prev, "c": c_t, "tanh_c": tanh_c}
    return h_t, c_t, cache


@dataclass
class SequenceCache:
    """Activations retained by the sequence forward pass for BPTT."""

    x: np.ndarray  # (T, B, D) layer input, processing order
    gates: np.ndarray  # (T, B, 4H) post-activation (i, f, g, o)
    c: np.ndarray  # (T, B, H)
    tanh_c: np.ndarray  # (T, B, H)
    h: np.ndarray  # (T, B, H)
    reverse: bool


def lstm_sequence_forward(
    x: np.ndarray, params: LstmParams, reverse: bool = False, need_cache: bool = True
) -> tuple[np.ndarray, SequenceCache | None]:
    """Run one direction over a (T, B, D) sequence with zero initial state.

    Returns hidden states in *true* time order (reversed directions are
    flipped back), plus the cache in processing order.
    """
    params.check()
    t_len, batch, d_in = x.shape
    if d_in != params.w.shape[1]:
        raise ShapeError(f"input feature count {d_in} != kernel input {params.w.shape[1]}")
    h = params.hidden
    xp = x[::-1] if reverse else x
    pre = np.ascontiguousarray(xp).reshape(t_len * batch, d_in) @ params.w.T
    pre += params.b
    pre = pre.reshape(t_len, batch, 4 * h)

    gates = np.empty((t_len, batch, 4 * h), dtype=x.dtype) if need_cache else None
    c_seq = np.empty((t_len, batch, h), dtype=x.dtype) if need_cache else None
    tanh_seq = np.empty((t_len, batch, h), dtype=x.dtype) if need_cache else None
    h_seq = np.empty((t_len, batch, h), dtype=x.dtype)

    h_t = np.zeros((batch, h), dtype=x.dtype)
    c_t = np.zeros((batch, h), dtype=x.dtype)
    ut = params.u.T
    for t in range(t_len):
        z = pre[t] + h_t @ ut
        i = _sigmoid(z[:, :h])
        f = _sigmoid(z[:, h : 2 * h])
        g = np.tanh(z[:, 2 * h : 3 * h])
        o = _sigmoid(z[:, 3 * h :])
        c_t = f * c_t + i * g
        tanh_c = np.tanh(c_t)
        h_t = o * tanh_c
        h_seq[t] = h_t
        if need_cache:
            gates[t, :, :h] = i
            gates[t, :, h : 2 * h] = f
            gates[t, :, 2 * h : 3 * h] = g
            gates[t, :, 3 * h :] = o
            c_seq[t] = c_t
            tanh_seq[t] = tanh_c

    out = h_seq[::-1].copy() if reverse else h_seq
    cache = None
    if need_cache:
        cache = SequenceCache(x=xp, gates=gates, c=c_seq, tanh_c=tanh_seq, h=h_seq, reverse=reverse)
    return out, cache


@dataclass
class LstmGrads:
    w: np.ndarray
    u: np.ndarray
    b: np.ndarray


def lstm_sequence_backward(
    dh_out: np.ndarray, cache: SequenceCache, params: LstmParams
) -> tuple[np.ndarray, LstmGrads]:
    """Exact BPTT through one direction.

    ``dh_out`` is the loss gradient w.r.t. the (true time order) hidden
    outputs; returns the gradient w.r.t. the layer input in true time
    order plus the parameter gradients.
    """
    t_len, batch, h = cache.h.shape
    if dh_out.shape != (t_len, batch, h):
        raise ShapeError(f"dh shape {dh_out.shape} != {(t_len, batch, h)}")
    dhp = dh_out[::-1] if cache.reverse else dh_out

    dz_seq = np.empty_like(cache.gates)
    dh_rec = np.zeros((batch, h), dtype=dh_out.dtype)
    dc = np.zeros((batch, h), dtype=dh_out.dtype)
    u = params.u
    for t in range(t_len - 1, -1, -1):
        i = cache.gates[t, :, :h]
        f = cache.gates[t, :, h : 2 * h]
        g = cache.gates[t, :, 2 * h : 3 * h]
        o = cache.gates[t, :, 3 * h :]
        tanh_c = cache.tanh_c[t]
        c_prev = cache.c[t - 1] if t > 0 else np.zeros_like(dc)

        dh = dhp[t] + dh_rec
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        dg = dc * i
        df = dc * c_prev

        dz = dz_seq[t]
        dz[:, :h] = di * i * (1.0 - i)
        dz[:, h : 2 * h] = df * f * (1.0 - f)
        dz[:, 2 * h : 3 * h] = dg * (1.0 - g * g)
        dz[:, 3 * h :] = do * o * (1.0 - o)

        dh_rec = dz @ u
        dc = dc * f

    flat_dz = dz_seq.reshape(t_len * batch, 4 * h)
    d_in = cache.x.shape[2]
    dw = flat_dz.T @ cache.x.reshape(t_len * batch, d_in)
    h_prev = np.concatenate([np.zeros((1, batch, h), dtype=cache.h.dtype), cache.h[:-1]])
    du = flat_dz.T @ h_prev.reshape(t_len * batch, h)
    db = flat_dz.sum(axis=0)
    dx = (flat_dz @ params.w).reshape(t_len, batch, d_in)
    if cache.reverse:
        dx = dx[::-1].copy()
    return dx, LstmGrads(w=dw, u=du, b=db)
