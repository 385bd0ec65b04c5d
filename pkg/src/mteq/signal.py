"""Transmitter and receiver front end for dual-polarization 16-QAM.

Bit generation, Gray-coded 16-QAM mapping/demapping, root-raised-cosine
pulse shaping, launch-power scaling, and matched filtering with
downsampling.  All filtering is circular (FFT-based on the whole frame)
so the TX->RX chain has zero net delay by construction; frame edges are
handled by the guard-symbol discard in the dataset pipeline.

Gray map (documented, fixed): a symbol consumes 4 bits ``(b0, b1, b2, b3)``.
``(b0, b1)`` select the in-phase rail level and ``(b2, b3)`` the quadrature
rail level through the per-rail Gray code::

    00 -> -3    01 -> -1    11 -> +1    10 -> +3

Levels are scaled by 1/sqrt(10) so the 16 equiprobable points have unit
average power.  ``0000`` therefore maps to ``(-3 - 3j)/sqrt(10)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import DegenerateInput, InvalidLength
from .rng import stream

# Per-rail Gray code: index into _LEVELS by the 2-bit word (b_hi, b_lo).
_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
_WORD_TO_LEVEL_IDX = np.array([0, 1, 3, 2])  # 00,01,10,11 -> -3,-1,+3,+1
_LEVEL_IDX_TO_WORD = np.argsort(_WORD_TO_LEVEL_IDX)
_RAIL_EDGES = np.array([-2.0, 0.0, 2.0]) / np.sqrt(10.0)


def constellation() -> np.ndarray:
    """All 16 canonical points indexed by the 4-bit word b0b1b2b3 (b0 MSB)."""
    words = np.arange(16)
    bits = ((words[:, None] >> np.array([3, 2, 1, 0])) & 1).astype(np.uint8)
    return map_bits_to_16qam(bits.reshape(-1))


def map_bits_to_16qam(bits: np.ndarray) -> np.ndarray:
    """Map a bit sequence (4 bits/symbol) to unit-power 16-QAM points.

    Raises
    ------
    InvalidLength
        If ``len(bits)`` is not divisible by 4.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 4 != 0:
        raise InvalidLength(f"bit count {bits.size} not divisible by 4")
    quads = bits.reshape(-1, 4)
    i_word = (quads[:, 0] << 1) | quads[:, 1]
    q_word = (quads[:, 2] << 1) | quads[:, 3]
    i_level = _LEVELS[_WORD_TO_LEVEL_IDX[i_word]]
    q_level = _LEVELS[_WORD_TO_LEVEL_IDX[q_word]]
    return i_level + 1j * q_level


def demap_16qam_hard(received: np.ndarray) -> np.ndarray:
    """Nearest-neighbour hard decision followed by the inverse Gray map."""
    received = np.asarray(received)
    i_idx = np.digitize(received.real, _RAIL_EDGES)
    q_idx = np.digitize(received.imag, _RAIL_EDGES)
    i_word = _LEVEL_IDX_TO_WORD[i_idx]
    q_word = _LEVEL_IDX_TO_WORD[q_idx]
    bits = np.empty((received.size, 4), dtype=np.uint8)
    bits[:, 0] = i_word >> 1
    bits[:, 1] = i_word & 1
    bits[:, 2] = q_word >> 1
    bits[:, 3] = q_word & 1
    return bits.reshape(-1)


@dataclass
class SymbolFrame:
    """One frame of source bits and mapped symbols for both polarizations."""

    x_symbols: np.ndarray
    y_symbols: np.ndarray
    bits_x: np.ndarray
    bits_y: np.ndarray
    seed: int

    def __post_init__(self):
        n = len(self.x_symbols)
        if not (len(self.y_symbols) == n and len(self.bits_x) == 4 * n and len(self.bits_y) == 4 * n):
            raise InvalidLength("inconsistent frame lengths")


def generate_frame(n_symbols: int, seed: int) -> SymbolFrame:
    """Draw i.i.d. uniform bits and Gray-map them, per polarization.

    Deterministic given ``seed``; the X bits are drawn before the Y bits
    from a single named stream.
    """
    if n_symbols < 1:
        raise InvalidLength(f"n_symbols must be >= 1, got {n_symbols}")
    rng = stream(seed, "frame")
    bits_x = rng.integers(0, 2, size=4 * n_symbols, dtype=np.uint8)
    bits_y = rng.integers(0, 2, size=4 * n_symbols, dtype=np.uint8)
    return SymbolFrame(
        x_symbols=map_bits_to_16qam(bits_x),
        y_symbols=map_bits_to_16qam(bits_y),
        bits_x=bits_x,
        bits_y=bits_y,
        seed=seed,
    )


@dataclass
class PulseShapeConfig:
    """Root-raised-cosine transmit/receive filter settings."""

    rolloff: float = 0.1
    filter_span_symbols: int = 32
    sps_tx: int = 8

    def validate(self) -> None:
        if not (0.0 < self.rolloff <= 1.0):
            raise ValueError(f"rolloff must be in (0, 1], got {self.rolloff}")
        if self.filter_span_symbols < 16 or self.filter_span_symbols % 2 != 0:
            raise ValueError(f"filter_span_symbols must be even and >= 16, got {self.filter_span_symbols}")
        if self.sps_tx < 2:
            raise ValueError(f"sps_tx must be >= 2, got {self.sps_tx}")


@dataclass
class DualPolWaveform:
    """Complex baseband samples for the X and Y polarizations."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float
    symbol_rate: float
    sps: int

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise InvalidLength("polarization sample counts differ")

    def copy(self) -> "DualPolWaveform":
        return DualPolWaveform(self.x.copy(), self.y.copy(), self.sample_rate, self.symbol_rate, self.sps)

    def total_power(self) -> float:
        """Mean instantaneous power of X plus Y, in the waveform's units."""
        px = np.mean(self.x.real**2 + self.x.imag**2)
        py = np.mean(self.y.real**2 + self.y.imag**2)
        return float(px + py)

    def energy(self) -> float:
        ex = np.sum(self.x.real**2 + self.x.imag**2)
        ey = np.sum(self.y.real**2 + self.y.imag**2)
        return float(ex + ey)


def rrc_taps(rolloff: float, span_symbols: int, sps: int) -> np.ndarray:
    """Root-raised-cosine taps on a span of ``span_symbols``, odd length.

    Normalized so that sum(h^2) == sps: shaping a unit-power symbol
    stream then yields a unit-power waveform.
    """
    n_taps = span_symbols * sps + 1
    t = (np.arange(n_taps) - (n_taps - 1) / 2) / sps  # in symbol periods
    beta = rolloff
    h = np.empty(n_taps)

    at_zero = np.isclose(t, 0.0)
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi

    at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta))
    h[at_sing] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )

    rest = ~(at_zero | at_sing)
    tr = t[rest]
    num = np.sin(np.pi * tr * (1.0 - beta)) + 4.0 * beta * tr * np.cos(np.pi * tr * (1.0 + beta))
    den = np.pi * tr * (1.0 - (4.0 * beta * tr) ** 2)
    h[rest] = num / den

    return h * np.sqrt(sps / np.sum(h * h))


def _circular_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-delay circular convolution: taps are centered before the FFT."""
    n = len(x)
    if len(taps) > n:
        raise InvalidLength(f"frame of {n} samples shorter than filter ({len(taps)} taps)")
    kernel = np.zeros(n, dtype=x.dtype)
    half = (len(taps) - 1) // 2
    kernel[: half + 1] = taps[half:]
    kernel[n - half :] = taps[:half]
    return sfft.ifft(sfft.fft(x) * sfft.fft(kernel))


def shape_pulse(frame: SymbolFrame, cfg: PulseShapeConfig, symbol_rate: float) -> DualPolWaveform:
    """Upsample by ``cfg.sps_tx`` and apply the RRC shaping filter.

    Output power per polarization equals that polarization's mean symbol
    power (energy-normalized taps).
    """
    cfg.validate()
    sps = cfg.sps_tx
    taps = rrc_taps(cfg.rolloff, cfg.filter_span_symbols, sps)
    out = []
    for sym in (frame.x_symbols, frame.y_symbols):
        up = np.zeros(len(sym) * sps, dtype=np.complex128)
        up[::sps] = sym
        out.append(_circular_filter(up, taps.astype(np.complex128)))
    return DualPolWaveform(out[0], out[1], sample_rate=symbol_rate * sps, symbol_rate=symbol_rate, sps=sps)


def set_launch_power(w: DualPolWaveform, p_dbm: float) -> DualPolWaveform:
    """Scale both polarizations so total average power is ``p_dbm`` (in watts).

    X/Y power split is preserved.  Raises ``DegenerateInput`` on an
    all-zero waveform.
    """
    p_now = w.total_power()
    if p_now == 0.0:
        raise DegenerateInput("cannot set launch power of an all-zero waveform")
    p_target_w = 10.0 ** ((p_dbm - 30.0) / 10.0)
    g = np.sqrt(p_target_w / p_now)
    return DualPolWaveform(w.x * g, w.y * g, w.sample_rate, w.symbol_rate, w.sps)


def measure_power_dbm(w: DualPolWaveform) -> float:
    """Total average waveform power (X plus Y) in dBm."""
    return 10.0 * np.log10(w.total_power()) + 30.0


def matched_filter_and_downsample(
    w: DualPolWaveform, cfg: PulseShapeConfig, n_symbols: int
) -> tuple[np.ndarray, np.ndarray]:
    """RRC matched filter, then sample at the symbol centers.

    The TX/RX chain is circular and zero-delay, so symbol k lives at
    sample ``k * sps``.  The matched taps carry a 1/sps gain so a
    back-to-back chain returns the transmitted symbols.

    Raises
    ------
    InvalidLength
        If the waveform holds fewer than ``n_symbols`` symbols.
    """
    cfg.validate()
    if w.sps != cfg.sps_tx:
        raise InvalidLength(f"waveform sps {w.sps} != configured sps {cfg.sps_tx}")
    if n_symbols * w.sps > len(w.x):
        raise InvalidLength(f"requested {n_symbols} symbols but waveform holds {len(w.x) // w.sps}")
    taps = rrc_taps(cfg.rolloff, cfg.filter_span_symbols, cfg.sps_tx) / cfg.sps_tx
    taps = taps.astype(np.complex128)
    x = _circular_filter(np.asarray(w.x, dtype=np.complex128), taps)[: n_symbols * w.sps : w.sps]
    y = _circular_filter(np.asarray(w.y, dtype=np.complex128), taps)[: n_symbols * w.sps : w.sps]
    return x, y
