"""Scenario sampling, end-to-end data generation, and windowed datasets.

One *scenario* is a (launch power, symbol rate, span count) triple plus a
seed.  The five sampling regimes either fix all three axes, vary one, or
vary all of them on coarse grids.  Epoch datasets are built from
independent sub-frames (one scenario each), run through the full
TX -> fiber -> DSP chain, cut into stride-1 sliding windows of received
symbols, pooled, and shuffled with a recorded permutation seed so every
example's scenario stays recoverable from the file alone.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .channel import FiberParams, SsfmConfig, amplifier_for_span, propagate_link
from .dsp import CdcConfig, NormalizationRecord, cdc, normalize_symbols
from .errors import FormatError, InvalidLength
from .rng import derive_seed, stream
from .signal import (
    PulseShapeConfig,
    generate_frame,
    matched_filter_and_downsample,
    set_launch_power,
    shape_pulse,
)

WINDOW_DEFAULT = 141
EPOCH_SIZE_DEFAULT = 2**18
SUBFRAME_SYMBOLS_DEFAULT = 2**14

DATASET_MAGIC = b"MTEQ"
DATASET_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    """One transmission configuration."""

    p_dbm: float
    rs_gbd: float
    n_spans: int
    seed: int


class SamplerMode(str, Enum):
    STL_FIXED = "stl_fixed"
    MTL_SPANS = "mtl_spans"
    MTL_POWER = "mtl_power"
    MTL_RATE = "mtl_rate"
    UNIVERSAL = "universal"


# Only the power-varying regime feeds the launch power to the network as an
# extra input feature (normalized; constant across a window).
POWER_FEATURE_MODES = frozenset({SamplerMode.MTL_POWER})


def normalized_power(p_dbm: float) -> float:
    """Affine map sending the [-1, 5] dBm range onto [-1, +1]."""
    return (p_dbm - 2.0) / 3.0


def n_input_features(mode: SamplerMode) -> int:
    return 5 if mode in POWER_FEATURE_MODES else 4


@dataclass
class SamplerConfig:
    """Sampling regime plus fixed values and grids for the three axes."""

    mode: SamplerMode = SamplerMode.STL_FIXED
    fixed_p_dbm: float = 5.0
    fixed_rs_gbd: float = 40.0
    fixed_n_spans: int = 50
    span_grid: tuple[int, ...] = tuple(range(10, 51, 5))
    power_grid: tuple[float, ...] = tuple(float(p) for p in range(-1, 6))
    rate_grid: tuple[float, ...] = tuple(float(r) for r in range(30, 71, 5))

    def validate(self) -> None:
        if not isinstance(self.mode, SamplerMode):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        for name in ("span_grid", "power_grid", "rate_grid"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must not be empty")


def sample_scenario(cfg: SamplerConfig, rng: np.random.Generator, seed: int) -> Scenario:
    """Draw one scenario for the configured regime (axes drawn spans, power, rate)."""
    cfg.validate()
    p, rs, ns = cfg.fixed_p_dbm, cfg.fixed_rs_gbd, cfg.fixed_n_spans
    mode = cfg.mode
    if mode in (SamplerMode.MTL_SPANS, SamplerMode.UNIVERSAL):
        ns = int(cfg.span_grid[rng.integers(len(cfg.span_grid))])
    if mode in (SamplerMode.MTL_POWER, SamplerMode.UNIVERSAL):
        p = float(cfg.power_grid[rng.integers(len(cfg.power_grid))])
    if mode in (SamplerMode.MTL_RATE, SamplerMode.UNIVERSAL):
        rs = float(cfg.rate_grid[rng.integers(len(cfg.rate_grid))])
    return Scenario(p_dbm=p, rs_gbd=rs, n_spans=ns, seed=seed)


@dataclass
class SimulationConfig:
    """Physical-layer configuration shared by all scenarios of an experiment."""

    fiber: FiberParams = field(default_factory=FiberParams)
    noise_figure_db: float = 4.5
    ssfm: SsfmConfig = field(default_factory=SsfmConfig)
    pulse: PulseShapeConfig = field(default_factory=PulseShapeConfig)

    def validate(self) -> None:
        self.fiber.validate()
        self.ssfm.validate()
        self.pulse.validate()
        if self.noise_figure_db < 3.0:
            raise ValueError(f"noise_figure_db must be >= 3.0, got {self.noise_figure_db}")


def guard_symbols(sim: SimulationConfig, scenario: Scenario) -> int:
    """Symbols to discard at each frame edge: filter span + CD memory."""
    rs = scenario.rs_gbd * 1e9
    length_m = sim.fiber.total_length_m(scenario.n_spans)
    b_occupied = (1.0 + sim.pulse.rolloff) * rs
    spread_s = abs(sim.fiber.beta2()) * length_m * 2.0 * np.pi * b_occupied
    return sim.pulse.filter_span_symbols + int(np.ceil(spread_s * rs)) + 8


@dataclass
class ScenarioData:
    """Aligned received/transmitted symbol sequences for one sub-frame."""

    scenario: Scenario
    rx_x: np.ndarray
    rx_y: np.ndarray
    tx_x: np.ndarray
    tx_y: np.ndarray
    normalization: NormalizationRecord
    guard: int


def generate_scenario_data(
    scenario: Scenario,
    n_symbols: int,
    sim: SimulationConfig,
    channel_kind: str = "fiber",
) -> ScenarioData:
    """Run the TX -> channel -> DSP pipeline for one scenario.

    ``channel_kind`` selects the full nonlinear+ASE channel ("fiber"), a
    gamma=0 noise-free link ("linear", debug), or a direct passthrough
    ("identity", alignment self-test).  Guard symbols (filter span + CD
    memory) are discarded at both edges; rx and tx are aligned
    index-by-index.
    """
    sim.validate()
    frame = generate_frame(n_symbols, scenario.seed)
    if channel_kind == "identity":
        record = NormalizationRecord(1.0, 1.0, 0.0, 0.0)
        return ScenarioData(
            scenario, frame.x_symbols, frame.y_symbols, frame.x_symbols, frame.y_symbols, record, 0
        )
    if channel_kind == "linear":
        fiber = replace(sim.fiber, gamma_per_w_km=0.0)
        ase = False
    elif channel_kind == "fiber":
        fiber = sim.fiber
        ase = True
    else:
        raise ValueError(f"unknown channel_kind {channel_kind!r}")

    rs_hz = scenario.rs_gbd * 1e9
    wave = shape_pulse(frame, sim.pulse, rs_hz)
    wave = set_launch_power(wave, scenario.p_dbm)
    amp = amplifier_for_span(fiber, sim.noise_figure_db)
    wave = propagate_link(
        wave, scenario.n_spans, fiber, amp, sim.ssfm, seed=derive_seed(scenario.seed, "link"), ase=ase
    )
    wave = cdc(wave, CdcConfig(total_length_m=fiber.total_length_m(scenario.n_spans), beta2=fiber.beta2()))
    rx_x, rx_y = matched_filter_and_downsample(wave, sim.pulse, n_symbols)
    rx_x, rx_y, record = normalize_symbols(rx_x, rx_y, frame.x_symbols, frame.y_symbols)

    guard = guard_symbols(sim, scenario)
    if n_symbols - 2 * guard < 1:
        raise InvalidLength(
            f"frame of {n_symbols} symbols leaves nothing after 2x{guard} guard symbols"
        )
    keep = slice(guard, n_symbols - guard)
    return ScenarioData(
        scenario, rx_x[keep], rx_y[keep], frame.x_symbols[keep], frame.y_symbols[keep], record, guard
    )


def build_windows(
    rx_x: np.ndarray,
    rx_y: np.ndarray,
    tx_x: np.ndarray,
    window: int = WINDOW_DEFAULT,
    p_norm: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 sliding windows with the center transmitted X symbol as target.

    Feature columns are (X_I, X_Q, Y_I, Y_Q[, P_norm]); the power column,
    when present, is constant across the window.  Returns float32 arrays
    of shape (n, window, n_features) and (n, 2).
    """
    n = len(rx_x)
    if len(tx_x) != n or len(rx_y) != n:
        raise InvalidLength("rx/tx length mismatch")
    if n < window:
        raise InvalidLength(f"{n} symbols cannot fill a {window}-symbol window")
    n_win = n - window + 1
    n_feat = 4 if p_norm is None else 5
    sw = np.lib.stride_tricks.sliding_window_view
    feats = np.empty((n_win, window, n_feat), dtype=np.float32)
    feats[:, :, 0] = sw(np.asarray(rx_x).real, window)
    feats[:, :, 1] = sw(np.asarray(rx_x).imag, window)
    feats[:, :, 2] = sw(np.asarray(rx_y).real, window)
    feats[:, :, 3] = sw(np.asarray(rx_y).imag, window)
    if p_norm is not None:
        feats[:, :, 4] = np.float32(p_norm)
    center = window // 2
    targets = np.empty((n_win, 2), dtype=np.float32)
    targets[:, 0] = np.asarray(tx_x).real[center : center + n_win]
    targets[:, 1] = np.asarray(tx_x).imag[center : center + n_win]
    return feats, targets


@dataclass
class SubframeRecord:
    """Provenance of one generated sub-frame."""

    scenario: Scenario
    n_windows: int
    normalization: NormalizationRecord


@dataclass
class EpochDataset:
    """Shuffled windowed examples plus full generation provenance."""

    features: np.ndarray  # (n, window, n_features) float32
    targets: np.ndarray  # (n, 2) float32
    window: int
    power_feature: bool
    subframes: list[SubframeRecord]
    shuffle_seed: int
    master_seed: int
    epoch_index: int
    config_hash: str

    def __len__(self) -> int:
        return len(self.features)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()

    def scenario_digest(self) -> str:
        blob = json.dumps(
            [[s.scenario.p_dbm, s.scenario.rs_gbd, s.scenario.n_spans, s.scenario.seed] for s in self.subframes]
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _permutation(self) -> np.ndarray:
        pool = sum(s.n_windows for s in self.subframes)
        return stream(self.shuffle_seed, "epoch-shuffle").permutation(pool)

    def scenario_of(self, i: int) -> Scenario:
        """Recover the scenario of example ``i`` from provenance alone."""
        src = self._permutation()[i]
        bounds = np.cumsum([s.n_windows for s in self.subframes])
        return self.subframes[int(np.searchsorted(bounds, src, side="right"))].scenario


def _subframe_task(args) -> tuple[np.ndarray, np.ndarray, SubframeRecord]:
    scenario, n_symbols, sim, window, p_norm = args
    data = generate_scenario_data(scenario, n_symbols, sim)
    feats, targets = build_windows(data.rx_x, data.rx_y, data.tx_x, window, p_norm)
    return feats, targets, SubframeRecord(scenario, len(feats), data.normalization)


def generate_epoch(
    sampler: SamplerConfig,
    epoch_size: int,
    epoch_index: int,
    master_seed: int,
    sim: SimulationConfig,
    window: int = WINDOW_DEFAULT,
    subframe_symbols: int = SUBFRAME_SYMBOLS_DEFAULT,
    threads: int = 1,
) -> EpochDataset:
    """Generate one training epoch of ``epoch_size`` pooled, shuffled windows.

    Every sub-frame draws a fresh scenario (seeded from ``master_seed`` and
    ``epoch_index``), so no two epochs share data.  Sub-frames are sealed
    tasks merged by index: the result is independent of ``threads``.
    """
    if epoch_size < 1:
        raise ValueError(f"epoch_size must be >= 1, got {epoch_size}")
    sampler.validate()
    power_feature = sampler.mode in POWER_FEATURE_MODES

    tasks = []
    total = 0
    i = 0
    while total < epoch_size:
        seed = derive_seed(master_seed, "dataset", epoch_index, i)
        scenario = sample_scenario(sampler, stream(master_seed, "scenario", epoch_index, i), seed)
        p_norm = normalized_power(scenario.p_dbm) if power_feature else None
        tasks.append((scenario, subframe_symbols, sim, window, p_norm))
        usable = subframe_symbols - 2 * guard_symbols(sim, scenario)
        if usable < window:
            raise InvalidLength(
                f"subframe_symbols={subframe_symbols} too small for guards at {scenario.n_spans} spans"
            )
        total += usable - window + 1
        i += 1

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_subframe_task, tasks))
    else:
        results = [_subframe_task(t) for t in tasks]

    feats = np.concatenate([r[0] for r in results])
    targets = np.concatenate([r[1] for r in results])
    records = [r[2] for r in results]

    shuffle_seed = derive_seed(master_seed, "dataset-shuffle", epoch_index)
    perm = stream(shuffle_seed, "epoch-shuffle").permutation(len(feats))[:epoch_size]
    return EpochDataset(
        features=feats[perm],
        targets=targets[perm],
        window=window,
        power_feature=power_feature,
        subframes=records,
        shuffle_seed=shuffle_seed,
        master_seed=master_seed,
        epoch_index=epoch_index,
        config_hash="",
    )


def save_dataset(ds: EpochDataset, path: str) -> None:
    """Serialize to the binary container (magic, version, JSON header, f32 payload, CRC)."""
    header = {
        "window": ds.window,
        "n_features": int(ds.features.shape[2]),
        "n_examples": len(ds),
        "power_feature": ds.power_feature,
        "p_norm_map": "(p_dbm - 2) / 3",
        "normalization_policy": "per-polarization scale, data-aided common phase",
        "master_seed": ds.master_seed,
        "epoch_index": ds.epoch_index,
        "shuffle_seed": ds.shuffle_seed,
        "config_hash": ds.config_hash,
        "subframes": [
            {
                "p_dbm": s.scenario.p_dbm,
                "rs_gbd": s.scenario.rs_gbd,
                "n_spans": s.scenario.n_spans,
                "seed": s.scenario.seed,
                "n_windows": s.n_windows,
                "normalization": {
                    "scale_x": s.normalization.scale_x,
                    "scale_y": s.normalization.scale_y,
                    "phase_x_rad": s.normalization.phase_x_rad,
                    "phase_y_rad": s.normalization.phase_y_rad,
                },
            }
            for s in ds.subframes
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = (
        np.ascontiguousarray(ds.features, dtype="<f4").tobytes()
        + np.ascontiguousarray(ds.targets, dtype="<f4").tobytes()
    )
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<HI", DATASET_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def load_dataset(path: str) -> EpochDataset:
    """Inverse of :func:`save_dataset`; raises ``FormatError`` on any corruption."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 10 or blob[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version > DATASET_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (supported <= {DATASET_VERSION})")
    off = 10
    try:
        header = json.loads(blob[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    off += header_len
    n = header["n_examples"]
    window = header["window"]
    n_feat = header["n_features"]
    feat_bytes = n * window * n_feat * 4
    tgt_bytes = n * 2 * 4
    if len(blob) != off + feat_bytes + tgt_bytes + 4:
        raise FormatError(f"{path}: truncated payload")
    payload = blob[off : off + feat_bytes + tgt_bytes]
    (crc,) = struct.unpack_from("<I", blob, off + feat_bytes + tgt_bytes)
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: payload CRC mismatch")
    feats = np.frombuffer(payload[:feat_bytes], dtype="<f4").reshape(n, window, n_feat).copy()
    targets = np.frombuffer(payload[feat_bytes:], dtype="<f4").reshape(n, 2).copy()
    subframes = [
        SubframeRecord(
            Scenario(s["p_dbm"], s["rs_gbd"], s["n_spans"], s["seed"]),
            s["n_windows"],
            NormalizationRecord(
                s["normalization"]["scale_x"],
                s["normalization"]["scale_y"],
                s["normalization"]["phase_x_rad"],
                s["normalization"]["phase_y_rad"],
            ),
        )
        for s in header["subframes"]
    ]
    return EpochDataset(
        features=feats,
        targets=targets,
        window=window,
        power_feature=header["power_feature"],
        subframes=subframes,
        shuffle_seed=header["shuffle_seed"],
        master_seed=header["master_seed"],
        epoch_index=header["epoch_index"],
        config_hash=header["config_hash"],
    )
