"""Experiment configuration: one JSON tree drives every command.

The file maps 1:1 onto the dataclass tree below.  Validation walks the
tree and reports the dotted path of the offending field.  Every seed is
explicit; nothing defaults to wall-clock time.  ``desk_scale`` shrinks
the experiment to laptop scale: a miniature model/schedule, short links
with proportionally stronger nonlinearity (so 2-10 span links exercise
the same distortion regime as the full 10-50 span setup), and
single-precision field propagation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .channel import FiberParams, SsfmConfig
from .dataset import SamplerConfig, SamplerMode, SimulationConfig, n_input_features
from .errors import ConfigError
from .nn.model import ModelConfig
from .nn.train import TrainConfig
from .signal import PulseShapeConfig


@dataclass
class EvalConfig:
    n_symbols: int = 100_000
    floor: int = 10_000
    seed: int = 7_001
    subframe_symbols: int = 2**14

    def validate(self) -> None:
        if self.floor < 1 or self.n_symbols < self.floor:
            raise ValueError(f"n_symbols must be >= floor >= 1, got {self.n_symbols}/{self.floor}")


@dataclass
class ScenarioRanges:
    """Allowed scenario parameter ranges; sweeps and samplers must stay inside."""

    p_dbm: tuple[float, float] = (-1.0, 5.0)
    rs_gbd: tuple[float, float] = (30.0, 70.0)
    n_spans: tuple[int, int] = (10, 50)

    def check(self, prefix: str, p_dbm: float, rs_gbd: float, n_spans: int) -> None:
        if not self.p_dbm[0] <= p_dbm <= self.p_dbm[1]:
            raise ConfigError(f"{prefix}.p_dbm: {p_dbm} outside {list(self.p_dbm)}")
        if not self.rs_gbd[0] <= rs_gbd <= self.rs_gbd[1]:
            raise ConfigError(f"{prefix}.rs_gbd: {rs_gbd} outside {list(self.rs_gbd)}")
        if not self.n_spans[0] <= n_spans <= self.n_spans[1]:
            raise ConfigError(f"{prefix}.n_spans: {n_spans} outside {list(self.n_spans)}")


@dataclass
class ExperimentConfig:
    fiber: FiberParams = field(default_factory=FiberParams)
    noise_figure_db: float = 4.5
    ssfm: SsfmConfig = field(default_factory=SsfmConfig)
    pulse: PulseShapeConfig = field(default_factory=PulseShapeConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ranges: ScenarioRanges = field(default_factory=ScenarioRanges)
    output_dir: str = "runs/default"
    threads: int = 1

    def sim(self) -> SimulationConfig:
        return SimulationConfig(
            fiber=self.fiber, noise_figure_db=self.noise_figure_db, ssfm=self.ssfm, pulse=self.pulse
        )

    def validate(self) -> None:
        for name, obj in (
            ("fiber", self.fiber),
            ("ssfm", self.ssfm),
            ("pulse", self.pulse),
            ("sampler", self.sampler),
            ("model", self.model),
            ("training", self.training),
            ("eval", self.eval),
        ):
            try:
                obj.validate()
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        if self.noise_figure_db < 3.0:
            raise ConfigError(f"noise_figure_db: {self.noise_figure_db} below the 3.0 dB quantum limit")
        if self.threads < 1:
            raise ConfigError(f"threads: must be >= 1, got {self.threads}")

        s = self.sampler
        self.ranges.check("sampler.fixed", s.fixed_p_dbm, s.fixed_rs_gbd, s.fixed_n_spans)
        for v in s.span_grid:
            self.ranges.check("sampler.span_grid", s.fixed_p_dbm, s.fixed_rs_gbd, v)
        for v in s.power_grid:
            self.ranges.check("sampler.power_grid", v, s.fixed_rs_gbd, s.fixed_n_spans)
        for v in s.rate_grid:
            self.ranges.check("sampler.rate_grid", s.fixed_p_dbm, v, s.fixed_n_spans)

        want = n_input_features(s.mode)
        if self.model.input_features != want:
            raise ConfigError(
                f"model.input_features: {self.model.input_features} but sampler mode "
                f"{s.mode.value} requires {want}"
            )
        if self.model.window > self.training.subframe_symbols:
            raise ConfigError("training.subframe_symbols: smaller than the model window")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampler"]["mode"] = self.sampler.mode.value
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, data: dict, path: str, extra: dict | None = None):
    fields = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}")
    kwargs = dict(data)
    if extra:
        kwargs.update(extra)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config from a parsed JSON tree."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    known = {
        "fiber",
        "noise_figure_db",
        "ssfm",
        "pulse",
        "sampler",
        "model",
        "training",
        "eval",
        "ranges",
        "output_dir",
        "threads",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown section(s) {sorted(unknown)}")

    sampler_raw = dict(data.get("sampler", {}))
    mode_extra = {}
    if "mode" in sampler_raw:
        try:
            mode_extra["mode"] = SamplerMode(sampler_raw.pop("mode"))
        except ValueError as exc:
            raise ConfigError(f"sampler.mode: {exc}") from exc
    if mode_extra.get("mode", SamplerMode.STL_FIXED) == SamplerMode.STL_FIXED:
        supplied_grids = {k for k in ("span_grid", "power_grid", "rate_grid") if k in sampler_raw}
        if supplied_grids:
            raise ConfigError(
                f"sampler: mode stl_fixed varies no axis but grid(s) {sorted(supplied_grids)} supplied"
            )
    for key in ("span_grid", "power_grid", "rate_grid"):
        if key in sampler_raw:
            sampler_raw[key] = tuple(sampler_raw[key])

    ranges_raw = dict(data.get("ranges", {}))
    for key in ("p_dbm", "rs_gbd", "n_spans"):
        if key in ranges_raw:
            ranges_raw[key] = tuple(ranges_raw[key])

    cfg = ExperimentConfig(
        fiber=_build(FiberParams, data.get("fiber", {}), "fiber"),
        noise_figure_db=data.get("noise_figure_db", 4.5),
        ssfm=_build(SsfmConfig, data.get("ssfm", {}), "ssfm"),
        pulse=_build(PulseShapeConfig, data.get("pulse", {}), "pulse"),
        sampler=_build(SamplerConfig, sampler_raw, "sampler", mode_extra),
        model=_build(ModelConfig, data.get("model", {}), "model"),
        training=_build(TrainConfig, data.get("training", {}), "training"),
        eval=_build(EvalConfig, data.get("eval", {}), "eval"),
        ranges=_build(ScenarioRanges, ranges_raw, "ranges"),
        output_dir=data.get("output_dir", "runs/default"),
        threads=data.get("threads", 1),
    )
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def desk_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Shrink an experiment to desk scale (used by the acceptance suite).

    Window 41, 2x16 biLSTM, 2^13-example epochs for 30 epochs over short
    2-10 span links.  The fiber nonlinearity is scaled up 20x so those
    short links reach the distortion levels of the full-scale 10-50 span
    setup (the desk channel stays dominated by deterministic, learnable
    distortion), and the small model trains on a hotter schedule
    (lr 3e-3, batch 64) to converge within the 30-epoch budget.
    """
    return replace(
        cfg,
        fiber=replace(cfg.fiber, gamma_per_w_km=cfg.fiber.gamma_per_w_km * 20.0),
        ssfm=replace(cfg.ssfm, max_nonlinear_phase_rad=0.02, dtype="c64"),
        model=replace(cfg.model, window=41, hidden=16, n_layers=2),
        training=replace(
            cfg.training,
            epochs=30,
            epoch_size=2**13,
            batch_size=64,
            learning_rate=3e-3,
            subframe_symbols=2**12,
            microbatch=0,
        ),
        sampler=replace(
            cfg.sampler,
            fixed_p_dbm=0.0,
            fixed_rs_gbd=40.0,
            fixed_n_spans=6,
            span_grid=(2, 4, 6, 8, 10),
        ),
        eval=replace(cfg.eval, n_symbols=20_000, subframe_symbols=2**12),
        ranges=replace(cfg.ranges, n_spans=(1, 50)),
    )
