"""Training loop: fresh data every epoch, minibatch Adam, checkpoints.

Each epoch regenerates its dataset from (master_seed, epoch index), so a
run is fully deterministic and can resume from the last checkpoint
without replaying earlier epochs.  The final partial batch of an epoch
is dropped (keeps batch statistics uniform; with the full-scale recipe
of 2^18 examples and batch 2000 this yields 131 batches per epoch).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

from ..dataset import (
    SUBFRAME_SYMBOLS_DEFAULT,
    SamplerConfig,
    SimulationConfig,
    generate_epoch,
    n_input_features,
)
from ..errors import ConfigError
from ..rng import derive_seed
from .adam import AdamConfig, AdamState, adam_step
from .model import EqualizerModel, ModelConfig
from .serialize import load_model, save_model


@dataclass
class TrainConfig:
    """Schedule and bookkeeping for one training run."""

    epochs: int = 1000
    epoch_size: int = 2**18
    batch_size: int = 2000
    learning_rate: float = 1e-3
    master_seed: int = 1
    subframe_symbols: int = SUBFRAME_SYMBOLS_DEFAULT
    microbatch: int = 256
    threads: int = 1
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints

    def validate(self) -> None:
        if self.epochs < 1 or self.epoch_size < 1 or self.batch_size < 1:
            raise ValueError("epochs, epoch_size and batch_size must be positive")
        if self.batch_size > self.epoch_size:
            raise ValueError("batch_size cannot exceed epoch_size")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    n_batches: int
    wall_time_s: float
    scenario_digest: str


@dataclass
class TrainResult:
    model: EqualizerModel
    adam: AdamState
    history: list[EpochStats] = field(default_factory=list)


def batches_per_epoch(epoch_size: int, batch_size: int) -> int:
    """Drop-remainder policy: floor(epoch_size / batch_size)."""
    return epoch_size // batch_size


def _checkpoint_path(out_dir: str, epoch: int) -> str:
    return os.path.join(out_dir, f"checkpoint_epoch{epoch:05d}.mteqm")


def _find_resume(out_dir: str, model_cfg: ModelConfig, epochs: int):
    """Latest usable checkpoint in ``out_dir``, or None."""
    if not out_dir or not os.path.isdir(out_dir):
        return None
    best = None
    for name in os.listdir(out_dir):
        if name.startswith("checkpoint_epoch") and name.endswith(".mteqm"):
            epoch = int(name[len("checkpoint_epoch") : -len(".mteqm")])
            if epoch < epochs and (best is None or epoch > best[0]):
                best = (epoch, os.path.join(out_dir, name))
    if best is None:
        return None
    model, adam, adam_cfg, prov = load_model(best[1])
    for key, want in (
        ("n_layers", model_cfg.n_layers),
        ("hidden", model_cfg.hidden),
        ("input_features", model_cfg.input_features),
        ("window", model_cfg.window),
        ("output_dim", model_cfg.output_dim),
    ):
        if getattr(model.config, key) != want:
            raise ConfigError(f"checkpoint {best[1]} config mismatch on {key}")
    return best[0], model, adam, adam_cfg, prov


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sampler: SamplerConfig,
    sim: SimulationConfig,
    out_dir: str | None = None,
    progress=None,
    provenance: dict | None = None,
) -> TrainResult:
    """Train an equalizer in the configured sampling regime.

    Deterministic given (configs, master_seed).  ``progress`` is an
    optional callable receiving one line per epoch; ``provenance`` is
    merged into every checkpoint header.
    """
    model_cfg.validate()
    train_cfg.validate()
    sampler.validate()
    expected_features = n_input_features(sampler.mode)
    if model_cfg.input_features != expected_features:
        raise ConfigError(
            f"model.input_features={model_cfg.input_features} but sampler mode "
            f"{sampler.mode.value} requires {expected_features}"
        )

    adam_cfg = AdamConfig(lr=train_cfg.learning_rate)
    start_epoch = 0
    resume = _find_resume(out_dir, model_cfg, train_cfg.epochs) if out_dir else None
    if resume is not None:
        start_epoch, model, adam, saved_adam_cfg, _ = resume
        if saved_adam_cfg is not None:
            adam_cfg = saved_adam_cfg
    else:
        model = EqualizerModel.init(model_cfg, seed=derive_seed(train_cfg.master_seed, "model-init"))
        adam = AdamState.zeros_like(model.parameters())

    params = model.parameters()
    history: list[EpochStats] = []
    n_batches = batches_per_epoch(train_cfg.epoch_size, train_cfg.batch_size)
    for epoch in range(start_epoch, train_cfg.epochs):
        t0 = time.perf_counter()
        ds = generate_epoch(
            sampler,
            train_cfg.epoch_size,
            epoch_index=epoch,
            master_seed=train_cfg.master_seed,
            sim=sim,
            window=model_cfg.window,
            subframe_symbols=train_cfg.subframe_symbols,
            threads=train_cfg.threads,
        )
        loss_sum = 0.0
        for b in range(n_batches):
            lo = b * train_cfg.batch_size
            hi = lo + train_cfg.batch_size
            loss, grads = model.loss_and_grads(
                ds.features[lo:hi], ds.targets[lo:hi], microbatch=train_cfg.microbatch
            )
            adam_step(params, grads, adam, adam_cfg)
            loss_sum += loss
        stats = EpochStats(
            epoch=epoch,
            loss=loss_sum / n_batches,
            n_batches=n_batches,
            wall_time_s=time.perf_counter() - t0,
            scenario_digest=ds.scenario_digest(),
        )
        history.append(stats)
        if progress is not None:
            progress(
                f"epoch {epoch + 1}/{train_cfg.epochs} loss={stats.loss:.6g} "
                f"batches={n_batches} wall={stats.wall_time_s:.1f}s"
            )
        if out_dir and train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0:
            save_model(
                _checkpoint_path(out_dir, epoch + 1),
                model,
                adam,
                adam_cfg,
                provenance={
                    **(provenance or {}),
                    "mode": sampler.mode.value,
                    "epochs_completed": epoch + 1,
                },
            )
    return TrainResult(model=model, adam=adam, history=history)
