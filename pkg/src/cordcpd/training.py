"""Optimization loop: shuffled minibatches, Adam, validation selection.

Everything is deterministic from (seed, config, dataset): batch order comes
from a per-epoch substream, Gumbel noise from a per-batch substream, and
weight init from the model seed, so two runs with the same inputs produce
byte-identical checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .autodiff import GradTape
from .decoder import DecoderConfig
from .dataio import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig
from .model import Model
from .optim import AdamState, adam_step
from .rng import Rng


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    lr: float = 0.001
    batch_size: int | None = None     # None: 128 for GNN spatial, 32 with transformers
    epochs: int = 50
    lambda_smooth: float | None = None  # None: keep the decoder config value
    seed: int = 0
    patience: int = 10                # epochs without val improvement before stopping
    straight_through: bool = False    # decoder trains on discretized edge samples
    encoder_frozen_epochs: int = 0    # decoder-only epochs before joint training

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.encoder_frozen_epochs < 0:
            raise ValueError("encoder_frozen_epochs must be >= 0")

    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        uses_transformer = "transformer" in (self.encoder.temporal_kind,
                                             self.encoder.spatial_kind)
        return 32 if uses_transformer else 128

    def resolved_decoder(self) -> DecoderConfig:
        if self.lambda_smooth is None:
            return self.decoder
        return replace(self.decoder, lambda_smooth=self.lambda_smooth)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.resolved_batch_size(),
            "epochs": self.epochs,
            "lambda_smooth": self.resolved_decoder().lambda_smooth,
            "seed": self.seed,
            "patience": self.patience,
            "straight_through": self.straight_through,
            "encoder_frozen_epochs": self.encoder_frozen_epochs,
        }


@dataclass
class Checkpoint:
    params: np.ndarray
    epoch: int                 # 1-based epoch the snapshot was taken after
    val_loss: float
    config: dict               # {"model": ..., "train": ...}

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.config, self.epoch, self.val_loss)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, config, meta = load_checkpoint(path)
        return cls(params=params, epoch=int(meta.get("epoch", 0)),
                   val_loss=float(meta.get("val_loss", float("nan"))),
                   config=config)

    def build_model(self) -> Model:
        model = Model.from_config(self.config["model"])
        model.params.load_vector(self.params)
        return model


def train_epoch(model: Model, values: np.ndarray, opt: AdamState, rng: Rng,
                epoch: int, batch_size: int, hard: bool = False,
                grad_mask: np.ndarray | None = None) -> float:
    """One pass over [S,T,N,M] training values; returns the mean batch loss.

    ``grad_mask`` (0/1 per flat parameter) zeroes gradients before the Adam
    step, leaving the masked parameters untouched for the whole epoch.
    """
    count = values.shape[0]
    if count == 0:
        raise ValueError("training split is empty")
    order = rng.substream("shuffle", epoch).permutation(count)
    total = 0.0
    for batch_index, start in enumerate(range(0, count, batch_size)):
        batch = values[order[start:start + batch_size]]
        noise_rng = rng.substream("gumbel", epoch, batch_index)
        try:
            with GradTape() as tape:
                loss, _, _ = model.loss_on_batch(batch, rng=noise_rng, hard=hard)
                grads = tape.gradient(loss, model.params.tensors())
        except FloatingPointError as exc:
            raise RuntimeError(
                f"non-finite loss at epoch {epoch} batch {batch_index}: {exc}"
            ) from exc
        if grad_mask is not None:
            grads = grads * grad_mask
        model.params.load_vector(adam_step(model.params.flatten(), grads, opt))
        total += float(loss.data) * batch.shape[0]
    return total / count


def evaluate_loss(model: Model, values: np.ndarray, batch_size: int) -> float:
    """Deterministic mean loss (soft posterior, no sampling) over a split."""
    count = values.shape[0]
    if count == 0:
        raise ValueError("cannot evaluate an empty split")
    total = 0.0
    for start in range(0, count, batch_size):
        batch = values[start:start + batch_size]
        loss, _, _ = model.loss_on_batch(batch)
        total += float(loss.data) * batch.shape[0]
    return total / count


def fit(train_values: np.ndarray, val_values: np.ndarray, cfg: TrainConfig,
        log: Callable[[dict], None] | None = None) -> Checkpoint:
    """Train with validation-based selection and early stopping.

    Tracks the validation loss after every epoch and returns the checkpoint
    with the lowest one; stops once ``patience`` consecutive epochs fail to
    improve it (patience 0 therefore stops after the first epoch). With an
    empty validation split the training loss doubles as the selection
    signal.

    ``encoder_frozen_epochs`` holds the encoder at its initialization for
    the first k epochs so the decoder learns to exploit edge beliefs before
    they start moving; joint training afterwards then has a gradient that
    distinguishes useful edges from noise instead of saturating the edge
    posterior while the decoder is still random.
    """
    n_vars, n_feats = train_values.shape[2], train_values.shape[3]
    model = Model(cfg.encoder, cfg.resolved_decoder(), n_vars, n_feats,
                  init_seed=cfg.seed)
    config = {"model": model.config_dict(), "train": cfg.to_dict()}
    opt = AdamState(size=model.params.total_size, lr=cfg.lr)
    run_rng = Rng(cfg.seed).substream("train-loop")
    batch_size = cfg.resolved_batch_size()
    decoder_only = None
    if cfg.encoder_frozen_epochs > 0:
        decoder_only = np.concatenate(
            [np.full(t.data.size, 0.0 if name.startswith("enc.") else 1.0)
             for name, t in zip(model.params.names(), model.params.tensors())])

    best: Checkpoint | None = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        started = time.time()
        mask = decoder_only if epoch <= cfg.encoder_frozen_epochs else None
        train_loss = train_epoch(model, train_values, opt, run_rng, epoch,
                                 batch_size, hard=cfg.straight_through,
                                 grad_mask=mask)
        if val_values.shape[0] > 0:
            val_loss = evaluate_loss(model, val_values, batch_size)
        else:
            val_loss = train_loss
        if best is None or val_loss < best.val_loss:
            best = Checkpoint(params=model.params.flatten(), epoch=epoch,
                              val_loss=val_loss, config=config)
            stale = 0
        else:
            stale += 1
        if log is not None:
            log({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                 "best_epoch": best.epoch, "seconds": time.time() - started})
        if stale >= cfg.patience:
            break
    return best


def run_grid(train_values: np.ndarray, val_values: np.ndarray,
             base_cfg: TrainConfig, grid: dict[str, list],
             log: Callable[[dict], None] | None = None) -> list[dict]:
    """Fit every combination of the grid and rank by validation loss.

    Keys address config fields with optional dotted prefixes, e.g.
    "lr", "encoder.hidden_dim", "decoder.lambda_smooth". Returns a list of
    {"overrides", "val_loss", "checkpoint"} sorted best-first.
    """
    import itertools

    keys = list(grid)
    results = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        cfg = replace(base_cfg,
                      encoder=replace(base_cfg.encoder),
                      decoder=replace(base_cfg.decoder))
        for key, value in overrides.items():
            if "." in key:
                owner_name, attr = key.split(".", 1)
                owner = getattr(cfg, owner_name)
                if not hasattr(owner, attr):
                    raise ValueError(f"unknown grid key {key!r}")
                setattr(owner, attr, value)
            else:
                if not hasattr(cfg, key):
                    raise ValueError(f"unknown grid key {key!r}")
                setattr(cfg, key, value)
        checkpoint = fit(train_values, val_values, cfg, log=log)
        results.append({"overrides": overrides, "val_loss": checkpoint.val_loss,
                        "checkpoint": checkpoint})
    results.sort(key=lambda r: r["val_loss"])
    return results
