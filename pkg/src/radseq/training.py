"""Balanced-split protocol, momentum SGD and the training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import checkpoint
from . import data as D
from . import kernels as K
from . import sequencer as S
from .errors import UndefinedMetricError, ValidationError
from .metrics import EvalReport, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    per_class_train_count: int = 473
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.per_class_train_count < 0:
            raise ValidationError("per_class_train_count must be non-negative")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(str(e)) from e

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as f:
                d = json.load(f)
        except ValueError as e:
            raise ValidationError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)


@dataclass
class TrainState:
    model: S.SequencerModel
    velocity: dict[str, np.ndarray]
    epoch: int = 0
    step: int = 0
    running_loss: float = 0.0

    @classmethod
    def start(cls, model: S.SequencerModel) -> "TrainState":
        return cls(model, {k: np.zeros_like(v) for k, v in model.params.items()})


def balanced_split(
    manifest: D.DatasetManifest, n_per_class: int, seed: int
) -> tuple[D.DatasetManifest, D.DatasetManifest]:
    """Draw exactly ``n_per_class`` records of each class (without replacement) for
    training; everything else is the test split. Both keep manifest order."""
    if n_per_class < 0:
        raise ValidationError("n_per_class must be non-negative")
    rng = np.random.default_rng(seed)
    labels = manifest.labels
    chosen = []
    for k, name in sorted(D.LABEL_NAMES.items()):
        idx = np.flatnonzero(labels == k)
        if len(idx) < n_per_class:
            raise ValidationError(f"class {name!r} has {len(idx)} records, need {n_per_class}")
        chosen.append(rng.choice(idx, n_per_class, replace=False))
    in_train = np.zeros(len(manifest), dtype=bool)
    in_train[np.concatenate(chosen).astype(np.intp)] = True
    return manifest.subset(np.flatnonzero(in_train)), manifest.subset(np.flatnonzero(~in_train))


def sgd_step(state: TrainState, grads: dict[str, np.ndarray], config: TrainConfig) -> TrainState:
    """velocity <- momentum * velocity - lr * (grad + weight_decay * param); param += velocity.

    The new parameter dict is built completely and then swapped in, so anyone
    holding the old dict keeps a consistent snapshot.
    """
    model = state.model
    if grads.keys() != model.params.keys():
        raise ValidationError("gradient names do not match the model parameters")
    params, velocity = {}, {}
    for name, p in model.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient {name} has shape {g.shape}, parameter {p.shape}")
        dt = p.dtype.type
        step = g + dt(config.weight_decay) * p if config.weight_decay else g
        v = dt(config.momentum) * state.velocity[name] - dt(config.learning_rate) * step
        velocity[name] = v.astype(p.dtype, copy=False)
        params[name] = (p + velocity[name]).astype(p.dtype, copy=False)
    model.params = params
    model.version += 1
    state.velocity = velocity
    state.step += 1
    return state


def train_step(state: TrainState, x: np.ndarray, y: np.ndarray, config: TrainConfig) -> float:
    """One forward / loss / backward / update on a mini-batch; returns the batch loss."""
    res = S.forward(state.model, x)
    loss, g = K.softmax_cross_entropy(res.cache.logits, y)
    grads = S.backward(state.model, res.cache, g)
    sgd_step(state, grads, config)
    return loss


@dataclass
class TrainResult:
    model: S.SequencerModel
    stats: D.NormalizationStats
    train_split: D.DatasetManifest
    test_split: D.DatasetManifest
    log: list[dict] = field(default_factory=list)
    reports: list[EvalReport | None] = field(default_factory=list)

    @property
    def step_losses(self) -> list[float]:
        return [r["loss"] for r in self.log if "sensitivity" not in r]


def checkpoint_extra(stats: D.NormalizationStats, config: TrainConfig) -> dict:
    return {
        "normalization": stats.to_dict(),
        "split": {"per_class": config.per_class_train_count, "seed": config.seed},
    }


def train(
    manifest: D.DatasetManifest,
    spec: S.SequencerSpec,
    head: S.HeadSpec,
    config: TrainConfig,
    checkpoint_path=None,
    log_stream: IO[str] | None = None,
) -> TrainResult:
    """Split, train with shuffled mini-batches, evaluate on the test split after
    every epoch and (optionally) write the final checkpoint.

    Log records are ``{"step", "epoch", "loss"}`` per step and, at the end of
    each epoch, ``{"step", "epoch", "loss", "sensitivity", "specificity"}`` with
    the epoch's mean loss.
    """
    train_m, test_m = balanced_split(manifest, config.per_class_train_count, config.seed)
    _, h, w = spec.input_shape
    x = D.load_images(train_m, h, w)
    stats = D.compute_stats(x) if len(train_m) else D.IDENTITY_STATS
    x = D.normalize(x, stats)
    y = train_m.labels

    model = S.build(spec, head, config.seed)
    state = TrainState.start(model)
    result = TrainResult(model, stats, train_m, test_m)

    def emit(rec):
        result.log.append(rec)
        if log_stream is not None:
            log_stream.write(json.dumps(rec) + "\n")
            log_stream.flush()

    for epoch in range(config.epochs):
        state.epoch = epoch
        order = np.random.default_rng(config.seed + epoch).permutation(len(x))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = train_step(state, x[idx], y[idx], config)
            losses.append(loss)
            emit({"step": state.step, "epoch": epoch, "loss": loss})
        state.running_loss = float(np.mean(losses)) if losses else 0.0
        report = None
        if len(test_m):
            try:
                report = evaluate(state.model, test_m, stats, split="test")
            except UndefinedMetricError:
                log.warning("test split lacks a class; metrics undefined for epoch %d", epoch)
        result.reports.append(report)
        emit(
            {
                "step": state.step,
                "epoch": epoch,
                "loss": state.running_loss,
                "sensitivity": report.sensitivity if report else None,
                "specificity": report.specificity if report else None,
            }
        )

    result.model = state.model
    if checkpoint_path is not None:
        checkpoint.save(state.model, checkpoint_path, checkpoint_extra(stats, config))
    return result
