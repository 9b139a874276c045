"""Two-stage training (contrastive encoder, then linear classifier), evaluation and run reports."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data.series import WindowSet, augment_pairs
from .errors import ConfigError, DataError, NonFiniteError, StateError
from .losses import cross_entropy_loss, supervised_contrastive_loss
from .model import SCCAM, classifier_logits, encoder_forward
from .rng import stream
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

REPORT_FORMAT = "sccam-report"
REPORT_VERSION = 1

# stream keys: one namespace per random consumer so they never share draws
_SHUFFLE1, _AUGMENT, _SHUFFLE2 = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32          # originals per batch; the contrastive batch is twice this
    epochs_stage1: int = 100
    epochs_stage2: int = 50
    lr_stage1: float = 0.001      # the contrastive loss is summed over anchors, so steps scale with 2B
    lr_stage2: float = 0.1
    momentum: float = 0.9
    temperature: float = 0.5
    noise_scale: float = 1.0
    seed: int = 0
    freeze_encoder: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {self.batch_size}")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.lr_stage1 < 0 or self.lr_stage2 < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.noise_scale < 0:
            raise ConfigError(f"noise scale must be >= 0, got {self.noise_scale}")

    def to_dict(self) -> dict:
        return asdict(self)


class SGDMomentum:
    """Heavy-ball SGD: ``v <- mu v + g``, ``p <- p - lr v``; no weight decay."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        for k, p in self.params.items():
            v = self.velocity[k]
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v


@dataclass
class Metrics:
    confusion: np.ndarray  # rows: true class, columns: predicted class

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def per_class(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.confusion) / np.maximum(rows, 1), np.nan)

    @property
    def macro_accuracy(self) -> float:
        return float(np.nanmean(self.per_class))


@dataclass
class TrainReport:
    config: dict
    stage1_losses: list = field(default_factory=list)
    stage2_losses: list = field(default_factory=list)
    metrics: Optional[Metrics] = None

    def to_text(self) -> str:
        lines = [f"format={REPORT_FORMAT}", f"version={REPORT_VERSION}"]
        lines += [f"config.{k}={_fmt(v)}" for k, v in _flatten(self.config)]
        lines.append(f"stage1.epochs={len(self.stage1_losses)}")
        lines += [f"stage1.loss.{i}={v!r}" for i, v in enumerate(self.stage1_losses)]
        lines.append(f"stage2.epochs={len(self.stage2_losses)}")
        lines += [f"stage2.loss.{i}={v!r}" for i, v in enumerate(self.stage2_losses)]
        if self.metrics is not None:
            m = self.metrics
            lines.append(f"metric.accuracy={m.accuracy!r}")
            lines.append(f"metric.macro_accuracy={m.macro_accuracy!r}")
            lines += [f"metric.class_accuracy.{c}={float(a)!r}" for c, a in enumerate(m.per_class)]
            lines.append(f"[confusion {m.confusion.shape[0]}x{m.confusion.shape[1]}]")
            lines += [" ".join(str(int(v)) for v in row) for row in m.confusion]
            lines.append("[end]")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _flatten(d: dict, prefix: str = ""):
    for k in d:
        v = d[k]
        if isinstance(v, dict):
            yield from _flatten(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", v


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def read_report(path) -> dict:
    """Parse the key=value lines of a report; the confusion block comes back as an int matrix."""
    out, block = {}, None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("[confusion"):
            block = []
        elif line == "[end]":
            out["confusion"] = np.array(block, dtype=np.int64)
            block = None
        elif block is not None:
            block.append([int(v) for v in line.split()])
        elif "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _finite_or_abort(value: float, stage: str, epoch: int, batch: int) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"{stage}: non-finite loss at epoch {epoch}, batch {batch}")
    return value


def train_stage1(model: SCCAM, train: WindowSet, cfg: TrainConfig) -> list:
    """Fit the encoder with the supervised contrastive loss; returns the mean batch loss per epoch."""
    if len(train) < 2:
        raise DataError(f"stage 1 needs at least 2 training windows, got {len(train)}")
    params = model.encoder.tensors()
    opt = SGDMomentum(params, cfg.lr_stage1, cfg.momentum)
    curve = []
    for epoch in range(cfg.epochs_stage1):
        losses = []
        for b, idx in enumerate(_batches(len(train), cfg.batch_size, stream(cfg.seed, _SHUFFLE1, epoch))):
            if len(idx) < 2:
                log.warning("stage 1: epoch %d batch %d holds a single window; skipped", epoch, b)
                continue
            aug = augment_pairs(train.subset(idx), cfg.noise_scale, rng=stream(cfg.seed, _AUGMENT, epoch, b))
            try:
                with Tape() as tape:
                    z = encoder_forward(aug.data, model.encoder, model.config, "train").embedding
                    loss = supervised_contrastive_loss(z, aug.labels, cfg.temperature)
                backward(tape, loss, params.values())
                opt.step()
            except NonFiniteError as exc:
                raise NonFiniteError(f"stage 1: epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(_finite_or_abort(loss.item(), "stage 1", epoch, b))
        curve.append(float(np.mean(losses)))
    return curve


def embed(model: SCCAM, data: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode embeddings of ``N x H x W`` windows."""
    for tag, bn in (("bn1", model.encoder.bn1), ("bn2", model.encoder.bn2)):
        if not bn.initialized:
            raise StateError(f"{tag} has no running moments; train or calibrate the encoder first")
    return np.concatenate([encoder_forward(data[i:i + batch_size], model.encoder, model.config).embedding.data
                           for i in range(0, len(data), batch_size)])


def calibrate_batch_norm(model: SCCAM, data: np.ndarray, batch_size: int = 64) -> None:
    """Populate running moments with train-mode passes and no parameter update."""
    for i in range(0, len(data), batch_size):
        encoder_forward(data[i:i + batch_size], model.encoder, model.config, "train")


def _check_classes(train: WindowSet, n_classes: int) -> None:
    if train.labels.min() < 0 or train.labels.max() >= n_classes:
        raise DataError(f"labels outside 0..{n_classes - 1}")
    counts = train.class_counts(n_classes)
    missing = [c for c in range(n_classes) if counts[c] == 0]
    if missing:
        raise DataError(f"stage 2: class(es) {missing} absent from the training set")


def fit_classifier(model: SCCAM, z: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                   epochs: Optional[int] = None) -> list:
    """Cross-entropy fit of the linear classifier on fixed embeddings."""
    epochs = cfg.epochs_stage2 if epochs is None else epochs
    weight = model.classifier.weight
    opt = SGDMomentum({"classifier.weight": weight}, cfg.lr_stage2, cfg.momentum)
    curve = []
    for epoch in range(epochs):
        losses = []
        for b, idx in enumerate(_batches(len(z), cfg.batch_size, stream(cfg.seed, _SHUFFLE2, epoch))):
            with Tape() as tape:
                loss = cross_entropy_loss(classifier_logits(Tensor(z[idx]), model.classifier), labels[idx])
            backward(tape, loss, [weight])
            opt.step()
            losses.append(_finite_or_abort(loss.item(), "stage 2", epoch, b))
        curve.append(float(np.mean(losses)))
    return curve


def train_stage2(model: SCCAM, train: WindowSet, cfg: TrainConfig, epochs: Optional[int] = None) -> list:
    """Fit the classifier with cross-entropy on the original (non-augmented) windows.

    With ``cfg.freeze_encoder`` the encoder runs once in inference mode and is
    never touched; otherwise encoder and classifier are updated jointly.
    """
    if len(train) == 0:
        raise DataError("stage 2: empty training set")
    _check_classes(train, model.classifier.n_classes)
    epochs = cfg.epochs_stage2 if epochs is None else epochs
    if cfg.freeze_encoder:
        return fit_classifier(model, embed(model, train.data), train.labels, cfg, epochs)
    params = {"classifier.weight": model.classifier.weight, **model.encoder.tensors()}
    opt = SGDMomentum(params, cfg.lr_stage2, cfg.momentum)
    curve = []
    for epoch in range(epochs):
        losses = []
        for b, idx in enumerate(_batches(len(train), cfg.batch_size, stream(cfg.seed, _SHUFFLE2, epoch))):
            try:
                with Tape() as tape:
                    z = encoder_forward(train.data[idx], model.encoder, model.config, "train").embedding
                    loss = cross_entropy_loss(classifier_logits(z, model.classifier), train.labels[idx])
                backward(tape, loss, params.values())
                opt.step()
            except NonFiniteError as exc:
                raise NonFiniteError(f"stage 2: epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(_finite_or_abort(loss.item(), "stage 2", epoch, b))
        curve.append(float(np.mean(losses)))
    return curve


def evaluate(model: SCCAM, test: WindowSet) -> Metrics:
    if len(test) == 0:
        raise DataError("evaluate: empty test set")
    m = model.classifier.n_classes
    if test.labels.min() < 0 or test.labels.max() >= m:
        raise DataError(f"test labels outside 0..{m - 1}")
    pred = model.predict(test.data).labels
    confusion = np.zeros((m, m), dtype=np.int64)
    np.add.at(confusion, (test.labels, pred), 1)
    return Metrics(confusion)


def run_pipeline(model: SCCAM, train: WindowSet, test: WindowSet, cfg: TrainConfig,
                 extra_config: Optional[dict] = None) -> TrainReport:
    """Stage 1, stage 2, then evaluation; the report echoes both configs."""
    config = {"model": model.config.to_dict(), "train": cfg.to_dict(), **(extra_config or {})}
    report = TrainReport(config)
    report.stage1_losses = train_stage1(model, train, cfg)
    report.stage2_losses = train_stage2(model, train, cfg)
    report.metrics = evaluate(model, test)
    return report


def run_ce_only(model: SCCAM, train: WindowSet, test: WindowSet, cfg: TrainConfig) -> TrainReport:
    """Ablation without the contrastive stage: the same network trained end to end with
    cross-entropy for the combined epoch budget of both stages."""
    report = TrainReport({"model": model.config.to_dict(), "train": cfg.to_dict(), "variant": "ce-only"})
    joint = TrainConfig(**{**cfg.to_dict(), "freeze_encoder": False})
    report.stage2_losses = train_stage2(model, train, joint, cfg.epochs_stage1 + cfg.epochs_stage2)
    report.metrics = evaluate(model, test)
    return report


def run_random_encoder(model: SCCAM, train: WindowSet, test: WindowSet, cfg: TrainConfig) -> TrainReport:
    """Baseline: the untrained encoder is frozen (batch-norm moments calibrated) and only the
    classifier is fitted."""
    report = TrainReport({"model": model.config.to_dict(), "train": cfg.to_dict(), "variant": "random-encoder"})
    calibrate_batch_norm(model, train.data)
    frozen = TrainConfig(**{**cfg.to_dict(), "freeze_encoder": True})
    report.stage2_losses = train_stage2(model, train, frozen)
    report.metrics = evaluate(model, test)
    return report
