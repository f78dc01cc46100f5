"""Training protocol: per-epoch deformation of the full training set,
sequential on-line updates, multiplicative learning-rate decay, validation
on the un-deformed training set, best-validation model selection.
"""

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kernels
from .deform import DeformParams, deform_epoch, upscale_dataset
from .mnist_io import Dataset
from .network import Architecture, Mlp, forward_batch, init_mlp, save_checkpoint
from .rng import STREAM_INIT, STREAM_SHUFFLE, substream

log = logging.getLogger(__name__)


class InterruptCheckpoint(Exception):
    """Raised after an external stop signal; carries the saved state path."""

    def __init__(self, path):
        super().__init__(f"interrupted; latest state saved to {path}")
        self.path = path


@dataclass(frozen=True)
class TrainConfig:
    arch: Architecture
    eta0: float = 1e-3
    eta_min: float = 1e-6
    decay: float = 0.993
    max_epochs: int = 1
    seed: int = 0
    deform: DeformParams = field(default_factory=DeformParams)
    shuffle: bool = True
    lanes: int = 1
    variant: str = "tiled"

    def __post_init__(self):
        if not (0 < self.eta_min <= self.eta0):
            raise ValueError(f"need 0 < eta_min <= eta0, got {self.eta_min}, {self.eta0}")
        if not (0 < self.decay < 1):
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")
        if self.variant not in ("naive", "tiled"):
            raise ValueError(f"variant must be naive or tiled, got {self.variant!r}")


@dataclass
class EpochStats:
    epoch: int
    eta: float
    train_error: float  # % on the deformed stream
    val_error: float  # % on the un-deformed training set
    seconds: float
    deform_share: float  # % of epoch wall time spent deforming


@dataclass
class TrainResult:
    best_epoch: int  # -1 means the initial, untrained net
    best_val_error: float
    best_mlp: Mlp
    history: list[EpochStats]
    checkpoint_path: Path | None = None


@dataclass
class TrainInstrumentation:
    """Optional probe recording what data each phase actually saw."""

    validation_fingerprints: list[str] = field(default_factory=list)
    deformed_fingerprints: list[str] = field(default_factory=list)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """eta0 * decay^epoch, floored at eta_min."""
    return max(cfg.eta_min, cfg.eta0 * cfg.decay**epoch)


def error_percent(mlp: Mlp, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Argmax misprediction rate in percent over (n, fan_in) inputs."""
    if len(inputs) == 0:
        return 0.0
    outputs = forward_batch(mlp, inputs)
    pred = np.argmax(outputs, axis=1)
    return 100.0 * float(np.count_nonzero(pred != labels)) / len(labels)


def validate(mlp: Mlp, train: Dataset) -> float:
    """Validation error on the whole un-deformed training set."""
    return error_percent(mlp, upscale_dataset(train), train.labels)


def train_epoch(
    mlp: Mlp,
    images: np.ndarray,
    labels: np.ndarray,
    eta: float,
    rng: np.random.Generator | None = None,
    shuffle: bool = True,
    variant: str = "tiled",
    scheme: kernels.TileScheme = kernels.DEFAULT_SCHEME,
) -> float:
    """One sequential pass over the deformed epoch; returns train error %."""
    n = len(labels)
    order = rng.permutation(n) if (shuffle and rng is not None) else np.arange(n)
    wrong = 0
    flat = images.reshape(n, -1)
    for i in order:
        y = kernels.train_step(mlp, flat[i], int(labels[i]), eta, variant, scheme)
        if int(np.argmax(y)) != int(labels[i]):
            wrong += 1
    return 100.0 * wrong / n if n else 0.0


def _fingerprint(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()


def train(
    cfg: TrainConfig,
    train_ds: Dataset,
    out_dir=None,
    instrument: TrainInstrumentation | None = None,
) -> TrainResult:
    """Full protocol: deform -> train -> validate -> checkpoint-if-best,
    for cfg.max_epochs epochs. Ties in validation error keep the earliest
    epoch. A KeyboardInterrupt saves the latest state and re-raises as
    InterruptCheckpoint.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    mlp = init_mlp(substream(cfg.seed, STREAM_INIT), cfg.arch, dtype=np.float32)
    x_val = upscale_dataset(train_ds)
    val_labels = train_ds.labels

    history: list[EpochStats] = []
    best_err = float("inf")
    best_epoch = -1
    best_mlp = mlp.copy()
    ckpt_path = out_dir / "best.dmlp" if out_dir else None
    history_path = out_dir / "run_history.jsonl" if out_dir else None

    if cfg.max_epochs == 0:
        best_err = error_percent(mlp, x_val, val_labels)
        if instrument is not None:
            instrument.validation_fingerprints.append(_fingerprint(x_val))
        if ckpt_path:
            ckpt_path.write_bytes(save_checkpoint(mlp, 0, best_err))
        return TrainResult(-1, best_err, best_mlp, history, ckpt_path)

    try:
        for epoch in range(cfg.max_epochs):
            t0 = time.perf_counter()
            deformed, labels = deform_epoch(
                train_ds, cfg.deform, cfg.seed, epoch, lanes=cfg.lanes
            )
            t_deform = time.perf_counter() - t0

            eta = lr_schedule(epoch, cfg)
            shuffle_rng = substream(cfg.seed, STREAM_SHUFFLE, epoch)
            train_err = train_epoch(
                mlp, deformed, labels, eta,
                rng=shuffle_rng, shuffle=cfg.shuffle, variant=cfg.variant,
            )
            val_err = error_percent(mlp, x_val, val_labels)
            seconds = time.perf_counter() - t0
            share = 100.0 * t_deform / seconds if seconds > 0 else 0.0

            if instrument is not None:
                instrument.deformed_fingerprints.append(_fingerprint(deformed))
                instrument.validation_fingerprints.append(_fingerprint(x_val))

            stats = EpochStats(epoch, eta, train_err, val_err, seconds, share)
            history.append(stats)
            log.info(
                "epoch=%d eta=%.6e train_err=%.4f val_err=%.4f seconds=%.2f deform_share=%.1f",
                epoch, eta, train_err, val_err, seconds, share,
            )
            if history_path:
                with open(history_path, "a") as f:
                    f.write(json.dumps(asdict(stats)) + "\n")

            if val_err < best_err:  # strict: ties keep the earlier epoch
                best_err = val_err
                best_epoch = epoch
                best_mlp = mlp.copy()
                if ckpt_path:
                    ckpt_path.write_bytes(save_checkpoint(mlp, epoch, val_err))
    except KeyboardInterrupt:
        path = (out_dir / "interrupt.dmlp") if out_dir else Path("interrupt.dmlp")
        path.write_bytes(save_checkpoint(mlp, len(history), float("nan")))
        raise InterruptCheckpoint(path) from None

    return TrainResult(best_epoch, best_err, best_mlp, history, ckpt_path)
