"""Objective, optimizer and training loop.

The loss is the squared error between enhanced and clean multichannel
signals, averaged over every element (channels and samples), so its scale
does not depend on utterance length or channel count.
"""

from __future__ import annotations

import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core.tensor import Parameter, ShapeError
from .data.dataset import DatasetManifest, build_dataset
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.config import ModelConfig
from .model.network import Model, build_model

log = logging.getLogger(__name__)

OPTIMIZER_STATE_VERSION = 1


class NumericError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 1000
    seed: int = 0
    precision: str = "float32"
    checkpoint_every: int = 0
    clip_norm: float | None = None
    segment: int = 16384
    hop: int = 8192

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning rate must be finite and non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def mse_loss(estimate: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. ``estimate``."""
    if estimate.shape != target.shape:
        raise ShapeError(f"estimate shape {estimate.shape} != target shape {target.shape}")
    diff = estimate - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    return loss, (2.0 / diff.size) * diff


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: list[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def directions(self) -> dict[str, np.ndarray]:
        """Bias-corrected update ``m_hat / (sqrt(v_hat) + eps)`` for the current state."""
        out = {}
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p in self.params:
            m_hat = self.m[p.name] / c1
            v_hat = self.v[p.name] / c2
            out[p.name] = m_hat / (np.sqrt(v_hat) + self.eps)
        return out

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
        for p, d in zip(self.params, self.directions().values()):
            p.value -= (self.lr * d).astype(p.value.dtype)

    def save(self, path) -> None:
        arrays = {"version": np.array(OPTIMIZER_STATE_VERSION), "t": np.array(self.t)}
        for name in self.m:
            arrays[f"m/{name}"] = self.m[name]
            arrays[f"v/{name}"] = self.v[name]
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load(self, path) -> None:
        with np.load(path) as data:
            if int(data["version"]) != OPTIMIZER_STATE_VERSION:
                raise ValueError(f"unsupported optimizer state version {int(data['version'])}")
            self.t = int(data["t"])
            for name in self.m:
                self.m[name] = data[f"m/{name}"].astype(self.m[name].dtype)
                self.v[name] = data[f"v/{name}"].astype(self.v[name].dtype)


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm


def train_step(model: Model, optimizer: Adam, noisy: np.ndarray, clean: np.ndarray,
               clip_norm: float | None = None) -> float:
    """One zero-grad / forward / loss / backward / update cycle; returns the loss."""
    model.train(True)
    model.zero_grad()
    estimate = model.forward(noisy)
    loss, grad = mse_loss(estimate, clean.astype(estimate.dtype, copy=False))
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss at optimizer step {optimizer.t + 1}")
    model.backward(grad.astype(estimate.dtype, copy=False))
    if clip_norm is not None:
        clip_gradients(optimizer.params, clip_norm)
    for p in optimizer.params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {p.name} at optimizer step {optimizer.t + 1}")
    optimizer.step()
    return loss


class BatchSchedule:
    """Deterministic batch order: a seeded permutation per epoch.

    The last batch of an epoch is padded with items from the start of the
    same epoch's permutation.
    """

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if n_items < 1:
            raise ValueError("training set is empty")
        self.n_items = n_items
        self.batch_size = batch_size
        self.seed = seed
        self.per_epoch = -(-n_items // batch_size)

    def permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(self.n_items)

    def indices(self, step: int) -> np.ndarray:
        epoch, j = divmod(step, self.per_epoch)
        perm = self.permutation(epoch)
        idx = perm[j * self.batch_size:(j + 1) * self.batch_size]
        if idx.size < self.batch_size:
            idx = np.concatenate([idx, np.resize(perm, self.batch_size - idx.size)])
        return idx


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list[float] = field(default_factory=list)
    start_step: int = 0


_CKPT = re.compile(r"step_(\d{6})\.msce$")


def _checkpoint_paths(out_dir: Path, step: int) -> tuple[Path, Path]:
    return out_dir / f"step_{step:06d}.msce", out_dir / f"step_{step:06d}.opt.npz"


def latest_checkpoint(out_dir) -> tuple[int, Path] | None:
    found = []
    for p in Path(out_dir).glob("step_*.msce"):
        m = _CKPT.search(p.name)
        if m and _checkpoint_paths(p.parent, int(m.group(1)))[1].exists():
            found.append((int(m.group(1)), p))
    return max(found) if found else None


def load_training_arrays(manifest: DatasetManifest, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(build_dataset(manifest, "train", config.segment, config.hop, config.seed))
    if not pairs:
        raise ValueError("manifest has no training pairs")
    noisy = np.stack([y for y, _ in pairs]).astype(np.float32)
    clean = np.stack([x for _, x in pairs]).astype(np.float32)
    return noisy, clean


def train_loop(manifest: DatasetManifest, model_config: ModelConfig, config: TrainConfig, out_dir,
               resume: bool = False, data: tuple[np.ndarray, np.ndarray] | None = None,
               stop_after: int | None = None) -> TrainResult:
    """Train from scratch (or resume) and write checkpoints plus a loss log.

    ``out_dir`` receives ``loss.jsonl`` (one ``{step, loss, wallclock}``
    record per step), periodic ``step_NNNNNN.msce`` checkpoints with their
    optimizer-state sidecars, and ``final.msce``. ``stop_after`` ends the run
    early after that many total steps (simulating an interruption).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noisy, clean = data if data is not None else load_training_arrays(manifest, config)
    if noisy.shape[1] != model_config.channels:
        raise ValueError(f"data has {noisy.shape[1]} channels, model expects {model_config.channels}")

    model = build_model(model_config, seed=config.seed, precision=config.precision)
    start = 0
    if resume:
        found = latest_checkpoint(out_dir)
        if found is not None:
            start, path = found
            model, _ = load_checkpoint(path)
            model.input_grad = False
    optimizer = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps)
    if start:
        optimizer.load(_checkpoint_paths(out_dir, start)[1])
        log.info("resumed from step %d", start)

    schedule = BatchSchedule(noisy.shape[0], config.batch_size, config.seed)
    losses = []
    end = config.steps if stop_after is None else min(config.steps, stop_after)
    t0 = time.time()
    log_path = out_dir / "loss.jsonl"
    if start and log_path.exists():
        # drop records written after the checkpoint we resume from
        kept = [ln for ln in log_path.read_text().splitlines() if ln and json.loads(ln)["step"] <= start]
        log_path.write_text("".join(ln + "\n" for ln in kept))
    with open(log_path, "a" if start else "w") as fh:
        for step in range(start, end):
            idx = schedule.indices(step)
            loss = train_step(model, optimizer, noisy[idx], clean[idx], config.clip_norm)
            losses.append(loss)
            fh.write(json.dumps({"step": step + 1, "loss": loss, "wallclock": time.time() - t0}) + "\n")
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                ckpt, opt_path = _checkpoint_paths(out_dir, step + 1)
                model.eval()
                save_checkpoint(model, ckpt)
                optimizer.save(opt_path)
            if (step + 1) % 100 == 0:
                log.info("step %d loss %.6g", step + 1, loss)
    model.eval()
    final = out_dir / "final.msce"
    save_checkpoint(model, final)
    optimizer.save(out_dir / "final.opt.npz")
    return TrainResult(final, losses, start)
