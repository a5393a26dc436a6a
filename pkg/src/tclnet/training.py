"""Optimizer, schedules, augmentation, and the train/eval loops.

The training regime: Adam with momenta (0.5, 0.999), 65 epochs at batch 4,
learning rate 0.001 through epoch 30 then 0.0001, and optionally the robust
loss from epoch tcl_switch_epoch+1 on (epochs 1..50 train with plain MSE).
Augmentation resizes 512 -> 574, takes a random 512 crop whose offset is
redrawn up to 10 times if the label would leave the frame (then the crop is
centered on the label), and flips horizontally/vertically each with
probability 0.5. Every random draw is keyed by (seed, epoch, sample index),
so results do not depend on batch assembly order.

Checkpoints are ordinary weights files with the Adam moment buffers
appended under the same manifest scheme; loading them as weights ignores
the extra arrays.
"""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from tclnet import model as model_mod
from tclnet.data import Sample
from tclnet.errors import (AugmentationError, ConfigError, ContractError,
                           DivergenceError, NumericError)
from tclnet.heatmap import CenterLabel, HeatmapParams, decode, encode
from tclnet.imageops import bilinear_resize
from tclnet.model import ModelConfig, TclNet, build
from tclnet.objective import LOSSES, MleReport, mle
from tclnet.tensor import Tensor, backward, no_grad

EPOCH_LOG_HEADER = "epoch,lr,loss_name,mean_loss,seconds"
_LOSS_ALIASES = {"mse": "mse", "tcl+": "tcl+", "tcl_plus": "tcl+"}


class Adam:
    """Bias-corrected Adam over named parameters."""

    def __init__(self, named_params, lr=1e-3, beta1=0.5, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must be in [0,1), got {beta1}, {beta2}")
        self.named_params = list(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = [("adam.t", np.array([self.t], dtype=np.int64))]
        out += [(f"adam.m.{n}", a) for n, a in self.m.items()]
        out += [(f"adam.v.{n}", a) for n, a in self.v.items()]
        return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 65
    batch_size: int = 4
    base_lr: float = 1e-3
    lr_drop_epoch: int = 30
    dropped_lr: float = 1e-4
    loss: str = "mse"
    tcl_switch_epoch: int = 50
    resize_to: int = 574
    crop_to: int = 512
    flip_prob: float = 0.5
    sigma: float = 15.0
    alpha: float = 0.25
    seed: int = 0
    augment: bool = True
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        loss = _LOSS_ALIASES.get(self.loss)
        if loss is None:
            raise ConfigError(f"loss must be one of {sorted(_LOSS_ALIASES)}, "
                              f"got {self.loss!r}")
        object.__setattr__(self, "loss", loss)
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0 or self.dropped_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.crop_to > self.resize_to:
            raise ConfigError(f"crop_to {self.crop_to} exceeds resize_to "
                              f"{self.resize_to}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0,1], got {self.alpha}")
        if self.loss == "tcl+" and not self.tcl_switch_epoch < self.epochs:
            raise ConfigError(f"tcl_switch_epoch {self.tcl_switch_epoch} must be "
                              f"< epochs {self.epochs} when loss is tcl+")

    def to_dict(self):
        return asdict(self)


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    """0.001 through lr_drop_epoch (inclusive), the dropped rate after."""
    return config.base_lr if epoch <= config.lr_drop_epoch else config.dropped_lr


def loss_name_for_epoch(config: TrainConfig, epoch: int) -> str:
    if config.loss == "mse" or epoch <= config.tcl_switch_epoch:
        return "mse"
    return "tcl+"


# -- augmentation -----------------------------------------------------------------


def augment(sample: Sample, config: TrainConfig, rng) -> tuple:
    """Resize, random crop, random flips; returns (image, transformed label).

    The label must land strictly inside the crop: the offset is redrawn up
    to 10 times, after which the crop is centered on the label. With
    config.augment False the sample passes through untouched, except for a
    deterministic resize to crop_to when the sizes differ.
    """
    img = sample.image
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise AugmentationError(f"augment expects a square image, got {img.shape}")
    if not config.augment:
        if img.shape[0] == config.crop_to:
            return img, sample.label
        scale = config.crop_to / img.shape[0]
        resized = np.asarray(
            bilinear_resize(img, config.crop_to, config.crop_to), dtype=np.float32)
        return resized, CenterLabel(sample.label.u * scale, sample.label.v * scale)
    in_size = img.shape[0]
    scale = config.resize_to / in_size
    u_r = sample.label.u * scale
    v_r = sample.label.v * scale
    resized = np.asarray(
        bilinear_resize(img, config.resize_to, config.resize_to), dtype=np.float32)
    crop = config.crop_to
    max_off = config.resize_to - crop
    ox = oy = 0
    u = v = 0.0
    placed = False
    for _ in range(10):
        ox, oy = (int(z) for z in rng.integers(0, max_off + 1, size=2))
        u, v = u_r - ox, v_r - oy
        if 0.0 <= u < crop and 0.0 <= v < crop:
            placed = True
            break
    if not placed:
        half = (crop - 1) / 2.0
        ox = int(np.clip(round(u_r - half), 0, max_off))
        oy = int(np.clip(round(v_r - half), 0, max_off))
        u, v = u_r - ox, v_r - oy
        if not (0.0 <= u < crop and 0.0 <= v < crop):
            raise AugmentationError(f"label ({sample.label.u}, {sample.label.v}) "
                                    f"cannot be kept inside a {crop} crop")
    out = resized[oy:oy + crop, ox:ox + crop]
    if rng.random() < config.flip_prob:
        out = out[:, ::-1]
        u = (crop - 1) - u
    if rng.random() < config.flip_prob:
        out = out[::-1, :]
        v = (crop - 1) - v
    return np.ascontiguousarray(out), CenterLabel(u, v)


# -- train loop -------------------------------------------------------------------


def _heatmap_params(model_config: ModelConfig, train_config: TrainConfig) -> HeatmapParams:
    params = HeatmapParams(alpha=train_config.alpha, sigma=train_config.sigma,
                           map_size=model_config.map_size)
    if params.input_size != model_config.input_size:
        raise ConfigError(f"alpha {train_config.alpha} with map size "
                          f"{model_config.map_size} implies input "
                          f"{params.input_size}, model expects "
                          f"{model_config.input_size}")
    return params


def _aux_params(base: HeatmapParams, aux_map: int) -> HeatmapParams:
    ratio = aux_map / base.map_size
    return HeatmapParams(alpha=base.alpha * ratio, sigma=max(base.sigma * ratio, 1e-6),
                         map_size=aux_map)


def save_checkpoint(net: TclNet, optimizer: Optional[Adam], path) -> None:
    meta = {
        "kind": "tclnet-weights",
        "model": net.config.to_dict(),
        "dtype": net.dtype.str,
    }
    arrays = [(n, t.data) for n, t in net.parameters()] + list(net.buffers())
    if optimizer is not None:
        meta["adam"] = {"lr": optimizer.lr, "beta1": optimizer.beta1,
                        "beta2": optimizer.beta2, "eps": optimizer.eps}
        arrays += optimizer.state_arrays()
    model_mod.write_blob(path, meta, arrays)


def train(samples: List[Sample], model_config: ModelConfig,
          train_config: TrainConfig, out_dir=None, net: Optional[TclNet] = None,
          progress=None):
    """Run the full schedule over the samples; returns (net, log rows).

    Per epoch: seeded shuffle, augment, encode targets, forward, the active
    loss, backward, Adam step. The per-epoch log row is (epoch, lr,
    loss_name, mean_loss, seconds). A NaN loss or gradient aborts with
    DivergenceError carrying the last completed-epoch checkpoint.
    """
    if not samples:
        raise ContractError("train called with no samples")
    if model_config.input_size != train_config.crop_to:
        raise ConfigError(f"model input_size {model_config.input_size} != "
                          f"crop_to {train_config.crop_to}")
    hm = _heatmap_params(model_config, train_config)
    if net is None:
        net = build(model_config, seed=train_config.seed)
    optimizer = Adam(net.parameters(), lr=train_config.base_lr,
                     beta1=train_config.beta1, beta2=train_config.beta2,
                     eps=train_config.adam_eps)
    log_path = last_path = best_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        log_path = out_dir / "epochs.csv"
        with open(log_path, "w") as fh:
            fh.write(EPOCH_LOG_HEADER + "\n")
        last_path = out_dir / "checkpoint_last.tclw"
        best_path = out_dir / "checkpoint_best.tclw"

    n = len(samples)
    log_rows = []
    best_loss = np.inf
    last_good = None
    for epoch in range(1, train_config.epochs + 1):
        t_start = time.perf_counter()
        optimizer.lr = lr_for_epoch(train_config, epoch)
        loss_name = loss_name_for_epoch(train_config, epoch)
        loss_fn = LOSSES[loss_name]
        order = np.random.default_rng((train_config.seed, epoch)).permutation(n)
        total = 0.0
        seen = 0
        for at in range(0, n, train_config.batch_size):
            batch_idx = order[at:at + train_config.batch_size]
            images, targets, aux_targets = [], [], {}
            for idx in batch_idx:
                sample = samples[int(idx)]
                rng = np.random.default_rng(
                    (train_config.seed, epoch, int(idx)))
                img, label = augment(sample, train_config, rng)
                images.append(img)
                targets.append(encode(label, hm).data)
                if model_config.deep_supervision:
                    for head_i in range(model_config.scales - 1):
                        aux_map = model_config.map_size // \
                            2 ** (model_config.scales - 1 - head_i)
                        aux_targets.setdefault(head_i, []).append(
                            encode(label, _aux_params(hm, aux_map)).data)
            x = Tensor(np.stack(images)[:, None, :, :])
            t = Tensor(np.stack(targets))
            try:
                if model_config.deep_supervision:
                    out, aux = net.forward(x, "train", with_aux=True)
                    loss = loss_fn(out, t)
                    total_loss = loss.batch
                    for head_i, aux_out in enumerate(aux):
                        at_t = Tensor(np.stack(aux_targets[head_i]))
                        total_loss = total_loss + loss_fn(aux_out, at_t).batch
                    total_loss = total_loss * (1.0 / (1 + len(aux)))
                else:
                    out = net.forward(x, "train")
                    loss = loss_fn(out, t)
                    total_loss = loss.batch
                net.zero_grad()
                backward(total_loss)
                optimizer.step()
            except NumericError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}: {exc}",
                    last_checkpoint=last_good) from exc
            total += loss.value * len(batch_idx)
            seen += len(batch_idx)
        seconds = time.perf_counter() - t_start
        row = {"epoch": epoch, "lr": optimizer.lr, "loss_name": loss_name,
               "mean_loss": total / seen, "seconds": seconds}
        log_rows.append(row)
        if progress is not None:
            progress(row)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(f"{epoch},{optimizer.lr:g},{loss_name},"
                         f"{row['mean_loss']:.8g},{seconds:.3f}\n")
        if last_path is not None:
            save_checkpoint(net, optimizer, last_path)
            last_good = last_path
            if row["mean_loss"] < best_loss:
                best_loss = row["mean_loss"]
                save_checkpoint(net, optimizer, best_path)
    return net, log_rows


# -- evaluation -------------------------------------------------------------------


def evaluate(net: TclNet, samples: List[Sample],
             params: Optional[HeatmapParams] = None, batch_size=8) -> MleReport:
    """No augmentation: forward in eval mode, decode each map, report MLE.

    Images larger or smaller than the network input are resized for the
    forward pass; predictions are scaled back so the error is always
    measured in the source image's pixels.
    """
    if not samples:
        raise ContractError("evaluate called with no samples")
    size = net.config.input_size
    if params is None:
        params = HeatmapParams(alpha=net.config.map_size / size,
                               map_size=net.config.map_size)
    preds = []
    with no_grad():
        for at in range(0, len(samples), batch_size):
            chunk = samples[at:at + batch_size]
            images, scales = [], []
            for s in chunk:
                img = s.image
                if img.shape != (size, size):
                    scales.append(img.shape[1] / size)
                    img = np.asarray(bilinear_resize(img, size, size),
                                     dtype=np.float32)
                else:
                    scales.append(1.0)
                images.append(img)
            x = Tensor(np.stack(images)[:, None, :, :])
            out = net.forward(x, "eval")
            for i in range(len(chunk)):
                p = decode(out.data[i], params)
                preds.append(CenterLabel(p.u * scales[i], p.v * scales[i]))
    labels = [s.label for s in samples]
    eyed = [s.eyed for s in samples]
    return mle(preds, labels, eyed)


@dataclass(frozen=True)
class RepeatSummary:
    n_runs: int
    mean_all: float
    std_all: float
    mean_eyed: Optional[float]
    std_eyed: Optional[float]
    mean_non_eyed: Optional[float]
    std_non_eyed: Optional[float]

    def formatted(self) -> dict:
        out = {"MLE-A": format_mean_std(self.mean_all, self.std_all)}
        if self.mean_eyed is not None:
            out["MLE-E"] = format_mean_std(self.mean_eyed, self.std_eyed)
        if self.mean_non_eyed is not None:
            out["MLE-N"] = format_mean_std(self.mean_non_eyed, self.std_non_eyed)
        return out


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.4f}±{std:.4f}"


def repeat_runs(run, seeds) -> RepeatSummary:
    """Aggregate run(seed) -> MleReport over distinct seeds into mean and
    population standard deviation per column."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ContractError(f"repeat_runs needs at least 2 seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ContractError(f"repeat_runs seeds must be distinct, got {seeds}")
    reports = [run(seed) for seed in seeds]

    def agg(values):
        if any(v is None for v in values):
            return None, None
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    mean_all, std_all = agg([r.mle_all for r in reports])
    mean_e, std_e = agg([r.mle_eyed for r in reports])
    mean_n, std_n = agg([r.mle_non_eyed for r in reports])
    return RepeatSummary(n_runs=len(reports), mean_all=mean_all, std_all=std_all,
                         mean_eyed=mean_e, std_eyed=std_e,
                         mean_non_eyed=mean_n, std_non_eyed=std_n)
