"""Training driver: one optimizer step and the full fitting loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import PatchSampler, TileDataset, augment
from .errors import NumericError
from .losses import dice_loss, one_hot, total_loss
from .model import SegmentationModel
from .optim import Adam, LearningRateSchedule, build_param_groups
from .tensor import Tensor


@dataclass
class StepResult:
    total: float
    dice: float
    kl: float
    diag: float
    lr: float


def train_step(model: SegmentationModel, optimizer: Adam,
               schedule: LearningRateSchedule, images: np.ndarray,
               labels: np.ndarray, cur_iter: int, epoch: int,
               rng: np.random.Generator,
               ignore_index: int | None = None) -> StepResult:
    """Forward, loss, backward, and one parameter update on a (B, 3, H, W) batch."""
    model.train()
    cfg = model.config
    result = model.forward(Tensor(images), rng=rng)
    b, h, w, c = result.logits.shape
    probs = result.logits.reshape(b * h * w, c).softmax(axis=-1)
    targets = one_hot(labels.reshape(-1), c, ignore_index)
    dice = dice_loss(probs, targets)
    loss = total_loss(dice, result.kl_loss, result.diag_loss,
                      use_kl=cfg.use_kl_loss, use_diag=cfg.use_diag_loss)
    components = {
        "dice": float(dice.item()),
        "kl": float(result.kl_loss.item()) if result.kl_loss is not None else 0.0,
        "diag": float(result.diag_loss.item()),
    }
    total_value = float(loss.item())
    if not np.isfinite(total_value):
        raise NumericError(
            f"non-finite training loss at iteration {cur_iter}: total={total_value}, "
            + ", ".join(f"{k}={v}" for k, v in components.items())
        )
    optimizer.zero_grad()
    loss.backward()
    lr = schedule.at(cur_iter, epoch)
    optimizer.step(lr)
    return StepResult(total_value, components["dice"], components["kl"],
                      components["diag"], lr)


def make_optimizer(model: SegmentationModel, train_cfg: TrainConfig):
    groups = build_param_groups(model, train_cfg.weight_decay,
                                train_cfg.bias_lr_multiplier)
    optimizer = Adam(groups)
    schedule = LearningRateSchedule(
        train_cfg.initial_lr,
        train_cfg.poly_power,
        train_cfg.poly_max_iter,
        train_cfg.step_decay_factor,
        train_cfg.step_decay_epochs,
    )
    return optimizer, schedule


def fit(model: SegmentationModel, dataset: TileDataset, train_cfg: TrainConfig,
        log=None, epoch_callback=None, step_callback=None):
    """Run the full training loop; returns per-epoch mean loss history.

    ``epoch_callback(epoch, history_entry)`` may return True to stop early
    (e.g. when a validation target is reached).
    """
    seeds = np.random.SeedSequence(train_cfg.seed).spawn(3)
    model_rng = np.random.default_rng(seeds[0])  # reparameterization noise
    sampler = PatchSampler(model.config.patch_size, train_cfg.patches_per_epoch,
                           rng=np.random.default_rng(seeds[1]))
    aug_rng = np.random.default_rng(seeds[2])
    optimizer, schedule = make_optimizer(model, train_cfg)

    steps_per_epoch = max(train_cfg.patches_per_epoch // train_cfg.batch_size, 1)
    history = []
    cur_iter = 0
    for epoch in range(train_cfg.epochs):
        sums = np.zeros(4)
        for _ in range(steps_per_epoch):
            images, labels = [], []
            for _ in range(train_cfg.batch_size):
                img, lbl = sampler.sample(dataset)
                img, lbl = augment(img, lbl, aug_rng)
                images.append(img)
                labels.append(lbl)
            step = train_step(
                model, optimizer, schedule,
                np.stack(images), np.stack(labels),
                cur_iter, epoch, model_rng,
                ignore_index=train_cfg.ignore_index,
            )
            sums += (step.total, step.dice, step.kl, step.diag)
            cur_iter += 1
            if step_callback is not None:
                step_callback(cur_iter, epoch, step)
        entry = {
            "epoch": epoch,
            "loss": sums[0] / steps_per_epoch,
            "dice": sums[1] / steps_per_epoch,
            "kl": sums[2] / steps_per_epoch,
            "diag": sums[3] / steps_per_epoch,
            "lr": schedule.at(cur_iter - 1, epoch),
        }
        history.append(entry)
        if log is not None:
            log(
                f"epoch {epoch:3d}  loss {entry['loss']:.4f}  dice {entry['dice']:.4f}  "
                f"kl {entry['kl']:.4f}  diag {entry['diag']:.4f}  lr {entry['lr']:.3e}"
            )
        if epoch_callback is not None and epoch_callback(epoch, entry):
            break
    return history
