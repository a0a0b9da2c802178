"""Training and evaluation loops."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import ops
from ..nn import spawn_rngs
from ..optim import SGD, StepSchedule
from ..r2dns import Classifier, build_classifier
from ..tensor import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, augment, gen_synthetic_saliency, iterate_batches, load_cifar10, standardize
from .metrics import MetricsLog

log = logging.getLogger(__name__)

EVAL_BATCH = 250


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: Classifier
    metrics_path: Path | None
    final_checkpoint: Path | None
    best_checkpoint: Path | None
    best_test_acc: float
    best_epoch: int
    steps: int
    step_losses: list[float]
    history: list[dict]


def build_model(cfg: RunConfig) -> Classifier:
    return build_classifier(
        cfg.backbone(),
        flows=cfg.flows_count,
        anar=cfg.anar(),
        eta=cfg.flows_eta,
        mode=cfg.flows_mode,
        seed=cfg.train_seed,
    )


def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.data_dataset == "synthetic":
        full = gen_synthetic_saliency(cfg.data_seed, cfg.data_n_train + cfg.data_n_test, cfg.backbone_num_classes)
        n = cfg.data_n_train
        return full.subset(slice(0, n)), full.subset(slice(n, None))
    return load_cifar10(cfg.data_dir, "train"), load_cifar10(cfg.data_dir, "test")


def evaluate(model: Classifier, ds: Dataset, cfg: RunConfig) -> tuple[float, float]:
    """Eval-mode top-1 accuracy and mean loss over ``ds`` (single centre view)."""
    was_training = model.training
    model.eval()
    correct, loss_sum = 0, 0.0
    for idx in iterate_batches(len(ds), EVAL_BATCH, None):
        x = Tensor(standardize(ds.images[idx], cfg.data_mean, cfg.data_std))
        logits, _ = model(x)
        loss_sum += float(ops.softmax_cross_entropy(logits, ds.labels[idx]).data) * len(idx)
        correct += int((logits.data[:, :, 0, 0].argmax(axis=1) == ds.labels[idx]).sum())
    model.train(was_training)
    return correct / len(ds), loss_sum / len(ds)


def load_model(cfg: RunConfig, checkpoint: str | Path) -> Classifier:
    model = build_model(cfg)
    try:
        model.load_state_dict(load_checkpoint(checkpoint))
    except (KeyError, ValueError) as e:
        raise TrainingError(f"checkpoint {checkpoint} incompatible with config: {e}") from e
    return model


def evaluate_checkpoint(cfg: RunConfig, checkpoint: str | Path, ds: Dataset) -> tuple[float, float]:
    return evaluate(load_model(cfg, checkpoint), ds, cfg)


def train(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    data: tuple[Dataset, Dataset] | None = None,
    model: Classifier | None = None,
) -> TrainResult:
    """Shuffled mini-batch SGD with step decay; eval after every epoch.

    With ``out_dir`` set, writes ``metrics.csv``, ``timing.csv``,
    ``final.ckpt``, ``best.ckpt`` and the resolved ``config.txt``.
    """
    train_ds, test_ds = data or load_data(cfg)
    model = model or build_model(cfg)
    model.train()
    opt = SGD(model.parameters(), cfg.optim_lr, cfg.optim_momentum, cfg.optim_weight_decay)
    sched = StepSchedule(cfg.optim_lr, cfg.milestone_epochs(), cfg.optim_factor)
    order_rng, aug_rng = spawn_rngs(cfg.train_seed, 5)[3:5]

    out = Path(out_dir) if out_dir is not None else None
    metrics = MetricsLog(out) if out else None
    if out:
        (out / "config.txt").write_text(cfg.dumps())
    best_acc, best_epoch, step = -1.0, -1, 0
    losses: list[float] = []
    history: list[dict] = []
    t0 = time.perf_counter()

    for epoch in range(cfg.train_epochs):
        lr = sched.lr_at(epoch)
        opt.lr = lr
        correct = seen = 0
        epoch_loss = 0.0
        for idx in iterate_batches(len(train_ds), cfg.train_batch_size, order_rng):
            imgs = train_ds.images[idx]
            if cfg.train_augment:
                imgs = augment(imgs, aug_rng)
            x = Tensor(standardize(imgs, cfg.data_mean, cfg.data_std))
            y = train_ds.labels[idx]
            with Tape() as tape:
                logits, _ = model(x)
                loss = ops.softmax_cross_entropy(logits, y)
            tape.backward(loss)
            value = float(loss.data)
            if not np.isfinite(value):
                gmax = max((float(np.abs(p.grad).max()) for p in model.parameters() if p.grad is not None), default=float("nan"))
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch}, lr {lr}, max |grad| {gmax})")
            opt.step()
            step += 1
            losses.append(value)
            epoch_loss += value * len(idx)
            correct += int((logits.data[:, :, 0, 0].argmax(axis=1) == y).sum())
            seen += len(idx)
            if metrics:
                metrics.step(epoch, step, lr, value)
            if cfg.train_max_steps and step >= cfg.train_max_steps:
                break

        test_acc, test_loss = evaluate(model, test_ds, cfg)
        train_acc = correct / seen
        row = dict(epoch=epoch, step=step, lr=lr, loss=epoch_loss / seen, train_acc=train_acc, test_acc=test_acc, test_loss=test_loss)
        history.append(row)
        log.info("epoch %d step %d loss %.4f train %.4f test %.4f", epoch, step, row["loss"], train_acc, test_acc)
        if metrics:
            metrics.epoch(**row)
            metrics.wall_time(epoch, time.perf_counter() - t0)
        if test_acc > best_acc:
            best_acc, best_epoch = test_acc, epoch
            if out:
                save_checkpoint(out / "best.ckpt", model.state_dict())
        if cfg.train_max_steps and step >= cfg.train_max_steps:
            break

    if out:
        save_checkpoint(out / "final.ckpt", model.state_dict())
    return TrainResult(
        model=model,
        metrics_path=metrics.path if metrics else None,
        final_checkpoint=out / "final.ckpt" if out else None,
        best_checkpoint=out / "best.ckpt" if out else None,
        best_test_acc=best_acc,
        best_epoch=best_epoch,
        steps=step,
        step_losses=losses,
        history=history,
    )
