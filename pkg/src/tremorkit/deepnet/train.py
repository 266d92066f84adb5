"""Training loop: Adam + reduce-on-plateau with early stop at the learning
rate floor, minority classes already oversampled upstream, augmentation per
clip per epoch, best-validation weights restored at the end."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from .. import engine
from ..stats import confusion_matrix, weighted_kappa
from .augment import AugmentConfig, augment as augment_clip
from .model import ConvLSTM

DEFAULT_LR = 6e-4
DEFAULT_WEIGHT_DECAY = 1e-3
EARLY_STOP_LR = 5e-6


class Divergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 250
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    plateau_patience: int = 15
    plateau_factor: float = 10.0
    early_stop_lr: float = EARLY_STOP_LR
    batch_size: int = 16
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_kappa: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_val_loss: float
    best_epoch: int
    stop_reason: str


def pad_clips(clips: list[np.ndarray]):
    """Stack variable-length C,T,H,W clips, zero-padding the tail frames."""
    lengths = np.array([c.shape[1] for c in clips], dtype=int)
    t_max = int(lengths.max())
    c, _, h, w = clips[0].shape
    out = np.zeros((len(clips), c, t_max, h, w), dtype=np.float32)
    for i, clip in enumerate(clips):
        out[i, :, :clip.shape[1]] = clip
    return out, lengths


def _batches(n: int, batch_size: int, perm=None):
    order = np.arange(n) if perm is None else perm
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate_loss(model: ConvLSTM, clips, labels, batch_size: int = 16):
    """(mean loss, predictions) without gradient tracking or dropout."""
    labels = np.asarray(labels, dtype=int)
    total, preds = 0.0, []
    with engine.no_grad():
        for idx in _batches(len(clips), batch_size):
            batch, lengths = pad_clips([clips[i] for i in idx])
            logits, _, _ = model.forward(batch, lengths=lengths, training=False)
            loss = engine.cross_entropy(logits, labels[idx])
            total += float(loss.data) * len(idx)
            preds.extend(np.argmax(logits.data, axis=1).tolist())
    return total / len(clips), np.array(preds, dtype=int)


def _single_threaded_blas():
    """Many small GEMMs run fastest without BLAS threading overhead."""
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1, user_api="blas")
    except ImportError:
        import contextlib

        return contextlib.nullcontext()


def train(model: ConvLSTM, train_clips, train_labels, val_clips, val_labels,
          cfg: TrainConfig | None = None, log=None) -> TrainResult:
    with _single_threaded_blas():
        return _train(model, train_clips, train_labels, val_clips, val_labels,
                      cfg, log)


def _train(model: ConvLSTM, train_clips, train_labels, val_clips, val_labels,
           cfg: TrainConfig | None = None, log=None) -> TrainResult:
    cfg = cfg or TrainConfig()
    train_labels = np.asarray(train_labels, dtype=int)
    val_labels = np.asarray(val_labels, dtype=int)
    if len(train_clips) == 0 or len(val_clips) == 0:
        raise ValueError("need non-empty train and validation sets")

    opt = engine.Adam(model.parameters(), lr=cfg.lr,
                      weight_decay=cfg.weight_decay)
    sched = engine.ReduceOnPlateau(opt, patience=cfg.plateau_patience,
                                   factor=cfg.plateau_factor)
    history: list[EpochStats] = []
    best_val = np.inf
    best_epoch = -1
    best_state = model.get_state()
    stop_reason = "max_epochs"

    for epoch in range(cfg.max_epochs):
        shuffle_rng = rngmod.substream(cfg.seed, "shuffle", epoch)
        perm = shuffle_rng.permutation(len(train_clips))
        lr_now = opt.lr
        running = 0.0
        seen = 0
        for bi, idx in enumerate(_batches(len(train_clips), cfg.batch_size, perm)):
            aug_rng = rngmod.substream(cfg.seed, "augment", epoch, bi)
            batch_clips = [augment_clip(train_clips[i], cfg.augment, aug_rng)
                           for i in idx]
            batch, lengths = pad_clips(batch_clips)
            drop_rng = rngmod.substream(cfg.seed, "dropout", epoch, bi)
            logits, _, _ = model.forward(batch, lengths=lengths, training=True,
                                         rng=drop_rng)
            loss = engine.cross_entropy(logits, train_labels[idx])
            if not np.isfinite(loss.data):
                raise Divergence(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.data) * len(idx)
            seen += len(idx)

        val_loss, val_preds = evaluate_loss(model, val_clips, val_labels,
                                            cfg.batch_size)
        if not np.isfinite(val_loss):
            raise Divergence(f"non-finite validation loss at epoch {epoch}")
        cm = confusion_matrix(val_labels, val_preds, model.arch.n_classes)
        stats = EpochStats(epoch=epoch, lr=lr_now,
                           train_loss=running / max(seen, 1),
                           val_loss=val_loss, val_kappa=weighted_kappa(cm))
        history.append(stats)
        if log:
            log(stats)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = model.get_state()

        sched.step(val_loss)
        if opt.lr < cfg.early_stop_lr:
            stop_reason = "lr_floor"
            break

    model.set_state(best_state)
    return TrainResult(history=history, best_val_loss=float(best_val),
                       best_epoch=best_epoch, stop_reason=stop_reason)


def predict(model: ConvLSTM, clips, batch_size: int = 16):
    """(merged classes, probabilities, embeddings) for a list of clips.

    Argmax ties resolve to the lowest class index.
    """
    classes, probs, embeds = [], [], []
    with engine.no_grad():
        for idx in _batches(len(clips), batch_size):
            batch, lengths = pad_clips([clips[i] for i in idx])
            logits, emb, _ = model.forward(batch, lengths=lengths, training=False)
            p = engine.softmax(engine.as_tensor(logits.data), axis=1).data
            classes.extend(np.argmax(p, axis=1).tolist())
            probs.append(p)
            embeds.append(emb.data)
    return (np.array(classes, dtype=int), np.concatenate(probs, axis=0),
            np.concatenate(embeds, axis=0))
