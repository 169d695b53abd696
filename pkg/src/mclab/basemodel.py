"""The staged base classifier: conv features -> LSTM -> attention -> head.

The conv output (C', H', W') is read row-major as a sequence of T = H'*W'
positions with C' features each, run through a single unrolled LSTM cell and
one attention stage, mean-pooled over positions and classified by a two-layer
head. Class imbalance is handled by inverse-frequency weights in the loss;
per-channel input standardization stands in for batch normalization at this
scale. Intermediate representations from all four stages are exposed as
latent records for downstream correctors.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import LabeledDataset, Rng
from .stages import AttentionStage, ConvStage, HeadStage, LstmStage, softmax

__all__ = [
    "LatentLayout",
    "LatentRecord",
    "ModelConfig",
    "StagedModel",
    "TrainConfig",
    "TrainingHistory",
    "extract_latents",
    "load_model",
    "predict_batch",
    "save_model",
    "stack_latents",
    "train",
    "weighted_ce_loss",
]

logger = logging.getLogger("mclab")

LOG_CLAMP = 1e-12
MODEL_MAGIC = "mclab-model v1"

LATENT_STAGES = ("conv_out", "lstm_out", "attn_out", "fc_out", "logits")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs. The sequence width equals the last conv channel
    count, so the LSTM/attention/head width is conv_channels[-1]."""

    input_shape: tuple[int, int, int] = (1, 8, 8)
    conv_channels: tuple[int, ...] = (4, 8, 16)
    n_heads: int = 1
    n_classes: int = 7

    def validate(self) -> None:
        if len(self.input_shape) != 3 or any(s < 1 for s in self.input_shape):
            raise ValueError("input_shape must be (channels, height, width)")
        if len(self.conv_channels) != 3 or any(c < 1 for c in self.conv_channels):
            raise ValueError("conv_channels must be three positive counts")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        h, w = self.input_shape[1], self.input_shape[2]
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError("input too small: pooling collapses below 1x1")
        if self.width % self.n_heads != 0:
            raise ValueError("conv_channels[-1] must be divisible by n_heads")

    @property
    def width(self) -> int:
        return int(self.conv_channels[-1])

    @property
    def conv_out_shape(self) -> tuple[int, int, int]:
        h, w = self.input_shape[1], self.input_shape[2]
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
        return (self.width, h, w)

    @property
    def seq_len(self) -> int:
        _, h, w = self.conv_out_shape
        return h * w


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    batch_size: int = 64
    max_epochs: int = 60
    patience: int = 10
    dropout_p: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


@dataclass(frozen=True)
class LatentLayout:
    """Ordered stage blocks of the concatenated latent vector."""

    names: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.sizes) or not self.names:
            raise ValueError("names and sizes must align and be non-empty")
        if any(s < 1 for s in self.sizes):
            raise ValueError("block sizes must be positive")

    @property
    def offsets(self) -> tuple[int, ...]:
        out = []
        pos = 0
        for s in self.sizes:
            out.append(pos)
            pos += s
        return tuple(out)

    @property
    def total(self) -> int:
        return int(sum(self.sizes))

    def block_slice(self, name: str) -> slice:
        for n, off, size in zip(self.names, self.offsets, self.sizes):
            if n == name:
                return slice(off, off + size)
        raise KeyError(name)


@dataclass(frozen=True)
class LatentRecord:
    """Per-sample intermediate representations of the staged model.

    conv_out: conv features mean-pooled over space (length C')
    lstm_out: final LSTM hidden state (length D)
    attn_out: attention output mean-pooled over positions (length D)
    fc_out:   head hidden activation before the final linear (length D)
    logits:   unnormalized class scores (length K)
    """

    conv_out: np.ndarray
    lstm_out: np.ndarray
    attn_out: np.ndarray
    fc_out: np.ndarray
    logits: np.ndarray
    layout: LatentLayout

    def concat(self) -> np.ndarray:
        return np.concatenate(
            [self.conv_out, self.lstm_out, self.attn_out, self.fc_out, self.logits]
        )


def stack_latents(records: Sequence[LatentRecord]) -> tuple[np.ndarray, LatentLayout]:
    """Stack records into an (n, total) matrix plus their shared layout."""
    if not records:
        raise ValueError("no latent records")
    layout = records[0].layout
    for r in records:
        if r.layout != layout:
            raise ValueError("latent records disagree on layout")
    return np.stack([r.concat() for r in records]), layout


def weighted_ce_loss(probs: np.ndarray, label: int, weights: np.ndarray) -> float:
    """Weighted cross-entropy -w_y * log(p_y) with the log clamped at 1e-12."""
    p = max(float(probs[int(label)]), LOG_CLAMP)
    return -float(weights[int(label)]) * float(np.log(p))


class StagedModel:
    """Conv -> LSTM -> attention -> head classifier over small image tensors.

    Flat feature vectors whose length equals prod(input_shape) are reshaped
    transparently, so Gaussian-cluster datasets feed the conv front end too.
    """

    def __init__(self, config: ModelConfig, rng: Rng | None = None, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = int(seed)
        gen = (rng if rng is not None else Rng.from_seed(seed).derive("init")).generator()
        c0 = config.input_shape[0]
        self.conv = ConvStage(c0, config.conv_channels, gen)
        self.lstm = LstmStage(config.width, config.width, gen)
        self.attn = AttentionStage(config.width, config.n_heads, gen)
        self.head = HeadStage(config.width, config.n_classes, gen)
        self.input_mean = np.zeros(c0)
        self.input_std = np.ones(c0)

    # ---- parameters ----

    def params(self) -> list[tuple[str, np.ndarray]]:
        out: list[tuple[str, np.ndarray]] = []
        for stage in (self.conv, self.lstm, self.attn, self.head):
            out.extend(stage.params())
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("input_mean", self.input_mean), ("input_std", self.input_std)]

    def set_input_stats(self, data: LabeledDataset) -> None:
        """Per-channel standardization statistics from a training set."""
        x = self._reshape(np.asarray(data.features, dtype=np.float64))
        self.input_mean = x.mean(axis=(0, 2, 3))
        self.input_std = np.maximum(x.std(axis=(0, 2, 3)), 1e-6)

    # ---- forward / backward ----

    def _reshape(self, x: np.ndarray) -> np.ndarray:
        shape = self.config.input_shape
        flat = int(np.prod(shape))
        if x.shape[1:] == shape:
            return x
        if x.ndim == 2 and x.shape[1] == flat:
            return x.reshape((x.shape[0],) + shape)
        raise ValueError(f"feature shape {x.shape[1:]} incompatible with input {shape}")

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_mean[None, :, None, None]) / self.input_std[None, :, None, None]

    def forward_batch(
        self,
        x: np.ndarray,
        training: bool = False,
        dropout_p: float = 0.0,
        gen: np.random.Generator | None = None,
        dropout_mask: np.ndarray | None = None,
    ) -> dict:
        """Run the full pipeline; returns probs, logits, latents and caches."""
        x = self._standardize(self._reshape(np.asarray(x, dtype=np.float64)))
        b_n = x.shape[0]
        conv_out, conv_cache = self.conv.forward(x)
        c_p, h_p, w_p = conv_out.shape[1:]
        seq = np.ascontiguousarray(
            conv_out.reshape(b_n, c_p, h_p * w_p).transpose(0, 2, 1)
        )  # row-major scan: positions as sequence, channels as features
        hs, lstm_cache = self.lstm.forward(seq)
        attn_out, attn_cache = self.attn.forward(hs)
        pooled = attn_out.mean(axis=1)
        if training and dropout_p > 0.0 and dropout_mask is None:
            if gen is None:
                raise ValueError("training with dropout needs a generator")
            keep = gen.random((b_n, self.config.width)) >= dropout_p
            dropout_mask = keep / (1.0 - dropout_p)
        logits, head_cache = self.head.forward(pooled, dropout_mask)
        probs = softmax(logits, axis=-1)
        return {
            "probs": probs,
            "logits": logits,
            "conv_out": conv_out,
            "hs": hs,
            "attn_seq": attn_out,
            "pooled": pooled,
            "fc_out": head_cache[2],
            "caches": (conv_cache, lstm_cache, attn_cache, head_cache),
            "seq_shape": (b_n, c_p, h_p, w_p),
        }

    def loss_and_grads(
        self,
        x: np.ndarray,
        labels: np.ndarray,
        weights: np.ndarray,
        dropout_p: float = 0.0,
        gen: np.random.Generator | None = None,
        dropout_mask: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean weighted cross-entropy over the batch plus analytic gradients."""
        fwd = self.forward_batch(
            x, training=True, dropout_p=dropout_p, gen=gen, dropout_mask=dropout_mask
        )
        probs = fwd["probs"]
        b_n = probs.shape[0]
        labels = np.asarray(labels, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)[labels]
        picked = np.maximum(probs[np.arange(b_n), labels], LOG_CLAMP)
        loss = float(np.mean(-w * np.log(picked)))

        dlogits = probs.copy()
        dlogits[np.arange(b_n), labels] -= 1.0
        dlogits *= w[:, None] / b_n

        conv_cache, lstm_cache, attn_cache, head_cache = fwd["caches"]
        dpooled, grads = self.head.backward(dlogits, head_cache)
        b_n2, c_p, h_p, w_p = fwd["seq_shape"]
        t_len = h_p * w_p
        dattn_seq = np.repeat(dpooled[:, None, :], t_len, axis=1) / t_len
        dhs, attn_grads = self.attn.backward(dattn_seq, attn_cache)
        grads.update(attn_grads)
        dseq, lstm_grads = self.lstm.backward(dhs, lstm_cache)
        grads.update(lstm_grads)
        dconv = np.ascontiguousarray(dseq.transpose(0, 2, 1)).reshape(b_n2, c_p, h_p, w_p)
        _, conv_grads = self.conv.backward(dconv, conv_cache)
        grads.update(conv_grads)
        return loss, grads

    def latent_layout(self) -> LatentLayout:
        d = self.config.width
        c_p = self.config.conv_out_shape[0]
        return LatentLayout(LATENT_STAGES, (c_p, d, d, d, self.config.n_classes))


def predict_batch(
    model: StagedModel, data: LabeledDataset | np.ndarray, chunk: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Labels (argmax ties break toward the lowest id) and class probabilities."""
    x = data.features if isinstance(data, LabeledDataset) else np.asarray(data)
    probs = np.empty((x.shape[0], model.config.n_classes))
    for start in range(0, x.shape[0], chunk):
        fwd = model.forward_batch(x[start : start + chunk])
        probs[start : start + fwd["probs"].shape[0]] = fwd["probs"]
    return probs.argmax(axis=1), probs


def extract_latents(
    model: StagedModel, data: LabeledDataset | np.ndarray, chunk: int = 256
) -> list[LatentRecord]:
    """Latent records for every sample, dropout disabled, order preserved."""
    x = data.features if isinstance(data, LabeledDataset) else np.asarray(data)
    layout = model.latent_layout()
    records: list[LatentRecord] = []
    for start in range(0, x.shape[0], chunk):
        fwd = model.forward_batch(x[start : start + chunk])
        conv_pooled = fwd["conv_out"].mean(axis=(2, 3))
        lstm_final = fwd["hs"][:, -1, :]
        attn_pooled = fwd["pooled"]
        fc = fwd["fc_out"]
        logits = fwd["logits"]
        for i in range(conv_pooled.shape[0]):
            records.append(
                LatentRecord(
                    conv_out=conv_pooled[i].copy(),
                    lstm_out=lstm_final[i].copy(),
                    attn_out=attn_pooled[i].copy(),
                    fc_out=fc[i].copy(),
                    logits=logits[i].copy(),
                    layout=layout,
                )
            )
    return records


@dataclass
class TrainingHistory:
    """Per-epoch log plus early-stopping bookkeeping."""

    rows: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("nan")
    stopped_early: bool = False
    checkpoint_loss_rose: bool = False

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_acc"]
        for epoch, loss, acc in self.rows:
            lines.append(f"{epoch},{loss:.8f},{acc:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="ascii")


def _accuracy(model: StagedModel, data: LabeledDataset) -> float:
    pred, _ = predict_batch(model, data)
    return float(np.mean(pred == data.labels))


def train(
    model: StagedModel,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    weights: np.ndarray,
    config: TrainConfig,
) -> tuple[StagedModel, TrainingHistory]:
    """SGD with a fixed learning rate and accuracy-based early stopping.

    Zero-weight (masked) samples are dropped before shuffling, so masking a
    class is bit-identical to deleting its samples. The best-validation
    parameters are restored before returning; if train loss rose at the
    checkpoint epoch, the history flags it and a warning is logged.
    """
    config.validate()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (model.config.n_classes,) or np.any(weights < 0):
        raise ValueError("weights must be a non-negative length-K vector")
    keep = weights[train_set.labels] > 0
    active = train_set.subset(np.nonzero(keep)[0]) if not keep.all() else train_set
    if len(active) == 0:
        raise ValueError("empty train set")
    if len(val_set) == 0:
        raise ValueError("empty validation set")

    model.set_input_stats(active)
    gen = Rng.from_seed(config.seed).derive("train").generator()
    x_all = active.features
    y_all = active.labels
    n = len(active)
    history = TrainingHistory()
    best_params = [p.copy() for _, p in model.params()]
    best_acc = -np.inf
    best_epoch = 0
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = gen.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(
                x_all[idx], y_all[idx], weights, dropout_p=config.dropout_p, gen=gen
            )
            loss_sum += loss * idx.size
            for name, param in model.params():
                param -= config.learning_rate * grads[name]
        train_loss = loss_sum / n
        val_acc = _accuracy(model, val_set)
        history.rows.append((epoch, train_loss, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = [p.copy() for _, p in model.params()]
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                history.stopped_early = True
                break

    for (_, param), saved in zip(model.params(), best_params):
        param[...] = saved
    history.best_epoch = best_epoch
    history.best_val_acc = float(best_acc)
    if best_epoch > 1:
        prev_loss = history.rows[best_epoch - 2][1]
        at_best = history.rows[best_epoch - 1][1]
        if at_best > prev_loss:
            history.checkpoint_loss_rose = True
            logger.warning(
                "train loss rose at checkpoint epoch %d (%.6f -> %.6f)",
                best_epoch, prev_loss, at_best,
            )
    return model, history


# ---- checkpoint io ----


def save_model(model: StagedModel, path: str | Path) -> None:
    """Versioned binary checkpoint: text header, then float32 blocks."""
    blocks = model.buffers() + model.params()
    header = {
        "config": {
            "input_shape": list(model.config.input_shape),
            "conv_channels": list(model.config.conv_channels),
            "n_heads": model.config.n_heads,
            "n_classes": model.config.n_classes,
        },
        "seed": model.seed,
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
    }
    buf = io.BytesIO()
    buf.write((MODEL_MAGIC + "\n").encode("ascii"))
    buf.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
    for _, arr in blocks:
        buf.write(np.asarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> StagedModel:
    raw = Path(path).read_bytes()
    first = raw.index(b"\n")
    if raw[:first].decode("ascii") != MODEL_MAGIC:
        raise ValueError(f"not a model checkpoint: {path}")
    second = raw.index(b"\n", first + 1)
    header = json.loads(raw[first + 1 : second].decode("ascii"))
    cfg = ModelConfig(
        input_shape=tuple(header["config"]["input_shape"]),
        conv_channels=tuple(header["config"]["conv_channels"]),
        n_heads=int(header["config"]["n_heads"]),
        n_classes=int(header["config"]["n_classes"]),
    )
    model = StagedModel(cfg, seed=int(header["seed"]))
    offset = second + 1
    arrays = dict(model.buffers() + model.params())
    for name, shape in header["blocks"]:
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        if name not in arrays:
            raise ValueError(f"unknown block {name!r} in checkpoint")
        arrays[name][...] = block.reshape(shape).astype(np.float64)
    return model
