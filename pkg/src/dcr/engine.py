"""Two-phase training engine: order pre-training, then context-removal
training with the easiness curriculum, plus evaluation and the ablation
harness.

Every stochastic draw (shuffles, visibility masks, dropout) comes from a
generator keyed by (seed, epoch, ...) rather than global state, so a run
is bit-reproducible regardless of batch iteration details, and BLAS
thread pools are pinned to one thread during runs.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .tensor import Tensor
from .curriculum import (
    EasinessBank,
    ScheduleSpec,
    VisibilityMask,
    eval_mask,
    global_easiness,
    mask_rng,
    reconstruction_quality,
    sample_mask,
    write_easiness_trace,
)
from .objectives import (
    HeadSet,
    LossWeights,
    MetricAccumulator,
    class_weights,
    consensus_predict,
    smoothed_ce_batch,
)
from .optim import build_optimizer, clip_global_norm
from .order_pretrain import gaussian_affinity, order_loss, position_accuracy
from .reasoners import FeatureSequence, ReasonerConfig, build_reasoner


class ConfigError(Exception):
    """Invalid configuration (CLI exit code 2)."""


class NumericFailure(Exception):
    """Non-finite loss; carries the offending instance ids (exit code 3)."""


ABLATION_VARIANTS = (
    "dcr",
    "classification",
    "no-pretrain",
    "te-1",
    "te-0",
    "linear",
    "exponential",
    "no-rec",
    "no-smooth",
)


@dataclass
class TrainConfig:
    """Everything a training run depends on."""

    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    pretrain_epochs: int = 15
    train_epochs: int = 40
    batch_size: int = 64
    base_lr: float = 1e-3
    pretrain_lr: float = 1e-3
    warmup_epochs: int = 5
    optimizer: str = ""  # empty -> adamw for transformer, sgd for lstm
    weight_decay: Optional[float] = None
    grad_clip: float = 1.0
    seed: int = 0
    mode: str = "anticipation"  # "classification" trains pooled-token heads only
    rec_squared: bool = False
    sigma: float = 5.0
    temperature: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.train_epochs >= 1 and self.warmup_epochs >= self.train_epochs and self.train_epochs > 1:
            raise ConfigError("warmup must end before the last epoch")
        if self.mode not in ("anticipation", "classification"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    @property
    def optimizer_kind(self) -> str:
        if self.optimizer:
            return self.optimizer
        return "adamw" if self.reasoner.architecture == "transformer" else "sgd"

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("reasoner", "weights", "schedule")}
        d["reasoner"] = self.reasoner.to_dict()
        d["weights"] = self.weights.__dict__.copy()
        d["schedule"] = self.schedule.__dict__.copy()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        try:
            reasoner = ReasonerConfig.from_dict(d.pop("reasoner", {}))
            weights = LossWeights(**d.pop("weights", {}))
            schedule = ScheduleSpec(**d.pop("schedule", {}))
            return cls(reasoner=reasoner, weights=weights, schedule=schedule, **d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


class RunLog:
    """Append-only per-epoch record of a run."""

    def __init__(self, rows: Optional[list[dict]] = None):
        self.rows: list[dict] = []
        for row in rows or []:
            self.append(row)

    def append(self, row: dict) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("rows must arrive in strictly increasing epoch order")
        self.rows.append(dict(row))

    def comparable(self) -> list[dict]:
        """Rows without wall time, for run-to-run identity checks."""
        return [{k: v for k, v in row.items() if k != "wall_time"} for row in self.rows]

    def to_csv(self, path) -> None:
        if not self.rows:
            Path(path).write_text("")
            return
        cols = list(self.rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([repr(row.get(c)) if isinstance(row.get(c), float) else row.get(c) for c in cols])

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for raw in reader:
                row = {}
                for k, v in raw.items():
                    if v is None or v == "" or v == "None":
                        row[k] = None
                    elif k in ("epoch",):
                        row[k] = int(v)
                    else:
                        try:
                            row[k] = float(v)
                        except ValueError:
                            row[k] = v
                out.append(row)
        return out


def lr_at_epoch(base_lr: float, epoch: int, total_epochs: int, warmup_epochs: int = 5) -> float:
    """Linear warmup to the base rate, then half-cosine annealing to zero.

    Continuous at the warmup boundary and exactly zero at the last epoch.
    """
    if not 1 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{total_epochs}")
    w = min(warmup_epochs, total_epochs)
    if epoch <= w:
        return base_lr * epoch / w
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * (epoch - w) / (total_epochs - w)))


def _shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, 0x73687566])


def _dropout_rng(config: TrainConfig, epoch: int, batch_idx: int) -> Optional[np.random.Generator]:
    if config.reasoner.dropout <= 0:
        return None
    return np.random.default_rng([config.seed, epoch, batch_idx, 0x64726F70])


def _batches(order: np.ndarray, batch_size: int):
    for i in range(0, len(order), batch_size):
        yield order[i : i + batch_size]


def head_counts(data: Sequence[FeatureSequence]) -> dict:
    """Class counts per head inferred from the labels present."""
    counts = {"action": 1 + max(seq.action_label for seq in data)}
    if data[0].verb_label is not None:
        counts["verb"] = 1 + max(seq.verb_label for seq in data)
        counts["noun"] = 1 + max(seq.noun_label for seq in data)
    return counts


def build_heads(data: Sequence[FeatureSequence], config: TrainConfig) -> HeadSet:
    counts = head_counts(data)
    input_dim = data[0].dim if config.mode == "anticipation" else config.reasoner.latent_dim
    return HeadSet(
        input_dim,
        counts["action"],
        counts.get("verb"),
        counts.get("noun"),
        seed=config.seed,
        dtype=config.reasoner.np_dtype,
    )


def _labels_of(seq: FeatureSequence, head: str) -> int:
    return {"action": seq.action_label, "verb": seq.verb_label, "noun": seq.noun_label}[head]


class Trainer:
    """Owns one context-removal training run."""

    def __init__(
        self,
        model,
        heads: HeadSet,
        data: Sequence[FeatureSequence],
        config: TrainConfig,
        bank: Optional[EasinessBank] = None,
    ):
        if not data:
            raise ConfigError("empty training set")
        ks = {seq.k for seq in data}
        if len(ks) != 1:
            raise ConfigError(f"mixed sequence lengths {sorted(ks)}; one layout per dataset")
        self.model = model
        self.heads = heads
        self.data = list(data)
        self.config = config
        self.bank = bank if bank is not None else EasinessBank(config.schedule.gamma_min, config.schedule.gamma_max)
        self.k = data[0].k
        self.class_w = {
            head: class_weights(np.bincount([_labels_of(s, head) for s in data], minlength=n))
            for head, n in head_counts(data).items()
            if head in heads.heads
        }
        self.params = model.parameters() + heads.parameters()
        self.optimizer = build_optimizer(config.optimizer_kind, self.params, config.weight_decay)
        self.easiness_trace: list[tuple[int, str, float, float]] = []

    # -- masks -------------------------------------------------------------

    def _easiness_for(self, seq: FeatureSequence, epoch: int) -> float:
        spec = self.config.schedule
        if spec.kind == "instance_local":
            return self.bank.easiness(seq.instance_id)
        return global_easiness(spec, epoch, self.config.train_epochs)

    def _train_mask(self, seq: FeatureSequence, epoch: int) -> VisibilityMask:
        if self.config.mode == "classification":
            return eval_mask(self.k)  # no auxiliary frames at all
        t_e = self._easiness_for(seq, epoch)  # bank yields 1.0 for epochs 1-2
        return sample_mask(self.k, t_e, "train", mask_rng(self.config.seed, epoch, seq.instance_id))

    # -- one epoch -----------------------------------------------------------

    def train_epoch(self, epoch: int) -> dict:
        """Run one pass over the data and return the run-log row.

        Per instance: sample the visibility mask at the easiness frozen
        for this epoch, forward, apply the weighted losses, backprop,
        step, and record the reconstruction quality into the memory bank.
        The easiness sweep for the next epoch happens at the boundary.
        """
        cfg = self.config
        t_start = time.perf_counter()
        if cfg.schedule.kind == "instance_local":
            self.bank.start_epoch(epoch)
            t_stats = self.bank.stats()
        else:
            t_e = global_easiness(cfg.schedule, epoch, cfg.train_epochs)
            t_stats = (t_e, t_e, t_e)
        lr = lr_at_epoch(cfg.base_lr, epoch, cfg.train_epochs, cfg.warmup_epochs)
        order = _shuffle_rng(cfg.seed, epoch).permutation(len(self.data))

        sums = {"total": 0.0, "rec": 0.0}
        for head in self.heads.heads:
            sums[f"cls_{head}"] = 0.0
        top1_hits = 0
        for batch_idx, idxs in enumerate(_batches(order, cfg.batch_size)):
            batch = [self.data[i] for i in idxs]
            masks = [self._train_mask(seq, epoch) for seq in batch]
            frames = np.stack([seq.frames for seq in batch]).astype(cfg.reasoner.np_dtype)
            beta = np.stack([m.beta for m in masks])
            rng = _dropout_rng(cfg, epoch, batch_idx)
            z, tokens = self.model.forward_batch(frames, beta, use_positional_encoding=True, dropout_rng=rng)

            cls_vecs, action_logits = self._head_losses(batch, z, tokens)
            if cfg.mode == "anticipation":
                diff = T.sub(z, frames)
                if cfg.rec_squared:
                    per_frame = T.tsum(T.mul(diff, diff), axis=-1)
                else:
                    per_frame = T.l2_norm(diff, axis=-1)
                rec_vec = T.tsum(T.mul(per_frame, 1.0 - beta), axis=-1)
            else:
                rec_vec = Tensor(np.zeros(len(batch), dtype=cfg.reasoner.np_dtype))
            cls_sum = None
            for head in self.heads.heads:
                cls_sum = cls_vecs[head] if cls_sum is None else T.add(cls_sum, cls_vecs[head])
            total_vec = T.add(T.mul(cls_sum, cfg.weights.lambda_cls), T.mul(rec_vec, cfg.weights.lambda_rec))
            loss = T.tmean(total_vec)

            if not np.isfinite(total_vec.data).all():
                bad = [batch[i].instance_id for i in np.nonzero(~np.isfinite(total_vec.data))[0]]
                raise NumericFailure(f"non-finite loss at epoch {epoch} for instances {bad}")

            self.model.zero_grad()
            self.heads.zero_grad()
            loss.backward()
            clip_global_norm(self.params, cfg.grad_clip)
            self.optimizer.step(lr)

            sums["total"] += float(total_vec.data.sum())
            sums["rec"] += float(rec_vec.data.sum())
            for head in self.heads.heads:
                sums[f"cls_{head}"] += float(cls_vecs[head].data.sum())
            if action_logits.ndim == 3:
                preds = consensus_predict(action_logits.data)
            else:
                preds = _softmax_np(action_logits.data)
            top1_hits += int((preds.argmax(axis=-1) == [s.action_label for s in batch]).sum())

            if cfg.mode == "anticipation":
                z_np = z.data
                for i, seq in enumerate(batch):
                    q = reconstruction_quality(frames[i], z_np[i], masks[i])
                    self.bank.record_quality(seq.instance_id, q, epoch)
                    self.easiness_trace.append((epoch, seq.instance_id, self._easiness_for(seq, epoch), q))

        n = len(self.data)
        row = {"epoch": epoch, "lr": float(lr)}
        row["loss_total"] = sums["total"] / n
        row["loss_rec"] = sums["rec"] / n
        for head in self.heads.heads:
            row[f"loss_cls_{head}"] = sums[f"cls_{head}"] / n
        row["train_top1_action"] = top1_hits / n
        row["easiness_min"], row["easiness_mean"], row["easiness_max"] = t_stats
        row["wall_time"] = time.perf_counter() - t_start
        return row

    def _head_losses(self, batch, z: Tensor, tokens: Tensor):
        """Per-head smoothed-CE vectors plus the raw action logits."""
        cfg = self.config
        if cfg.mode == "anticipation":
            feat = z[:, :4, :]
        else:
            feat = T.tmean(tokens[:, 8:, :], axis=1)  # visible observation pooled
        cls_vecs: dict[str, Tensor] = {}
        action_logits = None
        for head in self.heads.heads:
            logits = self.heads.logits(feat, head)
            probs = T.softmax(logits, axis=-1)
            if probs.ndim == 2:
                probs = T.reshape(probs, (probs.shape[0], 1, probs.shape[1]))
            ys = np.array([_labels_of(seq, head) for seq in batch])
            cls_vecs[head] = smoothed_ce_batch(probs, ys, self.class_w[head], cfg.weights.epsilon)
            if head == "action":
                action_logits = logits
        return cls_vecs, action_logits

    # -- full run ---------------------------------------------------------------

    def run(self) -> RunLog:
        log = RunLog()
        with threadpool_limits(limits=1):
            for epoch in range(1, self.config.train_epochs + 1):
                log.append(self.train_epoch(epoch))
        return log

    def write_easiness_csv(self, path) -> None:
        write_easiness_trace(path, self.easiness_trace)


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def evaluate(
    model,
    heads: HeadSet,
    data: Sequence[FeatureSequence],
    config: TrainConfig,
    gap_reveal: int = 0,
) -> dict:
    """Test-time metrics: future frames hidden, consensus over the four
    reconstructed action frames (``gap_reveal`` optionally re-reveals gap
    frames 8, 7, 6, 5 to shrink the anticipation gap)."""
    if not data:
        raise ValueError("empty evaluation set")
    k = data[0].k
    accs = {head: MetricAccumulator(heads.class_counts[head]) for head in heads.heads}
    mask = eval_mask(k, gap_reveal)
    with threadpool_limits(limits=1):
        for idxs in _batches(np.arange(len(data)), config.batch_size):
            batch = [data[i] for i in idxs]
            frames = np.stack([seq.frames for seq in batch]).astype(config.reasoner.np_dtype)
            beta = np.broadcast_to(mask.beta, (len(batch), k))
            z, tokens = model.forward_batch(frames, beta, use_positional_encoding=True, dropout_rng=None)
            if config.mode == "anticipation":
                feat = z[:, :4, :]
            else:
                feat = T.tmean(tokens[:, 8:, :], axis=1)
            for head in heads.heads:
                logits = heads.logits(feat, head).data
                scores = consensus_predict(logits) if logits.ndim == 3 else _softmax_np(logits)
                for i, seq in enumerate(batch):
                    accs[head].add(scores[i], _labels_of(seq, head))
    return {head: acc.finalize() for head, acc in accs.items()}


def evaluate_gap_sweep(model, heads, data, config) -> dict[int, dict]:
    """Metrics as the anticipation gap shrinks: reveal 0..4 gap frames."""
    return {r: evaluate(model, heads, data, config, gap_reveal=r) for r in range(5)}


def pretrain(model, data: Sequence[FeatureSequence], config: TrainConfig) -> RunLog:
    """Order-aware pre-training: all frames visible, positional encoding
    off at the input, tokens supervised to locate their position."""
    if not data:
        raise ConfigError("empty pre-training set")
    if "pos_table" not in model.params:
        raise ConfigError("order pre-training needs a positional table (transformer only)")
    k = data[0].k
    labels = gaussian_affinity(k, config.sigma)
    params = model.parameters()
    optimizer = build_optimizer("adamw", params, config.weight_decay)
    probe = data[: min(len(data), 512)]  # clean-forward accuracy probe
    probe_frames = np.stack([seq.frames for seq in probe]).astype(config.reasoner.np_dtype)
    probe_beta = np.ones((len(probe), k), dtype=config.reasoner.np_dtype)
    log = RunLog()
    with threadpool_limits(limits=1):
        for epoch in range(1, config.pretrain_epochs + 1):
            t_start = time.perf_counter()
            lr = lr_at_epoch(config.pretrain_lr, epoch, config.pretrain_epochs, config.warmup_epochs)
            order = _shuffle_rng(config.seed, epoch).permutation(len(data))
            loss_sum = 0.0
            for batch_idx, idxs in enumerate(_batches(order, config.batch_size)):
                batch = [data[i] for i in idxs]
                frames = np.stack([seq.frames for seq in batch]).astype(config.reasoner.np_dtype)
                beta = np.ones((len(batch), k), dtype=config.reasoner.np_dtype)
                rng = _dropout_rng(config, epoch, batch_idx)
                _, tokens = model.forward_batch(frames, beta, use_positional_encoding=False, dropout_rng=rng)
                table = model.params["pos_table"][:k]
                loss = order_loss(tokens, table, labels, config.temperature)
                if not np.isfinite(loss.data).all():
                    raise NumericFailure(f"non-finite pre-training loss at epoch {epoch}")
                model.zero_grad()
                loss.backward()
                clip_global_norm(params, config.grad_clip)
                optimizer.step(lr)
                loss_sum += loss.item() * len(batch)
            _, probe_tokens = model.forward_batch(probe_frames, probe_beta, use_positional_encoding=False, dropout_rng=None)
            acc = position_accuracy(probe_tokens.data, model.params["pos_table"].data[:k])
            row = {
                "epoch": epoch,
                "lr": float(lr),
                "loss_order": loss_sum / len(data),
                "position_accuracy": acc,
                "wall_time": time.perf_counter() - t_start,
            }
            log.append(row)
    model.order_pretrained = True
    return log


def _variant_config(name: str, config: TrainConfig) -> tuple[TrainConfig, bool]:
    """(config, wants_pretraining) for one ablation row."""
    if name not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r} (choose from {ABLATION_VARIANTS})")
    pretrainable = config.reasoner.architecture == "transformer"
    if name == "dcr":
        return replace(config, schedule=ScheduleSpec(kind="instance_local")), pretrainable
    if name == "classification":
        return replace(config, mode="classification"), False
    if name == "no-pretrain":
        return replace(config, schedule=ScheduleSpec(kind="instance_local")), False
    if name == "te-1":
        return replace(config, schedule=ScheduleSpec(kind="constant", constant=1.0)), pretrainable
    if name == "te-0":
        return replace(config, schedule=ScheduleSpec(kind="constant", constant=0.0)), pretrainable
    if name == "linear":
        return replace(config, schedule=ScheduleSpec(kind="linear")), pretrainable
    if name == "exponential":
        return replace(config, schedule=ScheduleSpec(kind="exponential")), pretrainable
    if name == "no-rec":
        weights = LossWeights(config.weights.lambda_cls, 0.0, config.weights.epsilon)
        return replace(config, weights=weights, schedule=ScheduleSpec(kind="instance_local")), pretrainable
    if name == "no-smooth":
        weights = LossWeights(config.weights.lambda_cls, config.weights.lambda_rec, 0.0)
        return replace(config, weights=weights, schedule=ScheduleSpec(kind="instance_local")), pretrainable
    raise AssertionError(name)


def run_variant(
    name: str,
    train_data: Sequence[FeatureSequence],
    val_data: Sequence[FeatureSequence],
    config: TrainConfig,
    pretrained_params: Optional[dict] = None,
) -> tuple[dict, RunLog, object]:
    """Train one ablation variant and evaluate it under test-time masks.

    ``pretrained_params`` (name -> array) seeds the reasoner when the
    variant uses pre-training, so all variants of a seed share one
    pre-training run.
    """
    vcfg, wants_pretrain = _variant_config(name, config)
    model = build_reasoner(vcfg.reasoner, seed=vcfg.seed)
    if wants_pretrain:
        if pretrained_params is None:
            pretrain(model, train_data, vcfg)
        else:
            for pname, values in pretrained_params.items():
                model.params[pname].data = values.copy()
            model.order_pretrained = True
    heads = build_heads(train_data, vcfg)
    trainer = Trainer(model, heads, train_data, vcfg)
    log = trainer.run()
    result = evaluate(model, heads, val_data, vcfg)
    return result, log, trainer


def run_ablation(
    variants: Sequence[str],
    train_data: Sequence[FeatureSequence],
    val_data: Sequence[FeatureSequence],
    config: TrainConfig,
) -> dict:
    """Train each requested variant with identical seeds and data; returns
    {variant: per-head metrics} plus a plain-text comparison table."""
    for name in variants:
        _variant_config(name, config)  # validate before spending any time
    shared = None
    if config.reasoner.architecture == "transformer" and any(
        _variant_config(name, config)[1] for name in variants
    ):
        seed_model = build_reasoner(config.reasoner, seed=config.seed)
        pretrain(seed_model, train_data, config)
        shared = {name: t.data.copy() for name, t in seed_model.params.items()}
    results = {}
    for name in variants:
        metrics, _, _ = run_variant(name, train_data, val_data, config, pretrained_params=shared)
        results[name] = metrics
    return {"variants": results, "table": format_ablation_table(results)}


def format_ablation_table(results: dict[str, dict]) -> str:
    heads = sorted({h for metrics in results.values() for h in metrics})
    cols = [f"{h}.top1" for h in heads] + [f"{h}.recall@5" for h in heads]
    lines = ["variant".ljust(16) + "".join(c.rjust(18) for c in cols)]
    for name, metrics in results.items():
        cells = [f"{metrics[h]['top1'] * 100:.1f}" if h in metrics else "-" for h in heads]
        cells += [f"{metrics[h]['class_mean_recall@5'] * 100:.1f}" if h in metrics else "-" for h in heads]
        lines.append(name.ljust(16) + "".join(c.rjust(18) for c in cells))
    return "\n".join(lines)
