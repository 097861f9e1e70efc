"""Classification heads, losses and evaluation metrics.

The four reconstructed action frames are classified independently and
averaged into a consensus at evaluation time. The classification loss is
a label-smoothed, class-weighted cross entropy summed over those four
frames; the reconstruction loss is the visibility-masked L2 distance per
frame (with an optional squared-error variant).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_FLOOR = 1e-12

WEIGHT_CLAMP_LO = 0.1
WEIGHT_CLAMP_HI = 10.0


@dataclass
class LossWeights:
    """Scalar weights of the total loss and the smoothing factor."""

    lambda_cls: float = 0.5
    lambda_rec: float = 1.0
    epsilon: float = 0.2

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_rec < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("smoothing factor must lie in [0, 1)")


def class_weights(histogram: np.ndarray) -> np.ndarray:
    """Inverse-frequency class weights, mean-normalized and clamped.

    w_c = (mean count) / count_c for classes that appear; classes absent
    from the histogram get the clamp maximum.
    """
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.size == 0 or counts.sum() == 0:
        raise ValueError("empty label histogram")
    if (counts < 0).any():
        raise ValueError("negative class count")
    seen = counts > 0
    mean = counts[seen].mean()
    w = np.full(counts.shape, WEIGHT_CLAMP_HI)
    w[seen] = np.clip(mean / counts[seen], WEIGHT_CLAMP_LO, WEIGHT_CLAMP_HI)
    return w


def smoothed_ce(
    predictions: Tensor,
    y: int,
    w: np.ndarray,
    epsilon: float,
) -> Tensor:
    """Label-smoothed weighted cross entropy over the action-frame rows.

    ``predictions`` holds per-frame probability rows (typically 4 x C).
    Per row i the contribution is
    ``-(1-eps) * w_y * log p_i[y] - sum_j (eps/C) * log p_i[j]``.
    Probabilities are clamped at 1e-12 before the log; if any entry was
    clamped the returned tensor has ``clamp_applied`` set.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("smoothing factor must lie in [0, 1)")
    c = predictions.shape[-1]
    if not 0 <= y < c:
        raise ValueError(f"label {y} outside [0, {c})")
    clamped = bool((predictions.data < LOG_FLOOR).any())
    logp = T.log(T.clamp_min(predictions, LOG_FLOOR))
    onehot = np.zeros(c)
    onehot[y] = 1.0
    picked = T.tsum(T.mul(logp, onehot), axis=-1)            # log p_i[y], per frame
    smooth = T.mul(T.tsum(logp, axis=-1), epsilon / c)       # (eps/C) sum_j log p_i[j]
    loss = -T.tsum(T.add(T.mul(picked, (1.0 - epsilon) * float(w[y])), smooth))
    loss.clamp_applied = clamped
    return loss


def smoothed_ce_batch(
    predictions: Tensor,
    ys: np.ndarray,
    w: np.ndarray,
    epsilon: float,
) -> Tensor:
    """Vectorized smoothed CE over a (B, F, C) probability batch.

    Returns the per-instance losses as a length-B tensor (each entry sums
    over that instance's F frames, matching the single-instance form).
    """
    b, _, c = predictions.shape
    ys = np.asarray(ys, dtype=np.intp)
    clamped = bool((predictions.data < LOG_FLOOR).any())
    logp = T.log(T.clamp_min(predictions, LOG_FLOOR))
    onehot = np.zeros((b, 1, c))
    onehot[np.arange(b), 0, ys] = 1.0
    picked = T.tsum(T.mul(logp, onehot), axis=-1)          # (B, F) log p at the label
    smooth = T.mul(T.tsum(logp, axis=-1), epsilon / c)     # (B, F)
    wy = (1.0 - epsilon) * np.asarray(w, dtype=np.float64)[ys][:, None]
    loss = -T.tsum(T.add(T.mul(picked, wy), smooth), axis=-1)
    loss.clamp_applied = clamped
    return loss


def reconstruction_loss(
    x,
    z: Tensor,
    beta: np.ndarray,
    squared: bool = False,
) -> Tensor:
    """Masked-frame reconstruction error: sum over hidden frames of the
    per-frame L2 distance between original and reconstruction (visible
    frames contribute nothing). ``squared=True`` switches the per-frame
    term to the squared distance. ``x`` may be an array (constant target)
    or a tensor (gradients then reach the target side too)."""
    if x.shape != z.shape:
        raise ValueError("shape mismatch between original and reconstruction")
    diff = T.sub(z, x)
    hidden = 1.0 - np.asarray(beta, dtype=np.float64)
    if squared:
        per_frame = T.tsum(T.mul(diff, diff), axis=-1)
    else:
        per_frame = T.l2_norm(diff, axis=-1)
    return T.tsum(T.mul(per_frame, hidden))


def total_loss(
    cls_losses: dict[str, Tensor],
    rec_loss: Tensor,
    weights: LossWeights,
) -> Tensor:
    """Weighted sum: lambda_cls * (sum of per-head CE) + lambda_rec * rec."""
    if not cls_losses:
        raise ValueError("need at least the action head loss")
    cls_sum = None
    for key in sorted(cls_losses):
        cls_sum = cls_losses[key] if cls_sum is None else T.add(cls_sum, cls_losses[key])
    return T.add(T.mul(cls_sum, weights.lambda_cls), T.mul(rec_loss, weights.lambda_rec))


class HeadSet:
    """Linear classifiers over the reconstructed action frames.

    The action head is mandatory; verb and noun heads come as a pair.
    ``input_dim`` is the feature dimension the heads consume (the decoded
    frame dimension for anticipation training, or the latent dimension
    for the mean-pooled classification baseline).
    """

    def __init__(
        self,
        input_dim: int,
        n_action: int,
        n_verb: Optional[int] = None,
        n_noun: Optional[int] = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        if (n_verb is None) != (n_noun is None):
            raise ValueError("verb and noun heads come together or not at all")
        rng = np.random.default_rng([seed, 0x68656164])
        self.input_dim = input_dim
        self.params: dict[str, Tensor] = {}
        self.class_counts = {"action": n_action}
        self._add_head(rng, "action", input_dim, n_action, dtype)
        if n_verb is not None:
            self.class_counts["verb"] = n_verb
            self.class_counts["noun"] = n_noun
            self._add_head(rng, "verb", input_dim, n_verb, dtype)
            self._add_head(rng, "noun", input_dim, n_noun, dtype)

    def _add_head(self, rng, name: str, d: int, c: int, dtype) -> None:
        bound = np.sqrt(6.0 / (d + c))
        self.params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, size=(d, c)).astype(dtype), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    @property
    def heads(self) -> list[str]:
        return list(self.class_counts)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def logits(self, features: Tensor, head: str) -> Tensor:
        """Apply one linear head to (..., input_dim) features."""
        return T.add(T.matmul(features, self.params[f"{head}.w"]), self.params[f"{head}.b"])


def consensus_predict(frame_logits: np.ndarray) -> np.ndarray:
    """Average the four action-frame logit rows, then softmax.

    Accepts (4, C) or batched (B, 4, C); returns (C,) or (B, C).
    """
    mean = np.asarray(frame_logits, dtype=np.float64).mean(axis=-2)
    shifted = mean - mean.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _toprank(scores: np.ndarray, label: int, k: int) -> bool:
    """True when ``label`` ranks within the top k (ties by lower index)."""
    order = np.argsort(-scores, kind="stable")
    return label in order[:k]


@dataclass
class MetricAccumulator:
    """Mergeable accumulator for top-1/top-5 and class-mean recall@5.

    Evaluation shards can each build one and be merged associatively.
    """

    n_classes: int
    total: int = 0
    hit1: int = 0
    hit5: int = 0
    per_class_total: np.ndarray = field(default=None)
    per_class_hit5: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.per_class_total is None:
            self.per_class_total = np.zeros(self.n_classes, dtype=np.int64)
        if self.per_class_hit5 is None:
            self.per_class_hit5 = np.zeros(self.n_classes, dtype=np.int64)

    def add(self, scores: np.ndarray, label: int) -> None:
        self.total += 1
        self.per_class_total[label] += 1
        if _toprank(scores, label, 1):
            self.hit1 += 1
        if _toprank(scores, label, 5):
            self.hit5 += 1
            self.per_class_hit5[label] += 1

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge accumulators over different class counts")
        out = MetricAccumulator(self.n_classes)
        out.total = self.total + other.total
        out.hit1 = self.hit1 + other.hit1
        out.hit5 = self.hit5 + other.hit5
        out.per_class_total = self.per_class_total + other.per_class_total
        out.per_class_hit5 = self.per_class_hit5 + other.per_class_hit5
        return out

    def finalize(self) -> dict:
        if self.total == 0:
            raise ValueError("empty evaluation set")
        present = self.per_class_total > 0
        recalls = self.per_class_hit5[present] / self.per_class_total[present]
        return {
            "top1": self.hit1 / self.total,
            "top5": self.hit5 / self.total,
            "class_mean_recall@5": float(recalls.mean()),
        }


def metrics(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> dict:
    """Top-1 / top-5 accuracy and class-mean recall@5 for one head."""
    labels = np.asarray(labels)
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    acc = MetricAccumulator(n_classes)
    for scores, label in zip(predictions, labels):
        acc.add(np.asarray(scores), int(label))
    return acc.finalize()


METRIC_REPORT_VERSION = 1


def metric_report(per_head: dict[str, dict], losses: Optional[dict] = None) -> dict:
    """Versioned JSON-ready report of per-head metrics and loss components."""
    return {
        "schema_version": METRIC_REPORT_VERSION,
        "heads": per_head,
        "losses": dict(losses) if losses else {},
    }
