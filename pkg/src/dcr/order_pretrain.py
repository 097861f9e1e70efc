"""Order-aware pre-training: locate each token's temporal position.

With positional encoding removed from the input and every frame visible,
the encoder output token at position j is compared (by cosine) against
all rows of the positional table; the resulting distribution over
positions is supervised with a Gaussian-affinity soft label centered at
j. Gradients reach both the encoder and the positional table, so the
table itself is refined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

SIGMA_DEFAULT = 5.0
# raw cosines in [-1,1] are too flat for a K-way softmax; 0.1 balances
# expressible sharpness against the cosine margin between neighbours
TEMPERATURE_DEFAULT = 0.1


@dataclass
class AffinityLabels:
    """Soft position labels: s[i, j] = exp(-(i-j)^2 / sigma^2).

    ``normalized`` holds the row-normalized matrix actually used as the
    cross-entropy target (each row a probability distribution).
    """

    sigma: float
    matrix: np.ndarray
    normalized: np.ndarray = field(init=False)

    def __post_init__(self):
        self.normalized = self.matrix / self.matrix.sum(axis=1, keepdims=True)


def gaussian_affinity(k: int, sigma: float = SIGMA_DEFAULT) -> AffinityLabels:
    """Build the K x K Gaussian affinity label matrix."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if k < 1:
        raise ValueError("need at least one position")
    idx = np.arange(k, dtype=np.float64)
    d = idx[:, None] - idx[None, :]
    return AffinityLabels(sigma=sigma, matrix=np.exp(-(d * d) / (sigma * sigma)))


def _cosine_logits(latent_tokens: Tensor, positional_table: Tensor) -> Tensor:
    """Pairwise cosine similarities, tokens (rows) vs table rows (cols).

    Accepts (K, L) or batched (B, K, L) tokens; the table is (K, L).
    Norms are clamped away from zero so an all-zero token contributes a
    zero similarity rather than NaN.
    """
    tok_n = T.div(latent_tokens, T.clamp_min(T.l2_norm(latent_tokens, axis=-1, keepdims=True), 1e-12))
    pe_n = T.div(positional_table, T.clamp_min(T.l2_norm(positional_table, axis=-1, keepdims=True), 1e-12))
    return T.matmul(tok_n, T.transpose(pe_n))


def _log_softmax(logits: Tensor) -> Tensor:
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))  # constant; exact gradient
    centered = T.sub(logits, shift)
    return T.sub(centered, T.log(T.tsum(T.exp(centered), axis=-1, keepdims=True)))


def order_loss(
    latent_tokens: Tensor,
    positional_table: Tensor,
    labels: AffinityLabels,
    temperature: float = TEMPERATURE_DEFAULT,
) -> Tensor:
    """Soft cross-entropy between each token's position distribution and
    its Gaussian-affinity label row, averaged over tokens (and batch).

    Token j yields logits cos(token_j, pe_i) / temperature over positions
    i; the target is label row j.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    k = latent_tokens.shape[-2]
    if labels.normalized.shape != (k, k):
        raise ValueError(f"labels are {labels.normalized.shape}, tokens have {k} positions")
    logits = T.div(_cosine_logits(latent_tokens, positional_table), temperature)
    logp = _log_softmax(logits)
    per_token = -T.tsum(T.mul(logp, labels.normalized), axis=-1)
    return T.tmean(per_token)


def position_accuracy(latent_tokens, positional_table) -> float:
    """Fraction of tokens whose argmax-cosine position is their own index."""
    tok = latent_tokens.data if isinstance(latent_tokens, Tensor) else np.asarray(latent_tokens)
    pe = positional_table.data if isinstance(positional_table, Tensor) else np.asarray(positional_table)
    tok_n = tok / np.maximum(np.linalg.norm(tok, axis=-1, keepdims=True), 1e-12)
    pe_n = pe / np.maximum(np.linalg.norm(pe, axis=-1, keepdims=True), 1e-12)
    cos = tok_n @ pe_n.T
    pred = cos.argmax(axis=-1)
    truth = np.arange(tok.shape[-2])
    return float((pred == truth).mean())
