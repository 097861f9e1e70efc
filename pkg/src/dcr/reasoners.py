"""The two reasoning architectures that reconstruct masked frame features.

Both consume a K x D feature matrix in reverse chronological order (row 0
is the latest frame) plus a per-frame visibility mask, and emit a K x D
reconstruction together with the K latent tokens feeding the order
pre-training head. The transformer zeroes hidden frames at its input and
lets attention fill the slots; the LSTM replaces each hidden frame by the
nearest earlier-in-time visible one and runs chronologically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .curriculum import VisibilityMask

ARCHITECTURES = ("transformer", "lstm")


@dataclass
class FeatureSequence:
    """One training instance: frames plus labels.

    ``frames[0]`` is the latest frame (1-based index 1); larger row
    indices are earlier in time. The layout is 4 action frames, 4
    anticipation-gap frames, then K-8 observed frames.
    """

    instance_id: str
    frames: np.ndarray
    action_label: int
    verb_label: Optional[int] = None
    noun_label: Optional[int] = None
    fps: int = 4

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise ValueError("frames must be K x D")
        if self.k < 9:
            raise ValueError(f"sequence length {self.k} < 9")
        if (self.verb_label is None) != (self.noun_label is None):
            raise ValueError("verb and noun labels come together or not at all")

    @property
    def k(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def n_obs(self) -> int:
        return self.k - 8


@dataclass
class ReasonerConfig:
    architecture: str = "transformer"
    input_dim: int = 64
    latent_dim: int = 1024
    layers: int = 6
    heads: int = 16
    ff_mult: int = 4
    dropout: float = 0.1
    max_positions: int = 64
    dtype: str = "f32"  # f32 for training, f64 for gradient checking

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.latent_dim % self.heads != 0:
            raise ValueError("latent_dim must be divisible by heads")
        if self.dtype not in ("f32", "f64"):
            raise ValueError("dtype must be 'f32' or 'f64'")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "layers": self.layers,
            "heads": self.heads,
            "ff_mult": self.ff_mult,
            "dropout": self.dropout,
            "max_positions": self.max_positions,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReasonerConfig":
        return cls(**d)


@dataclass
class ReasonerOutput:
    reconstructions: np.ndarray  # K x D
    latent_tokens: np.ndarray    # K x latent_dim


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    """The fixed sine/cosine position table used to initialize the
    learnable positional encodings."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def zero_masked(frames: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Replace hidden rows by exact zero vectors (content cannot leak)."""
    return np.where(beta[..., None] > 0, frames, 0.0)


def impute_masked(frames: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Copy-forward imputation for the recurrent reasoner.

    Each hidden row i takes the nearest visible row j > i (rows with
    larger index are earlier in time, so that is the latest visible frame
    at the moment i would be processed). Hidden rows older than every
    visible frame fall back to the nearest visible row overall; the DCR
    layouts never produce that case since the observed past is visible.
    """
    beta = np.asarray(beta)
    vis = np.nonzero(beta > 0)[0]
    if len(vis) == 0:
        raise ValueError("cannot impute: every frame is masked")
    k = frames.shape[0]
    source = np.arange(k)
    hidden = np.nonzero(beta == 0)[0]
    pos = np.searchsorted(vis, hidden, side="right")
    fallback = vis[-1]  # only reached by hidden rows with no later visible row
    source[hidden] = np.where(pos < len(vis), vis[np.minimum(pos, len(vis) - 1)], fallback)
    return frames[source]


class _ReasonerBase:
    """Shared parameter registry, the single-instance forward wrapper,
    and checkpoint metadata."""

    config: ReasonerConfig

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.order_pretrained = False

    def _param(self, name: str, values: np.ndarray) -> Tensor:
        t = Tensor(np.ascontiguousarray(values, dtype=self.config.np_dtype), requires_grad=True)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


class TransformerReasoner(_ReasonerBase):
    """Pre-norm transformer encoder between a linear encoder (D -> latent)
    and a shared linear decoder (latent -> D).

    Hidden frames enter as zero vectors but keep their attention slot.
    Positional encodings are learned (initialized from the sinusoidal
    table) and added in latent space only when requested, which is what
    makes the encoder permutation-invariant during order pre-training.
    """

    def __init__(self, config: ReasonerConfig, seed: int = 0):
        super().__init__()
        if config.architecture != "transformer":
            raise ValueError("config is not a transformer config")
        self.config = config
        rng = np.random.default_rng([seed, 0x7261])
        d, l, dt = config.input_dim, config.latent_dim, config.np_dtype
        self._param("encoder.w", _xavier(rng, d, l, dt))
        self._param("encoder.b", np.zeros(l, dtype=dt))
        self._param("pos_table", sinusoidal_table(config.max_positions, l).astype(dt))
        for i in range(config.layers):
            p = f"layer{i}."
            self._param(p + "ln1.g", np.ones(l, dtype=dt))
            self._param(p + "ln1.b", np.zeros(l, dtype=dt))
            for name in ("wq", "wk", "wv", "wo"):
                self._param(p + f"attn.{name}", _xavier(rng, l, l, dt))
            self._param(p + "attn.bo", np.zeros(l, dtype=dt))
            self._param(p + "ln2.g", np.ones(l, dtype=dt))
            self._param(p + "ln2.b", np.zeros(l, dtype=dt))
            self._param(p + "ff.w1", _xavier(rng, l, l * config.ff_mult, dt))
            self._param(p + "ff.b1", np.zeros(l * config.ff_mult, dtype=dt))
            self._param(p + "ff.w2", _xavier(rng, l * config.ff_mult, l, dt))
            self._param(p + "ff.b2", np.zeros(l, dtype=dt))
        self._param("ln_f.g", np.ones(l, dtype=dt))
        self._param("ln_f.b", np.zeros(l, dtype=dt))
        self._param("decoder.w", _xavier(rng, l, d, dt))
        self._param("decoder.b", np.zeros(d, dtype=dt))

    def _attention(self, h: Tensor, i: int, rng: Optional[np.random.Generator]) -> Tensor:
        cfg = self.config
        p = self.params
        heads, dh = cfg.heads, cfg.latent_dim // cfg.heads
        lead = h.shape[:-2]
        k_len = h.shape[-2]

        def split(x: Tensor) -> Tensor:
            x = T.reshape(x, lead + (k_len, heads, dh))
            axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
            return T.transpose(x, axes)  # (..., heads, K, dh)

        q = split(T.matmul(h, p[f"layer{i}.attn.wq"]))
        k = split(T.matmul(h, p[f"layer{i}.attn.wk"]))
        v = split(T.matmul(h, p[f"layer{i}.attn.wv"]))
        scores = T.mul(T.matmul(q, T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))), 1.0 / np.sqrt(dh))
        attn = T.dropout(T.softmax(scores, axis=-1), cfg.dropout, rng)
        mixed = T.matmul(attn, v)  # (..., heads, K, dh)
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        mixed = T.reshape(T.transpose(mixed, axes), lead + (k_len, cfg.latent_dim))
        return T.add(T.matmul(mixed, p[f"layer{i}.attn.wo"]), p[f"layer{i}.attn.bo"])

    def forward_batch(
        self,
        frames: np.ndarray,
        beta: np.ndarray,
        use_positional_encoding: bool = True,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> tuple[Tensor, Tensor]:
        """Run a (B, K, D) batch (or a single (K, D) instance).

        Returns (reconstructions, latent_tokens) as graph tensors so the
        caller can attach losses. ``dropout_rng`` enables dropout; pass
        None for deterministic inference. ``frames`` may itself be a graph
        tensor, in which case gradients flow back into it (used by the
        finite-difference checks); hidden rows are then zeroed by
        multiplication instead of replacement.
        """
        cfg = self.config
        if isinstance(frames, Tensor):
            beta = np.asarray(beta, dtype=frames.dtype)
            x = T.mul(frames, beta[..., None])
        else:
            frames = np.asarray(frames, dtype=cfg.np_dtype)
            beta = np.asarray(beta, dtype=cfg.np_dtype)
            x = Tensor(zero_masked(frames, beta))
        k_len = x.shape[-2]
        if k_len > cfg.max_positions:
            raise ValueError(f"sequence length {k_len} exceeds positional table ({cfg.max_positions})")
        if x.shape[-1] != cfg.input_dim:
            raise ValueError(f"feature dim {x.shape[-1]} != model input_dim {cfg.input_dim}")
        p = self.params
        h = T.add(T.matmul(x, p["encoder.w"]), p["encoder.b"])
        if use_positional_encoding:
            h = T.add(h, p["pos_table"][:k_len])
        for i in range(cfg.layers):
            normed = T.layer_norm(h, p[f"layer{i}.ln1.g"], p[f"layer{i}.ln1.b"])
            h = T.add(h, self._attention(normed, i, dropout_rng))
            normed = T.layer_norm(h, p[f"layer{i}.ln2.g"], p[f"layer{i}.ln2.b"])
            ff = T.matmul(T.gelu(T.add(T.matmul(normed, p[f"layer{i}.ff.w1"]), p[f"layer{i}.ff.b1"])), p[f"layer{i}.ff.w2"])
            ff = T.dropout(T.add(ff, p[f"layer{i}.ff.b2"]), cfg.dropout, dropout_rng)
            h = T.add(h, ff)
        tokens = T.layer_norm(h, p["ln_f.g"], p["ln_f.b"])
        z = T.add(T.matmul(tokens, p["decoder.w"]), p["decoder.b"])
        return z, tokens


class LSTMReasoner(_ReasonerBase):
    """Single-layer LSTM over copy-forward-imputed frames, oldest first.

    The hidden state at each position is the latent token; a shared
    linear decoder maps it to the reconstruction for that position.
    """

    def __init__(self, config: ReasonerConfig, seed: int = 0):
        super().__init__()
        if config.architecture != "lstm":
            raise ValueError("config is not an lstm config")
        self.config = config
        rng = np.random.default_rng([seed, 0x6C73])
        d, l, dt = config.input_dim, config.latent_dim, config.np_dtype
        self._param("lstm.wx", _xavier(rng, d, 4 * l, dt))
        self._param("lstm.wh", _xavier(rng, l, 4 * l, dt))
        bias = np.zeros(4 * l, dtype=dt)
        bias[l : 2 * l] = 1.0  # forget-gate bias
        self._param("lstm.b", bias)
        self._param("decoder.w", _xavier(rng, l, d, dt))
        self._param("decoder.b", np.zeros(d, dtype=dt))

    def forward_batch(
        self,
        frames: np.ndarray,
        beta: np.ndarray,
        use_positional_encoding: bool = False,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> tuple[Tensor, Tensor]:
        cfg = self.config
        frames = np.asarray(frames, dtype=cfg.np_dtype)
        beta = np.asarray(beta, dtype=cfg.np_dtype)
        if frames.shape[-1] != cfg.input_dim:
            raise ValueError(f"feature dim {frames.shape[-1]} != model input_dim {cfg.input_dim}")
        squeeze = frames.ndim == 2
        if squeeze:
            frames, beta = frames[None], beta[None]
        b, k_len, _ = frames.shape
        imputed = np.stack([impute_masked(frames[i], beta[i]) for i in range(b)])
        p = self.params
        l = cfg.latent_dim
        h = Tensor(np.zeros((b, l), dtype=cfg.np_dtype))
        c = Tensor(np.zeros((b, l), dtype=cfg.np_dtype))
        hidden: list[Optional[Tensor]] = [None] * k_len
        for t in range(k_len - 1, -1, -1):  # row K-1 is oldest; run chronologically
            x_t = Tensor(imputed[:, t, :])
            gates = T.add(T.add(T.matmul(x_t, p["lstm.wx"]), T.matmul(h, p["lstm.wh"])), p["lstm.b"])
            i_g = T.sigmoid(gates[:, 0 * l : 1 * l])
            f_g = T.sigmoid(gates[:, 1 * l : 2 * l])
            g_g = T.tanh(gates[:, 2 * l : 3 * l])
            o_g = T.sigmoid(gates[:, 3 * l : 4 * l])
            c = T.add(T.mul(f_g, c), T.mul(i_g, g_g))
            h = T.mul(o_g, T.tanh(c))
            hidden[t] = h
        tokens = T.stack(hidden, axis=1)  # (B, K, latent)
        z = T.add(T.matmul(tokens, p["decoder.w"]), p["decoder.b"])
        if squeeze:
            return z[0], tokens[0]
        return z, tokens


def build_reasoner(config: ReasonerConfig, seed: int = 0):
    if config.architecture == "transformer":
        return TransformerReasoner(config, seed=seed)
    return LSTMReasoner(config, seed=seed)


def transformer_forward(
    model: TransformerReasoner,
    seq: FeatureSequence,
    mask: VisibilityMask,
    use_positional_encoding: bool = True,
) -> ReasonerOutput:
    """Single-instance inference pass (no dropout)."""
    if mask.k != seq.k:
        raise ValueError("mask length differs from sequence length")
    z, tokens = model.forward_batch(seq.frames[None], mask.beta[None], use_positional_encoding, None)
    return ReasonerOutput(reconstructions=z.data[0], latent_tokens=tokens.data[0])


def lstm_forward(model: LSTMReasoner, seq: FeatureSequence, mask: VisibilityMask) -> ReasonerOutput:
    """Single-instance inference pass."""
    if mask.k != seq.k:
        raise ValueError("mask length differs from sequence length")
    if (mask.beta == 0).all():
        raise ValueError("cannot run the recurrent reasoner with every frame masked")
    z, tokens = model.forward_batch(seq.frames, mask.beta)
    return ReasonerOutput(reconstructions=z.data, latent_tokens=tokens.data)
