"""Synthetic anticipation benchmark with a known action grammar.

A Markov chain over composite (verb, noun) actions drives a long feature
stream: frames inside a segment are that action's unit prototype under a
smooth envelope plus Gaussian noise, and the last ``ramp`` frames before
each boundary drift linearly toward the next action's prototype. The
drift is what gives the anticipation-gap frames genuine predictive
signal that the observed past mostly lacks, so training with visible gap
frames learns a shortcut that disappears at test time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .reasoners import FeatureSequence

log = logging.getLogger(__name__)


@dataclass
class GrammarSpec:
    """The generative grammar: classes, dynamics and frame statistics."""

    n_verb: int = 4
    n_noun: int = 6
    actions: tuple = ()                  # valid (verb, noun) pairs
    transition: np.ndarray = None        # row-stochastic, actions x actions
    feature_dim: int = 64
    ramp: int = 6                        # frames drifting toward the next prototype
    drift_max: float = 1.0               # mix weight of the next prototype at the boundary
    envelope_amp: float = 0.25           # depth of the within-segment envelope dip
    noise_scale: float = 0.15
    prototype_corr: float = 0.5          # shared-component weight: pairwise cosine of prototypes
    duration_range: tuple = (12, 20)     # segment length in frames, inclusive
    seed: int = 0
    prototypes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.actions:
            raise ValueError("grammar needs at least one action pair")
        for v, n in self.actions:
            if not (0 <= v < self.n_verb and 0 <= n < self.n_noun):
                raise ValueError(f"action pair ({v}, {n}) outside vocabulary")
        self.transition = np.asarray(self.transition, dtype=np.float64)
        c = len(self.actions)
        if self.transition.shape != (c, c):
            raise ValueError("transition matrix must be actions x actions")
        if np.abs(self.transition.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("transition rows must sum to 1")
        if (self.transition < 0).any():
            raise ValueError("transition probabilities must be non-negative")
        self._check_reachable()
        if self.prototypes is None:
            if not 0.0 <= self.prototype_corr < 1.0:
                raise ValueError("prototype_corr must lie in [0, 1)")
            rng = np.random.default_rng([self.seed, 0x70726F74])
            raw = rng.normal(size=(c, self.feature_dim))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            if self.prototype_corr > 0:
                shared = rng.normal(size=self.feature_dim)
                shared /= np.linalg.norm(shared)
                raw = np.sqrt(self.prototype_corr) * shared + np.sqrt(1.0 - self.prototype_corr) * raw
                raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            self.prototypes = raw
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)

    def _check_reachable(self) -> None:
        c = len(self.actions)
        reached = set(range(c))  # initial action is drawn uniformly
        frontier = list(reached)
        adj = [np.nonzero(self.transition[a] > 0)[0] for a in range(c)]
        seen = set(frontier)
        while frontier:
            nxt = [b for a in frontier for b in adj[a] if b not in seen]
            seen.update(nxt)
            frontier = nxt
        if seen != set(range(c)):
            missing = sorted(set(range(c)) - seen)
            raise ValueError(f"unreachable actions: {missing}")

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass
class DatasetLayout:
    """Window geometry: 4 action frames + 4 gap frames + observed past."""

    fps: int = 4
    tau_a: float = 1.0
    tau_o: float = 2.5

    def __post_init__(self):
        if round(self.tau_a * self.fps) != 4:
            raise ValueError("anticipation gap must span exactly 4 frames")
        if self.k < 12:
            raise ValueError(f"window length {self.k} < 12; increase tau_o")

    @property
    def n_obs(self) -> int:
        return int(round(self.tau_o * self.fps))

    @property
    def k(self) -> int:
        return self.n_obs + 8


def default_grammar(
    seed: int = 0,
    n_actions: int = 12,
    concentration: float = 0.5,
    **overrides,
) -> GrammarSpec:
    """The stock 12-action grammar over 4 verbs x 6 nouns.

    Each action prefers one successor with probability ``concentration``
    and spreads the rest uniformly, so the past alone predicts the next
    action well above chance but far from perfectly.
    """
    n_verb = overrides.pop("n_verb", 4)
    n_noun = overrides.pop("n_noun", 6)
    if n_actions > n_verb * n_noun:
        raise ValueError("more actions than (verb, noun) pairs")
    # i -> (i mod V, i mod N) walks distinct pairs and covers both vocabularies
    actions = tuple(dict.fromkeys((i % n_verb, i % n_noun) for i in range(n_verb * n_noun)))[:n_actions]
    if len(actions) < n_actions:
        raise ValueError(f"only {len(actions)} distinct (verb, noun) pairs on the diagonal walk")
    c = len(actions)
    rng = np.random.default_rng([seed, 0x6772616D])
    succ = (np.arange(c) + 1 + rng.integers(0, max(c - 2, 1), size=c)) % c
    transition = np.full((c, c), (1.0 - concentration) / (c - 1))
    transition[np.arange(c), np.arange(c)] = 0.0
    transition = transition / transition.sum(axis=1, keepdims=True) * (1.0 - concentration)
    transition[np.arange(c), succ] += concentration
    # a self-preferring row would make segments collapse together
    assert (succ != np.arange(c)).all()
    return GrammarSpec(n_verb=n_verb, n_noun=n_noun, actions=actions, transition=transition, seed=seed, **overrides)


def generate_synthetic(
    spec: GrammarSpec,
    n_segments: int,
    seed: Optional[int] = None,
    id_prefix: str = "seg",
) -> tuple[np.ndarray, dict]:
    """Emit a feature stream of consecutive action segments plus manifest.

    Pure function of (spec, seed): identical inputs give bit-identical
    streams. Prototypes come from the grammar seed, so streams generated
    with different walk seeds share the same class geometry.
    """
    walk_seed = spec.seed if seed is None else seed
    rng = np.random.default_rng([walk_seed, 0x77616C6B])
    c = spec.n_actions
    labels = np.empty(n_segments + 1, dtype=np.int64)
    labels[0] = rng.integers(0, c)
    for i in range(1, n_segments + 1):
        labels[i] = rng.choice(c, p=spec.transition[labels[i - 1]])
    durations = rng.integers(spec.duration_range[0], spec.duration_range[1] + 1, size=n_segments + 1)

    d = spec.feature_dim
    chunks = []
    starts = np.zeros(n_segments + 1, dtype=np.int64)
    pos = 0
    for i in range(n_segments + 1):
        dur = int(durations[i])
        starts[i] = pos
        u = (np.arange(dur) + 0.5) / dur
        envelope = 1.0 - spec.envelope_amp * np.sin(np.pi * u)
        base = envelope[:, None] * spec.prototypes[labels[i]]
        if i < n_segments and spec.ramp > 0:
            ramp = min(spec.ramp, dur)
            # m frames before the boundary mix drift_max * (ramp+1-m)/(ramp+1) of the next prototype
            m = np.arange(ramp, 0, -1)
            wgt = spec.drift_max * (spec.ramp + 1 - m) / (spec.ramp + 1.0)
            nxt = spec.prototypes[labels[i + 1]]
            base[dur - ramp :] = (1.0 - wgt[:, None]) * base[dur - ramp :] + wgt[:, None] * nxt
        if spec.noise_scale > 0:
            base = base + rng.normal(0.0, spec.noise_scale, size=(dur, d))
        chunks.append(base)
        pos += dur
    stream = np.concatenate(chunks).astype(np.float32)

    segments = []
    for i in range(1, n_segments + 1):  # segment 0 is history only
        v, n = spec.actions[labels[i]]
        segments.append(
            {
                "instance_id": f"{id_prefix}-{walk_seed}-{i:06d}",
                "start_frame": int(starts[i]),
                "action": int(labels[i]),
                "verb": int(v),
                "noun": int(n),
            }
        )
    manifest = {
        "version": 1,
        "fps": 4,
        "dim": d,
        "classes": {
            "n_verb": spec.n_verb,
            "n_noun": spec.n_noun,
            "actions": [list(a) for a in spec.actions],
        },
        "segments": segments,
    }
    return stream, manifest


def assemble_window(stream: np.ndarray, segment: dict, layout: DatasetLayout) -> FeatureSequence:
    """Cut one reverse-chronological window for a segment.

    Rows 0..3 are the first four action frames (row 0 latest), rows 4..7
    the anticipation gap, rows 8.. the observed past, i.e. the
    chronological slice ``[start - (K-4), start + 4)`` reversed.
    """
    k = layout.k
    start = int(segment["start_frame"])
    lo = start - (k - 4)
    hi = start + 4
    if lo < 0:
        raise ValueError(f"segment {segment['instance_id']}: needs {-lo} more frames of history")
    if hi > len(stream):
        raise ValueError(f"segment {segment['instance_id']}: fewer than 4 action frames in stream")
    frames = stream[lo:hi][::-1].copy()
    return FeatureSequence(
        instance_id=segment["instance_id"],
        frames=frames,
        action_label=int(segment["action"]),
        verb_label=segment.get("verb"),
        noun_label=segment.get("noun"),
        fps=layout.fps,
    )


def windows_from_stream(stream: np.ndarray, manifest: dict, layout: DatasetLayout) -> list[FeatureSequence]:
    """Assemble every segment window, skipping (with a warning) segments
    without enough surrounding stream."""
    out = []
    skipped = 0
    for segment in manifest["segments"]:
        try:
            out.append(assemble_window(stream, segment, layout))
        except ValueError:
            skipped += 1
    if skipped:
        log.warning("skipped %d segment(s) with insufficient history", skipped)
    return out
