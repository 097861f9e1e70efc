"""Visibility scheduling: mask sampling, reconstruction quality, easiness bank.

Frame index 1 is the latest frame (reverse chronological layout). During
training the four action frames (1..4) are always hidden, the observed
past (9..K) is always visible, and the four anticipation-gap frames
(5..8) are each visible with probability equal to the instance's current
easiness. At evaluation all eight future frames are hidden.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

PHASES = ("pretrain", "train", "eval")

GAMMA_MIN_DEFAULT = 0.95
GAMMA_MAX_DEFAULT = 1.0


@dataclass
class VisibilityMask:
    """Per-frame binary visibility plus the phase that produced it.

    ``beta[i]`` (0-based storage of the 1-based frame index i+1) is 1 when
    the frame is fed to the reasoner. ``rho_draws`` keeps the four uniform
    samples used for the gap frames so a draw can be replayed exactly.
    """

    beta: np.ndarray
    phase: str
    rho_draws: Optional[np.ndarray] = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")

    @property
    def k(self) -> int:
        return len(self.beta)

    def validate(self) -> None:
        """Check the phase-specific layout constraints."""
        k = self.k
        if k < 9:
            raise ValueError(f"mask length {k} < 9")
        b = self.beta
        if not np.isin(b, (0.0, 1.0)).all():
            raise ValueError("mask entries must be binary")
        if self.phase == "pretrain" and not (b == 1.0).all():
            raise ValueError("pretrain mask must be all-visible")
        if self.phase == "eval" and ((b[:8] != 0.0).any() or (b[8:] != 1.0).any()):
            raise ValueError("eval mask must hide frames 1..8 and show 9..K")
        if self.phase == "train" and ((b[:4] != 0.0).any() or (b[8:] != 1.0).any()):
            raise ValueError("train mask must hide frames 1..4 and show 9..K")


def mask_rng(seed: int, epoch: int, instance_id: str) -> np.random.Generator:
    """Stream keyed by (seed, epoch, instance id): reproducible across runs
    and independent of batch ordering."""
    digest = hashlib.sha256(instance_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng([seed, epoch, key])


def sample_mask(
    k: int,
    easiness: float,
    phase: str,
    rng: Optional[np.random.Generator] = None,
) -> VisibilityMask:
    """Draw the visibility mask for one instance.

    Train phase: frames 9..K visible, 1..4 hidden, and each gap frame i in
    5..8 visible iff ``easiness > rho_i`` with ``rho_i ~ U(0,1)`` drawn in
    index order from ``rng``. The comparison is strict, so easiness 0 hides
    every gap frame and easiness 1 shows them (a drawn rho of exactly 1.0
    would hide the frame; measure-zero and accepted).
    """
    if k < 9:
        raise ValueError(f"sequence length {k} < 9")
    if phase == "pretrain":
        return VisibilityMask(np.ones(k), "pretrain")
    if phase == "eval":
        beta = np.ones(k)
        beta[:8] = 0.0
        return VisibilityMask(beta, "eval")
    if phase != "train":
        raise ValueError(f"unknown phase {phase!r}")
    if not 0.0 <= easiness <= 1.0:
        raise ValueError(f"easiness {easiness} outside [0, 1]")
    if rng is None:
        raise ValueError("train-phase sampling needs an rng stream")
    rho = rng.random(4)
    beta = np.ones(k)
    beta[:4] = 0.0
    beta[4:8] = (easiness > rho).astype(np.float64)
    return VisibilityMask(beta, "train", rho_draws=rho)


def eval_mask(k: int, gap_reveal: int = 0) -> VisibilityMask:
    """Test-time mask, optionally revealing gap frames 8, 7, 6, 5 in that
    order (``gap_reveal`` in 0..4) to shrink the anticipation gap."""
    if not 0 <= gap_reveal <= 4:
        raise ValueError("gap_reveal must be in 0..4")
    beta = np.ones(k)
    beta[:8] = 0.0
    for r in range(gap_reveal):
        beta[7 - r] = 1.0  # frame index 8, then 7, 6, 5
    phase = "eval" if gap_reveal == 0 else "train"
    return VisibilityMask(beta, phase)


def anchor_index(mask: VisibilityMask) -> int:
    """Smallest 1-based index k >= 5 with beta_k = 1."""
    future = np.nonzero(mask.beta[4:] == 1.0)[0]
    if len(future) == 0:
        raise ValueError("no visible frame at index >= 5")
    return int(future[0]) + 5


def reconstruction_quality(x: np.ndarray, z: np.ndarray, mask: VisibilityMask) -> float:
    """Error of the one-second future: the L2 distance between the original
    and reconstructed frame four indices ahead of the earliest visible
    future frame (at 4 fps that frame is exactly 1 s later)."""
    if mask.phase not in ("train", "eval"):
        raise ValueError("quality is defined for train/eval masks only")
    k = anchor_index(mask)
    row = k - 4 - 1  # 1-based index k-4 in 0-based storage
    diff = x[row] - z[row]
    return float(np.sqrt((diff * diff).sum()))


@dataclass
class ScheduleSpec:
    """Which easiness schedule drives mask sampling.

    ``instance_local`` follows per-instance reconstruction quality;
    the rest are the global baselines (a fixed constant, a linear decay
    from 1 to 0, or a per-epoch multiplication by ``exp_factor``).
    """

    kind: str = "instance_local"
    constant: float = 1.0
    exp_factor: float = 0.95
    gamma_min: float = GAMMA_MIN_DEFAULT
    gamma_max: float = GAMMA_MAX_DEFAULT

    def __post_init__(self):
        if self.kind not in ("instance_local", "constant", "linear", "exponential"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.gamma_min <= self.gamma_max <= 1.0:
            raise ValueError("need 0 < gamma_min <= gamma_max <= 1")


def global_easiness(spec: ScheduleSpec, epoch: int, total_epochs: int) -> float:
    """Easiness for epoch ``epoch`` (1-based) under a global schedule."""
    if not 1 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{total_epochs}")
    if spec.kind == "constant":
        return float(spec.constant)
    if spec.kind == "linear":
        if total_epochs == 1:
            return 1.0
        return 1.0 - (epoch - 1) / (total_epochs - 1)
    if spec.kind == "exponential":
        return float(spec.exp_factor ** (epoch - 1))
    raise ValueError(f"{spec.kind!r} is not a global schedule")


@dataclass
class _BankEntry:
    easiness: float = 1.0
    q_prev: Optional[float] = None   # most recent recorded quality
    q_prev2: Optional[float] = None  # quality from the epoch before that
    q_epoch: int = 0                 # epoch q_prev was recorded in
    last_updated_epoch: int = 0


class EasinessBank:
    """Per-instance store of easiness and the last two reconstruction
    qualities, driving the instance-local schedule.

    Easiness stays 1 for epochs 1 and 2. From epoch 3 on, at the start of
    each epoch it is multiplied by the quality ratio Q_{e-1}/Q_{e-2}
    clamped to [gamma_min, gamma_max]; a rapid quality decline therefore
    speeds up context removal. Within an epoch, re-recording an instance
    overwrites its quality (one quality per instance per epoch).
    """

    def __init__(self, gamma_min: float = GAMMA_MIN_DEFAULT, gamma_max: float = GAMMA_MAX_DEFAULT):
        if not 0.0 < gamma_min <= gamma_max <= 1.0:
            raise ValueError("need 0 < gamma_min <= gamma_max <= 1")
        self.gamma_min = gamma_min
        self.gamma_max = gamma_max
        self._entries: dict[str, _BankEntry] = {}

    def _entry(self, instance_id: str) -> _BankEntry:
        if instance_id not in self._entries:
            self._entries[instance_id] = _BankEntry()
        return self._entries[instance_id]

    def easiness(self, instance_id: str) -> float:
        return self._entry(instance_id).easiness

    def instance_ids(self) -> list[str]:
        return list(self._entries)

    def record_quality(self, instance_id: str, quality: float, epoch: int) -> None:
        """Store this epoch's reconstruction quality for the instance."""
        if epoch < 1:
            raise ValueError("epochs are 1-based")
        e = self._entry(instance_id)
        if epoch == e.q_epoch:
            e.q_prev = quality  # resampled within the epoch: latest wins
        else:
            e.q_prev2 = e.q_prev
            e.q_prev = quality
            e.q_epoch = epoch

    def update_factor(self, q_prev: Optional[float], q_prev2: Optional[float]) -> float:
        """Clamped quality ratio; a zero or missing denominator means the
        reconstruction was already perfect, so no decrease beyond the cap."""
        if q_prev is None or q_prev2 is None or q_prev2 == 0.0:
            return self.gamma_max
        return min(max(q_prev / q_prev2, self.gamma_min), self.gamma_max)

    def start_epoch(self, epoch: int) -> None:
        """Freeze each instance's easiness for the coming epoch."""
        if epoch < 1:
            raise ValueError("epochs are 1-based")
        for e in self._entries.values():
            if e.last_updated_epoch >= epoch:
                continue
            if epoch >= 3:
                e.easiness = e.easiness * self.update_factor(e.q_prev, e.q_prev2)
            e.last_updated_epoch = epoch

    def update_easiness(self, instance_id: str, q_new: float, epoch: int) -> float:
        """Record ``q_new`` for this epoch and return the easiness that will
        govern the NEXT epoch's sampling (computed per the clamped-ratio
        rule; epochs 1 and 2 leave easiness at 1)."""
        self.record_quality(instance_id, q_new, epoch)
        e = self._entry(instance_id)
        if epoch + 1 < 3:
            return e.easiness
        return e.easiness * self.update_factor(e.q_prev, e.q_prev2)

    def stats(self) -> tuple[float, float, float]:
        """(min, mean, max) easiness over stored instances."""
        if not self._entries:
            return (1.0, 1.0, 1.0)
        vals = np.array([e.easiness for e in self._entries.values()])
        return (float(vals.min()), float(vals.mean()), float(vals.max()))


def write_easiness_trace(
    path: str,
    rows: Iterable[tuple[int, str, float, float]],
) -> None:
    """Append-style CSV export (epoch, instance_id, T, Q) for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "instance_id", "T", "Q"])
        for epoch, instance_id, t, q in rows:
            writer.writerow([epoch, instance_id, repr(t), repr(q)])
