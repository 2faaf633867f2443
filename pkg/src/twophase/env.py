"""Seeded Bernoulli reward streams and pseudo-regret traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import BanditInstance, SphereInstance, logistic

__all__ = ["RegretTrace", "RewardStream", "pull", "pull_sphere", "record", "trial_seed"]

SEED_MASK = (1 << 64) - 1
# odd 64-bit constant (golden-ratio increment) for per-trial sub-seeds
TRIAL_SEED_MULTIPLIER = 0x9E3779B97F4A7C15


def trial_seed(base_seed: int, trial_index: int) -> int:
    """Sub-seed of trial ``trial_index``: ``base_seed XOR (trial_index * C) mod 2**64``."""
    return (int(base_seed) ^ (int(trial_index) * TRIAL_SEED_MULTIPLIER)) & SEED_MASK


class RewardStream:
    """Single-owner source of uniforms in ``[0, 1)`` backed by PCG64.

    Every pull consumes exactly one uniform, so a batch of ``k`` pulls reads
    the same values as ``k`` single pulls.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & SEED_MASK
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    @classmethod
    def for_trial(cls, base_seed: int, trial_index: int) -> "RewardStream":
        return cls(trial_seed(base_seed, trial_index))

    def uniform(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def uniforms(self, k: int) -> np.ndarray:
        self.draws += k
        return self._gen.random(k)


def pull(instance: BanditInstance, arm: int, stream: RewardStream) -> float:
    """Reward ``w_arm`` with probability ``alpha*_arm``, else 0."""
    if not 0 <= arm < instance.m:
        raise IndexError(f"arm index {arm} out of range for m={instance.m}")
    hit = stream.uniform() < instance.true_means[arm]
    return float(instance.weights[arm]) if hit else 0.0


def pull_sphere(instance: SphereInstance, arm, stream: RewardStream) -> float:
    arm = np.asarray(arm, dtype=np.float64)
    if arm.shape != (instance.n,) or abs(np.linalg.norm(arm) - 1.0) > 1e-9:
        raise ValueError("sphere arms must be unit vectors of the instance dimension")
    return 1.0 if stream.uniform() < logistic(float(arm @ instance.preference)) else 0.0


@dataclass
class RegretTrace:
    """Pulls, realised rewards and pseudo-regret, stored as runs of identical pulls.

    A run (segment) is a block of consecutive timesteps that pulled the same
    arm in the same phase; Phase 2 of an epoch is one run.  Per-step rewards
    are kept only when ``detail`` is set; reward sums per run are always kept.
    """

    horizon: int
    detail: bool = False
    starts: list[int] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    arms: list[Any] = field(default_factory=list)
    phases: list[int] = field(default_factory=list)
    step_regrets: list[float] = field(default_factory=list)
    reward_sums: list[float] = field(default_factory=list)
    step_rewards: list[np.ndarray] = field(default_factory=list)
    epoch_boundaries: list[int] = field(default_factory=list)
    epochs: list[Any] = field(default_factory=list)
    length: int = 0
    total_regret: float = 0.0
    phase_regret: list[float] = field(default_factory=lambda: [0.0, 0.0])

    def add_run(self, arm, phase: int, rewards, step_regret: float) -> None:
        rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
        k = rewards.size
        if k == 0:
            return
        if self.length + k > self.horizon:
            raise ValueError("run extends past the horizon")
        if phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {phase}")
        if step_regret < -1e-12:
            raise ValueError(f"pseudo-regret must be non-negative, got {step_regret}")
        step_regret = max(0.0, float(step_regret))
        self.starts.append(self.length + 1)
        self.lengths.append(k)
        self.arms.append(arm)
        self.phases.append(phase)
        self.step_regrets.append(step_regret)
        self.reward_sums.append(float(rewards.sum()))
        if self.detail:
            self.step_rewards.append(rewards)
        self.length += k
        self.total_regret += k * step_regret
        self.phase_regret[phase - 1] += k * step_regret

    def start_epoch(self) -> None:
        self.epoch_boundaries.append(self.length + 1)

    @classmethod
    def from_steps(cls, horizon: int, arms, rewards, step_regrets, phase: int = 2, detail: bool = False) -> "RegretTrace":
        """Build a trace from per-step arrays, merging consecutive pulls of the same arm."""
        arms = np.asarray(arms, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=np.float64)
        trace = cls(horizon, detail)
        if arms.size == 0:
            return trace
        cuts = np.flatnonzero(np.diff(arms)) + 1
        bounds = np.concatenate(([0], cuts, [arms.size]))
        regrets = np.asarray(step_regrets, dtype=np.float64)
        for a, b in zip(bounds[:-1], bounds[1:]):
            trace.add_run(int(arms[a]), phase, rewards[a:b], float(regrets[a]))
        return trace

    # ---- queries -------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.length >= self.horizon

    def _arrays(self):
        lengths = np.asarray(self.lengths, dtype=np.int64)
        regrets = np.asarray(self.step_regrets, dtype=np.float64)
        ends = np.cumsum(lengths)
        cum_end = np.cumsum(lengths * regrets)
        return lengths, regrets, ends, cum_end

    def cumulative_regret_at(self, ts) -> np.ndarray:
        """Cumulative pseudo-regret after each timestep in ``ts`` (0 means before any pull)."""
        ts = np.asarray(ts, dtype=np.int64)
        if np.any(ts < 0) or np.any(ts > self.length):
            raise ValueError("checkpoint outside the recorded range")
        if not self.lengths:
            return np.zeros(ts.shape)
        _, regrets, ends, cum_end = self._arrays()
        idx = np.searchsorted(ends, ts, side="left")
        idx = np.minimum(idx, len(ends) - 1)
        # regret accumulated up to t = cum at end of segment minus the tail after t
        return np.where(ts == 0, 0.0, cum_end[idx] - (ends[idx] - ts) * regrets[idx])

    def per_step(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Expanded per-step ``(arm, phase, pseudo_regret)``; sphere exploit arms show as -1."""
        lengths = np.asarray(self.lengths, dtype=np.int64)
        arm_ids = np.asarray(
            [a if isinstance(a, (int, np.integer)) else -1 for a in self.arms], dtype=np.int64
        )
        return (
            np.repeat(arm_ids, lengths),
            np.repeat(np.asarray(self.phases, dtype=np.int8), lengths),
            np.repeat(np.asarray(self.step_regrets), lengths),
        )

    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.per_step()[2])

    def rewards(self) -> np.ndarray:
        if not self.detail:
            raise ValueError("per-step rewards are only kept when detail=True")
        return np.concatenate(self.step_rewards) if self.step_rewards else np.zeros(0)

    @property
    def phase1_regret(self) -> float:
        return self.phase_regret[0]

    @property
    def phase2_regret(self) -> float:
        return self.phase_regret[1]

    @property
    def phase1_pulls(self) -> int:
        return sum(k for k, p in zip(self.lengths, self.phases) if p == 1)

    @property
    def phase2_pulls(self) -> int:
        return sum(k for k, p in zip(self.lengths, self.phases) if p == 2)


def record(trace: RegretTrace, t: int, arm, phase: int, reward: float, per_step_pseudo_regret: float) -> RegretTrace:
    """Append timestep ``t`` (which must be the next one) to ``trace``."""
    if t != trace.length + 1:
        raise ValueError(f"expected timestep {trace.length + 1}, got {t}")
    trace.add_run(arm, phase, [reward], per_step_pseudo_regret)
    return trace
