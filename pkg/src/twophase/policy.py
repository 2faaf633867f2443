"""The Two-Phase Algorithm (finite arms and unit sphere) and baseline policies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import BanditInstance, Schedule, SphereInstance, logistic, logit
from .env import RegretTrace, RewardStream

__all__ = [
    "EpochState",
    "ProbeSet",
    "baseline_random",
    "baseline_ucb1",
    "baseline_ucb1_batch",
    "choose_probe_set",
    "estimate_preference",
    "run_trial",
    "select_arm_finite",
    "select_arm_sphere",
]


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """``n`` full-rank exploration arms with an LU factorisation of ``Sigma^T``."""

    indices: tuple[int, ...]
    arms: np.ndarray

    def __post_init__(self):
        arms = np.asarray(self.arms, dtype=np.float64)
        n = arms.shape[0]
        if arms.shape != (n, n) or np.linalg.matrix_rank(arms) != n:
            raise ValueError("probe set must be a full-rank n x n matrix")
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "_lu", lu_factor(arms.T))

    @property
    def n(self) -> int:
        return self.arms.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``Sigma^T z = rhs``."""
        return lu_solve(self._lu, rhs)

    @classmethod
    def standard_basis(cls, n: int) -> "ProbeSet":
        return cls(tuple(range(n)), np.eye(n))


def _greedy_columns(U: np.ndarray, first: int, tol: float) -> list[int] | None:
    n = U.shape[0]
    chosen = [first]
    residual = U.copy()
    while len(chosen) < n:
        q = residual[:, chosen[-1]]
        q = q / np.linalg.norm(q)
        residual = residual - np.outer(q, q @ residual)
        norms = np.linalg.norm(residual, axis=0)
        norms[chosen] = -1.0
        j = int(np.argmax(norms))
        if norms[j] <= tol:
            return None
        chosen.append(j)
    return chosen


def choose_probe_set(instance: BanditInstance) -> ProbeSet:
    """Pick ``n`` linearly independent arms by greedy column pivoting.

    The greedy sweep (largest residual column after projecting out the ones
    already taken) is restarted from every column; the candidate with the
    smallest condition number wins, ties going to the earliest start.
    """
    U = np.asarray(instance.arms)
    n, m = U.shape
    tol = 1e-10 * max(1.0, float(np.abs(U).max()))
    best, best_cond = None, math.inf
    for first in range(m):
        if np.linalg.norm(U[:, first]) <= tol:
            continue
        cols = _greedy_columns(U, first, tol)
        if cols is None:
            continue
        cols = sorted(cols)
        cond = float(np.linalg.cond(U[:, cols]))
        if cond < best_cond:
            best, best_cond = cols, cond
    if best is None:
        raise ValueError("arm matrix is rank deficient; no full-rank probe set exists")
    return ProbeSet(tuple(best), U[:, best])


def estimate_preference(probe: ProbeSet, estimates: Sequence[float]) -> tuple[np.ndarray, bool]:
    """Return ``(z_hat, good)``.

    A bad epoch (some estimate equal to 0 or 1) gives the zero vector.
    """
    est = np.asarray(estimates, dtype=np.float64)
    if est.shape != (probe.n,):
        raise ValueError(f"expected {probe.n} estimates, got shape {est.shape}")
    if not np.all((est > 0.0) & (est < 1.0)):
        return np.zeros(probe.n), False
    return probe.solve(logit(est)), True


def _log_scores(instance: BanditInstance, z_hat: np.ndarray) -> np.ndarray:
    beta = instance.arms.T @ z_hat
    if np.all(instance.weights == instance.weights[0]):
        # argmax is invariant under the increasing link and a common weight
        return beta
    return np.log(instance.weights) - np.logaddexp(0.0, -beta)


def select_arm_finite(instance: BanditInstance, z_hat) -> int:
    """Arm maximising ``w_u f(u^T z_hat)``; ties go to the lowest index."""
    return int(np.argmax(_log_scores(instance, np.asarray(z_hat, dtype=np.float64))))


def select_arm_sphere(z_hat) -> np.ndarray:
    z = np.asarray(z_hat, dtype=np.float64)
    norm = np.linalg.norm(z)
    if norm == 0:
        e1 = np.zeros(z.size)
        e1[0] = 1.0
        return e1
    return z / norm


@dataclass
class EpochState:
    epoch: int
    success_counts: np.ndarray
    estimates: np.ndarray
    z_estimate: np.ndarray
    chosen_arm: object
    good: bool


def run_trial(
    instance: BanditInstance | SphereInstance,
    sched: Schedule,
    T: int,
    stream: RewardStream,
    *,
    probe: ProbeSet | None = None,
    detail: bool = False,
    exact_estimates: bool = False,
) -> RegretTrace:
    """Run the Two-Phase Algorithm for ``T`` timesteps.

    Each epoch pulls every probe arm once, re-estimates the preference vector
    and then pulls the estimated best arm ``g(l)`` times.  The run stops at
    timestep ``T`` wherever it falls.  With ``exact_estimates`` the probe
    estimates are replaced by the true means (perfect-information oracle);
    Phase-1 rewards are still drawn.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    sphere = isinstance(instance, SphereInstance)
    if sphere:
        probe = ProbeSet.standard_basis(instance.n)
        probe_means = np.asarray(logistic(instance.preference))
        probe_weights = np.ones(instance.n)
        probe_regrets = instance.best_value - probe_means
        probe_ids = list(range(instance.n))
    else:
        probe = probe or choose_probe_set(instance)
        idx = np.asarray(probe.indices)
        probe_means = instance.true_means[idx]
        probe_weights = instance.weights[idx]
        probe_regrets = [instance.regret_of(int(i)) for i in idx]
        probe_ids = [int(i) for i in idx]
    n = probe.n
    trace = RegretTrace(T, detail)
    counts = np.zeros(n, dtype=np.int64)
    l = 1
    while not trace.done:
        trace.start_epoch()
        k = min(n, T - trace.length)
        hits = stream.uniforms(k) < probe_means[:k]
        counts[:k] += hits
        for i in range(k):
            trace.add_run(probe_ids[i], 1, probe_weights[i] * hits[i], probe_regrets[i])
        if k < n:
            break
        estimates = probe_means.copy() if exact_estimates else counts / l
        z_hat, good = estimate_preference(probe, estimates)
        if sphere:
            arm = select_arm_sphere(z_hat)
            p, w = logistic(float(arm @ instance.preference)), 1.0
            regret = instance.regret_of(arm)
        else:
            arm = select_arm_finite(instance, z_hat)
            p, w = instance.true_means[arm], instance.weights[arm]
            regret = instance.regret_of(arm)
        trace.epochs.append(EpochState(l, counts.copy(), estimates, z_hat, arm, good))
        k = min(sched.g(l), T - trace.length)
        if k > 0:
            trace.add_run(arm, 2, w * (stream.uniforms(k) < p), regret)
        l += 1
    return trace


def baseline_ucb1_batch(instance: BanditInstance, T: int, streams: Sequence[RewardStream], detail: bool = False) -> list[RegretTrace]:
    """UCB1 run in lockstep for several independent streams.

    Arms are treated as independent; rewards are scaled by the largest weight
    so they lie in [0, 1].  Only correctly-rounded arithmetic enters the index,
    so results do not depend on how trials are batched.
    """
    m = instance.m
    R = len(streams)
    means = instance.true_means
    w = instance.weights
    scale = float(w.max())
    draws = np.stack([s.uniforms(T) for s in streams]) if R else np.zeros((0, T))
    chosen = np.empty((R, T), dtype=np.int64)
    rewards = np.empty((R, T))
    counts = np.zeros((R, m))
    sums = np.zeros((R, m))
    rows = np.arange(R)
    for t in range(T):
        if t < m:
            arm = np.full(R, t, dtype=np.int64)
        else:
            bonus = np.sqrt((2.0 * math.log(t)) / counts)
            arm = np.argmax(sums / counts + bonus, axis=1)
        r = np.where(draws[:, t] < means[arm], w[arm], 0.0)
        chosen[:, t] = arm
        rewards[:, t] = r
        counts[rows, arm] += 1.0
        sums[rows, arm] += r / scale
    regret_of = np.array([instance.regret_of(a) for a in range(m)])
    return [
        RegretTrace.from_steps(T, chosen[i], rewards[i], regret_of[chosen[i]], detail=detail)
        for i in range(R)
    ]


def baseline_ucb1(instance: BanditInstance, T: int, stream: RewardStream, detail: bool = False) -> RegretTrace:
    return baseline_ucb1_batch(instance, T, [stream], detail)[0]


def baseline_random(instance: BanditInstance, T: int, stream: RewardStream, detail: bool = False) -> RegretTrace:
    """Uniform random arm each step.

    Arm choices come from a generator derived from the stream's seed, so the
    reward stream still sees one draw per pull.
    """
    chooser = np.random.Generator(np.random.PCG64(np.random.SeedSequence([stream.seed, 1])))
    arms = chooser.integers(instance.m, size=T)
    hits = stream.uniforms(T) < instance.true_means[arms]
    rewards = np.where(hits, instance.weights[arms], 0.0)
    regret_of = np.array([instance.regret_of(a) for a in range(instance.m)])
    return RegretTrace.from_steps(T, arms, rewards, regret_of[arms], detail=detail)
