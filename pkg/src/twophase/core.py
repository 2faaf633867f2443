"""Link function, scheduling functions and problem-instance types."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "BanditInstance",
    "Schedule",
    "SphereInstance",
    "iterated_log",
    "logistic",
    "logistic_derivative",
    "logit",
    "random_instance",
    "schedule_g",
    "schedule_g_inverse",
]


def _check_finite(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"expected finite input, got {x!r}")
    return arr


def _scalar_or_array(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def logistic(beta):
    """Logistic link ``1 / (1 + exp(-beta))``; accepts scalars or arrays."""
    if type(beta) is float or type(beta) is int:
        # scalar fast path, same formula as the array path
        if not math.isfinite(beta):
            raise ValueError(f"expected finite input, got {beta!r}")
        with np.errstate(over="ignore"):
            return float(1.0 / (1.0 + np.exp(np.float64(-beta))))
    b = _check_finite(beta)
    with np.errstate(over="ignore"):
        return _scalar_or_array(1.0 / (1.0 + np.exp(-b)))


def logit(p):
    """Inverse of :func:`logistic` on the open unit interval.

    Values outside ``(0, 1)`` raise; they are never clamped because
    membership in the open interval is what makes an epoch good.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError(f"logit is defined on (0, 1) only, got {p!r}")
    return _scalar_or_array(np.log(arr) - np.log1p(-arr))


def logistic_derivative(beta):
    # evaluate at -|beta| so that f'(x) == f'(-x) holds bit for bit
    s = np.asarray(logistic(-np.abs(_check_finite(beta))))
    return _scalar_or_array(s * (1.0 - s))


def iterated_log(x: float) -> int:
    """Number of natural-log applications needed to bring ``x`` to at most 1."""
    if isinstance(x, float) and not math.isfinite(x):
        raise ValueError(f"iterated_log needs a finite argument, got {x!r}")
    count = 0
    while x > 1:
        x = math.log(x)
        count += 1
    return count


# ln of the power tower e^e^...^e (k levels); log* t == k  iff  ln t in (TOWER[k-1], TOWER[k]]
_LN_TOWER = (0.0, 1.0, math.e, math.exp(math.e), math.exp(math.exp(math.e)), math.inf)


def _lls_h(t: int) -> float:
    return math.log(t) * iterated_log(t)


@lru_cache(maxsize=4096)
def _lls_g(l: int) -> int:
    # h(t) = log t * log* t is non-decreasing, so {t : h(t) <= l} is a prefix of N_1
    lo, hi = 1, 2
    while _lls_h(hi) <= l:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _lls_h(mid) <= l:
            lo = mid
        else:
            hi = mid
    return lo


def _lls_log_g(l: int) -> float:
    if l <= 300:
        return math.log(_lls_g(l))
    best = 0.0
    for k in range(1, len(_LN_TOWER)):
        if l / k > _LN_TOWER[k - 1]:
            best = max(best, min(l / k, _LN_TOWER[k]))
    return best


@dataclass(frozen=True)
class Schedule:
    """Phase-2 length ``g(l)`` for epoch ``l`` together with its extended inverse.

    ``kind`` is one of ``"lls"``, ``"linear_over_n"`` (``param`` = n),
    ``"poly"`` (``param`` = degree) or ``"custom"`` (``table`` holds
    ``g(1), g(2), ...``; past the end the table grows by one per epoch).
    Schedules must be non-decreasing and unbounded.
    """

    kind: str
    param: float = 0
    table: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("lls", "linear_over_n", "poly", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "linear_over_n" and (int(self.param) != self.param or self.param < 1):
            raise ValueError("linear_over_n needs a positive integer n")
        if self.kind == "poly" and not self.param > 0:
            raise ValueError("poly schedule needs a positive degree")
        if self.kind == "custom":
            if not self.table:
                raise ValueError("custom schedule needs a non-empty table")
            if any(v < 0 for v in self.table) or any(
                b < a for a, b in zip(self.table, self.table[1:])
            ):
                raise ValueError("custom table must be non-negative and non-decreasing")

    @classmethod
    def lls(cls) -> "Schedule":
        return cls("lls")

    @classmethod
    def linear_over_n(cls, n: int) -> "Schedule":
        return cls("linear_over_n", int(n))

    @classmethod
    def poly(cls, degree: float) -> "Schedule":
        return cls("poly", degree)

    @classmethod
    def custom(cls, table: Sequence[int]) -> "Schedule":
        return cls("custom", 0, tuple(int(v) for v in table))

    def g(self, l: int) -> int:
        return schedule_g(self, l)

    def g_inverse(self, t: int) -> int:
        return schedule_g_inverse(self, t)

    def log_g(self, l: int) -> float:
        """``log g(l)`` without materialising huge integers (``-inf`` when ``g(l) = 0``)."""
        if self.kind == "lls":
            return _lls_log_g(l)
        if self.kind == "poly" and l > 10**6:
            return self.param * math.log(l)
        v = schedule_g(self, l)
        return math.log(v) if v > 0 else -math.inf

    def describe(self) -> str:
        if self.kind == "lls":
            return "lls"
        if self.kind == "linear_over_n":
            return f"linear_over_n:{int(self.param)}"
        if self.kind == "poly":
            return f"poly:{self.param:g}"
        return "custom:" + ",".join(str(v) for v in self.table)


def schedule_g(sched: Schedule, l: int) -> int:
    if l < 1:
        raise ValueError(f"epoch index starts at 1, got {l}")
    if sched.kind == "lls":
        return _lls_g(int(l))
    if sched.kind == "linear_over_n":
        return l // int(sched.param)
    if sched.kind == "poly":
        return int(math.floor(l**sched.param))
    table = sched.table
    if l <= len(table):
        return table[l - 1]
    return table[-1] + (l - len(table))


def schedule_g_inverse(sched: Schedule, t: int) -> int:
    """``max({1} | {l >= 1 : g(l) <= t})``."""
    if t < 0:
        raise ValueError(f"timestep must be non-negative, got {t}")
    if sched.kind == "linear_over_n":
        return max(1, int(sched.param) * (t + 1) - 1)
    if schedule_g(sched, 1) > t:
        return 1
    lo, hi = 1, 2
    while schedule_g(sched, hi) <= t:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if schedule_g(sched, mid) <= t:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True, eq=False)
class BanditInstance:
    """Finite arm set ``U`` (``n x m``, arms are columns), preference ``z*`` and weights.

    Derived truth (qualities, true means, best set, best value) is computed on
    construction.
    """

    arms: np.ndarray
    preference: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        arms = np.atleast_2d(np.asarray(self.arms, dtype=np.float64))
        z = np.asarray(self.preference, dtype=np.float64).reshape(-1)
        n, m = arms.shape
        if z.shape != (n,):
            raise ValueError(f"preference has length {z.size}, arms have dimension {n}")
        if m < n:
            raise ValueError(f"need at least n={n} arms, got m={m}")
        if not (np.all(np.isfinite(arms)) and np.all(np.isfinite(z))):
            raise ValueError("arms and preference must be finite")
        if np.linalg.matrix_rank(arms) != n:
            raise ValueError("arm matrix U must have full row rank n")
        w = np.ones(m) if self.weights is None else np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape != (m,):
            raise ValueError(f"expected {m} weights, got {w.size}")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and strictly positive")
        for name, value in (("arms", arms), ("preference", z), ("weights", w)):
            value = value.copy()
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        qualities = arms.T @ z
        true_means = np.asarray(logistic(qualities))
        if not np.all((true_means > 0) & (true_means < 1)):
            raise ValueError("arm qualities saturate the logistic link; rescale U or z*")
        values = w * true_means
        best_value = float(values.max())
        object.__setattr__(self, "qualities", qualities)
        object.__setattr__(self, "true_means", true_means)
        object.__setattr__(self, "best_value", best_value)
        object.__setattr__(self, "best_set", tuple(int(i) for i in np.flatnonzero(values == best_value)))

    qualities: np.ndarray = field(init=False, repr=False)
    true_means: np.ndarray = field(init=False, repr=False)
    best_set: tuple[int, ...] = field(init=False)
    best_value: float = field(init=False)

    @property
    def n(self) -> int:
        return self.arms.shape[0]

    @property
    def m(self) -> int:
        return self.arms.shape[1]

    def regret_of(self, arm: int) -> float:
        """Per-step pseudo-regret of pulling ``arm``."""
        return self.best_value - float(self.weights[arm] * self.true_means[arm])


@dataclass(frozen=True, eq=False)
class SphereInstance:
    """Every unit vector in R^n is an arm; the probe arms are the standard basis."""

    preference: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.preference, dtype=np.float64).reshape(-1)
        if z.size < 2:
            raise ValueError("sphere instances need dimension n >= 2")
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) == 0:
            raise ValueError("preference must be finite and nonzero")
        z = z.copy()
        z.flags.writeable = False
        object.__setattr__(self, "preference", z)

    @property
    def n(self) -> int:
        return self.preference.size

    @property
    def dimension(self) -> int:
        return self.n

    @property
    def probe_arms(self) -> np.ndarray:
        return np.eye(self.n)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.preference))

    @property
    def best_value(self) -> float:
        return logistic(self.norm)

    def regret_of(self, arm: np.ndarray) -> float:
        return self.best_value - logistic(float(np.dot(arm, self.preference)))


def random_instance(
    n: int, m: int, rng: np.random.Generator, z_norm: float = 1.0, weights=None
) -> BanditInstance:
    """Unit-norm Gaussian-direction arms and a preference of norm ``z_norm``."""
    while True:
        arms = rng.normal(size=(n, m))
        arms /= np.linalg.norm(arms, axis=0)
        if np.linalg.matrix_rank(arms) == n:
            break
    z = rng.normal(size=n)
    z *= z_norm / np.linalg.norm(z)
    return BanditInstance(arms, z, weights)
