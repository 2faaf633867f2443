"""Constants and closed-form regret bounds, plus exact enumeration oracles.

Everything here is a pure function of the instance.  The enumeration
oracles (``bad_epoch_probability_exact``, ``phase2_regret_exact``,
``binomial_deviation_exact``) compute exact expectations over all count
vectors and are what the closed-form bounds are checked against.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .core import BanditInstance, Schedule, SphereInstance, logistic, logistic_derivative, logit
from .policy import ProbeSet, choose_probe_set

__all__ = [
    "LemmaChainReport",
    "TheoryConstants",
    "TheoryError",
    "bad_epoch_bound",
    "bad_epoch_probability_exact",
    "binomial_deviation_exact",
    "bound_finite",
    "bound_infinite",
    "central_angle",
    "compute_constants",
    "compute_region_delta",
    "grid_delta_oracle",
    "hoeffding_bound",
    "kl_bernoulli",
    "lemma_chain_check",
    "phase2_regret_exact",
    "phase2_regret_monte_carlo",
    "sphere_constants",
]

LPRIME_WINDOW = 64
LPRIME_SCAN_CAP = 10**6
ENUMERATION_BUDGET = 10**6


class TheoryError(ValueError):
    """A constant is undefined for the given instance or schedule."""


def kl_bernoulli(p: float, q: float) -> float:
    """``D(p || q)`` between Bernoulli(p) and Bernoulli(q), with ``0 log 0 = 0``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return max(out, 0.0)


# ---------------------------------------------------------------------------
# region A and the parallelotope B(delta)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _chain_vertices(cv: np.ndarray, cu: np.ndarray, ystar: np.ndarray, delta: float) -> list[np.ndarray]:
    """Box vertices on the (min a, max b) frontier of the projection (a, b) = (cv.y, cu.y)."""
    crit = []
    for i in range(cv.size):
        angle = math.atan2(cv[i], cu[i])
        if 0.0 < angle < math.pi / 2:
            crit.append(angle)
    cuts = [0.0] + sorted(crit) + [math.pi / 2]
    verts = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        theta = 0.5 * (lo + hi)
        d = math.cos(theta) * cv - math.sin(theta) * cu
        v = ystar - delta * np.sign(d)
        if not verts or not np.array_equal(v, verts[-1]):
            verts.append(v)
    return verts


def _weighted_margin_min(cv, cu, wv, wu, ystar, delta) -> float:
    """Minimum over the box of ``log(wv f(cv.y)) - log(wu f(cu.y))``."""

    def margin(y):
        a, b = cv @ y, cu @ y
        return (math.log(wv) - _softplus(-a)) - (math.log(wu) - _softplus(-b))

    verts = _chain_vertices(cv, cu, ystar, delta)
    best = min(margin(v) for v in verts)
    grid = np.linspace(0.0, 1.0, 65)
    for p, q in zip(verts[:-1], verts[1:]):
        ys = np.outer(1.0 - grid, p) + np.outer(grid, q)
        vals = (math.log(wv) - _softplus(-(ys @ cv))) - (math.log(wu) - _softplus(-(ys @ cu)))
        j = int(np.argmin(vals))
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
        res = minimize_scalar(
            lambda s: margin((1.0 - s) * p + s * q), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}
        )
        best = min(best, float(vals[j]), float(res.fun))
    return best


def _delta_for_best_arm_weighted(instance, probe, v, others, ystar) -> float:
    sigma = probe.arms
    cv = np.linalg.solve(sigma, instance.arms[:, v])
    cus = [np.linalg.solve(sigma, instance.arms[:, u]) for u in others]
    wv = float(instance.weights[v])

    def inside(delta):
        return all(
            _weighted_margin_min(cv, cu, wv, float(instance.weights[u]), ystar, delta) > 0.0
            for cu, u in zip(cus, others)
        )

    lo, hi = 0.0, 1.0
    while inside(hi):
        lo, hi = hi, hi * 2.0
        if hi > 2.0**30:
            return math.inf
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo


def compute_region_delta(instance: BanditInstance, probe: ProbeSet | None = None) -> float:
    """Half-width of the largest parallelotope ``||Sigma^T (z - z*)||_inf < delta`` inside A.

    With a common weight every boundary of A is linear and the answer is
    ``min_u (v - u).z* / ||Sigma^{-1}(v - u)||_1``.  With distinct weights the
    boundaries are curved and delta is found by bisection on an exact
    minimisation over the box.  When several arms are best, each best arm
    certifies its own box against the arms outside V and the largest box is
    returned (a valid inner approximation of A).  Returns 0.0 when a non-best
    arm ties the best one and ``inf`` when every arm is best.
    """
    probe = probe or choose_probe_set(instance)
    best = list(instance.best_set)
    others = [u for u in range(instance.m) if u not in instance.best_set]
    if not others:
        return math.inf
    ystar = probe.arms.T @ instance.preference
    equal_weights = bool(np.all(instance.weights == instance.weights[0]))
    deltas = []
    for v in best:
        if equal_weights:
            diff = instance.arms[:, [v]] - instance.arms[:, others]
            margins = diff.T @ instance.preference
            norms = np.abs(np.linalg.solve(probe.arms, diff)).sum(axis=0)
            deltas.append(float(np.min(np.maximum(margins, 0.0) / norms)))
        else:
            deltas.append(_delta_for_best_arm_weighted(instance, probe, v, others, ystar))
    return max(deltas)


def grid_delta_oracle(
    instance: BanditInstance,
    probe: ProbeSet | None = None,
    samples: int = 10_000,
    levels: int = 10,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Brute-force delta: ``(estimate, bracket)``.

    A box passes when every sampled point (all corners for n <= 10, the rest
    uniform on random edges) picks an arm in V.  The bracket is found by
    doubling from 1; the estimate is the largest passing value after
    ``levels`` dyadic refinements, so it is within ``bracket * 2**-levels``
    below the true value.
    """
    probe = probe or choose_probe_set(instance)
    rng = rng or np.random.default_rng(0)
    n = instance.n
    ystar = probe.arms.T @ instance.preference
    best = np.zeros(instance.m, dtype=bool)
    best[list(instance.best_set)] = True
    U = instance.arms
    logw = np.log(instance.weights)
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=n))) if n <= 10 else np.zeros((0, n))
    n_edge = max(samples - len(corners), 0)
    edge_pts = rng.choice((-1.0, 1.0), size=(n_edge, n))
    free = rng.integers(n, size=n_edge)
    edge_pts[np.arange(n_edge), free] = rng.uniform(-1.0, 1.0, size=n_edge)
    unit = np.vstack([corners, edge_pts])

    def passes(delta: float) -> bool:
        Y = ystar[:, None] + delta * unit.T
        Z = np.linalg.solve(probe.arms.T, Y)
        beta = U.T @ Z
        scores = logw[:, None] - np.logaddexp(0.0, -beta)
        return bool(np.all(best[np.argmax(scores, axis=0)]))

    if not passes(1e-12):
        return 0.0, 1.0
    hi = 1.0
    while passes(hi):
        hi *= 2.0
        if hi > 2.0**30:
            return math.inf, math.inf
    bracket = hi
    lo = 0.0
    for _ in range(levels):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo, bracket


# ---------------------------------------------------------------------------
# constants


@dataclass
class TheoryConstants:
    delta: float | None
    alpha_lower: np.ndarray | None
    alpha_upper: np.ndarray | None
    gamma: float | None
    k1: float
    k3: float
    L_prime: int | None = None
    k2: float | None = None
    schedule: str | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return [float(x) for x in v]
            return v

        return {k: clean(v) for k, v in self.__dict__.items()}


def _k1(max_probe_norm: float, z_norm: float) -> float:
    return 2.0 * logistic(-max_probe_norm * z_norm)


def _k3(z_norm: float) -> float:
    return 16.0 / math.pi**2 * z_norm * logistic_derivative(2.0 * z_norm) ** 2


def _scan_L_prime(gamma: float, k1: float, sched: Schedule) -> tuple[int, float]:
    """``L' = max{l : (e^{-gamma l} + e^{-k1 l}) g(l) > 1/2}`` and ``k2`` (sum of the term up to L')."""
    log_half = math.log(0.5)
    L_prime, quiet, l = 0, 0, 0
    log_terms = []
    while quiet < LPRIME_WINDOW:
        l += 1
        if l > LPRIME_SCAN_CAP:
            raise TheoryError(
                f"schedule {sched.describe()} is not admissible here: (e^(-gamma l) + e^(-k1 l)) g(l) "
                f"has not settled below 1/2 within {LPRIME_SCAN_CAP} epochs (gamma={gamma:.4g}, "
                f"k1={k1:.4g}); use a slower schedule or an instance with larger gamma"
            )
        lt = float(np.logaddexp(-gamma * l, -k1 * l)) + sched.log_g(l)
        log_terms.append(lt)
        if lt > log_half:
            L_prime, quiet = l, 0
        else:
            quiet += 1
    if L_prime == 0:
        return 0, 0.0
    lts = np.array(log_terms[:L_prime])
    top = lts.max()
    with np.errstate(over="ignore"):
        k2 = float(math.exp(top) * np.exp(lts - top).sum()) if top < 700 else math.inf
    return L_prime, k2


def compute_constants(
    instance: BanditInstance, probe: ProbeSet | None = None, sched: Schedule | None = None
) -> TheoryConstants:
    """delta, the probe bands, gamma, k1, k3 and (given a schedule) L' and k2."""
    probe = probe or choose_probe_set(instance)
    delta = compute_region_delta(instance, probe)
    if delta <= 0.0:
        raise TheoryError(
            "delta = 0: a non-best arm ties the best arm at z*, so gamma and k2 are undefined"
        )
    beta = probe.arms.T @ instance.preference
    alpha = np.asarray(logistic(beta))
    if math.isinf(delta):
        lower, upper = np.zeros_like(alpha), np.ones_like(alpha)
    else:
        lower = np.asarray(logistic(beta - delta))
        upper = np.asarray(logistic(beta + delta))
    gamma = min(
        min(kl_bernoulli(float(lo), float(a)), kl_bernoulli(float(up), float(a)))
        for lo, up, a in zip(lower, upper, alpha)
    )
    z_norm = float(np.linalg.norm(instance.preference))
    k1 = _k1(float(np.linalg.norm(probe.arms, axis=0).max()), z_norm)
    consts = TheoryConstants(delta, lower, upper, gamma, k1, _k3(z_norm))
    if sched is not None:
        consts.L_prime, consts.k2 = _scan_L_prime(gamma, k1, sched)
        consts.schedule = sched.describe()
    return consts


def sphere_constants(instance: SphereInstance) -> TheoryConstants:
    """k1 and k3 for the unit sphere with the standard-basis probes.

    The sphere has no gap, so delta and gamma do not exist.
    """
    return TheoryConstants(None, None, None, None, _k1(1.0, instance.norm), _k3(instance.norm))


# ---------------------------------------------------------------------------
# bounds


def bound_finite(consts: TheoryConstants, instance: BanditInstance, sched: Schedule, T: int) -> float:
    """``2 w_V alpha_V* n (k2 + g^{-1}(T) + 1)``."""
    if consts.k2 is None:
        raise TheoryError("k2 was not computed; pass a schedule to compute_constants")
    return 2.0 * instance.best_value * instance.n * (consts.k2 + sched.g_inverse(int(T)) + 1)


def geometric_tail(k1: float) -> float:
    """Closed form of ``sum_{l >= 1} l e^{-k1 l}``."""
    q = math.exp(-k1)
    return q / (1.0 - q) ** 2


def bound_infinite(consts: TheoryConstants, n: int, z_norm: float, T: float) -> float:
    """``(alpha_V* + 2/k3)(sqrt(2 n^3 T) + n) + 2 sum_l l e^{-k1 l}`` with ``alpha_V* = f(||z*||)``."""
    if n < 2:
        raise ValueError("the sphere bound needs n >= 2")
    if consts.k1 <= 0 or consts.k3 <= 0:
        raise TheoryError("k1 and k3 must be positive")
    alpha_v = logistic(z_norm)
    return (alpha_v + 2.0 / consts.k3) * (math.sqrt(2.0 * n**3 * T) + n) + 2.0 * geometric_tail(consts.k1)


def sphere_phase2_bound(n: int, z_norm: float, l: int) -> float:
    """Good-epoch bound ``2 n^2 / (k3 l)`` on the expected Phase-2 regret per step."""
    return 2.0 * n**2 / (_k3(z_norm) * l)


# ---------------------------------------------------------------------------
# enumeration oracles


def _probe_means(instance, probe) -> np.ndarray:
    if isinstance(instance, SphereInstance):
        return np.asarray(logistic(instance.preference))
    probe = probe or choose_probe_set(instance)
    return np.asarray(logistic(probe.arms.T @ instance.preference))


def bad_epoch_probability_exact(instance, probe: ProbeSet | None, l: int) -> float:
    """``P(some probe estimate is 0 or 1 after l pulls each)`` = ``1 - prod(1 - a^l - (1-a)^l)``."""
    if l < 1:
        raise ValueError("l must be at least 1")
    a = _probe_means(instance, probe)
    return float(1.0 - np.prod(1.0 - a**l - (1.0 - a) ** l))


def bad_epoch_bound(k1: float, n: int, l: int) -> float:
    """Claimed bad-epoch bound ``min(1, 2n e^{-k1 l})``."""
    return min(1.0, 2.0 * n * math.exp(-k1 * l))


def binomial_deviation_exact(alpha: float, l: int, dev: float) -> float:
    """``P(|q/l - alpha| >= dev)`` for ``q ~ Binomial(l, alpha)``, by enumeration."""
    total = 0.0
    for q in range(l + 1):
        if abs(q / l - alpha) >= dev:
            total += math.comb(l, q) * alpha**q * (1.0 - alpha) ** (l - q)
    return total


def hoeffding_bound(l: int, dev: float) -> float:
    return 2.0 * math.exp(-2.0 * l * dev**2)


def _regret_of_counts(instance: BanditInstance, probe: ProbeSet, Q: np.ndarray, l: int) -> np.ndarray:
    """Phase-2 pseudo-regret for each column of count vectors ``Q`` (n x K)."""
    est = Q / l
    good = np.all((est > 0) & (est < 1), axis=0)
    Z = np.zeros(est.shape)
    if good.any():
        Z[:, good] = probe.solve(logit(est[:, good]))
    beta = instance.arms.T @ Z
    if np.all(instance.weights == instance.weights[0]):
        scores = beta
    else:
        scores = np.log(instance.weights)[:, None] - np.logaddexp(0.0, -beta)
    chosen = np.argmax(scores, axis=0)
    regrets = instance.best_value - instance.weights * instance.true_means
    return np.maximum(regrets[chosen], 0.0)


def phase2_regret_exact(instance: BanditInstance, probe: ProbeSet | None, l: int) -> float:
    """Exact ``E[r_{2,l}]`` by enumerating every probe count vector."""
    probe = probe or choose_probe_set(instance)
    n = probe.n
    if (l + 1) ** n > ENUMERATION_BUDGET:
        raise ValueError(f"(l+1)^n = {(l + 1) ** n} exceeds the enumeration budget {ENUMERATION_BUDGET}")
    alpha = _probe_means(instance, probe)
    pmfs = [
        np.array([math.comb(l, q) * a**q * (1.0 - a) ** (l - q) for q in range(l + 1)]) for a in alpha
    ]
    Q = np.indices((l + 1,) * n).reshape(n, -1)
    prob = np.ones(Q.shape[1])
    for i in range(n):
        prob *= pmfs[i][Q[i]]
    return float(prob @ _regret_of_counts(instance, probe, Q, l))


def phase2_regret_monte_carlo(
    instance: BanditInstance, probe: ProbeSet | None, l: int, samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte-Carlo ``(mean, standard error)`` of the Phase-2 regret in epoch ``l``."""
    from .policy import estimate_preference, select_arm_finite

    probe = probe or choose_probe_set(instance)
    alpha = _probe_means(instance, probe)
    Q = rng.binomial(l, alpha[:, None], size=(probe.n, samples))
    cache: dict[tuple, float] = {}
    out = np.empty(samples)
    for j in range(samples):
        key = tuple(Q[:, j])
        if key not in cache:
            z_hat, _ = estimate_preference(probe, Q[:, j] / l)
            cache[key] = instance.regret_of(select_arm_finite(instance, z_hat))
        out[j] = cache[key]
    return float(out.mean()), float(out.std(ddof=1) / math.sqrt(samples))


# ---------------------------------------------------------------------------
# unit-sphere diagnostics


def central_angle(z_hat, z_star) -> float:
    """Angle between ``z_hat`` and ``z*``; pi when ``z_hat`` is zero."""
    z_star = np.asarray(z_star, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    ns = math.sqrt(float(z_star @ z_star))
    if ns == 0:
        raise ValueError("z* must be nonzero")
    nh = math.sqrt(float(z_hat @ z_hat))
    if nh == 0:
        return math.pi
    c = float(z_hat @ z_star) / (nh * ns)
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass
class LemmaChainReport:
    theta: float
    regret: float
    angle_threshold: float
    coordinate_threshold: float
    regret_exceeds: bool
    angle_exceeds: bool
    coordinate_deviates: bool
    alpha_deviates: bool | None
    violations: list[str]

    @property
    def consistent(self) -> bool:
        return not self.violations


def lemma_chain_check(z_hat, z_star, delta: float) -> LemmaChainReport:
    """Evaluate the regret -> angle -> coordinate -> estimate implications at one point.

    (i)   r > delta  implies  Theta > sqrt(8 delta / ||z*||)
    (ii)  Theta > theta  implies  some |z_hat_i - z*_i| >= theta ||z*|| / (pi sqrt n)
    (iii) that coordinate gap  implies  |f(z_hat_i) - f(z*_i)| >= d2 ||z*|| f'(2||z*||)
    with theta the threshold from (i) and d2 = theta / (pi sqrt n) when d2 <= 1.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    z_star = np.asarray(z_star, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    n = z_star.size
    zn = math.sqrt(float(z_star @ z_star))
    theta = central_angle(z_hat, z_star)
    regret = logistic(zn) - logistic(math.cos(theta) * zn)
    angle_thr = math.sqrt(8.0 * delta / zn)
    violations = []

    regret_exceeds = regret > delta
    angle_exceeds = theta > angle_thr
    if regret_exceeds and not angle_exceeds:
        violations.append("(i) regret exceeds delta but the angle does not exceed its threshold")

    d2 = angle_thr / (math.pi * math.sqrt(n))
    coord_thr = d2 * zn
    gaps = np.abs(z_hat - z_star)
    coordinate_deviates = float(gaps.max()) >= coord_thr
    if angle_exceeds and not coordinate_deviates:
        violations.append("(ii) angle exceeds threshold but no coordinate deviates enough")

    alpha_deviates = None
    if d2 <= 1.0 and coordinate_deviates:
        floor = d2 * zn * logistic_derivative(2.0 * zn)
        hit = gaps >= coord_thr
        dev = np.abs(logistic(z_hat[hit]) - logistic(z_star[hit]))
        alpha_deviates = bool(np.min(dev) >= floor * (1.0 - 1e-12))
        if not alpha_deviates:
            violations.append("(iii) coordinate deviates but the estimate deviation is below its floor")
    return LemmaChainReport(
        theta, regret, angle_thr, coord_thr, regret_exceeds, angle_exceeds, coordinate_deviates, alpha_deviates, violations
    )
