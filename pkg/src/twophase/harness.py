"""Experiment configuration, Monte-Carlo orchestration and CSV emission.

Config grammar: one ``key = value`` per line, ``#`` starts a comment,
matrices are bracketed row lists (``arms = [[1, 0, 1], [0, 1, 1]]`` is a
2 x 3 arm matrix whose arms are its columns).
"""

from __future__ import annotations

import ast
import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import BanditInstance, Schedule, SphereInstance, random_instance
from .env import RewardStream
from .policy import baseline_random, baseline_ucb1_batch, choose_probe_set, run_trial
from .theory import (
    TheoryConstants,
    TheoryError,
    bound_finite,
    bound_infinite,
    compute_constants,
    sphere_constants,
)

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "build_instance",
    "build_schedule",
    "emit_config",
    "emit_csv",
    "emit_curves",
    "parse_config",
    "run_experiment",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["policy", "checkpoint_t", "mean_regret", "stderr", "bound", "n", "m", "trials", "seed"]
TWO_PHASE = "two_phase"
BASELINES = ("ucb1", "random")
KEYS = (
    "mode",
    "arms",
    "preference",
    "weights",
    "n",
    "m",
    "instance_seed",
    "z_norm",
    "schedule",
    "horizon",
    "trials",
    "seed",
    "baselines",
    "checkpoints",
    "bounds",
)


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    horizon: int
    schedule: str = "lls"
    arms: tuple[tuple[float, ...], ...] | None = None
    preference: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None
    n: int | None = None
    m: int | None = None
    instance_seed: int = 0
    z_norm: float = 1.0
    trials: int = 1
    seed: int = 0
    baselines: tuple[str, ...] = ()
    checkpoints: tuple[int, ...] = ()
    bounds: bool = True

    @property
    def dimension(self) -> int:
        if self.arms is not None:
            return len(self.arms)
        if self.preference is not None:
            return len(self.preference)
        return int(self.n)

    def config_hash(self) -> str:
        return hashlib.sha256(emit_config(self).encode()).hexdigest()


def default_checkpoints(T: int, count: int = 10) -> tuple[int, ...]:
    pts = np.unique(np.round(np.geomspace(1, T, count)).astype(np.int64))
    return tuple(int(t) for t in pts)


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _as_int(name, value, errors, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        errors.append(f"{name} must be an integer, got {value!r}")
        return None
    if minimum is not None and value < minimum:
        errors.append(f"{name} must be >= {minimum}, got {value}")
        return None
    return int(value)


def _as_vector(name, value, errors):
    if not isinstance(value, (list, tuple)) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        errors.append(f"{name} must be a bracketed list of numbers")
        return None
    return tuple(float(v) for v in value)


def _as_matrix(name, value, errors):
    if not isinstance(value, (list, tuple)) or not value:
        errors.append(f"{name} must be a bracketed list of rows")
        return None
    rows = [_as_vector(f"{name} row {i + 1}", row, errors) for i, row in enumerate(value)]
    if any(r is None for r in rows):
        return None
    if len({len(r) for r in rows}) != 1:
        errors.append(f"{name} rows must all have the same length")
        return None
    return tuple(rows)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        raw[key] = _parse_value(value)

    fields: dict[str, object] = {}
    mode = raw.get("mode")
    if mode not in ("finite", "sphere"):
        errors.append(f"mode must be 'finite' or 'sphere', got {mode!r}")
    fields["mode"] = mode
    if "horizon" not in raw:
        errors.append("horizon is required")
    else:
        fields["horizon"] = _as_int("horizon", raw["horizon"], errors, 1)
    for key, minimum in (("trials", 1), ("seed", 0), ("instance_seed", 0), ("n", 1), ("m", 1)):
        if raw.get(key) is not None:
            fields[key] = _as_int(key, raw[key], errors, minimum)
    if fields.get("seed") is not None and fields["seed"] >= 2**64:
        errors.append("seed must fit in 64 bits")
    if raw.get("z_norm") is not None:
        z = raw["z_norm"]
        if isinstance(z, bool) or not isinstance(z, (int, float)) or not z > 0:
            errors.append(f"z_norm must be a positive number, got {z!r}")
        else:
            fields["z_norm"] = float(z)
    if raw.get("arms") is not None:
        fields["arms"] = _as_matrix("arms", raw["arms"], errors)
    for key in ("preference", "weights"):
        if raw.get(key) is not None:
            fields[key] = _as_vector(key, raw[key], errors)
    if "bounds" in raw:
        if not isinstance(raw["bounds"], bool):
            errors.append("bounds must be true or false")
        else:
            fields["bounds"] = raw["bounds"]

    sched = raw.get("schedule", "lls")
    fields["schedule"] = str(sched).replace(" ", "")

    bl = raw.get("baselines")
    if bl is None:
        names: list[str] = []
    elif isinstance(bl, str):
        names = [b.strip() for b in bl.split(",") if b.strip()]
    elif isinstance(bl, tuple):
        names = [str(b) for b in bl]
    else:
        names = []
        errors.append("baselines must be a comma-separated subset of ucb1, random")
    for b in names:
        if b not in BASELINES:
            errors.append(f"unknown baseline {b!r}; choose from {', '.join(BASELINES)}")
    fields["baselines"] = tuple(b for b in BASELINES if b in names)

    cps = raw.get("checkpoints")
    if cps is not None:
        if isinstance(cps, int) and not isinstance(cps, bool):
            cps = [cps]
        if not isinstance(cps, (list, tuple)):
            errors.append("checkpoints must be a bracketed list of timesteps")
        else:
            vals = [_as_int("checkpoint", c, errors, 1) for c in cps]
            fields["checkpoints"] = tuple(sorted({v for v in vals if v is not None}))

    if errors:
        raise ConfigError(errors)

    if mode == "sphere":
        for key in ("arms", "weights", "m"):
            if key in fields:
                errors.append(f"sphere mode forbids {key!r}: every unit vector is an arm")
        if fields["baselines"]:
            errors.append("baselines need a finite arm set; remove them in sphere mode")
        if "preference" not in fields and "n" not in fields:
            errors.append("sphere mode needs either preference or n")
    else:
        if "arms" in fields:
            if "preference" not in fields:
                errors.append("inline arms need an inline preference")
            for key in ("n", "m"):
                if key in fields:
                    errors.append(f"{key!r} conflicts with inline arms")
        elif "n" not in fields or "m" not in fields:
            errors.append("finite mode needs inline arms or both n and m")
    if errors:
        raise ConfigError(errors)

    horizon = fields["horizon"]
    if "checkpoints" in fields:
        bad = [t for t in fields["checkpoints"] if t > horizon]
        if bad:
            errors.append(f"checkpoints beyond the horizon: {bad}")
    else:
        fields["checkpoints"] = default_checkpoints(horizon)

    config = ExperimentConfig(**fields)
    try:
        build_schedule(config, config.dimension)
    except ValueError as exc:
        errors.append(f"schedule: {exc}")
    try:
        build_instance(config)
    except ValueError as exc:
        errors.append(f"instance: {exc}")
    if errors:
        raise ConfigError(errors)
    return config


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def emit_config(config: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(emit_config(c)) == c``."""
    lines = []
    for key in KEYS:
        value = getattr(config, key)
        if value is None:
            continue
        if key == "baselines":
            value = ", ".join(value) if value else "none"
            lines.append(f"{key} = {value}")
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def build_schedule(config: ExperimentConfig, n: int) -> Schedule:
    spec = config.schedule
    kind, _, arg = spec.partition(":")
    if kind == "lls" and not arg:
        return Schedule.lls()
    if kind == "linear_over_n":
        return Schedule.linear_over_n(int(arg) if arg else n)
    if kind == "poly" and arg:
        return Schedule.poly(float(arg))
    if kind == "custom" and arg:
        return Schedule.custom([int(v) for v in arg.strip("[]").split(",")])
    raise ValueError(f"unknown schedule {spec!r}; use lls, linear_over_n[:n], poly:k or custom:a,b,...")


def build_instance(config: ExperimentConfig) -> BanditInstance | SphereInstance:
    rng = np.random.default_rng(config.instance_seed)
    if config.mode == "sphere":
        if config.preference is not None:
            return SphereInstance(np.array(config.preference))
        z = rng.normal(size=config.n)
        return SphereInstance(z * config.z_norm / np.linalg.norm(z))
    if config.arms is not None:
        return BanditInstance(np.array(config.arms), np.array(config.preference), config.weights)
    inst = random_instance(config.n, config.m, rng, config.z_norm, config.weights)
    if config.preference is not None:
        inst = BanditInstance(inst.arms, np.array(config.preference), config.weights)
    return inst


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    checkpoints: np.ndarray
    policies: list[str]
    mean_regret: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    bounds: np.ndarray | None
    constants: TheoryConstants | None
    provenance: dict
    n: int
    m: int | None
    violations: list[dict] = field(default_factory=list)

    @property
    def per_policy(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        return {p: (self.mean_regret[p], self.stderr[p]) for p in self.policies}

    def summary(self) -> str:
        lines = [f"n={self.n} m={self.m if self.m is not None else 'inf'} trials={self.config.trials}"]
        for p in self.policies:
            lines.append(
                f"{p:>10}: mean regret at T={int(self.checkpoints[-1])} is "
                f"{self.mean_regret[p][-1]:.4g} +/- {self.stderr[p][-1]:.2g}"
            )
        if self.bounds is not None:
            lines.append(f"{'bound':>10}: {self.bounds[-1]:.4g}")
        if self.violations:
            lines.append(f"BOUND VIOLATIONS at t = {[v['checkpoint_t'] for v in self.violations]}")
        return "\n".join(lines)


def _trial_block(config_text: str, indices: list[int]) -> dict[str, np.ndarray]:
    """Cumulative pseudo-regret at the checkpoints for each policy and trial index."""
    config = parse_config(config_text)
    instance = build_instance(config)
    sched = build_schedule(config, instance.n)
    probe = None if isinstance(instance, SphereInstance) else choose_probe_set(instance)
    cps = np.asarray(config.checkpoints)
    T = config.horizon
    out = {TWO_PHASE: np.empty((len(indices), cps.size))}
    for row, i in enumerate(indices):
        trace = run_trial(instance, sched, T, RewardStream.for_trial(config.seed, i), probe=probe)
        out[TWO_PHASE][row] = trace.cumulative_regret_at(cps)
    if "ucb1" in config.baselines:
        traces = baseline_ucb1_batch(instance, T, [RewardStream.for_trial(config.seed, i) for i in indices])
        out["ucb1"] = np.array([tr.cumulative_regret_at(cps) for tr in traces]).reshape(len(indices), cps.size)
    if "random" in config.baselines:
        out["random"] = np.array(
            [baseline_random(instance, T, RewardStream.for_trial(config.seed, i)).cumulative_regret_at(cps) for i in indices]
        ).reshape(len(indices), cps.size)
    return out


def _chunks(trials: int, jobs: int) -> list[list[int]]:
    size = max(1, math.ceil(trials / (4 * jobs)))
    return [list(range(a, min(a + size, trials))) for a in range(0, trials, size)]


def _theory(config: ExperimentConfig, instance, sched: Schedule):
    cps = np.asarray(config.checkpoints)
    if isinstance(instance, SphereInstance):
        consts = sphere_constants(instance)
        if sched.kind != "linear_over_n" or int(sched.param) != instance.n:
            raise TheoryError(
                f"the sphere bound holds for schedule linear_over_n:{instance.n} only; "
                "change the schedule or set 'bounds = false'"
            )
        bounds = np.array([bound_infinite(consts, instance.n, instance.norm, t) for t in cps])
        return consts, bounds
    try:
        consts = compute_constants(instance, None, sched)
    except TheoryError as exc:
        raise TheoryError(f"{exc}; set 'bounds = false' to run without theoretical bounds") from exc
    bounds = np.array([bound_finite(consts, instance, sched, t) for t in cps])
    return consts, bounds


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Run every trial (and baseline), aggregate checkpoint means and evaluate the bound."""
    instance = build_instance(config)
    sched = build_schedule(config, instance.n)
    consts, bounds = _theory(config, instance, sched) if config.bounds else (None, None)

    text = emit_config(config)
    blocks = _chunks(config.trials, max(1, jobs))
    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_block, [text] * len(blocks), blocks))
    else:
        results = [_trial_block(text, b) for b in blocks]

    policies = [TWO_PHASE, *config.baselines]
    cps = np.asarray(config.checkpoints, dtype=np.int64)
    mean, se = {}, {}
    for p in policies:
        values = np.empty((config.trials, cps.size))
        for block, res in zip(blocks, results):
            values[block] = res[p]
        mean[p] = values.mean(axis=0)
        se[p] = values.std(axis=0, ddof=1) / math.sqrt(config.trials) if config.trials > 1 else np.zeros(cps.size)

    violations = []
    if bounds is not None:
        for j, t in enumerate(cps):
            if mean[TWO_PHASE][j] > bounds[j]:
                violations.append(
                    {"checkpoint_t": int(t), "mean_regret": float(mean[TWO_PHASE][j]), "bound": float(bounds[j])}
                )
                log.error("bound violated at t=%d: mean %.6g > bound %.6g", t, mean[TWO_PHASE][j], bounds[j])

    provenance = {"config_hash": config.config_hash(), "seed": config.seed, "version": __version__}
    m = None if isinstance(instance, SphereInstance) else instance.m
    return ExperimentReport(config, cps, policies, mean, se, bounds, consts, provenance, instance.n, m, violations)


def _num(v: float) -> str:
    return repr(float(v))


def csv_text(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    m = "inf" if report.m is None else str(report.m)
    for p in report.policies:
        for j, t in enumerate(report.checkpoints):
            bound = _num(report.bounds[j]) if (p == TWO_PHASE and report.bounds is not None) else ""
            writer.writerow(
                [p, int(t), _num(report.mean_regret[p][j]), _num(report.stderr[p][j]), bound,
                 report.n, m, report.config.trials, report.config.seed]
            )
    return buf.getvalue()


def emit_csv(report: ExperimentReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(report))
    return path


def emit_curves(report: ExperimentReport, directory) -> list[Path]:
    """One plot-ready ``t,mean_regret,stderr`` file per policy plus ``curve_bound.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for p in report.policies:
        path = directory / f"curve_{p}.csv"
        rows = ["t,mean_regret,stderr"] + [
            f"{int(t)},{_num(mu)},{_num(s)}"
            for t, mu, s in zip(report.checkpoints, report.mean_regret[p], report.stderr[p])
        ]
        path.write_text("\n".join(rows) + "\n")
        written.append(path)
    if report.bounds is not None:
        path = directory / "curve_bound.csv"
        rows = ["t,bound"] + [f"{int(t)},{_num(b)}" for t, b in zip(report.checkpoints, report.bounds)]
        path.write_text("\n".join(rows) + "\n")
        written.append(path)
    return written


def emit_report_json(report: ExperimentReport, path) -> Path:
    payload = {
        "provenance": report.provenance,
        "constants": report.constants.as_dict() if report.constants is not None else None,
        "violations": report.violations,
        "config": emit_config(report.config),
    }
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")
    return path


def with_overrides(config: ExperimentConfig, trials: int | None = None, seed: int | None = None) -> ExperimentConfig:
    changes = {}
    if trials is not None:
        if trials < 1:
            raise ConfigError(["--trials must be >= 1"])
        changes["trials"] = trials
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError(["--seed must be a 64-bit unsigned integer"])
        changes["seed"] = seed
    return replace(config, **changes)


def default_jobs() -> int:
    value = os.environ.get("TPB_JOBS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1
