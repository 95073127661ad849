"""Episodic estimation environment.

An episode samples a true parameter from the uniform prior, then repeatedly
takes a design time, simulates the experiment, updates the particle filter
and emits the reward ``tr Cov_before - tr Cov_after``. The episode ends when
the limiting resource is exhausted: the number of experiments, or the total
time (the last experiment may overshoot the time limit).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, InvalidState
from .heuristics import ACTION_WINDOW, HeuristicSpec, Observation, upper_triangle
from .model import FREQ_AND_T2INV, FREQ_KNOWN_T2, FREQ_NO_DECOHERENCE, ExperimentModel
from .smc import (
    DEFAULT_LW_A,
    DEFAULT_RESAMPLE_THRESHOLD,
    CredibleRegion,
    Domain,
    ParticleFilter,
    init_uniform,
)

EXPERIMENT_LIMITED = "experiment_limited"
TIME_LIMITED = "time_limited"

OMEGA_PRIOR = (0.0, 1.0)
T2INV_PRIOR = (0.09, 0.11)


@dataclass(frozen=True)
class EnvConfig:
    name: str
    model: ExperimentModel
    prior: Domain
    mode: str
    experiment_cap: int
    time_cap: float
    particles: int
    dead_time: float = 0.0
    reward_const: float | None = None
    resample_threshold: float = DEFAULT_RESAMPLE_THRESHOLD
    lw_a: float = DEFAULT_LW_A

    def __post_init__(self):
        if self.mode not in (EXPERIMENT_LIMITED, TIME_LIMITED):
            raise InvalidArgument(f"unknown resource mode {self.mode!r}")
        if self.prior.dim != self.model.dim:
            raise InvalidArgument("prior dimension does not match the model")
        if self.experiment_cap < 1 or not self.time_cap > 0:
            raise InvalidArgument("resource caps must be positive")
        if self.dead_time < 0:
            raise InvalidArgument("dead_time must be nonnegative")
        if self.reward_const is None:
            object.__setattr__(self, "reward_const", self.prior.uniform_traced_covariance())

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def batched(self) -> bool:
        return self.model.shots_per_step > 1

    def observation_schema(self) -> dict:
        return {
            "d": self.dim,
            "shots_per_step": self.model.shots_per_step,
            "action_window": ACTION_WINDOW,
            "resource_mode": self.mode,
        }

    def with_overrides(self, **changes) -> "EnvConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)


def _registry() -> dict[str, EnvConfig]:
    omega = Domain.of(OMEGA_PRIOR)
    both = Domain.of(OMEGA_PRIOR, T2INV_PRIOR)
    no_dec = ExperimentModel(FREQ_NO_DECOHERENCE)
    t2_100 = ExperimentModel(FREQ_KNOWN_T2, t2=100.0)
    t2_10 = ExperimentModel(FREQ_KNOWN_T2, t2=10.0)
    multi = ExperimentModel(FREQ_AND_T2INV, shots_per_step=100)
    rows = [
        ("freq-inf-exp", no_dec, omega, EXPERIMENT_LIMITED, 20, 1e27, 2000),
        ("freq-inf-time", no_dec, omega, TIME_LIMITED, 100, 100.0, 2000),
        ("freq-t2-100-exp", t2_100, omega, EXPERIMENT_LIMITED, 125, 1e27, 20000),
        ("freq-t2-100-time", t2_100, omega, TIME_LIMITED, 1000, 2500.0, 20000),
        ("freq-t2-10-exp", t2_10, omega, EXPERIMENT_LIMITED, 125, 1e27, 20000),
        ("freq-t2-10-time", t2_10, omega, TIME_LIMITED, 1000, 2500.0, 20000),
        ("multi-exp", multi, both, EXPERIMENT_LIMITED, 500, 1e27, 2000),
        ("multi-time", multi, both, TIME_LIMITED, 4000, 2500.0, 2000),
    ]
    return {r[0]: EnvConfig(*r) for r in rows}


ENVIRONMENTS = _registry()
ENV_NAMES = tuple(ENVIRONMENTS)


def make_env(name: str, particles: int | None = None, dead_time: float | None = None,
             **overrides) -> EnvConfig:
    try:
        base = ENVIRONMENTS[name]
    except KeyError:
        raise InvalidArgument(
            f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}"
        ) from None
    return base.with_overrides(particles=particles, dead_time=dead_time, **overrides)


@dataclass(slots=True)
class StepRecord:
    step_index: int
    t: float
    outcome: int
    reward: float
    traced_cov_after: float
    time_used_after: float


class EstimationEnv:
    """One running episode. Call :meth:`reset` before the first :meth:`step`."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.filter: ParticleFilter | None = None
        self.truth: np.ndarray | None = None
        self.step_count = 0
        self.time_used = 0.0
        self.actions: deque = deque(maxlen=ACTION_WINDOW)
        self.prev_traced_cov = config.reward_const
        self.last_zeros: int | None = None
        self.done = True
        self._rng: np.random.Generator | None = None

    def reset(self, seed, truth=None) -> Observation:
        """Fresh prior and true parameter; ``truth`` pins the parameter instead."""
        cfg = self.config
        env_seq, filter_seq = np.random.SeedSequence(seed).spawn(2)
        self._rng = np.random.default_rng(env_seq)
        drawn = self._rng.uniform(cfg.prior.lo, cfg.prior.hi)
        if truth is None:
            self.truth = drawn
        else:
            self.truth = np.asarray(truth, dtype=float).reshape(cfg.dim)
            if not cfg.prior.contains(self.truth):
                raise InvalidArgument(f"truth {self.truth} outside the prior domain")
        self.filter = init_uniform(cfg.prior, cfg.particles, filter_seq,
                                   resample_threshold=cfg.resample_threshold, a=cfg.lw_a)
        self.step_count = 0
        self.time_used = 0.0
        self.actions.clear()
        self.prev_traced_cov = cfg.reward_const
        self.last_zeros = None
        self.done = False
        return self.observation()

    def observation(self) -> Observation:
        cfg = self.config
        actions = np.zeros(ACTION_WINDOW)
        actions[:len(self.actions)] = list(self.actions)[::-1]
        if cfg.mode == EXPERIMENT_LIMITED:
            consumed = self.step_count / cfg.experiment_cap
        else:
            consumed = self.time_used / cfg.time_cap
        batch = None
        if cfg.batched:
            # mean outcome label (fraction of ones); 0 before the first batch
            shots = cfg.model.shots_per_step
            batch = 0.0 if self.last_zeros is None else (shots - self.last_zeros) / shots
        return Observation(
            posterior_mean=self.filter.mean(),
            posterior_cov_flat=upper_triangle(self.filter.covariance()),
            recent_actions=actions,
            resource_consumed=consumed,
            batch_mean_outcome=batch,
        )

    def step(self, t: float) -> tuple[Observation, float, StepRecord, bool]:
        if self.done:
            raise InvalidState("episode is over; call reset()")
        if not t > 0 or not math.isfinite(t):
            raise InvalidArgument(f"design time must be positive and finite, got {t}")
        cfg = self.config
        zeros = cfg.model.simulate(self.truth, t, self._rng)
        self.filter.update(cfg.model.log_likelihood(t, zeros))
        cov = self.filter.traced_covariance()
        reward = self.prev_traced_cov - cov
        self.prev_traced_cov = cov
        self.step_count += 1
        self.time_used += t + cfg.dead_time
        self.actions.append(t)
        self.last_zeros = zeros
        if self.step_count >= cfg.experiment_cap:
            self.done = True
        elif cfg.mode == TIME_LIMITED and self.time_used > cfg.time_cap:
            self.done = True
        record = StepRecord(self.step_count, t, zeros, reward, cov, self.time_used)
        return self.observation(), reward, record, self.done


@dataclass
class EpisodeResult:
    """Per-step trace of one episode plus the final posterior summary."""

    seed: int
    truth: np.ndarray
    records: list[StepRecord]
    final_mean: np.ndarray
    final_cov: np.ndarray
    region: CredibleRegion | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def n_steps(self) -> int:
        return len(self.records)

    @property
    def final_traced_cov(self) -> float:
        return self.records[-1].traced_cov_after if self.records else float("nan")


def check_schema(config: EnvConfig, heuristic: HeuristicSpec) -> None:
    schema = heuristic.observation_schema
    if heuristic.kind == "nn" and schema is not None and schema != config.observation_schema():
        raise InvalidArgument(
            f"model was trained for observation schema {schema}, "
            f"environment {config.name} provides {config.observation_schema()}"
        )


def run_episode(config: EnvConfig, heuristic: HeuristicSpec, seed, truth=None,
                region_level: float | None = None) -> EpisodeResult:
    """Run one full episode, consulting ``heuristic`` before every experiment.

    ``region_level`` additionally stores the final credible region.
    """
    check_schema(config, heuristic)
    env = EstimationEnv(config)
    obs = env.reset(seed, truth=truth)
    records = []
    done = False
    while not done:
        t = heuristic.design(obs, env.filter, env.step_count + 1, config.time_cap)
        obs, _, record, done = env.step(t)
        records.append(record)
    region = env.filter.credible_region(region_level) if region_level is not None else None
    return EpisodeResult(seed, env.truth, records, env.filter.mean(),
                         env.filter.covariance(), region)
