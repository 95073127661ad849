"""Cross-entropy method with a fixed isotropic search covariance.

Each iteration samples a population from ``N(mu, sigma2 * I)``, scores every
individual, and moves ``mu`` to the mean of the ``elites`` best ones. For
network training an individual's fitness is the reward accumulated over an
episode, which telescopes to ``reward_const - final traced covariance``.

Individual ``i`` of iteration ``it`` always gets the episode seeds derived from
``(seed, it, i)``, so serial and parallel evaluation give identical logs.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .env import EnvConfig, run_episode
from .errors import InvalidArgument
from .heuristics import HeuristicSpec, observation_size
from .parallel import map_ordered

log = logging.getLogger(__name__)


@dataclass
class CemConfig:
    population: int = 100
    elites: int = 10
    sigma2: float = 0.5
    iterations: int = 1000
    seeds_to_train: int = 5
    episodes_per_individual: int = 1
    hidden: tuple[int, ...] = (16,)

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise InvalidArgument("need 1 <= elites <= population")
        if self.iterations < 1:
            raise InvalidArgument("iterations must be >= 1")
        if self.episodes_per_individual < 1 or self.seeds_to_train < 1:
            raise InvalidArgument("episodes_per_individual and seeds_to_train must be >= 1")
        if not self.sigma2 > 0:
            raise InvalidArgument("sigma2 must be positive")

    def layer_sizes(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden, 1)


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    final: np.ndarray | None = None

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "best_fitness", "elite_mean", "pop_mean"])
        for it, best, elite, pop in self.rows:
            writer.writerow([it, repr(best), repr(elite), repr(pop)])
        return buf.getvalue()


def select_elites(fitness: np.ndarray, n_elites: int) -> np.ndarray:
    """Indices of the ``n_elites`` largest fitnesses; ties go to the lower index."""
    f = np.where(np.isnan(fitness), -np.inf, fitness)
    return np.argsort(-f, kind="stable")[:n_elites]


def cem_optimize(
    fitness: Callable[[int, np.ndarray], np.ndarray],
    dim: int,
    config: CemConfig,
    seed,
    on_iteration: Callable[[int, TrainLog], None] | None = None,
) -> tuple[np.ndarray, TrainLog]:
    """Maximize ``fitness(iteration, population) -> scores`` over R^dim.

    Returns the elite mean of the last iteration and the per-iteration log.
    """
    rng = np.random.default_rng(seed)
    scale = np.sqrt(config.sigma2)
    mu = rng.standard_normal(dim) * scale
    log_ = TrainLog()
    for it in range(config.iterations):
        pop = mu + rng.standard_normal((config.population, dim)) * scale
        scores = np.asarray(fitness(it, pop), dtype=float)
        elite = select_elites(scores, config.elites)
        mu = pop[elite].mean(axis=0)
        log_.rows.append(
            (it, float(scores[elite[0]]), float(scores[elite].mean()), float(scores.mean()))
        )
        if on_iteration is not None:
            on_iteration(it, log_)
    log_.final = mu
    return mu, log_


def individual_seeds(seed: int, iteration: int, index: int, count: int) -> list[int]:
    ss = np.random.SeedSequence([seed, iteration, index])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


def _episode_fitness(job) -> float:
    config, params, seeds = job
    spec = HeuristicSpec("nn", params)
    total = 0.0
    for s in seeds:
        res = run_episode(config, spec, s)
        total += config.reward_const - res.final_traced_cov
    return total / len(seeds)


def cem_train(env_config: EnvConfig, cem_config: CemConfig, seed: int,
              threads: int | None = 1) -> tuple[nn.MlpParams, TrainLog]:
    """Train a network heuristic from scratch on ``env_config``."""
    in_dim = observation_size(env_config.dim, env_config.batched)
    sizes = cem_config.layer_sizes(in_dim)
    dim = nn.param_count(sizes)

    def fitness(it, pop):
        jobs = [
            (env_config, nn.MlpParams(sizes, x),
             individual_seeds(seed, it, i, cem_config.episodes_per_individual))
            for i, x in enumerate(pop)
        ]
        return map_ordered(_episode_fitness, jobs, threads)

    def report(it, tl):
        best, elite, pop = tl.rows[-1][1:]
        log.info("cem seed=%d iter=%d best=%.6g elite=%.6g pop=%.6g", seed, it, best, elite, pop)

    mu, tl = cem_optimize(fitness, dim, cem_config, seed, on_iteration=report)
    return nn.MlpParams(sizes, mu), tl


def select_best(models: Sequence[nn.MlpParams], env_config: EnvConfig, eval_episodes: int,
                seed: int = 0, threads: int | None = 1) -> tuple[int, list[float]]:
    """Index of the model with the smallest end-of-episode Bayes risk.

    All models are scored on the same episode seeds; ties go to the lower index.
    """
    from .benchmark import final_risk

    if not models:
        raise InvalidArgument("need at least one model")
    risks = [
        final_risk(env_config, HeuristicSpec("nn", m), eval_episodes, seed, threads).risk
        for m in models
    ]
    return int(np.argmin(risks)), risks
