"""Bayes-risk estimation, lower bounds, design histograms and credible regions.

The Bayes risk of a heuristic is the expected traced posterior covariance.
It is estimated as a sample mean over simulated episodes: per experiment
index for experiment-limited problems, and on a grid of times for
time-limited ones (each episode's trace is linearly interpolated, anchored
at ``(0, reward_const)``, and the interpolants are averaged time-wise).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit

from .env import EXPERIMENT_LIMITED, TIME_LIMITED, EnvConfig, EpisodeResult, run_episode
from .errors import InvalidArgument, NumericFailure
from .heuristics import HeuristicSpec
from .parallel import map_ordered
from .smc import CredibleRegion

log = logging.getLogger(__name__)

TIME_POINTS = 200
HISTOGRAM_CUTOFF = 500.0
ENDPOINT_EXCLUSION = 1e-6


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv(header: str, columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(header)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


# episode batches


def _episode_job(job) -> EpisodeResult:
    config, heuristic, seed, truth, level = job
    return run_episode(config, heuristic, seed, truth=truth, region_level=level)


def run_episodes(config: EnvConfig, heuristic: HeuristicSpec, episodes: int, seed: int,
                 threads: int | None = 1, truth=None,
                 region_level: float | None = None) -> list[EpisodeResult]:
    """Episodes with seeds ``seed, seed + 1, ...`` in that order."""
    if episodes < 1:
        raise InvalidArgument("episodes must be >= 1")
    jobs = [(config, heuristic, seed + i, truth, region_level) for i in range(episodes)]
    return map_ordered(_episode_job, jobs, threads)


# risk curves


@dataclass
class RiskCurve:
    axis: np.ndarray
    risk: np.ndarray
    standard_error: np.ndarray
    episodes_used: int

    def to_csv(self, header: str = "") -> str:
        integral = np.issubdtype(self.axis.dtype, np.integer)
        rows = ((int(a) if integral else _fmt(a), _fmt(r), _fmt(s))
                for a, r, s in zip(self.axis, self.risk, self.standard_error))
        return _csv(header, ["axis", "risk", "stderr"], rows)

    def at(self, k: int) -> tuple[float, float]:
        """(risk, standard error) at experiment index ``k`` (1-based)."""
        i = int(np.searchsorted(self.axis, k))
        if i >= len(self.axis) or self.axis[i] != k:
            raise InvalidArgument(f"axis has no point {k}")
        return float(self.risk[i]), float(self.standard_error[i])


def _mean_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    return mean, std / math.sqrt(n)


def risk_by_experiment(results: Sequence[EpisodeResult], n_experiments: int) -> RiskCurve:
    covs = np.array([r.column("traced_cov_after")[:n_experiments] for r in results])
    if covs.ndim != 2 or covs.shape[1] != n_experiments:
        raise InvalidArgument("every episode must contain n_experiments steps")
    mean, se = _mean_se(covs)
    return RiskCurve(np.arange(1, n_experiments + 1), mean, se, len(results))


def risk_from_rewards(results: Sequence[EpisodeResult], n_experiments: int,
                      reward_const: float) -> np.ndarray:
    """``reward_const`` minus the mean accumulated reward after each experiment."""
    acc = np.array([[math.fsum(r.column("reward")[:k]) for k in range(1, n_experiments + 1)]
                    for r in results])
    return reward_const - acc.mean(axis=0)


def bayes_risk_by_experiment(config: EnvConfig, heuristic: HeuristicSpec, episodes: int,
                             seed: int, threads: int | None = 1) -> RiskCurve:
    if config.mode != EXPERIMENT_LIMITED:
        raise InvalidArgument("bayes_risk_by_experiment needs an experiment-limited environment")
    results = run_episodes(config, heuristic, episodes, seed, threads)
    return risk_by_experiment(results, config.experiment_cap)


def time_grid(time_cap: float, points: int = TIME_POINTS) -> np.ndarray:
    """``points`` equally spaced times spanning (0, time_cap]."""
    return time_cap * np.arange(1, points + 1) / points


def time_resolved_risk(traces: Sequence[tuple[np.ndarray, np.ndarray]], time_cap: float,
                       reward_const: float, points: int = TIME_POINTS) -> RiskCurve:
    """Time-wise mean of linearly interpolated traced-covariance traces.

    Each trace is ``(cumulative_times, traced_covs)``. The interpolant starts
    at ``(0, reward_const)``; past an episode's last experiment it holds the
    final value. Traces without experiments are skipped with a warning.
    """
    grid = time_grid(time_cap, points)
    curves = []
    for times, covs in traces:
        times = np.asarray(times, dtype=float)
        if times.size == 0:
            log.warning("skipping an episode without experiments")
            continue
        xs = np.concatenate([[0.0], times])
        ys = np.concatenate([[reward_const], np.asarray(covs, dtype=float)])
        curves.append(np.interp(grid, xs, ys))
    if not curves:
        raise InvalidArgument("no episode contains an experiment")
    mean, se = _mean_se(np.array(curves))
    return RiskCurve(grid, mean, se, len(curves))


def bayes_risk_by_time(config: EnvConfig, heuristic: HeuristicSpec, episodes: int, seed: int,
                       threads: int | None = 1, points: int = TIME_POINTS) -> RiskCurve:
    if config.mode != TIME_LIMITED:
        raise InvalidArgument("bayes_risk_by_time needs a time-limited environment")
    results = run_episodes(config, heuristic, episodes, seed, threads)
    return time_resolved_risk(
        [(r.column("time_used_after"), r.column("traced_cov_after")) for r in results],
        config.time_cap, config.reward_const, points,
    )


def bayes_risk(config: EnvConfig, heuristic: HeuristicSpec, episodes: int, seed: int,
               threads: int | None = 1) -> RiskCurve:
    """Experiment- or time-resolved risk, whichever the environment's mode calls for."""
    if config.mode == EXPERIMENT_LIMITED:
        return bayes_risk_by_experiment(config, heuristic, episodes, seed, threads)
    return bayes_risk_by_time(config, heuristic, episodes, seed, threads)


@dataclass
class FinalRisk:
    risk: float
    standard_error: float
    episodes_used: int


def final_risk(config: EnvConfig, heuristic: HeuristicSpec, episodes: int, seed: int,
               threads: int | None = 1) -> FinalRisk:
    """Mean traced covariance once the resources are exhausted."""
    results = run_episodes(config, heuristic, episodes, seed, threads)
    finals = np.array([r.final_traced_cov for r in results])
    mean, se = _mean_se(finals[:, None])
    return FinalRisk(float(mean[0]), float(se[0]), len(results))


# lower bounds


@dataclass
class BoundCurve:
    kind: str
    axis: np.ndarray
    values: np.ndarray

    def to_csv(self, header: str = "") -> str:
        integral = np.issubdtype(self.axis.dtype, np.integer)
        return _csv(header, ["axis", "value"],
                    ((int(a) if integral else _fmt(a), _fmt(v)) for a, v in zip(self.axis, self.values)))


def bound_L_k(k_max: int) -> BoundCurve:
    """Information bound for k single-bit experiments: ``2**(-2(k+1)) / 3``."""
    if k_max < 0:
        raise InvalidArgument("k_max must be >= 0")
    k = np.arange(k_max + 1)
    return BoundCurve("L_k", k, np.ldexp(1.0, -2 * (k + 1)) / 3.0)


def _prior_density(x, k, a, b):
    """Unnormalized smooth-edged flat prior and its derivative."""
    su = expit(2 * k * (x - a))
    sv = expit(2 * k * (b - x))
    f = 2.0 * su * sv - 1.0
    df = 4.0 * k * su * sv * (sv - su)
    return f, df


def prior_fisher_info(k: float, a: float = 0.0, b: float = 1.0) -> float:
    """Fisher information ``int (d log p / dx)**2 p dx`` of the smooth flat prior.

    The prior is ``p(x) ∝ 2 / ((1 + exp(-2k(x-a))) (1 + exp(2k(x-b)))) - 1``.
    Its log-derivative blows up at the ends, so neighborhoods of width
    ``(b - a) * 1e-6`` at both endpoints are excluded.
    """
    if not k > 0 or not a < b:
        raise InvalidArgument("need k > 0 and a < b")
    eps = (b - a) * ENDPOINT_EXCLUSION
    lo, hi = a + eps, b - eps
    f_lo, _ = _prior_density(lo, k, a, b)
    f_hi, _ = _prior_density(hi, k, a, b)
    if f_lo <= 0 or f_hi <= 0:
        raise InvalidArgument(f"prior family is not a density for k={k} on ({a}, {b})")

    def info_density(x):
        f, df = _prior_density(x, k, a, b)
        return df * df / f

    def mass(x):
        return _prior_density(x, k, a, b)[0]

    # edge layers of width ~1/k hold nearly all the information
    width = min(20.0 / k, (b - a) / 4)
    cuts = [lo, a + width / 1e3, a + width / 30, a + width, b - width,
            b - width / 30, b - width / 1e3, hi]
    cuts = sorted(c for c in set(cuts) if lo <= c <= hi)
    info = 0.0
    norm = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for x0, x1 in zip(cuts[:-1], cuts[1:]):
                info += integrate.quad(info_density, x0, x1, epsabs=0, epsrel=1e-10, limit=200)[0]
                norm += integrate.quad(mass, x0, x1, epsabs=0, epsrel=1e-10, limit=200)[0]
        except integrate.IntegrationWarning as exc:
            raise NumericFailure(f"prior Fisher information quadrature failed: {exc}") from exc
    if not (math.isfinite(info) and norm > 0):
        raise NumericFailure("prior Fisher information is not finite")
    return info / norm


def bound_L_T(T_values, prior_info: float) -> BoundCurve:
    """Van Trees bound ``1 / (T**2 + J_p)`` for total evolution time T."""
    if not prior_info > 0:
        raise InvalidArgument("prior information must be positive")
    T = np.asarray(T_values, dtype=float)
    return BoundCurve("L_T", T, 1.0 / (T * T + prior_info))


# design histograms


@dataclass
class DesignHistogram:
    """Counts of design times per experiment index.

    ``counts[i, j]`` is the number of episodes whose experiment ``i + 1`` used
    a time in ``[edges[j], edges[j + 1])``; the last column is the overflow
    bin ``[cutoff, inf)``.
    """

    counts: np.ndarray
    edges: np.ndarray

    @property
    def reached(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_csv(self, header: str = "") -> str:
        lo = np.concatenate([self.edges[:-1], [self.edges[-1]]])
        hi = np.concatenate([self.edges[1:], [np.inf]])
        rows = ((i + 1, _fmt(lo[j]), _fmt(hi[j]), int(self.counts[i, j]))
                for i in range(self.counts.shape[0]) for j in range(self.counts.shape[1]))
        return _csv(header, ["experiment_index", "bin_lo", "bin_hi", "count"], rows)


def histogram_from_episodes(results: Sequence[EpisodeResult], time_bins: int,
                            cutoff: float = HISTOGRAM_CUTOFF) -> DesignHistogram:
    if time_bins < 1:
        raise InvalidArgument("time_bins must be >= 1")
    edges = np.linspace(0.0, cutoff, time_bins + 1)
    longest = max(r.n_steps for r in results)
    counts = np.zeros((longest, time_bins + 1), dtype=np.int64)
    for r in results:
        t = r.column("t")
        j = np.minimum(np.searchsorted(edges, t, side="right") - 1, time_bins)
        counts[np.arange(len(t)), j] += 1
    return DesignHistogram(counts, edges)


def design_histogram(config: EnvConfig, heuristic: HeuristicSpec, episodes: int,
                     time_bins: int, seed: int, threads: int | None = 1) -> DesignHistogram:
    results = run_episodes(config, heuristic, episodes, seed, threads)
    return histogram_from_episodes(results, time_bins)


# credible regions


def credible_run(config: EnvConfig, heuristics: Sequence[HeuristicSpec], fixed_truth,
                 level: float = 0.95, seed: int = 0) -> list[tuple[HeuristicSpec, EpisodeResult]]:
    """One episode per heuristic with the true parameter pinned to ``fixed_truth``."""
    return [(h, run_episode(config, h, seed, truth=fixed_truth, region_level=level))
            for h in heuristics]


def region_document(entries: Sequence[tuple[HeuristicSpec, EpisodeResult]]) -> list[dict]:
    docs = []
    for h, res in entries:
        region: CredibleRegion = res.region
        members = region.member_positions
        hull = region.hull_vertices
        docs.append({
            "heuristic": h.name,
            "level": float(region.level),
            "covered_mass": float(region.covered_mass),
            "member_count": int(len(members)),
            "hull_vertices": [] if hull is None else [[float(v) for v in p] for p in hull],
            "bounding_box": [[float(members[:, j].min()), float(members[:, j].max())]
                             for j in range(members.shape[1])],
            "posterior_mean": [float(v) for v in res.final_mean],
            "truth": [float(v) for v in res.truth],
            "experiments": res.n_steps,
        })
    return docs
