"""Experiment-design heuristics: observation in, evolution time out.

Four heuristics share one entry point, :meth:`HeuristicSpec.design`:

* ``exp_sparse``: non-adaptive schedule ``t_k = (9/8)**k``.
* ``sigma_inv``: inverse square root of the traced posterior covariance.
* ``pgh``: inverse distance of two particles drawn from the posterior.
* ``nn``: a trained network (see :mod:`adaptbayes.nn`).

Every design is clipped to the environment's time cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DegeneratePosterior, InvalidArgument
from .smc import ParticleFilter

ACTION_WINDOW = 30
PGH_MAX_ATTEMPTS = 100
KINDS = ("exp_sparse", "sigma_inv", "pgh", "nn")


@dataclass
class Observation:
    """What a heuristic gets to see before choosing the next experiment.

    ``posterior_cov_flat`` is the upper triangle of the covariance, row-major.
    ``recent_actions`` holds the last 30 design times, newest first,
    zero-padded. ``resource_consumed`` is the used fraction of the limiting
    resource. ``batch_mean_outcome`` (fraction of ones in the previous batch, 0 before
    the first) is only set for batched (multi-shot) steps.
    """

    posterior_mean: np.ndarray
    posterior_cov_flat: np.ndarray
    recent_actions: np.ndarray
    resource_consumed: float
    batch_mean_outcome: float | None = None

    @property
    def dim(self) -> int:
        return len(self.posterior_mean)

    def traced_covariance(self) -> float:
        d = self.dim
        diag = [i * d - i * (i - 1) // 2 for i in range(d)]
        return float(np.sum(self.posterior_cov_flat[diag]))

    def as_vector(self) -> np.ndarray:
        """Flattened network input: mean, cov, actions, resource[, batch mean]."""
        parts = [self.posterior_mean, self.posterior_cov_flat, self.recent_actions,
                 [self.resource_consumed]]
        if self.batch_mean_outcome is not None:
            parts.append([self.batch_mean_outcome])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def observation_size(d: int, batched: bool) -> int:
    return d + d * (d + 1) // 2 + ACTION_WINDOW + 1 + int(batched)


def upper_triangle(cov: np.ndarray) -> np.ndarray:
    return cov[np.triu_indices(cov.shape[0])]


def exp_sparse(k: int) -> float:
    if k < 1:
        raise InvalidArgument("exp-sparse step index starts at 1")
    return (9 / 8) ** k


def sigma_inv(obs: Observation) -> float:
    trace = obs.traced_covariance()
    if not trace > 0:
        raise DegeneratePosterior("traced covariance is zero")
    return trace ** -0.5


def pgh(pf: ParticleFilter) -> float:
    """Particle guess heuristic; redraws coincident pairs up to 100 times."""
    for _ in range(PGH_MAX_ATTEMPTS):
        a, b = pf.sample_two()
        dist = float(np.linalg.norm(a - b))
        if dist > 0:
            return 1.0 / dist
    raise DegeneratePosterior(f"{PGH_MAX_ATTEMPTS} coincident particle pairs")


def nn_heuristic(obs: Observation, params: nn.MlpParams) -> float:
    x = obs.as_vector()
    if x.size != params.input_dim:
        raise InvalidArgument(
            f"observation has {x.size} entries, network expects {params.input_dim}"
        )
    return nn.output_map(nn.forward(params, x))


@dataclass(frozen=True)
class HeuristicSpec:
    kind: str
    nn_params: nn.MlpParams | None = field(default=None, compare=False)
    source: str | None = None
    observation_schema: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown heuristic {self.kind!r}")
        if self.kind == "nn" and self.nn_params is None:
            raise InvalidArgument("nn heuristic needs parameters")

    @property
    def name(self) -> str:
        if self.kind == "nn":
            return f"nn:{self.source}" if self.source else "nn"
        return self.kind.replace("_", "-")

    def design(self, obs: Observation, pf: ParticleFilter, k: int,
               time_cap: float = np.inf) -> float:
        """Evolution time for experiment ``k`` (1-based), clipped to ``time_cap``."""
        if self.kind == "exp_sparse":
            t = exp_sparse(k)
        elif self.kind == "sigma_inv":
            t = sigma_inv(obs)
        elif self.kind == "pgh":
            t = pgh(pf)
        else:
            t = nn_heuristic(obs, self.nn_params)
        return min(t, time_cap)


def parse_heuristic(text: str) -> HeuristicSpec:
    """Parse ``exp-sparse | sigma-inv | pgh | nn:<path>``."""
    if text.startswith("nn:"):
        path = text[3:]
        if not path:
            raise InvalidArgument("nn heuristic needs a model path: nn:<path>")
        params, schema = nn.load_model(path)
        return HeuristicSpec("nn", params, source=path, observation_schema=schema)
    kind = text.replace("-", "_")
    if kind not in KINDS or kind == "nn":
        raise InvalidArgument(
            f"unknown heuristic {text!r}; expected exp-sparse, sigma-inv, pgh or nn:<path>"
        )
    return HeuristicSpec(kind)
