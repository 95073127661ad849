"""Ramsey-type qubit experiment with exponential dephasing.

A qubit prepared in ``|+>`` precesses at frequency ``omega`` for a time ``t``
and is read out in the x basis. Outcome 0 (``|+>``) has probability

    p0 = exp(-t / T2) * cos(omega * t / 2)**2 + (1 - exp(-t / T2)) / 2

The inverse coherence time ``t2_inv = 1 / T2`` is used throughout so that
``t2_inv = 0`` encodes ``T2 = inf`` without infinities in the arithmetic.

Three problem kinds are supported:

* ``freq_no_decoherence``: estimate omega, no dephasing.
* ``freq_known_T2``: estimate omega, dephasing with a known finite T2.
* ``freq_and_T2inv``: estimate (omega, 1/T2) jointly; each step batches
  ``shots_per_step`` identical experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument

FREQ_NO_DECOHERENCE = "freq_no_decoherence"
FREQ_KNOWN_T2 = "freq_known_T2"
FREQ_AND_T2INV = "freq_and_T2inv"
KINDS = (FREQ_NO_DECOHERENCE, FREQ_KNOWN_T2, FREQ_AND_T2INV)

# keeps -inf out of the weight arithmetic; effective zeros stay effective zeros
P_MIN = 1e-300
P_MAX = 1.0 - 1e-16


def p_zero(omega, t2_inv, t):
    """Probability of outcome 0.

    Broadcasts over array arguments. ``t2_inv = 0`` means no dephasing.
    """
    decay = np.exp(-np.multiply(t, t2_inv))
    return decay * np.cos(0.5 * np.multiply(omega, t)) ** 2 + 0.5 * (1.0 - decay)


@dataclass(frozen=True)
class ExperimentModel:
    """Likelihood and outcome simulator for one estimation problem.

    Attributes:
        kind: One of ``KINDS``.
        t2: Coherence time. Only used by ``freq_known_T2``; ``inf`` otherwise.
        shots_per_step: Identical experiments batched into one step.
    """

    kind: str = FREQ_NO_DECOHERENCE
    t2: float = math.inf
    shots_per_step: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown model kind {self.kind!r}")
        if self.kind == FREQ_KNOWN_T2 and not (0 < self.t2 < math.inf):
            raise InvalidArgument("freq_known_T2 requires a finite T2 > 0")
        if self.shots_per_step < 1:
            raise InvalidArgument("shots_per_step must be >= 1")

    @property
    def dim(self) -> int:
        return 2 if self.kind == FREQ_AND_T2INV else 1

    def _t2_inv(self, theta: np.ndarray):
        if self.kind == FREQ_AND_T2INV:
            return theta[..., 1]
        if self.kind == FREQ_KNOWN_T2:
            return 1.0 / self.t2
        return 0.0

    def p_zero(self, theta, t: float) -> np.ndarray:
        """Outcome-0 probability for parameter vector(s) ``theta`` of shape (..., d)."""
        theta = np.asarray(theta, dtype=float)
        return p_zero(theta[..., 0], self._t2_inv(theta), t)

    def simulate(self, truth, t: float, rng: np.random.Generator) -> int:
        """Number of zeros among ``shots_per_step`` shots at the true parameter."""
        p = float(np.clip(self.p_zero(truth, t), 0.0, 1.0))
        return int(rng.binomial(self.shots_per_step, p))

    def log_likelihood(self, t: float, zeros: int) -> Callable[[np.ndarray], np.ndarray]:
        """Log-likelihood of observing ``zeros`` outcome-0 results at time ``t``.

        The returned function maps an (n, d) array of parameter vectors to n
        log-likelihoods. The binomial coefficient is omitted: it is the same
        for every parameter value and cancels when the posterior is
        normalized, so normalizations derived from it are coefficient-free too.
        """
        shots = self.shots_per_step
        if not 0 <= zeros <= shots:
            raise InvalidArgument(f"zeros={zeros} outside [0, {shots}]")
        ones = shots - zeros

        def ll(theta: np.ndarray) -> np.ndarray:
            p = np.clip(self.p_zero(theta, t), P_MIN, P_MAX)
            out = np.zeros(p.shape)
            if zeros:
                out += zeros * np.log(p)
            if ones:
                out += ones * np.log1p(-p)
            return out

        return ll
