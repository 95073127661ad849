"""Sequential Monte Carlo representation of priors and posteriors.

A :class:`ParticleFilter` approximates a distribution on a box-shaped domain
as ``sum_j w_j delta(theta - theta_j)``. Bayesian updates reweight the
particles in log space; when the effective sample size drops below
``resample_threshold * n`` the cloud is refreshed with Liu-West resampling,
which shrinks ancestors toward the mean and adds Gaussian noise so that the
first two moments are preserved in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegeneratePosterior, InvalidArgument, ResampleFailure

DEFAULT_LW_A = 0.98
DEFAULT_RESAMPLE_THRESHOLD = 0.5


@dataclass(frozen=True)
class Domain:
    """Per-parameter closed intervals ``[lo_j, hi_j]``."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not bounds:
            raise InvalidArgument("domain needs at least one interval")
        for lo, hi in bounds:
            if not lo < hi:
                raise InvalidArgument(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def of(cls, *intervals: Sequence[float]) -> "Domain":
        return cls(tuple(tuple(iv) for iv in intervals))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    def uniform_traced_covariance(self) -> float:
        """Traced covariance of the uniform distribution on the domain."""
        return float(np.sum((self.hi - self.lo) ** 2) / 12.0)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lo) and np.all(theta <= self.hi))


@dataclass
class CredibleRegion:
    """Highest-weight particle set covering at least ``level`` of the mass.

    ``hull_vertices`` is filled for two-parameter filters only (counter-
    clockwise, no repeated first vertex).
    """

    level: float
    member_positions: np.ndarray
    covered_mass: float
    hull_vertices: np.ndarray | None = None

    def contains(self, theta) -> bool:
        """Whether ``theta`` lies in the region's interval (d=1) or hull (d=2)."""
        theta = np.asarray(theta, dtype=float).ravel()
        pts = self.member_positions
        if pts.shape[1] == 1:
            return bool(pts[:, 0].min() <= theta[0] <= pts[:, 0].max())
        hull = self.hull_vertices
        if hull is None or len(hull) < 3:
            return bool(np.any(np.all(np.isclose(pts, theta), axis=1)))
        edges = np.roll(hull, -1, axis=0) - hull
        rel = theta - hull
        cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
        scale = np.max(np.abs(hull)) if hull.size else 1.0
        return bool(np.all(cross >= -1e-12 * max(scale, 1.0) ** 2))


def convex_hull(points) -> np.ndarray:
    """Convex hull of 2-D points via Andrew's monotone chain.

    Returns hull vertices in counter-clockwise order, starting from the
    lexicographically smallest point. Collinear points are dropped.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass
class ParticleFilter:
    """Weighted particle cloud over a :class:`Domain`.

    Attributes:
        positions: (n, d) particle locations.
        weights: (n,) normalized nonnegative weights.
        domain: Parameter domain; resampled particles are clamped into it.
        rng: Source of all randomness used by the filter.
        resample_threshold: Liu-West resampling fires when
            ``ess < resample_threshold * n``. 0 disables it.
        a: Liu-West shrinkage parameter.
    """

    positions: np.ndarray
    weights: np.ndarray
    domain: Domain
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    resample_threshold: float = DEFAULT_RESAMPLE_THRESHOLD
    a: float = DEFAULT_LW_A
    n_resamples: int = 0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(len(self.positions), -1)
        self.weights = np.array(self.weights, dtype=float)
        if self.positions.shape[1] != self.domain.dim:
            raise InvalidArgument("particle dimension does not match the domain")
        if self.weights.shape != (len(self.positions),):
            raise InvalidArgument("need one weight per particle")
        if np.any(self.weights < 0) or not np.isfinite(self.weights).all():
            raise InvalidArgument("weights must be finite and nonnegative")
        total = self.weights.sum()
        if total <= 0:
            raise InvalidArgument("weights sum to zero")
        self.weights = self.weights / total

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleFilter":
        return ParticleFilter(
            self.positions.copy(), self.weights.copy(), self.domain,
            rng=self.rng, resample_threshold=self.resample_threshold, a=self.a,
            n_resamples=self.n_resamples,
        )

    # moments

    def mean(self) -> np.ndarray:
        return self.weights @ self.positions

    def covariance(self) -> np.ndarray:
        centered = self.positions - self.mean()
        cov = (centered * self.weights[:, None]).T @ centered
        return 0.5 * (cov + cov.T)

    def traced_covariance(self) -> float:
        centered = self.positions - self.mean()
        return float(self.weights @ np.sum(centered * centered, axis=1))

    def ess(self) -> float:
        """Effective sample size ``1 / sum(w**2)``."""
        return float(1.0 / np.dot(self.weights, self.weights))

    # updates

    def update(self, log_likelihood: Callable[[np.ndarray], np.ndarray]) -> float:
        """Bayes update with a vectorized log-likelihood over ``positions``.

        Returns the normalization ``sum_j w_j * exp(ll_j)`` evaluated before
        renormalizing (it may underflow to 0 for very unlikely data; the
        update itself is done in log space and is unaffected).
        Resamples afterwards if the effective sample size is too low.
        """
        ll = np.asarray(log_likelihood(self.positions), dtype=float).reshape(self.n)
        if np.any(np.isnan(ll)) or np.any(ll == np.inf):
            raise InvalidArgument("log-likelihood must be finite or -inf")
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights) + ll
        peak = logw.max()
        if not np.isfinite(peak):
            raise DegeneratePosterior("total likelihood is zero for every particle")
        w = np.exp(logw - peak)
        mass = w.sum()
        total = peak + np.log(mass)
        self.weights = w / mass
        if self.ess() < self.resample_threshold * self.n:
            self.resample()
        return float(np.exp(total))

    def resample(self, a: float | None = None) -> None:
        """Liu-West resampling in place; see :func:`liu_west_resample`."""
        a = self.a if a is None else a
        if not 0 < a <= 1:
            raise InvalidArgument(f"Liu-West parameter a={a} outside (0, 1]")
        mu = self.mean()
        cov = self.covariance()
        cdf = np.cumsum(self.weights)
        idx = np.searchsorted(cdf, self.rng.random(self.n) * cdf[-1], side="right")
        idx = np.minimum(idx, self.n - 1)
        new = a * self.positions[idx] + (1.0 - a) * mu
        h2 = 1.0 - a * a
        if h2 > 0:
            factor = _psd_sqrt(h2 * cov)
            new = new + self.rng.standard_normal((self.n, self.dim)) @ factor.T
        self.positions = np.clip(new, self.domain.lo, self.domain.hi)
        self.weights = np.full(self.n, 1.0 / self.n)
        self.n_resamples += 1

    # sampling

    def sample(self, size: int) -> np.ndarray:
        """Independent weighted draws (with replacement), shape (size, d)."""
        cdf = np.cumsum(self.weights)
        idx = np.searchsorted(cdf, self.rng.random(size) * cdf[-1], side="right")
        return self.positions[np.minimum(idx, self.n - 1)]

    def sample_two(self) -> tuple[np.ndarray, np.ndarray]:
        first, second = self.sample(2)
        return first, second

    def credible_region(self, level: float = 0.95) -> CredibleRegion:
        """Smallest highest-weight prefix with cumulative weight >= ``level``.

        Ties in weight keep particle order (stable sort).
        """
        if not 0 < level < 1:
            raise InvalidArgument("level must lie in (0, 1)")
        order = np.argsort(-self.weights, kind="stable")
        cum = np.cumsum(self.weights[order])
        # absorb float drift so that e.g. 95 x 0.01 counts as 0.95
        m = int(np.searchsorted(cum, level - 1e-12, side="left")) + 1
        m = min(m, self.n)
        members = self.positions[order[:m]]
        region = CredibleRegion(level, members, float(cum[m - 1]))
        if self.dim == 2:
            region.hull_vertices = convex_hull(members)
        return region


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Factor ``L`` with ``L @ L.T == cov`` for a PSD matrix.

    Small negative eigenvalues from round-off are clipped to zero so that
    exactly degenerate clouds (point masses) stay degenerate.
    """
    if not np.isfinite(cov).all():
        raise ResampleFailure("non-finite particle covariance")
    if cov.shape == (1, 1):
        if cov[0, 0] < -1e-12:
            raise ResampleFailure("negative particle variance")
        return np.sqrt(np.maximum(cov, 0.0))
    vals, vecs = np.linalg.eigh(cov)
    tol = 1e-12 * max(float(np.max(np.abs(vals))), 1e-300)
    if vals.min() < -tol:
        raise ResampleFailure("particle covariance is not positive semidefinite")
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def init_uniform(
    domain: Domain,
    n: int,
    seed=None,
    resample_threshold: float = DEFAULT_RESAMPLE_THRESHOLD,
    a: float = DEFAULT_LW_A,
) -> ParticleFilter:
    """Uniform prior on ``domain`` with ``n`` equally weighted particles.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; the filter
    keeps the resulting generator for later resampling and sampling.
    """
    if n < 2:
        raise InvalidArgument(f"need at least 2 particles, got {n}")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(domain.lo, domain.hi, size=(n, domain.dim))
    return ParticleFilter(positions, np.full(n, 1.0 / n), domain, rng=rng,
                          resample_threshold=resample_threshold, a=a)


def bayes_update(pf: ParticleFilter, log_likelihood) -> tuple[ParticleFilter, float]:
    """Functional form of :meth:`ParticleFilter.update` (works on a copy)."""
    out = pf.copy()
    norm = out.update(log_likelihood)
    return out, norm


def liu_west_resample(pf: ParticleFilter, a: float = DEFAULT_LW_A) -> ParticleFilter:
    """Resampled copy of ``pf``.

    Each new particle picks an ancestor with probability equal to its weight
    and moves to ``a * ancestor + (1 - a) * mean`` plus Gaussian noise with
    covariance ``(1 - a**2) * cov``. Weights become uniform; positions are
    clamped into the domain.
    """
    out = pf.copy()
    out.resample(a)
    return out
