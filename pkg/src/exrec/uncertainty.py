"""Marginal-distance uncertainty model.

The classifier's output probabilities are treated as draws from a
Dirichlet over (top, second, rest-of-mass). The density of the margin
Z = top - second is the one-dimensional integral

    f(z) = C(a) * integral_{y=0}^{(1-z)/2} (y+z)^(a1-1) y^(a2-1) (1-2y-z)^(a3-1) dy

with C the Dirichlet normalizing constant. The integrand has integrable
endpoint singularities when a2 < 1 or a3 < 1, so the integral uses an
open composite midpoint rule, and the tabulated density is renormalized
to integrate to exactly one (the ordering constraint top >= second means
the raw expression need not integrate to 1). Querying thresholds come
from the lower quantile of the tabulated cdf; a rejection-sampling Monte
Carlo oracle cross-checks the quadrature.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, polygamma, psi

from .errors import ConvergenceError, InputError, NumericError

PROB_CLIP = 1e-10


def sorted_triple(probs: np.ndarray) -> tuple[float, float, float]:
    """(largest, second largest, remaining mass) of a probability vector."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise InputError(f"need a probability vector of length >= 2, got shape {p.shape}")
    top2 = np.partition(p, -2)[-2:]
    second, top = float(top2[0]), float(top2[1])
    return top, second, 1.0 - top - second


def marginal_distance(probs: np.ndarray) -> float:
    """Largest minus second-largest probability; 0 = tie, 1 = one-hot."""
    top, second, _ = sorted_triple(probs)
    return top - second


@dataclass(frozen=True)
class DirichletParams:
    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        for v in (self.a1, self.a2, self.a3):
            if not (np.isfinite(v) and v > 0):
                raise InputError(f"Dirichlet concentrations must be finite and > 0, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])


def _inverse_digamma(y: np.ndarray) -> np.ndarray:
    # Newton inversion with Minka's initialization; 8 iterations is ample
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - psi(1.0)))
    for _ in range(8):
        x = x - (psi(x) - y) / polygamma(1, x)
    return x


def fit_dirichlet(triples: np.ndarray, tol: float = 1e-8,
                  max_iter: int = 1000) -> DirichletParams:
    """Maximum-likelihood Dirichlet fit by fixed-point iteration.

    Rows are probability triples summing to 1; components are clipped to
    [1e-10, 1 - 1e-10] before the log sufficient statistics. Initialized
    by method of moments. Raises ConvergenceError with the iteration
    trace if the fixed point does not settle within max_iter.
    """
    data = np.asarray(triples, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 3:
        raise InputError(f"expected an (n, 3) array of triples, got shape {data.shape}")
    if data.shape[0] < 10:
        raise InputError(f"need at least 10 triples to fit, got {data.shape[0]}")
    sums = data.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise InputError("triples must sum to 1 within 1e-6")
    if np.any(data.var(axis=0) < 1e-16):
        raise InputError("degenerate sample: a component has zero variance")

    clipped = np.clip(data, PROB_CLIP, 1.0 - PROB_CLIP)
    log_means = np.mean(np.log(clipped), axis=0)

    # method-of-moments start (Minka eq. for the first component)
    means = data.mean(axis=0)
    v1 = data[:, 0].var()
    a0 = means[0] * (1.0 - means[0]) / v1 - 1.0
    alpha = np.maximum(means * max(a0, 1e-3), 1e-3)

    trace: list[np.ndarray] = []
    for _ in range(max_iter):
        new_alpha = _inverse_digamma(psi(alpha.sum()) + log_means)
        if not np.all(np.isfinite(new_alpha)) or np.any(new_alpha <= 0):
            raise NumericError(f"Dirichlet fit produced invalid concentrations {new_alpha}")
        delta = np.max(np.abs(new_alpha - alpha))
        alpha = new_alpha
        trace.append(alpha.copy())
        if delta < tol:
            return DirichletParams(*alpha)
    raise ConvergenceError(
        f"Dirichlet MLE did not converge within {max_iter} iterations; last delta {delta:.3e}",
        trace=[a.tolist() for a in trace[-10:]],
    )


def dirichlet_log_likelihood(alpha: DirichletParams, triples: np.ndarray) -> float:
    a = alpha.as_array()
    clipped = np.clip(np.asarray(triples, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    n = clipped.shape[0]
    const = gammaln(a.sum()) - gammaln(a).sum()
    return float(n * const + np.sum((a - 1.0) * np.log(clipped).sum(axis=0)))


@dataclass
class MarginalDistribution:
    """Tabulated density/cdf of the margin on a uniform grid over [0, 1]."""

    alpha: DirichletParams
    grid: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    level: float | None = None
    theta: float | None = None

    def pdf_at(self, z: np.ndarray) -> np.ndarray:
        return np.interp(z, self.grid, self.pdf)

    def cdf_at(self, z: np.ndarray) -> np.ndarray:
        return np.interp(z, self.grid, self.cdf)

    def to_json(self) -> dict:
        doc = {
            "alpha": [self.alpha.a1, self.alpha.a2, self.alpha.a3],
            "grid_size": int(self.grid.shape[0]),
        }
        if self.level is not None:
            doc["level"] = self.level
            doc["theta"] = self.theta
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "MarginalDistribution":
        alpha = DirichletParams(*doc["alpha"])
        dist = marginal_pdf(alpha, grid_size=doc["grid_size"])
        if "level" in doc:
            dist.theta = threshold(dist, doc["level"])
            dist.level = doc["level"]
            stored = doc.get("theta")
            spacing = 1.0 / (doc["grid_size"] - 1)
            if stored is not None and abs(stored - dist.theta) > spacing + 1e-12:
                raise InputError(
                    f"stored threshold {stored} does not match recomputed {dist.theta}"
                )
        return dist

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self.to_json(), fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "MarginalDistribution":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def marginal_pdf(alpha: DirichletParams, grid_size: int = 2001,
                 inner_points: int = 2001) -> MarginalDistribution:
    """Tabulate the margin density by open-midpoint quadrature of the inner integral.

    The midpoint rule never evaluates the integrand at y = 0 or
    y = (1-z)/2 where it may blow up; the tabulated pdf is then
    renormalized by trapezoid so the cdf is a proper cdf.
    """
    if grid_size < 101:
        raise InputError(f"grid_size must be >= 101, got {grid_size}")
    a = alpha.as_array()
    log_const = gammaln(a.sum()) - gammaln(a).sum()
    grid = np.linspace(0.0, 1.0, grid_size)
    raw = np.empty(grid_size)
    offsets = (np.arange(inner_points) + 0.5) / inner_points
    for i, z in enumerate(grid):
        upper = (1.0 - z) / 2.0
        if upper <= 0.0:
            raw[i] = 0.0
            continue
        y = upper * offsets
        integrand = ((y + z) ** (a[0] - 1.0)
                     * y ** (a[1] - 1.0)
                     * (1.0 - 2.0 * y - z) ** (a[2] - 1.0))
        if not np.all(np.isfinite(integrand)):
            raise NumericError(f"non-finite integrand at z={z}")
        raw[i] = np.exp(log_const) * upper / inner_points * np.sum(integrand)
    mass = np.trapezoid(raw, grid)
    if mass <= 0 or not np.isfinite(mass):
        raise NumericError(f"density mass {mass} is not positive and finite")
    pdf = raw / mass
    spacing = grid[1] - grid[0]
    cdf = np.concatenate(([0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * spacing)))
    cdf /= cdf[-1]
    return MarginalDistribution(alpha=alpha, grid=grid, pdf=pdf, cdf=cdf)


def threshold(dist: MarginalDistribution, level: float) -> float:
    """Smallest grid point whose cdf reaches `level` (the lower quantile).

    The querying rule is "ask the expert when z < threshold".
    """
    if not (0.0 < level < 1.0):
        raise InputError(f"level must be in (0, 1), got {level}")
    idx = int(np.searchsorted(dist.cdf, level, side="left"))
    idx = min(idx, dist.grid.shape[0] - 1)
    return float(dist.grid[idx])


def fit_threshold(triples: np.ndarray, level: float = 0.01,
                  grid_size: int = 2001) -> MarginalDistribution:
    """Fit the Dirichlet, tabulate the margin density, and pin the query threshold."""
    alpha = fit_dirichlet(triples)
    dist = marginal_pdf(alpha, grid_size=grid_size)
    dist.level = level
    dist.theta = threshold(dist, level)
    return dist


def mc_marginal(alpha: DirichletParams, n_samples: int, seed: int = 0) -> np.ndarray:
    """Rejection-sampling oracle for the margin distribution.

    Draws n Dirichlet samples via normalized Gammas, keeps those where the
    top-slot value is at least the second-slot value (the integration
    region of the closed form), and returns their differences.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    a = alpha.as_array()
    gammas = rng.gamma(shape=a, size=(n_samples, 3))
    totals = gammas.sum(axis=1)
    draws = gammas / totals[:, None]
    accepted = draws[:, 0] >= draws[:, 1]
    return draws[accepted, 0] - draws[accepted, 1]
