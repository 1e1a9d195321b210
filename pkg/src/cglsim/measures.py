"""Empirical laws on the state space and the Wasserstein-2 distance.

An :class:`EmpiricalMeasure` is a weighted sample cloud of spectral fields
standing in for a law with finite second moment on L^2(T^d).  Distances are
computed between spectral coefficient vectors (Parseval), with an exact
optimal-assignment path for equal-size uniform measures and an exact
transportation LP for general weights.  A Sinkhorn fast path exists for
exploratory large clouds and is flagged approximate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .torus_spectral import SpectralField, TorusGrid

__all__ = [
    "EmpiricalMeasure",
    "wasserstein2",
    "second_moment",
    "hausdorff_semidistance",
    "MeasureSizeError",
]

MAX_EXACT_SAMPLES = 4096
MAX_LP_CELLS = 10 ** 6


class MeasureSizeError(ValueError):
    """Exact transport requested on an oversize cloud; subsample first."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted sample cloud; weights default to uniform and sum to 1."""

    grid: TorusGrid
    samples: np.ndarray        # (n, n_lattice) complex coefficients
    weights: np.ndarray        # (n,) nonnegative, sums to 1

    @classmethod
    def from_fields(cls, fields: Sequence[SpectralField], weights=None):
        if len(fields) == 0:
            raise ValueError("empty sample cloud")
        grid = fields[0].grid
        coeffs = np.stack([f.coeffs for f in fields])
        return cls.from_coeffs(grid, coeffs, weights)

    @classmethod
    def from_coeffs(cls, grid: TorusGrid, coeffs, weights=None):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim != 2 or coeffs.shape[1] != grid.n_lattice:
            raise ValueError(f"bad sample array shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("non-finite sample coefficients")
        n = coeffs.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,) or np.any(weights < 0):
                raise ValueError("weights must be nonnegative, one per sample")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError(
                    f"weights sum to {weights.sum()!r}, expected 1")
        return cls(grid=grid, samples=coeffs, weights=weights)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n_samples,
                                rtol=0, atol=1e-12))

    def fields(self):
        return [SpectralField(self.grid, c) for c in self.samples]

    def subsample(self, n: int, seed: int) -> "EmpiricalMeasure":
        """Deterministic stride subsample after a seeded shuffle."""
        if n >= self.n_samples:
            return self
        rng = np.random.default_rng(seed)
        order = rng.permutation(self.n_samples)
        stride = self.n_samples // n
        keep = order[::stride][:n]
        return EmpiricalMeasure.from_coeffs(self.grid, self.samples[keep])


def _real_embedding(mu: EmpiricalMeasure) -> np.ndarray:
    """Samples as real vectors scaled so Euclidean distance is the L^2 norm."""
    scale = np.sqrt(mu.grid.volume)
    return np.concatenate(
        [mu.samples.real, mu.samples.imag], axis=1) * scale


def _check_compatible(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.grid != nu.grid:
        raise ValueError("measures live on different grids")


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                 method: str = "exact") -> float:
    """Wasserstein-2 distance between empirical measures.

    Equal-size uniform clouds use exact optimal assignment; general
    weights use an exact transportation LP (n*m <= 10^6 cells).
    ``method="sinkhorn"`` switches to the entropic fast path, whose
    result carries regularization bias and must not gate acceptance runs.
    """
    _check_compatible(mu, nu)
    if method == "sinkhorn":
        return _sinkhorn_w2(mu, nu)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")

    n, m = mu.n_samples, nu.n_samples
    if max(n, m) > MAX_EXACT_SAMPLES:
        raise MeasureSizeError(
            f"exact W2 limited to {MAX_EXACT_SAMPLES} samples per side "
            f"(got {n} x {m}); subsample with a logged seed")
    a = _real_embedding(mu)
    b = _real_embedding(nu)
    cost = cdist(a, b, metric="sqeuclidean")

    if n == m and mu.is_uniform and nu.is_uniform:
        rows, cols = linear_sum_assignment(cost)
        return float(np.sqrt(cost[rows, cols].mean()))

    if n * m > MAX_LP_CELLS:
        raise MeasureSizeError(
            f"transportation LP limited to {MAX_LP_CELLS} cells, got {n * m}")
    return float(np.sqrt(_transport_lp(cost, mu.weights, nu.weights)))


def _transport_lp(cost, w_mu, w_nu) -> float:
    """Exact optimal transport cost by linear programming."""
    n, m = cost.shape
    # marginal constraints; drop one redundant row for full rank
    rows = []
    rhs = []
    for i in range(n):
        row = np.zeros(n * m)
        row[i * m: (i + 1) * m] = 1.0
        rows.append(row)
        rhs.append(w_mu[i])
    for j in range(m - 1):
        row = np.zeros(n * m)
        row[j::m] = 1.0
        rows.append(row)
        rhs.append(w_nu[j])
    res = linprog(cost.ravel(), A_eq=np.array(rows), b_eq=np.array(rhs),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _sinkhorn_w2(mu, nu, reg: float = 1e-2, n_iter: int = 500) -> float:
    a = _real_embedding(mu)
    b = _real_embedding(nu)
    cost = cdist(a, b, metric="sqeuclidean")
    scale = max(cost.max(), 1e-300)
    K = np.exp(-cost / (reg * scale))
    u = np.ones(mu.n_samples)
    for _ in range(n_iter):
        v = nu.weights / (K.T @ u)
        u = mu.weights / (K @ v)
    plan = u[:, None] * K * v[None, :]
    return float(np.sqrt((plan * cost).sum()))


def second_moment(mu: EmpiricalMeasure) -> float:
    """int ||z||^2 mu(dz) over the sample cloud."""
    norms_sq = mu.grid.volume * (np.abs(mu.samples) ** 2).sum(axis=1)
    return float((mu.weights * norms_sq).sum())


def hausdorff_semidistance(set_a: Sequence[EmpiricalMeasure],
                           set_b: Sequence[EmpiricalMeasure]) -> float:
    """sup over mu in A of min over nu in B of W2(mu, nu)."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("both measure lists must be nonempty")
    return max(
        min(wasserstein2(mu, nu) for nu in set_b) for mu in set_a)
