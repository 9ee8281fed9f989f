"""Least-squares machinery on feature subsets.

OLS fits restricted to a support, projection-misfit diagnostics, and
extremal eigenvalue bounds of the normalized Gram matrix. All fits go
through an orthogonal (SVD) decomposition rather than normal equations so
that supports up to half the sample size stay numerically trustworthy on
correlated designs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

# Relative singular-value threshold below which a design submatrix is
# treated as rank deficient.
RANK_RTOL = 1e-10


class RankDeficientError(ValueError):
    """X(s) is numerically rank deficient for the requested fit."""

    def __init__(self, support: "SupportSet"):
        self.support = support
        super().__init__(
            f"rank-deficient design on support of size {support.size}"
        )


@dataclass(frozen=True)
class SupportSet:
    """An ordered set of feature indices (0-based) defining a submodel."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = self.indices
        if idx and idx[0] < 0:
            raise ValueError("support indices must be nonnegative")
        if any(idx[i] >= idx[i + 1] for i in range(len(idx) - 1)):
            raise ValueError("support indices must be strictly increasing")

    @classmethod
    def of(cls, indices: Iterable[int]) -> "SupportSet":
        """Build from any iterable; sorts and rejects duplicates."""
        idx = tuple(sorted(int(i) for i in indices))
        return cls(idx)

    @classmethod
    def empty(cls) -> "SupportSet":
        return cls(())

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __contains__(self, j: int) -> bool:
        return j in self.indices

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp)

    def as_set(self) -> frozenset[int]:
        return frozenset(self.indices)

    def translate(self, mapping: np.ndarray | "SupportSet") -> "SupportSet":
        """Map local indices through ``mapping`` back to an outer index space."""
        if isinstance(mapping, SupportSet):
            mapping = mapping.as_array()
        return SupportSet.of(int(mapping[j]) for j in self.indices)


@dataclass
class FittedModel:
    """OLS fit restricted to ``support``: coefficients and residual sum of squares."""

    support: SupportSet
    coefficients: np.ndarray
    rss: float


def ols_fit(x: np.ndarray, y: np.ndarray, s: SupportSet) -> FittedModel:
    """Least-squares fit of ``y`` on the columns of ``x`` indexed by ``s``.

    The empty support returns ``rss = ||y||^2`` with no coefficients.
    Raises :class:`RankDeficientError` when the smallest singular value of
    X(s) falls below ``RANK_RTOL`` times the largest.
    """
    y = np.asarray(y, dtype=np.float64)
    if s.size == 0:
        return FittedModel(s, np.zeros(0), float(y @ y))
    n = x.shape[0]
    if s.size >= n:
        raise ValueError(f"support size {s.size} must be below n={n}")
    xs = np.asarray(x, dtype=np.float64)[:, s.as_array()]
    coef, _, rank, sv = np.linalg.lstsq(xs, y, rcond=RANK_RTOL)
    if rank < s.size:
        raise RankDeficientError(s)
    resid = y - xs @ coef
    return FittedModel(s, coef, float(resid @ resid))


def projection_deficiency(x: np.ndarray, mu: np.ndarray, s: SupportSet) -> float:
    """Squared norm of the part of ``mu`` orthogonal to span(X(s))."""
    return ols_fit(x, mu, s).rss


def eigen_bounds(x: np.ndarray, s: SupportSet) -> tuple[float, float]:
    """Extremal eigenvalues of the normalized Gram matrix X(s)'X(s)/n."""
    if s.size < 1:
        raise ValueError("eigen_bounds requires a nonempty support")
    xs = np.asarray(x, dtype=np.float64)[:, s.as_array()]
    gram = xs.T @ xs / x.shape[0]
    w = np.linalg.eigvalsh(gram)
    return float(w[0]), float(w[-1])
