"""Synthetic regression data with structured covariates and tapering signals.

Generates design matrices under three correlation families (geometric decay,
equicorrelated diagonal blocks, and diagonal blocks with spread-out spectra),
signed coefficients with a sample-size-dependent magnitude floor, and noise
calibrated to a target broad-sense heritability. Sample sizes, number of
relevant features, and ambient dimension follow a diverging schedule with the
four standard rows hard-coded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm

from .linmodel import SupportSet

POWER_DECAY = "power_decay"
EQUI_BLOCK = "equi_block"
EIGEN_BLOCK = "eigen_block"
_KINDS = (POWER_DECAY, EQUI_BLOCK, EIGEN_BLOCK)

# Internal seed for the heritability-calibration Monte Carlo; fixed so
# calibrated noise levels are reproducible across runs and machines.
_CALIBRATION_SEED = 0x5EB1C
_CALIBRATION_DRAWS = 100_000

# Tabulated (n -> p) and ((n, c) -> p0) rows of the diverging schedule.
# Hard-coded because formula rounding is ambiguous at these n; the formula
# serves all other sample sizes.
_SCHEDULE_P = {100: 150, 200: 595, 500: 6655, 1000: 74622}
_SCHEDULE_P0 = {
    (100, 1): 4, (200, 1): 6, (500, 1): 8, (1000, 1): 9,
    (100, 2): 8, (200, 2): 12, (500, 2): 16, (1000, 2): 18,
}


@dataclass(frozen=True)
class CovarianceSpec:
    """One of the three structured correlation families.

    ``power_decay``: corr(i, j) = rho^|i-j|.
    ``equi_block``: diagonal blocks of ``block_size`` (last block takes the
    remainder) with constant off-diagonal ``rho`` inside each block.
    ``eigen_block``: diagonal blocks built from a random orthogonal basis
    with spectrum {eig_min, eig_max, uniforms in between}, rescaled to a
    correlation matrix; ``eigen_seed`` pins the random construction.
    """

    kind: str
    p: int
    rho: float = 0.5
    block_size: int = 50
    eig_min: float = 1.0
    eig_max: float = 50.0
    eigen_seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.p < 1:
            raise ValueError(f"dimension p must be positive, got {self.p}")
        if self.kind in (POWER_DECAY, EQUI_BLOCK) and not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.kind in (EQUI_BLOCK, EIGEN_BLOCK) and self.block_size < 1:
            raise ValueError("block_size must be positive")
        if self.kind == EIGEN_BLOCK and not 0.0 < self.eig_min <= self.eig_max:
            raise ValueError("need 0 < eig_min <= eig_max")


@dataclass(frozen=True)
class BetaSpec:
    """Law of the nonzero coefficients: (-1)^u * (n_ref^-floor_exponent + |z|).

    ``u ~ Bernoulli(sign_prob)`` with u = 1 giving a negative sign, and ``z``
    centered normal scaled so that P(|z| >= z_tail_point) = z_tail_prob.
    Magnitudes therefore never fall below ``n_ref^-floor_exponent``.
    """

    n_ref: int = 100
    sign_prob: float = 0.4
    floor_exponent: float = 0.1625
    z_tail_point: float = 0.1
    z_tail_prob: float = 0.25

    def __post_init__(self):
        if self.n_ref < 2:
            raise ValueError("n_ref must be at least 2")
        if not 0.0 <= self.sign_prob <= 1.0:
            raise ValueError("sign_prob must lie in [0, 1]")
        if not 0.0 < self.z_tail_prob < 1.0:
            raise ValueError("z_tail_prob must lie in (0, 1)")

    @property
    def magnitude_floor(self) -> float:
        return float(self.n_ref) ** (-self.floor_exponent)

    @property
    def z_sigma(self) -> float:
        return self.z_tail_point / norm.ppf(1.0 - self.z_tail_prob / 2.0)


@dataclass(frozen=True)
class ScheduleEntry:
    """One row of the diverging (n, p0, p) schedule."""

    n: int
    c: int
    p0: int
    p: int


@dataclass
class Dataset:
    """A simulated replicate: design, response, and the generating truth."""

    x: np.ndarray
    y: np.ndarray
    true_support: SupportSet
    true_beta: np.ndarray
    sigma2: float


def divergence_schedule(n: int, c: int) -> ScheduleEntry:
    """Schedule entry for sample size ``n`` and multiplier ``c`` in {1, 2}.

    The four tabulated sample sizes return the standard rows; other ``n``
    use p0 = round(c * n^0.325) and p = round(exp(n^0.35)).
    """
    if c not in (1, 2):
        raise ValueError(f"c must be 1 or 2, got {c}")
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if n in _SCHEDULE_P:
        return ScheduleEntry(n, c, _SCHEDULE_P0[(n, c)], _SCHEDULE_P[n])
    p0 = int(round(c * n**0.325))
    p = int(round(math.exp(n**0.35)))
    return ScheduleEntry(n, c, p0, p)


@dataclass
class FactorHandle:
    """Sampling factor for a structured correlation: maps iid normals to
    correlated covariates and answers correlation-submatrix queries."""

    spec: CovarianceSpec
    # (start, cholesky factor, correlation matrix) per diagonal block; empty
    # for the geometric-decay structure, which samples by recursion.
    blocks: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    # Pre-rescaling spectra of the random blocks, kept for diagnostics.
    block_spectra: list[np.ndarray] = field(default_factory=list)

    def correlation_submatrix(self, indices: SupportSet | np.ndarray) -> np.ndarray:
        """Correlation of the covariates at ``indices`` (dense, small)."""
        if isinstance(indices, SupportSet):
            indices = indices.as_array()
        idx = np.asarray(indices, dtype=np.intp)
        spec = self.spec
        if spec.kind == POWER_DECAY:
            return spec.rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
        out = np.zeros((idx.size, idx.size))
        block_of = idx // spec.block_size
        for a in range(idx.size):
            for b in range(idx.size):
                if block_of[a] != block_of[b]:
                    continue
                if spec.kind == EQUI_BLOCK:
                    out[a, b] = 1.0 if a == b else spec.rho
                else:
                    start, _, corr = self.blocks[block_of[a]]
                    out[a, b] = corr[idx[a] - start, idx[b] - start]
        return out


def _block_starts(p: int, block_size: int) -> list[tuple[int, int]]:
    starts = []
    for start in range(0, p, block_size):
        starts.append((start, min(block_size, p - start)))
    return starts


def _equi_block_matrix(size: int, rho: float) -> np.ndarray:
    return rho * np.ones((size, size)) + (1.0 - rho) * np.eye(size)


def _random_spectrum_block(
    size: int, eig_min: float, eig_max: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One random block: correlation matrix, its Cholesky factor, and the
    spectrum it was built from (before correlation rescaling)."""
    for _ in range(100):
        if size == 1:
            return np.eye(1), np.eye(1), np.array([1.0])
        spectrum = np.concatenate(
            [[eig_min, eig_max], rng.uniform(eig_min, eig_max, size - 2)]
        )
        g = rng.standard_normal((size, size))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))  # fix the sign convention of the basis
        a = (q * spectrum) @ q.T
        d = np.diag(a)
        if np.any(d <= 0.0):
            continue
        corr = a / np.sqrt(np.outer(d, d))
        corr = (corr + corr.T) / 2.0
        try:
            chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            continue
        return corr, chol, spectrum
    raise RuntimeError("could not draw a positive definite block")


def covariance_factor(spec: CovarianceSpec) -> FactorHandle:
    """Build the sampling factor for ``spec``.

    Deterministic: the random-spectrum structure draws its blocks from
    ``spec.eigen_seed``. Degenerate block draws are regenerated internally
    and never surface.
    """
    if spec.kind == POWER_DECAY:
        return FactorHandle(spec)
    handle = FactorHandle(spec)
    if spec.kind == EQUI_BLOCK:
        cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for start, size in _block_starts(spec.p, spec.block_size):
            if size not in cache:
                corr = _equi_block_matrix(size, spec.rho)
                cache[size] = (corr, np.linalg.cholesky(corr))
            corr, chol = cache[size]
            handle.blocks.append((start, chol, corr))
        return handle
    rng = np.random.default_rng(spec.eigen_seed)
    for start, size in _block_starts(spec.p, spec.block_size):
        corr, chol, spectrum = _random_spectrum_block(
            size, spec.eig_min, spec.eig_max, rng
        )
        handle.blocks.append((start, chol, corr))
        handle.block_spectra.append(spectrum)
    return handle


def sample_design(
    factor: FactorHandle, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n rows of mean-zero Gaussians with the factor's correlation.

    Consumes exactly one (n, p) block of standard normals from ``rng``, so
    output is bit-reproducible for a fixed stream.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    spec = factor.spec
    z = rng.standard_normal((n, spec.p))
    if spec.kind == POWER_DECAY:
        # AR(1) recursion x_j = rho * x_{j-1} + sqrt(1 - rho^2) * z_j.
        w = z * math.sqrt(1.0 - spec.rho**2)
        w[:, 0] = z[:, 0]
        return lfilter([1.0], [1.0, -spec.rho], w, axis=1)
    x = np.empty_like(z)
    for start, chol, _ in factor.blocks:
        size = chol.shape[0]
        x[:, start : start + size] = z[:, start : start + size] @ chol.T
    return x


def sample_beta(
    spec: BetaSpec, p0: int, rng: np.random.Generator
) -> np.ndarray:
    """p0 signed coefficients; draws signs first, then the normal bumps."""
    if p0 < 1:
        raise ValueError(f"p0 must be positive, got {p0}")
    negative = rng.random(p0) < spec.sign_prob
    z = rng.standard_normal(p0) * spec.z_sigma
    magnitude = spec.magnitude_floor + np.abs(z)
    return np.where(negative, -magnitude, magnitude)


def place_support(p0: int, p: int, placement: str = "even") -> SupportSet:
    """Positions of the relevant features: spread evenly (default) so block
    structures see them in distinct blocks where possible, or packed first."""
    if not 1 <= p0 <= p:
        raise ValueError(f"need 1 <= p0 <= p, got p0={p0}, p={p}")
    if placement == "even":
        idx = (np.arange(p0) * p) // p0
        return SupportSet.of(int(i) for i in idx)
    if placement == "first":
        return SupportSet.of(range(p0))
    raise ValueError(f"unknown placement {placement!r}")


def expected_signal_power(
    cov_submatrix: np.ndarray,
    beta_spec: BetaSpec,
    n_draws: int = _CALIBRATION_DRAWS,
    seed: int = _CALIBRATION_SEED,
) -> float:
    """Monte Carlo estimate of E[beta' Sigma beta] over the coefficient law.

    Positions are fixed; ``cov_submatrix`` is the correlation restricted to
    them. The internal seed is fixed so the estimate is deterministic.
    """
    sigma = np.asarray(cov_submatrix, dtype=np.float64)
    p0 = sigma.shape[0]
    rng = np.random.default_rng(seed)
    negative = rng.random((n_draws, p0)) < beta_spec.sign_prob
    z = rng.standard_normal((n_draws, p0)) * beta_spec.z_sigma
    betas = np.where(negative, -1.0, 1.0) * (beta_spec.magnitude_floor + np.abs(z))
    return float(np.einsum("bi,ij,bj->b", betas, sigma, betas).mean())


def calibrate_sigma2(
    h: float,
    spec: CovarianceSpec,
    beta_spec: BetaSpec,
    schedule_ref: ScheduleEntry,
    placement: str = "even",
) -> float:
    """Noise variance hitting heritability ``h``: sigma2 = E[b'Sb]*(1-h)/h.

    The expectation is over the coefficient law at the reference schedule
    entry's support positions, against the correlation submatrix there.
    """
    if not 0.0 < h < 1.0:
        raise ValueError(f"heritability h must lie in (0, 1), got {h}")
    if spec.p != schedule_ref.p:
        raise ValueError(
            f"covariance dimension {spec.p} != schedule p {schedule_ref.p}"
        )
    positions = place_support(schedule_ref.p0, schedule_ref.p, placement)
    factor = covariance_factor(spec)
    sigma_sub = factor.correlation_submatrix(positions)
    q = expected_signal_power(sigma_sub, beta_spec)
    return q * (1.0 - h) / h


def generate_replicate(
    schedule: ScheduleEntry,
    spec: CovarianceSpec,
    beta_spec: BetaSpec,
    sigma2: float,
    rng: np.random.Generator,
    placement: str = "even",
    factor: FactorHandle | None = None,
    fixed_beta: np.ndarray | None = None,
) -> Dataset:
    """One simulated dataset at the given schedule entry.

    Draw order is fixed (coefficients, design, noise) so a replicate is
    bit-reproducible from its stream regardless of parallelism. Passing
    ``sigma2 = 0`` produces a noiseless response; ``fixed_beta`` reuses
    coefficients across replicates instead of redrawing them.
    """
    if sigma2 < 0.0:
        raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")
    if spec.p != schedule.p:
        raise ValueError(
            f"covariance dimension {spec.p} != schedule p {schedule.p}"
        )
    support = place_support(schedule.p0, schedule.p, placement)
    if fixed_beta is not None:
        beta_sub = np.asarray(fixed_beta, dtype=np.float64)
        if beta_sub.shape != (schedule.p0,):
            raise ValueError(f"fixed_beta must have length {schedule.p0}")
    else:
        beta_sub = sample_beta(beta_spec, schedule.p0, rng)
    if factor is None:
        factor = covariance_factor(spec)
    x = sample_design(factor, schedule.n, rng)
    noise = rng.standard_normal(schedule.n) * math.sqrt(sigma2)
    y = x[:, support.as_array()] @ beta_sub + noise
    true_beta = np.zeros(schedule.p)
    true_beta[support.as_array()] = beta_sub
    return Dataset(x, y, support, true_beta, float(sigma2))
