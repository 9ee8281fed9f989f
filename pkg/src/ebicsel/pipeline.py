"""Two-stage feature selection with criterion-tuned penalty choice.

Stage one screens: marginal-correlation ranking down to a budget, then a
lasso path to push the working dimension below the sample size. Stage two
runs a SCAD path on the survivors, refits every distinct support by plain
OLS, and keeps the support minimizing the extended criterion. The
combinatorial penalty always uses the original ambient dimension, never
the post-screening one. All reported supports live in original column
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .ebic import GammaPolicy, ebic_score
from .linmodel import RankDeficientError, SupportSet, ols_fit
from .solvers import PenaltySpec

# Relative floor applied to interpolating (zero-rss) refits so the
# criterion stays defined; the size penalty then prefers the smallest
# interpolating support.
RSS_FLOOR_RATIO = 1e-12


class EmptyPathError(RuntimeError):
    """No candidate support along the path could be scored."""


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the two-stage procedure.

    ``screen_target`` and ``max_support`` default to floor(n/2) at run
    time; the marginal-screening budget is ceil(n**sis_budget_exponent).
    """

    sis_budget_exponent: float = 1.5
    screen_target: int | None = None
    gamma_policy: GammaPolicy = GammaPolicy.scaled_consistent(4.0)
    penalty: PenaltySpec = PenaltySpec("scad", 3.7)
    num_lambdas: int = solvers.DEFAULT_NUM_LAMBDAS
    lambda_min_ratio: float = solvers.DEFAULT_LAMBDA_MIN_RATIO
    max_support: int | None = None
    cd_tol: float = solvers.DEFAULT_TOL
    cd_max_iter: int = solvers.DEFAULT_MAX_ITER

    def resolved_screen_target(self, n: int) -> int:
        target = self.screen_target if self.screen_target is not None else n // 2
        if not 1 <= target < n:
            raise ValueError(f"screen target {target} must lie in [1, n)")
        return target

    def resolved_budget(self, n: int) -> int:
        budget = math.ceil(n**self.sis_budget_exponent)
        target = self.resolved_screen_target(n)
        if budget < target:
            raise ValueError(
                f"screening budget {budget} below screen target {target}"
            )
        return budget


@dataclass
class SelectionResult:
    """Outcome of the selection stage."""

    selected: SupportSet
    lambda_star: float
    ebic_star: float
    screened: SupportSet
    gamma: float
    per_lambda_scores: list[tuple[float, int, float]]
    skipped: list[tuple[float, SupportSet]] = field(default_factory=list)


@dataclass
class CandidateTrace:
    """Everything the selection stage computes before gamma enters.

    Per grid point: the support (original coordinates) and its OLS refit
    rss (NaN where the refit was rank deficient). Scoring against any
    gamma policy is then a cheap pass over this trace, so several policies
    can share one replicate's work.
    """

    n: int
    p_original: int
    screened: SupportSet
    lambdas: np.ndarray
    supports: list[SupportSet]
    rss: np.ndarray
    y_sq_norm: float


def sis_screen(x: np.ndarray, y: np.ndarray, budget: int) -> SupportSet:
    """Top ``budget`` features by absolute marginal correlation with ``y``.

    Constant columns rank last with correlation zero. Ties break by
    column index, so the ranking is deterministic.
    """
    if budget < 1:
        raise ValueError(f"budget must be positive, got {budget}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = x.shape[1]
    if p <= budget:
        return SupportSet.of(range(p))
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    col_norm = np.sqrt(np.sum(xc * xc, axis=0))
    y_norm = math.sqrt(float(yc @ yc))
    denom = col_norm * y_norm
    corr = np.zeros(p)
    ok = denom > 0.0
    corr[ok] = (xc.T @ yc)[ok] / denom[ok]
    order = np.lexsort((np.arange(p), -np.abs(corr)))
    return SupportSet.of(int(j) for j in order[:budget])


def lasso_screen(
    x_reduced: np.ndarray,
    y: np.ndarray,
    target: int,
    num_lambdas: int = solvers.DEFAULT_NUM_LAMBDAS,
    lambda_min_ratio: float = solvers.DEFAULT_LAMBDA_MIN_RATIO,
    tol: float = solvers.DEFAULT_TOL,
    max_iter: int = solvers.DEFAULT_MAX_ITER,
) -> SupportSet:
    """Shrink to at most ``target`` features with a descending lasso path.

    ``x_reduced`` must be standardized and ``y`` centered. Returns the
    support at the first grid point reaching ``target`` nonzeros, trimmed
    to the ``target`` largest coefficients in magnitude; if the path never
    gets there, the largest support reached is returned. Indices are local
    to ``x_reduced``'s columns.
    """
    p = x_reduced.shape[1]
    if target >= x_reduced.shape[0]:
        raise ValueError(f"target {target} must be below n={x_reduced.shape[0]}")
    if p <= target:
        return SupportSet.of(range(p))
    lam_top = solvers.lambda_max(x_reduced, y)
    if lam_top <= 0.0:
        return SupportSet.empty()
    grid = solvers.lambda_grid(lam_top, num_lambdas, lambda_min_ratio)
    penalty = PenaltySpec("lasso")
    beta = np.zeros(p)
    best = SupportSet.empty()
    for lam in grid[1:]:  # the grid top is the all-zero solution
        result = solvers.coordinate_descent(
            x_reduced, y, penalty, float(lam),
            warm_start=beta, tol=tol, max_iter=max_iter,
        )
        beta = result.coefficients
        active = np.nonzero(beta)[0]
        if active.size >= target:
            top = active[np.argsort(-np.abs(beta[active]), kind="stable")][:target]
            return SupportSet.of(int(j) for j in top)
        if active.size >= best.size:
            best = SupportSet.of(int(j) for j in active)
    return best


def candidate_trace(
    x: np.ndarray,
    y: np.ndarray,
    screened: SupportSet,
    p_original: int,
    config: PipelineConfig,
) -> CandidateTrace:
    """SCAD path over the screened columns plus OLS refits per support.

    ``x`` is the original (unstandardized) matrix; standardization happens
    here. Rank-deficient refits are marked NaN and skipped by scoring.
    """
    n = x.shape[0]
    if screened.size >= n:
        raise ValueError("screened support must be smaller than n")
    cols = screened.as_array()
    std = solvers.standardize(np.asarray(x, dtype=np.float64)[:, cols], y)
    cap = config.max_support
    if cap is None:
        cap = config.resolved_screen_target(n)
    path = solvers.lambda_path(
        std.x, std.y, config.penalty,
        num_lambdas=config.num_lambdas,
        lambda_min_ratio=config.lambda_min_ratio,
        max_support=cap,
        tol=config.cd_tol,
        max_iter=config.cd_max_iter,
    )
    rss_cache: dict[tuple[int, ...], float] = {}
    supports: list[SupportSet] = []
    rss = np.empty(len(path.lambdas))
    for i, local in enumerate(path.supports):
        key = local.indices
        if key not in rss_cache:
            try:
                rss_cache[key] = ols_fit(std.x, std.y, local).rss
            except RankDeficientError:
                rss_cache[key] = math.nan
        supports.append(local.translate(cols))
        rss[i] = rss_cache[key]
    return CandidateTrace(
        n=n,
        p_original=p_original,
        screened=screened,
        lambdas=path.lambdas,
        supports=supports,
        rss=rss,
        y_sq_norm=float(std.y @ std.y),
    )


def select_from_trace(
    trace: CandidateTrace, gamma_policy: GammaPolicy
) -> SelectionResult:
    """Score every candidate in the trace and keep the criterion minimizer."""
    gamma = gamma_policy.resolve(trace.n, trace.p_original)
    floor = RSS_FLOOR_RATIO * trace.y_sq_norm
    scores: list[tuple[float, int, float]] = []
    skipped: list[tuple[float, SupportSet]] = []
    best_idx = -1
    best_score = math.inf
    for i, support in enumerate(trace.supports):
        lam = float(trace.lambdas[i])
        rss = trace.rss[i]
        if math.isnan(rss):
            skipped.append((lam, support))
            scores.append((lam, support.size, math.nan))
            continue
        rss_eff = max(rss, floor) if floor > 0.0 else rss
        if rss_eff <= 0.0:
            skipped.append((lam, support))
            scores.append((lam, support.size, math.nan))
            continue
        value = ebic_score(rss_eff, trace.n, trace.p_original, support.size, gamma)
        scores.append((lam, support.size, value))
        if value < best_score:
            best_score = value
            best_idx = i
    if best_idx < 0:
        raise EmptyPathError("every candidate support was skipped")
    return SelectionResult(
        selected=trace.supports[best_idx],
        lambda_star=float(trace.lambdas[best_idx]),
        ebic_star=best_score,
        screened=trace.screened,
        gamma=gamma,
        per_lambda_scores=scores,
        skipped=skipped,
    )


def select_by_ebic(
    x: np.ndarray,
    y: np.ndarray,
    screened: SupportSet,
    p_original: int,
    config: PipelineConfig,
) -> SelectionResult:
    """Selection stage: SCAD path, OLS refits, criterion minimization."""
    trace = candidate_trace(x, y, screened, p_original, config)
    return select_from_trace(trace, config.gamma_policy)


def screen(x: np.ndarray, y: np.ndarray, config: PipelineConfig) -> SupportSet:
    """Both screening steps composed, in original column coordinates."""
    n = np.asarray(x).shape[0]
    target = config.resolved_screen_target(n)
    budget = config.resolved_budget(n)
    kept = sis_screen(x, y, budget)
    if kept.size <= target:
        return kept
    cols = kept.as_array()
    std = solvers.standardize(np.asarray(x, dtype=np.float64)[:, cols], y)
    local = lasso_screen(
        std.x, std.y, target,
        num_lambdas=config.num_lambdas,
        lambda_min_ratio=config.lambda_min_ratio,
        tol=config.cd_tol,
        max_iter=config.cd_max_iter,
    )
    return local.translate(cols)


def run_two_stage(dataset, config: PipelineConfig) -> SelectionResult:
    """Screening stage then selection stage on one dataset."""
    x, y = dataset.x, dataset.y
    screened = screen(x, y, config)
    return select_by_ebic(x, y, screened, x.shape[1], config)


def pdr_fdr(selected: SupportSet, truth: SupportSet) -> tuple[float, float]:
    """Positive discovery rate and false discovery rate of a selection.

    An empty selection has FDR 0 by convention: no false discoveries were
    made, and the miss is already charged to PDR.
    """
    if truth.size == 0:
        raise ValueError("truth support must be nonempty")
    sel = selected.as_set()
    tru = truth.as_set()
    pdr = len(sel & tru) / len(tru)
    fdr = len(sel - tru) / len(sel) if sel else 0.0
    return pdr, fdr
