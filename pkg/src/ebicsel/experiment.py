"""Monte Carlo study harness: setting enumeration, seeding, aggregation.

Every (structure, c, n, h) setting runs a fixed number of replicates. A
replicate's random stream is derived from (master seed, setting, replicate
index) only, so results are bit-identical regardless of worker count or
scheduling order. Gamma policies share the replicate datasets and the
candidate trace: they differ only in how the trace is scored. Per-replicate
results are persisted to a CSV log before aggregation.
"""

from __future__ import annotations

import csv
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import pipeline as pl
from .ebic import GammaPolicy
from .simgen import (
    BetaSpec,
    CovarianceSpec,
    EIGEN_BLOCK,
    EQUI_BLOCK,
    POWER_DECAY,
    ScheduleEntry,
    calibrate_sigma2,
    covariance_factor,
    divergence_schedule,
    generate_replicate,
    sample_beta,
)

STRUCTURE_KINDS = {"I": POWER_DECAY, "II": EQUI_BLOCK, "III": EIGEN_BLOCK}

REPLICATE_LOG_COLUMNS = (
    "structure", "c", "n", "h", "gamma_label", "replicate",
    "pdr", "fdr", "selected_size", "lambda_star", "status",
)

_MASK64 = (1 << 64) - 1

DEFAULT_GAMMA_POLICIES: tuple[tuple[str, GammaPolicy], ...] = (
    ("bic", GammaPolicy.fixed(0.0)),
    ("sc", GammaPolicy.scaled_consistent(4.0)),
    ("mbic", GammaPolicy.fixed(1.0)),
)


@dataclass(frozen=True)
class StudyConfig:
    """Grid of simulation settings plus generation and pipeline knobs."""

    structures: tuple[str, ...] = ("I",)
    c_values: tuple[int, ...] = (1,)
    n_values: tuple[int, ...] = (100, 200)
    h_values: tuple[float, ...] = (0.4, 0.6, 0.8)
    gamma_policies: tuple[tuple[str, GammaPolicy], ...] = DEFAULT_GAMMA_POLICIES
    replicates: int = 50
    master_seed: int = 20230811
    rho: float = 0.5
    block_size: int = 50
    eig_min: float = 1.0
    eig_max: float = 50.0
    eigen_seed: int = 0
    sign_prob: float = 0.4
    floor_exponent: float = 0.1625
    z_tail_point: float = 0.1
    z_tail_prob: float = 0.25
    support_placement: str = "even"
    beta_per_replicate: bool = True
    pipeline: pl.PipelineConfig = pl.PipelineConfig()

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        unknown = set(self.structures) - set(STRUCTURE_KINDS)
        if unknown:
            raise ValueError(f"unknown structures {sorted(unknown)}")
        if not self.gamma_policies:
            raise ValueError("at least one gamma policy is required")
        for h in self.h_values:
            if not 0.0 < h < 1.0:
                raise ValueError(f"h must lie in (0, 1), got {h}")

    def covariance_spec(self, structure: str, p: int) -> CovarianceSpec:
        return CovarianceSpec(
            kind=STRUCTURE_KINDS[structure],
            p=p,
            rho=self.rho,
            block_size=self.block_size,
            eig_min=self.eig_min,
            eig_max=self.eig_max,
            eigen_seed=self.eigen_seed,
        )

    def beta_spec(self, n_ref: int) -> BetaSpec:
        return BetaSpec(
            n_ref=n_ref,
            sign_prob=self.sign_prob,
            floor_exponent=self.floor_exponent,
            z_tail_point=self.z_tail_point,
            z_tail_prob=self.z_tail_prob,
        )


@dataclass(frozen=True)
class SettingKey:
    structure: str
    c: int
    n: int
    h: float

    def label(self) -> str:
        return f"{self.structure}|c={self.c}|n={self.n}|h={self.h!r}"


@dataclass
class ReplicateRow:
    """One line of the per-replicate log."""

    key: SettingKey
    gamma_label: str
    replicate: int
    pdr: float
    fdr: float
    selected_size: int
    lambda_star: float
    status: str


@dataclass
class SettingSummary:
    """Aggregated discovery rates for one setting and gamma policy."""

    structure: str
    c: int
    n: int
    h: float
    gamma_label: str
    pdr_mean: float
    pdr_sd: float
    fdr_mean: float
    fdr_sd: float
    replicates_completed: int
    failures: int
    flagged: bool


def stable_id(text: str) -> int:
    """64-bit collision-resistant identifier for a setting label."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_stream(
    master_seed: int, setting_id: int | str, replicate_index: int
) -> np.random.Generator:
    """Independent random stream for one replicate of one setting.

    The triple is mixed through numpy's SeedSequence (a counter-mode hash
    whose algorithm is fixed by numpy's compatibility policy), so streams
    are stable across versions and independent of evaluation order.
    """
    sid = stable_id(setting_id) if isinstance(setting_id, str) else int(setting_id)
    ss = np.random.SeedSequence(
        entropy=(
            int(master_seed) & _MASK64,
            sid & _MASK64,
            int(replicate_index) & _MASK64,
        )
    )
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class _ReplicateTask:
    key: SettingKey
    schedule: ScheduleEntry
    cov_spec: CovarianceSpec
    beta_spec: BetaSpec
    sigma2: float
    master_seed: int
    replicate: int
    placement: str
    fixed_beta: np.ndarray | None
    pipeline_config: pl.PipelineConfig
    gamma_policies: tuple[tuple[str, GammaPolicy], ...]


_FACTOR_CACHE: dict[CovarianceSpec, object] = {}


def _cached_factor(spec: CovarianceSpec):
    # Process-local; identical in every worker because covariance_factor
    # is deterministic.
    if spec not in _FACTOR_CACHE:
        if len(_FACTOR_CACHE) > 8:
            _FACTOR_CACHE.clear()
        _FACTOR_CACHE[spec] = covariance_factor(spec)
    return _FACTOR_CACHE[spec]


def _run_replicate(task: _ReplicateTask) -> list[ReplicateRow]:
    rng = derive_stream(task.master_seed, task.key.label(), task.replicate)
    rows: list[ReplicateRow] = []
    try:
        dataset = generate_replicate(
            task.schedule,
            task.cov_spec,
            task.beta_spec,
            task.sigma2,
            rng,
            placement=task.placement,
            factor=_cached_factor(task.cov_spec),
            fixed_beta=task.fixed_beta,
        )
        screened = pl.screen(dataset.x, dataset.y, task.pipeline_config)
        trace = pl.candidate_trace(
            dataset.x, dataset.y, screened,
            dataset.x.shape[1], task.pipeline_config,
        )
    except Exception as exc:  # noqa: BLE001 - a replicate failure is data
        status = f"error:{type(exc).__name__}"
        return [
            ReplicateRow(task.key, label, task.replicate,
                         math.nan, math.nan, -1, math.nan, status)
            for label, _ in task.gamma_policies
        ]
    for label, policy in task.gamma_policies:
        try:
            sel = pl.select_from_trace(trace, policy)
            pdr, fdr = pl.pdr_fdr(sel.selected, dataset.true_support)
            rows.append(
                ReplicateRow(task.key, label, task.replicate, pdr, fdr,
                             sel.selected.size, sel.lambda_star, "ok")
            )
        except Exception as exc:  # noqa: BLE001
            rows.append(
                ReplicateRow(task.key, label, task.replicate,
                             math.nan, math.nan, -1, math.nan,
                             f"error:{type(exc).__name__}")
            )
    return rows


def _build_tasks(config: StudyConfig) -> list[_ReplicateTask]:
    tasks: list[_ReplicateTask] = []
    sigma2_cache: dict[tuple[str, int, float], float] = {}
    for structure in config.structures:
        for c in config.c_values:
            ref = divergence_schedule(100, c)
            for h in config.h_values:
                cache_key = (structure, c, h)
                if cache_key not in sigma2_cache:
                    sigma2_cache[cache_key] = calibrate_sigma2(
                        h,
                        config.covariance_spec(structure, ref.p),
                        config.beta_spec(100),
                        ref,
                        placement=config.support_placement,
                    )
                sigma2 = sigma2_cache[cache_key]
                for n in config.n_values:
                    schedule = divergence_schedule(n, c)
                    key = SettingKey(structure, c, n, h)
                    beta_spec = config.beta_spec(n)
                    fixed_beta = None
                    if not config.beta_per_replicate:
                        beta_rng = derive_stream(
                            config.master_seed, key.label() + "/beta", 0
                        )
                        fixed_beta = sample_beta(beta_spec, schedule.p0, beta_rng)
                    cov_spec = config.covariance_spec(structure, schedule.p)
                    for r in range(config.replicates):
                        tasks.append(
                            _ReplicateTask(
                                key=key,
                                schedule=schedule,
                                cov_spec=cov_spec,
                                beta_spec=beta_spec,
                                sigma2=sigma2,
                                master_seed=config.master_seed,
                                replicate=r,
                                placement=config.support_placement,
                                fixed_beta=fixed_beta,
                                pipeline_config=config.pipeline,
                                gamma_policies=config.gamma_policies,
                            )
                        )
    return tasks


def _aggregate(
    config: StudyConfig, rows: list[ReplicateRow]
) -> list[SettingSummary]:
    by_group: dict[tuple[SettingKey, str], list[ReplicateRow]] = {}
    for row in rows:
        by_group.setdefault((row.key, row.gamma_label), []).append(row)
    summaries: list[SettingSummary] = []
    for structure in config.structures:
        for c in config.c_values:
            for n in config.n_values:
                for h in config.h_values:
                    key = SettingKey(structure, c, n, h)
                    for label, _ in config.gamma_policies:
                        group = by_group.get((key, label), [])
                        ok = [r for r in group if r.status == "ok"]
                        failures = len(group) - len(ok)
                        pdr = np.array([r.pdr for r in ok])
                        fdr = np.array([r.fdr for r in ok])
                        completed = len(ok)
                        if completed == 0:
                            mean_p = mean_f = sd_p = sd_f = math.nan
                        elif completed == 1:
                            mean_p, mean_f = float(pdr[0]), float(fdr[0])
                            sd_p = sd_f = 0.0
                        else:
                            mean_p = float(pdr.mean())
                            mean_f = float(fdr.mean())
                            sd_p = float(pdr.std(ddof=1))
                            sd_f = float(fdr.std(ddof=1))
                        flagged = (
                            completed < 2
                            or failures > 0.1 * config.replicates
                        )
                        summaries.append(
                            SettingSummary(
                                structure, c, n, h, label,
                                mean_p, sd_p, mean_f, sd_f,
                                completed, failures, flagged,
                            )
                        )
    return summaries


def write_replicate_log(rows: Iterable[ReplicateRow], path: Path | str) -> None:
    """Persist per-replicate rows; floats keep full round-trip precision."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPLICATE_LOG_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.key.structure, row.key.c, row.key.n, repr(row.key.h),
                    row.gamma_label, row.replicate,
                    repr(row.pdr), repr(row.fdr),
                    row.selected_size, repr(row.lambda_star), row.status,
                ]
            )


def read_replicate_log(path: Path | str) -> list[ReplicateRow]:
    rows: list[ReplicateRow] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPLICATE_LOG_COLUMNS:
            raise ValueError(f"unexpected replicate log header in {path}")
        for rec in reader:
            rows.append(
                ReplicateRow(
                    SettingKey(
                        rec["structure"], int(rec["c"]),
                        int(rec["n"]), float(rec["h"]),
                    ),
                    rec["gamma_label"],
                    int(rec["replicate"]),
                    float(rec["pdr"]),
                    float(rec["fdr"]),
                    int(rec["selected_size"]),
                    float(rec["lambda_star"]),
                    rec["status"],
                )
            )
    return rows


def run_study(
    config: StudyConfig,
    workers: int = 1,
    replicate_log: Path | str | None = None,
    verbose: bool = False,
) -> list[SettingSummary]:
    """Run the full grid and aggregate discovery rates per setting.

    Results do not depend on ``workers``; replicates are ordered
    deterministically before logging and aggregation. When
    ``replicate_log`` is given, the per-replicate CSV is written before
    any aggregation happens.
    """
    tasks = _build_tasks(config)
    results: dict[tuple[SettingKey, int], list[ReplicateRow]] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for task, rows in zip(tasks, pool.map(_run_replicate, tasks)):
                results[(task.key, task.replicate)] = rows
                if verbose and task.replicate == config.replicates - 1:
                    print(f"  finished {task.key.label()}", file=sys.stderr)
    else:
        for task in tasks:
            results[(task.key, task.replicate)] = _run_replicate(task)
            if verbose and task.replicate == config.replicates - 1:
                print(f"  finished {task.key.label()}", file=sys.stderr)
    ordered: list[ReplicateRow] = []
    for task in tasks:
        ordered.extend(results[(task.key, task.replicate)])
    if replicate_log is not None:
        write_replicate_log(ordered, replicate_log)
    return _aggregate(config, ordered)


def summaries_from_log(
    config: StudyConfig, path: Path | str
) -> list[SettingSummary]:
    """Re-derive summaries from a persisted per-replicate log."""
    return _aggregate(config, read_replicate_log(path))
