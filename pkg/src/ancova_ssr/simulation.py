"""Monte Carlo operating characteristics of fixed and recalculation designs.

Run ``i`` of a scenario draws all its data from ``RngStream(seed, i)``, so a
result depends only on the scenario, never on how runs are split into
blocks or spread over worker threads. Runs are processed in blocks whose
size is a function of the scenario alone. Each block is fitted in one
vectorised pass from group sufficient statistics.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .ancova import t_statistic_from_moments
from .design import DesignSpec, JointCovariance, check_feasibility, r_squared_from_covariance
from .distributions import RngStream, mvn_factor, t_quantile
from .errors import ConfigurationError, SearchError
from .recalc import (
    RecalcConfig,
    bound_size,
    initial_size,
    interim_size,
    recalculated_sizes,
)
from .sizing import METHODS, n_basic, round_to_allocation, size

__all__ = [
    "ScenarioSpec",
    "ScenarioResult",
    "ExactSize",
    "simulate",
    "simulate_fixed",
    "simulate_recalc",
    "mc_power_oracle",
    "exact_size_search",
    "figure_data",
]

_BLOCK_ELEMENTS = 2**20


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulated condition.

    ``design`` and ``planning_cov`` are what the trialist assumes; the data
    are generated from ``true_cov`` with mean shift ``true_delta`` on the
    outcome of group 1. ``true_delta = 0`` gives the type I error run.
    """

    true_delta: float
    true_cov: JointCovariance
    design: DesignSpec
    planning_cov: JointCovariance | None = None
    mode: str = "recalc"
    tau: float = 0.5
    k_bound: float = 4.0
    n_sim: int = 100_000
    seed: int = 0
    n_override: int | None = None
    fixed_method: str = "GS_DF"
    label: str = ""

    def __post_init__(self):
        if self.planning_cov is None:
            object.__setattr__(self, "planning_cov", self.true_cov)
        if self.mode not in ("fixed", "recalc"):
            raise ConfigurationError(f"mode must be 'fixed' or 'recalc', got {self.mode!r}")
        if self.fixed_method not in METHODS:
            raise ConfigurationError(f"unknown fixed_method {self.fixed_method!r}")
        if int(self.n_sim) != self.n_sim or self.n_sim < 1:
            raise ConfigurationError(f"n_sim must be a positive integer, got {self.n_sim}")
        if self.true_delta < 0:
            raise ConfigurationError("true_delta must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        c = self.design.c
        if self.true_cov.c != c or self.planning_cov.c != c:
            raise ConfigurationError(
                f"covariance dimensions ({self.true_cov.c}, {self.planning_cov.c}) "
                f"do not match design c = {c}"
            )
        report = check_feasibility(self.true_cov)
        if not report.feasible:
            raise ConfigurationError("true covariance is infeasible: " + "; ".join(report.messages))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "mode": self.mode,
            "true_delta": self.true_delta,
            "delta": self.design.delta,
            "gamma": f"{self.design.r2}:{self.design.r1}",
            "alpha": self.design.alpha,
            "power": self.design.power,
            "c": self.design.c,
            "true_cov": self.true_cov.to_dict(),
            "planning_cov": self.planning_cov.to_dict(),
            "tau": self.tau,
            "k_bound": self.k_bound,
            "n_sim": self.n_sim,
            "seed": self.seed,
            "n_override": self.n_override,
            "fixed_method": self.fixed_method,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def planning_r_squared(self) -> float:
        return r_squared_from_covariance(self.planning_cov)

    def recalc_config(self) -> RecalcConfig:
        return RecalcConfig(self.design, self.planning_cov.sigma_y_sq, self.planning_r_squared,
                            tau=self.tau, k_bound=self.k_bound)


@dataclass(frozen=True)
class ScenarioResult:
    rejection_rate: float
    rejection_se: float
    mean_final_n: float
    max_final_n: int
    min_final_n: int
    mean_sigma_tau_sq: float
    n_sim_completed: int
    n_init: int


class ExactSize(NamedTuple):
    n_total: int
    power: float
    se: float


def _block_bounds(n_sim: int, rows_per_run: int, d: int):
    size_ = max(16, min(4096, _BLOCK_ELEMENTS // max(1, rows_per_run * d)))
    return [(start, min(start + size_, n_sim)) for start in range(0, n_sim, size_)]


def _run_blocks(fn, bounds, workers: int):
    if workers <= 1 or len(bounds) == 1:
        return [fn(b) for b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, bounds))


def _group_moments(x: np.ndarray, n1: int):
    """Means of both groups and pooled within-group scatter for blocks of equal-size runs."""
    g1, g2 = x[:, :n1], x[:, n1:]
    m1, m2 = g1.mean(axis=1), g2.mean(axis=1)
    c1 = g1 - m1[:, None, :]
    c2 = g2 - m2[:, None, :]
    scatter = np.matmul(c1.transpose(0, 2, 1), c1) + np.matmul(c2.transpose(0, 2, 1), c2)
    return m1, m2, scatter


def _fixed_total(spec: ScenarioSpec) -> tuple[int, int, int]:
    if spec.n_override is not None:
        n_total, n1, n2 = round_to_allocation(spec.n_override, spec.design.gamma)
        if n_total != spec.n_override:
            raise ConfigurationError(
                f"n_override = {spec.n_override} is not on the allocation grid "
                f"{spec.design.r2}:{spec.design.r1}"
            )
        return n_total, n1, n2
    res = size(spec.design, spec.planning_cov.sigma_y_sq, spec.planning_r_squared,
               spec.fixed_method)
    return res.n_total, res.n1, res.n2


def _result(reject: np.ndarray, final_n: np.ndarray, sigma: np.ndarray | None,
            n_init: int) -> ScenarioResult:
    n = reject.size
    p = float(np.count_nonzero(reject)) / n
    return ScenarioResult(
        rejection_rate=p,
        rejection_se=math.sqrt(p * (1.0 - p) / n),
        mean_final_n=float(np.sum(final_n, dtype=np.int64)) / n,
        max_final_n=int(final_n.max()),
        min_final_n=int(final_n.min()),
        mean_sigma_tau_sq=float(np.sum(sigma) / n) if sigma is not None else float("nan"),
        n_sim_completed=n,
        n_init=n_init,
    )


def simulate_fixed(spec: ScenarioSpec, workers: int = 1) -> ScenarioResult:
    """Rejection rate of the ANCOVA test at a fixed total size."""
    n_total, n1, _ = _fixed_total(spec)
    c = spec.design.c
    d = c + 1
    if n_total - 2 - c < 1:
        raise ConfigurationError(f"N = {n_total} leaves no residual degrees of freedom")
    factor_t = mvn_factor(spec.true_cov.matrix).T
    crit = t_quantile(1.0 - spec.design.alpha / 2.0, n_total - 2 - c)
    seed, shift = int(spec.seed), float(spec.true_delta)

    def block(bounds):
        start, stop = bounds
        e = np.empty((stop - start, n_total, d))
        for i, run in enumerate(range(start, stop)):
            e[i] = RngStream(seed, run).standard_normal((n_total, d))
        x = e @ factor_t
        x[:, :n1, 0] += shift
        m1, m2, scatter = _group_moments(x, n1)
        _, t_stat, _ = t_statistic_from_moments(np.full(len(x), n1), np.full(len(x), n_total - n1),
                                                m1, m2, scatter)
        return t_stat > crit

    parts = _run_blocks(block, _block_bounds(spec.n_sim, n_total, d), workers)
    reject = np.concatenate(parts)
    return _result(reject, np.full(reject.size, n_total), None, n_total)


def simulate_recalc(spec: ScenarioSpec, workers: int = 1) -> ScenarioResult:
    """Operating characteristics of the blinded recalculation design.

    Stage 1 draws ``N_tau`` subjects on the allocation grid, the residual
    variance is estimated from the pooled regression, stage 2 tops each
    group up to its share of the final size, and all subjects are analysed.
    """
    design = spec.design
    c, d = design.c, design.c + 1
    step = design.r1 + design.r2
    cfg = spec.recalc_config()
    n_init = initial_size(cfg)
    n_tau = interim_size(n_init, spec.tau, design.gamma)
    n_bound = bound_size(n_init, spec.k_bound, design.gamma)
    if n_tau < c + 3:
        raise ConfigurationError(
            f"N_tau = {n_tau} is too small for a pooled regression and final test with c = {c}"
        )
    n1_tau = n_tau // step * design.r1
    factor_t = mvn_factor(spec.true_cov.matrix).T
    seed, shift = int(spec.seed), float(spec.true_delta)
    one_sided = 1.0 - design.alpha / 2.0

    def block(bounds):
        start, stop = bounds
        nb = stop - start
        streams = [RngStream(seed, run) for run in range(start, stop)]
        e1 = np.empty((nb, n_tau, d))
        for i, s in enumerate(streams):
            e1[i] = s.standard_normal((n_tau, d))
        x1 = e1 @ factor_t
        x1[:, :n1_tau, 0] += shift

        # blinded step: pooled regression of y on (1, z), labels unused
        centred = x1 - x1.mean(axis=1, keepdims=True)
        s_all = np.matmul(centred.transpose(0, 2, 1), centred)
        rss = s_all[:, 0, 0]
        if c:
            slopes = np.linalg.solve(s_all[:, 1:, 1:], s_all[:, 1:, 0:1])[..., 0]
            rss = rss - np.einsum("bk,bk->b", s_all[:, 0, 1:], slopes)
        sigma = np.clip(rss, 0.0, None) / (n_tau - c - 1)
        _, n_rec = recalculated_sizes(sigma, design)
        n_final = np.minimum(np.maximum(n_rec, n_tau), n_bound)

        n1_final = n_final // step * design.r1
        add1 = n1_final - n1_tau
        extra = n_final - n_tau
        width = int(extra.max())
        e2 = np.zeros((nb, width, d))
        for i, s in enumerate(streams):
            if extra[i]:
                e2[i, :extra[i]] = s.standard_normal((extra[i], d))
        x2 = e2 @ factor_t
        idx = np.arange(width)
        in1 = idx[None, :] < add1[:, None]
        in2 = (idx[None, :] >= add1[:, None]) & (idx[None, :] < extra[:, None])
        x2[:, :, 0] += np.where(in1, shift, 0.0)

        # shift each group by its stage-1 mean before accumulating raw moments
        ref1 = x1[:, :n1_tau].mean(axis=1)
        ref2 = x1[:, n1_tau:].mean(axis=1)
        stats = []
        for ref, part1, mask, n_g in (
            (ref1, x1[:, :n1_tau], in1, n1_final),
            (ref2, x1[:, n1_tau:], in2, n_final - n1_final),
        ):
            a = part1 - ref[:, None, :]
            b = (x2 - ref[:, None, :]) * mask[:, :, None]
            total = a.sum(axis=1) + b.sum(axis=1)
            cross = np.matmul(a.transpose(0, 2, 1), a) + np.matmul(b.transpose(0, 2, 1), b)
            mean_shifted = total / n_g[:, None]
            scatter = cross - n_g[:, None, None] * mean_shifted[:, :, None] * mean_shifted[:, None, :]
            stats.append((mean_shifted + ref, scatter))
        (m1, sc1), (m2, sc2) = stats
        _, t_stat, df = t_statistic_from_moments(n1_final, n_final - n1_final, m1, m2, sc1 + sc2)
        uniq, inverse = np.unique(df, return_inverse=True)
        crit = np.atleast_1d(t_quantile(one_sided, uniq))[inverse]
        return t_stat > crit, n_final, sigma

    bounds = _block_bounds(spec.n_sim, n_bound, d)
    parts = _run_blocks(block, bounds, workers)
    reject = np.concatenate([p[0] for p in parts])
    final_n = np.concatenate([p[1] for p in parts])
    sigma = np.concatenate([p[2] for p in parts])
    return _result(reject, final_n, sigma, n_init)


def simulate(spec: ScenarioSpec, workers: int = 1) -> ScenarioResult:
    if spec.mode == "fixed":
        return simulate_fixed(spec, workers)
    return simulate_recalc(spec, workers)


def mc_power_oracle(n_total: int, spec: ScenarioSpec, workers: int = 1) -> tuple[float, float]:
    """Simulated power (and its binomial SE) of the fixed design with ``n_total`` subjects."""
    res = simulate_fixed(replace(spec, mode="fixed", n_override=int(n_total)), workers)
    return res.rejection_rate, res.rejection_se


def exact_size_search(spec: ScenarioSpec, target_power: float | None = None,
                      n_sim_per_eval: int | None = None, max_n: int | None = None,
                      workers: int = 1) -> ExactSize:
    """Smallest allocation-grid N with simulated power >= target - 1 SE.

    Starts at the basic formula under the true parameters and walks the
    grid one step at a time. Every evaluation reuses the scenario seed, so
    neighbouring sizes share random numbers and the power curve is smooth.
    """
    design = spec.design
    target = design.power if target_power is None else target_power
    n_sim = spec.n_sim if n_sim_per_eval is None else n_sim_per_eval
    step = design.r1 + design.r2
    probe = replace(spec, n_sim=n_sim)
    truth = replace(design, delta=spec.true_delta) if spec.true_delta > 0 else None
    if truth is None:
        raise SearchError("true_delta must be positive to search for a powered size")
    r_sq = min(r_squared_from_covariance(spec.true_cov), 1.0 - 1e-9)
    start_raw = n_basic(truth, spec.true_cov.sigma_y_sq, r_sq)
    n_min = round_to_allocation(design.c + 3, design.gamma)[0]
    n = max(round_to_allocation(start_raw, design.gamma)[0], n_min)
    if max_n is None:
        max_n = 10 * n + 100
    cache: dict[int, tuple[float, float]] = {}

    def evaluate(m: int) -> tuple[float, float]:
        if m not in cache:
            cache[m] = mc_power_oracle(m, probe, workers)
        return cache[m]

    def passes(m: int) -> bool:
        power, se = evaluate(m)
        return power >= target - se

    if passes(n):
        while n - step >= n_min and passes(n - step):
            n -= step
    else:
        while not passes(n):
            n += step
            if n > max_n:
                raise SearchError(f"no size up to {max_n} reaches power {target}")
    power, se = evaluate(n)
    return ExactSize(n, power, se)


def figure_data(spec: ScenarioSpec, result: ScenarioResult, workers: int = 1,
                n_sim_per_eval: int | None = None) -> dict:
    """Scenario label, design power, exact-design power under truth, and target.

    The exact size is searched under the planning assumptions, then its
    power is simulated under the true parameters.
    """
    planned = replace(spec, true_cov=spec.planning_cov, true_delta=spec.design.delta)
    exact = exact_size_search(planned, n_sim_per_eval=n_sim_per_eval, workers=workers)
    power, _ = mc_power_oracle(exact.n_total, spec, workers)
    return {
        "label": spec.label,
        "recalc_power": result.rejection_rate,
        "oracle_power": power,
        "exact_n": exact.n_total,
        "target": spec.design.power,
    }
