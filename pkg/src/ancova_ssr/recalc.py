"""Blinded sample-size recalculation from an internal pilot.

The procedure:

1. plan ``N_init`` with the degrees-of-freedom formula;
2. once ``N_tau = tau * N_init`` subjects are observed, regress the outcome
   on the covariates in the pooled sample (no group labels) and take the
   residual mean square;
3. recompute the size with the Guenther-Schouten formula using that
   residual variance in place of ``sigma_y^2 (1 - R^2)``;
4. clamp to ``[N_tau, k * N_init]``.

Every size is rounded up to the allocation grid (a multiple of r1 + r2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .design import DesignSpec
from .errors import DegeneracyError, DomainError, UndersizedError
from .sizing import allocation_factor, gs_correction, n_df, round_to_allocation, z_sum_squared

__all__ = [
    "RecalcConfig",
    "InterimData",
    "PooledRegressionFit",
    "RecalcResult",
    "initial_size",
    "interim_size",
    "bound_size",
    "blinded_residual_variance",
    "recalculated_size",
    "recalculated_sizes",
    "final_size",
    "run_recalc",
]


@dataclass(frozen=True)
class RecalcConfig:
    design: DesignSpec
    planning_sigma_y_sq: float
    planning_r_squared: float
    tau: float = 0.5
    k_bound: float = 4.0

    def __post_init__(self):
        if not self.planning_sigma_y_sq > 0:
            raise DomainError(f"planning sigma_y_sq must be positive, got {self.planning_sigma_y_sq}")
        if not self.k_bound >= 1.0 or not math.isfinite(self.k_bound):
            raise DomainError(f"k_bound must be a finite number >= 1, got {self.k_bound}")
        if not 0.0 < self.tau <= self.k_bound:
            raise DomainError(f"tau must lie in (0, k_bound], got {self.tau}")


@dataclass(frozen=True)
class InterimData:
    """Pooled interim outcomes and covariates. There is deliberately no group field."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(y.size, -1) if z.size else np.empty((y.size, 0))
        if z.shape[0] != y.size:
            raise DomainError("y and z must have the same number of rows")
        if y.size < z.shape[1] + 2:
            raise UndersizedError(
                f"{y.size} interim rows cannot support a regression on {z.shape[1]} covariates"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_rows(cls, rows) -> "InterimData":
        """Build from ``(y, z_vector)`` pairs."""
        rows = list(rows)
        y = [r[0] for r in rows]
        z = np.array([np.atleast_1d(r[1]) for r in rows], dtype=float).reshape(len(rows), -1)
        return cls(y, z)

    @property
    def c(self) -> int:
        return self.z.shape[1]

    def __len__(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class PooledRegressionFit:
    beta0: float
    beta: np.ndarray
    sigma_tau_sq: float
    n: int
    df_resid: int


@dataclass
class RecalcResult:
    n_init: int
    n_tau: int
    sigma_tau_sq: float
    n_rec: int
    n_bound: int
    n_final: int
    audit: list[tuple[str, object]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.audit)


def initial_size(cfg: RecalcConfig) -> int:
    """Degrees-of-freedom adjusted size from the planning values, on the allocation grid."""
    raw = n_df(cfg.design, cfg.planning_sigma_y_sq, cfg.planning_r_squared)
    return round_to_allocation(raw, cfg.design.gamma)[0]


def interim_size(n_init: int, tau: float, gamma) -> int:
    return round_to_allocation(tau * n_init, gamma)[0]


def bound_size(n_init: int, k_bound: float, gamma) -> int:
    return round_to_allocation(math.ceil(k_bound * n_init), gamma)[0]


def blinded_residual_variance(interim: InterimData) -> PooledRegressionFit:
    """Least squares of y on (1, z) ignoring groups; variance = RSS / (n - c - 1)."""
    n, c = len(interim), interim.c
    design = np.column_stack([np.ones(n), interim.z])
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * diag.max():
        raise DegeneracyError("interim covariate matrix is rank deficient")
    coef = solve_triangular(r, q.T @ interim.y)
    resid = interim.y - design @ coef
    df_resid = n - c - 1
    return PooledRegressionFit(beta0=float(coef[0]), beta=coef[1:],
                               sigma_tau_sq=float(resid @ resid) / df_resid,
                               n=n, df_resid=df_resid)


def _grid_ceil(n_raw, step: int):
    return (-(-np.ceil(n_raw) // step) * step).astype(int)


def recalculated_sizes(sigma_tau_sq, design: DesignSpec):
    """Vectorised Guenther-Schouten recalculation; returns ``(n_raw, n_rec)`` arrays."""
    sigma = np.asarray(sigma_tau_sq, dtype=float)
    n_raw = (allocation_factor(design.gamma) * z_sum_squared(design.alpha, design.beta)
             * sigma / design.delta**2 + gs_correction(design.alpha))
    return n_raw, _grid_ceil(n_raw, design.r1 + design.r2)


def recalculated_size(sigma_tau_sq: float, cfg: RecalcConfig) -> int:
    """Recalculated total size; no (1 - R^2) and no degrees-of-freedom factor."""
    if sigma_tau_sq < 0:
        raise DomainError(f"residual variance must be non-negative, got {sigma_tau_sq}")
    return int(recalculated_sizes(sigma_tau_sq, cfg.design)[1])


def final_size(n_tau: int, n_rec: int, n_init: int, k_bound: float, gamma) -> int:
    """``min(max(n_tau, n_rec), n_bound)`` rounded up to the allocation grid."""
    n_bound = bound_size(n_init, k_bound, gamma)
    clamped = min(max(n_tau, n_rec), n_bound)
    return round_to_allocation(clamped, gamma)[0]


def run_recalc(cfg: RecalcConfig, interim: InterimData) -> RecalcResult:
    design = cfg.design
    if interim.c != design.c:
        raise DomainError(f"interim data has {interim.c} covariates, design expects {design.c}")
    n_init = initial_size(cfg)
    n_tau = interim_size(n_init, cfg.tau, design.gamma)
    if n_tau < design.c + 2:
        raise UndersizedError(f"N_tau = {n_tau} is too small for {design.c} covariates")
    if len(interim) != n_tau:
        warnings.warn(f"interim data has {len(interim)} rows but the plan expects "
                      f"N_tau = {n_tau}", stacklevel=2)
    fit = blinded_residual_variance(interim)
    n_rec_raw, n_rec = recalculated_sizes(fit.sigma_tau_sq, design)
    n_rec = int(n_rec)
    n_bound = bound_size(n_init, cfg.k_bound, design.gamma)
    n_final = final_size(n_tau, n_rec, n_init, cfg.k_bound, design.gamma)
    audit = [
        ("delta", design.delta),
        ("alpha", design.alpha),
        ("power", design.power),
        ("gamma", f"{design.r2}:{design.r1}"),
        ("c", design.c),
        ("planning_sigma_y_sq", cfg.planning_sigma_y_sq),
        ("planning_r_squared", cfg.planning_r_squared),
        ("n_init_raw", n_df(design, cfg.planning_sigma_y_sq, cfg.planning_r_squared)),
        ("n_init", n_init),
        ("tau", cfg.tau),
        ("n_tau", n_tau),
        ("n_interim_observed", len(interim)),
        ("beta0", fit.beta0),
        ("beta", [float(b) for b in fit.beta]),
        ("residual_df", fit.df_resid),
        ("sigma_tau_sq", fit.sigma_tau_sq),
        ("n_rec_raw", float(n_rec_raw)),
        ("n_rec", n_rec),
        ("k_bound", cfg.k_bound),
        ("n_bound", n_bound),
        ("n_final", n_final),
    ]
    return RecalcResult(n_init=n_init, n_tau=n_tau, sigma_tau_sq=fit.sigma_tau_sq,
                        n_rec=n_rec, n_bound=n_bound, n_final=n_final, audit=audit)
