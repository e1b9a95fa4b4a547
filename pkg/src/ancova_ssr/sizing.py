"""Approximate fixed-design total sample sizes for the ANCOVA superiority test.

Four variants are provided: the basic normal approximation (``A``), a
Guenther-Schouten correction (``GS``), a degrees-of-freedom correction
(``DF``) and both corrections combined (``GS_DF``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .design import DesignSpec, parse_ratio
from .distributions import std_normal_quantile
from .errors import DomainError, FeasibilityError

__all__ = [
    "METHODS",
    "SizingResult",
    "n_basic",
    "n_gs",
    "n_df",
    "n_gs_df",
    "gs_correction",
    "allocation_factor",
    "z_sum_squared",
    "round_to_allocation",
    "size",
    "size_all",
]

METHODS = ("A", "GS", "DF", "GS_DF")


@dataclass(frozen=True)
class SizingResult:
    method: str
    n_raw: float
    n_total: int
    n1: int
    n2: int


def _check_inputs(sigma_y_sq: float, r_squared: float) -> None:
    if not sigma_y_sq > 0:
        raise DomainError(f"sigma_y_sq must be positive, got {sigma_y_sq}")
    if r_squared >= 1.0:
        raise FeasibilityError(
            f"R² = {r_squared:.4g} >= 1 would give a non-positive sample size; "
            "check that the joint covariance is positive semidefinite"
        )
    if r_squared < 0.0:
        raise DomainError(f"R² must lie in [0, 1), got {r_squared}")


def allocation_factor(gamma) -> float:
    """``(gamma + 1)**2 / gamma``, minimal (= 4) for balanced allocation."""
    g = parse_ratio(gamma)
    return float((g + 1) ** 2 / g)


def z_sum_squared(alpha: float, beta: float) -> float:
    return (std_normal_quantile(1.0 - alpha / 2.0) + std_normal_quantile(1.0 - beta)) ** 2


def gs_correction(alpha: float) -> float:
    """The additive term ``z_{1-alpha/2}**2 / 2``."""
    return std_normal_quantile(1.0 - alpha / 2.0) ** 2 / 2.0


def n_basic(spec: DesignSpec, sigma_y_sq: float, r_squared: float) -> float:
    _check_inputs(sigma_y_sq, r_squared)
    return (allocation_factor(spec.gamma) * z_sum_squared(spec.alpha, spec.beta)
            * sigma_y_sq * (1.0 - r_squared) / spec.delta**2)


def n_gs(spec: DesignSpec, sigma_y_sq: float, r_squared: float) -> float:
    return n_basic(spec, sigma_y_sq, r_squared) + gs_correction(spec.alpha)


def n_df(spec: DesignSpec, sigma_y_sq: float, r_squared: float) -> float:
    """Basic size inflated by ``(N_A - 2) / (N_A - 2 - c)``."""
    na = n_basic(spec, sigma_y_sq, r_squared)
    if spec.c == 0:
        return na
    if na <= 2 + spec.c:
        raise FeasibilityError(
            f"basic size {na:.4g} does not exceed 2 + c = {2 + spec.c}; the "
            "degrees-of-freedom correction is undefined"
        )
    return na * (na - 2.0) / (na - 2.0 - spec.c)


def n_gs_df(spec: DesignSpec, sigma_y_sq: float, r_squared: float) -> float:
    return n_df(spec, sigma_y_sq, r_squared) + gs_correction(spec.alpha)


_FORMULAS = {"A": n_basic, "GS": n_gs, "DF": n_df, "GS_DF": n_gs_df}


def round_to_allocation(n_raw: float, gamma) -> tuple[int, int, int]:
    """Smallest total >= ``n_raw`` that splits exactly as ``n2:n1 = r2:r1``.

    Returns ``(n_total, n1, n2)``.
    """
    if not n_raw > 0:
        raise DomainError(f"n_raw must be positive, got {n_raw}")
    g: Fraction = parse_ratio(gamma)
    r1, r2 = g.denominator, g.numerator
    step = r1 + r2
    n_total = -(-math.ceil(n_raw) // step) * step
    unit = n_total // step
    return n_total, unit * r1, unit * r2


def size(spec: DesignSpec, sigma_y_sq: float, r_squared: float,
         method: str = "GS_DF") -> SizingResult:
    try:
        formula = _FORMULAS[method]
    except KeyError:
        raise DomainError(f"unknown sizing method {method!r}; expected one of {METHODS}") from None
    n_raw = formula(spec, sigma_y_sq, r_squared)
    n_total, n1, n2 = round_to_allocation(n_raw, spec.gamma)
    return SizingResult(method=method, n_raw=n_raw, n_total=n_total, n1=n1, n2=n2)


def size_all(spec: DesignSpec, sigma_y_sq: float, r_squared: float) -> list[SizingResult]:
    return [size(spec, sigma_y_sq, r_squared, m) for m in METHODS]
