"""Nuisance-parameter specifications: joint covariance, R^2 and feasibility."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .distributions import PSD_RTOL
from .errors import DegeneracyError, DomainError

__all__ = [
    "JointCovariance",
    "CompoundSymmetrySpec",
    "FeasibilityReport",
    "DesignSpec",
    "RSquaredWarning",
    "parse_ratio",
    "r_squared_from_covariance",
    "r_squared_iterative",
    "r_squared_chained",
    "partial_correlation",
    "check_feasibility",
    "cs_eigenvalues",
]

_SINGULAR_RTOL = 1e-12


class RSquaredWarning(UserWarning):
    """R^2 computed from a specification lies outside [0, 1]."""


@dataclass(frozen=True)
class JointCovariance:
    """Covariance of (Y, Z_1, ..., Z_c) split into its outcome and covariate blocks."""

    sigma_y_sq: float
    sigma_yz: np.ndarray
    sigma_z: np.ndarray

    def __post_init__(self):
        sigma_y_sq = float(self.sigma_y_sq)
        sigma_yz = np.atleast_1d(np.asarray(self.sigma_yz, dtype=float)).copy()
        c = sigma_yz.shape[0]
        sigma_z = np.asarray(self.sigma_z, dtype=float).reshape(c, c).copy()
        if not sigma_y_sq > 0:
            raise DomainError(f"sigma_y_sq must be positive, got {sigma_y_sq}")
        if sigma_yz.ndim != 1:
            raise DomainError("sigma_yz must be a vector")
        scale = max(1.0, float(np.max(np.abs(sigma_z)))) if c else 1.0
        if c and not np.allclose(sigma_z, sigma_z.T, rtol=0.0, atol=1e-12 * scale):
            raise DomainError("sigma_z must be symmetric")
        sigma_yz.setflags(write=False)
        sigma_z.setflags(write=False)
        object.__setattr__(self, "sigma_y_sq", sigma_y_sq)
        object.__setattr__(self, "sigma_yz", sigma_yz)
        object.__setattr__(self, "sigma_z", sigma_z)

    @property
    def c(self) -> int:
        return self.sigma_yz.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """The assembled (c+1) x (c+1) joint covariance matrix."""
        c = self.c
        out = np.empty((c + 1, c + 1))
        out[0, 0] = self.sigma_y_sq
        out[0, 1:] = self.sigma_yz
        out[1:, 0] = self.sigma_yz
        out[1:, 1:] = self.sigma_z
        return out

    @classmethod
    def from_matrix(cls, matrix) -> "JointCovariance":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise DomainError(f"joint covariance must be square, got {m.shape}")
        return cls(m[0, 0], m[1:, 0], m[1:, 1:])

    @classmethod
    def exchangeable(cls, sigma_yz: Sequence[float], rho_z: float,
                     sigma_y_sq: float = 1.0, sigma_z_sq: float = 1.0) -> "JointCovariance":
        """Covariates with common variance and common pairwise correlation ``rho_z``."""
        c = len(sigma_yz)
        sigma_z = sigma_z_sq * ((1.0 - rho_z) * np.eye(c) + rho_z * np.ones((c, c)))
        return cls(sigma_y_sq, np.asarray(sigma_yz, dtype=float), sigma_z)

    def to_dict(self) -> dict:
        return {
            "sigma_y_sq": self.sigma_y_sq,
            "sigma_yz": self.sigma_yz.tolist(),
            "sigma_z": self.sigma_z.tolist(),
        }


@dataclass(frozen=True)
class CompoundSymmetrySpec:
    """Outcome and all c covariates share one variance and one correlation."""

    sigma_sq: float
    rho: float
    c: int

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise DomainError(f"sigma_sq must be positive, got {self.sigma_sq}")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho}")
        if int(self.c) != self.c or self.c < 1:
            raise DomainError(f"c must be a positive integer, got {self.c}")

    def matrix(self, size: int | None = None) -> np.ndarray:
        """CS matrix of the given size; defaults to the full (c+1) x (c+1) joint matrix."""
        n = self.c + 1 if size is None else size
        return self.sigma_sq * ((1.0 - self.rho) * np.eye(n) + self.rho * np.ones((n, n)))

    def joint(self) -> JointCovariance:
        return JointCovariance.from_matrix(self.matrix())


@dataclass
class FeasibilityReport:
    eigenvalues: np.ndarray
    is_psd: bool
    r_squared: float | None
    messages: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        """PSD and R^2 usable by the sizing formulas."""
        return (self.is_psd and self.r_squared is not None
                and 0.0 <= self.r_squared <= 1.0 + 1e-12)


def parse_ratio(value) -> Fraction:
    """Parse an allocation ratio ``n2/n1`` given as ``"r2:r1"``, a number or a Fraction."""
    if isinstance(value, Fraction):
        ratio = value
    elif isinstance(value, str) and ":" in value:
        left, right = value.split(":", 1)
        try:
            ratio = Fraction(int(left.strip()), int(right.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise DomainError(f"cannot parse allocation ratio {value!r}") from exc
    else:
        try:
            ratio = Fraction(value).limit_denominator(1000)
        except (ValueError, TypeError) as exc:
            raise DomainError(f"cannot parse allocation ratio {value!r}") from exc
    if ratio <= 0:
        raise DomainError(f"allocation ratio must be positive, got {value!r}")
    return ratio


@dataclass(frozen=True)
class DesignSpec:
    """Inputs of the fixed-design sizing formulas.

    ``gamma`` is the allocation ratio n2/n1 kept as an exact fraction
    ``r2/r1`` in lowest terms; ``alpha`` is the two-sided level, so the
    superiority test runs one-sided at ``alpha / 2``.
    """

    delta: float
    gamma: Fraction = Fraction(1)
    alpha: float = 0.05
    beta: float = 0.2
    c: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gamma", parse_ratio(self.gamma))
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.alpha + self.beta >= 1.0:
            raise DomainError("alpha + beta must be below 1")
        if int(self.c) != self.c or self.c < 0:
            raise DomainError(f"c must be a non-negative integer, got {self.c}")
        object.__setattr__(self, "c", int(self.c))

    @property
    def power(self) -> float:
        return 1.0 - self.beta

    @property
    def r1(self) -> int:
        return self.gamma.denominator

    @property
    def r2(self) -> int:
        return self.gamma.numerator


def _near_null_message(sigma_z: np.ndarray) -> str:
    eigval, eigvec = np.linalg.eigh(sigma_z)
    vec = np.array2string(eigvec[:, 0], precision=4, suppress_small=True)
    return f"covariate covariance is singular: eigenvalue {eigval[0]:.3g} with eigenvector {vec}"


def r_squared_from_covariance(jc: JointCovariance) -> float:
    """Squared multiple correlation ``sigma_yz' sigma_z^-1 sigma_yz / sigma_y^2``.

    The value is not clamped. An infeasible specification can give R^2 > 1;
    an :class:`RSquaredWarning` is emitted in that case so callers notice.
    """
    if jc.c == 0:
        return 0.0
    eigval = np.linalg.eigvalsh(jc.sigma_z)
    if eigval[0] <= _SINGULAR_RTOL * max(abs(eigval[-1]), np.finfo(float).tiny):
        raise DegeneracyError(_near_null_message(jc.sigma_z))
    quad = float(jc.sigma_yz @ np.linalg.solve(jc.sigma_z, jc.sigma_yz))
    r_sq = quad / jc.sigma_y_sq
    if not 0.0 <= r_sq <= 1.0 + 1e-12:
        warnings.warn(f"R² = {r_sq:.4g} lies outside [0, 1]; the covariance "
                      "specification is infeasible", RSquaredWarning, stacklevel=2)
    return r_sq


def r_squared_iterative(r_sq_reduced: float, partial_rho: float) -> float:
    """Add one covariate: ``R2_reduced + (1 - R2_reduced) * partial_rho**2``."""
    if not 0.0 <= r_sq_reduced <= 1.0:
        raise DomainError(f"reduced-model R² must lie in [0, 1], got {r_sq_reduced}")
    if not -1.0 <= partial_rho <= 1.0:
        raise DomainError(f"partial correlation must lie in [-1, 1], got {partial_rho}")
    return r_sq_reduced + (1.0 - r_sq_reduced) * partial_rho**2


def partial_correlation(matrix, i: int, j: int, given: Sequence[int] = ()) -> float:
    """Correlation of variables i and j in the conditional covariance given ``given``."""
    m = np.asarray(matrix, dtype=float)
    keep = [i, j]
    given = list(given)
    block = m[np.ix_(keep, keep)]
    if given:
        cross = m[np.ix_(keep, given)]
        block = block - cross @ np.linalg.solve(m[np.ix_(given, given)], cross.T)
    return float(block[0, 1] / np.sqrt(block[0, 0] * block[1, 1]))


def r_squared_chained(jc: JointCovariance) -> float:
    """R^2 built up one covariate at a time from partial correlations."""
    m = jc.matrix
    r_sq = 0.0
    for k in range(1, jc.c + 1):
        rho = partial_correlation(m, 0, k, given=range(1, k))
        r_sq = r_squared_iterative(r_sq, float(np.clip(rho, -1.0, 1.0)))
    return r_sq


def cs_eigenvalues(spec: CompoundSymmetrySpec) -> tuple[float, float, tuple[int, int]]:
    """Closed-form spectrum of the full (c+1) x (c+1) compound-symmetry matrix."""
    lam1 = spec.sigma_sq * (1.0 + spec.c * spec.rho)
    lam2 = spec.sigma_sq * (1.0 - spec.rho)
    return lam1, lam2, (1, spec.c)


def check_feasibility(jc: JointCovariance | CompoundSymmetrySpec) -> FeasibilityReport:
    """Eigen-analysis of the joint covariance; diagnostics only, never raises."""
    messages: list[str] = []
    cs = jc if isinstance(jc, CompoundSymmetrySpec) else None
    if cs is not None:
        jc = cs.joint()
    eigval = np.linalg.eigvalsh(jc.matrix)
    is_psd = bool(eigval[0] >= -PSD_RTOL * max(1.0, float(eigval[-1])))
    if not is_psd:
        messages.append(f"joint covariance is not positive semidefinite: smallest "
                        f"eigenvalue {eigval[0]:.4g}")
    if cs is not None:
        lam1, lam2, _ = cs_eigenvalues(cs)
        if cs.rho < -1.0 / cs.c:
            messages.append(f"compound symmetry requires rho >= -1/c = {-1.0 / cs.c:.4g}; "
                            f"rho = {cs.rho:.4g} gives eigenvalue sigma²(1 + c·rho) = {lam1:.4g}")
    r_sq: float | None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RSquaredWarning)
            r_sq = r_squared_from_covariance(jc)
    except DegeneracyError as exc:
        r_sq = None
        messages.append(str(exc))
    if r_sq is not None and not 0.0 <= r_sq <= 1.0 + 1e-12:
        messages.append(f"R² = {r_sq:.4g} lies outside [0, 1]; sizing formulas would "
                        f"give negative or undefined sample sizes")
    return FeasibilityReport(eigenvalues=eigval, is_psd=is_psd, r_squared=r_sq,
                             messages=messages)
