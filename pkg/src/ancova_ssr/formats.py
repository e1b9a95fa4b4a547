"""Readers and writers for the on-disk formats used by the command line.

Covariance specifications and scenario batches are JSON; trial and
interim datasets are CSV with a header row.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__
from .ancova import TrialDataset
from .design import CompoundSymmetrySpec, DesignSpec, JointCovariance
from .errors import AncovaSSRError, BlindingError, DomainError
from .recalc import InterimData
from .simulation import ScenarioResult, ScenarioSpec

__all__ = [
    "ParseError",
    "parse_covariance",
    "load_covariance",
    "read_trial_csv",
    "read_interim_csv",
    "scenario_from_record",
    "load_batch",
    "RESULT_COLUMNS",
    "FIGURE_COLUMNS",
    "write_csv",
]


class ParseError(AncovaSSRError, ValueError):
    """An input file could not be parsed; the message names the location."""


def _load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc


def _number(obj: dict, key: str, where: str, default=None) -> float:
    if key not in obj:
        if default is not None:
            return default
        raise ParseError(f"{where}: missing field '{key}'")
    try:
        return float(obj[key])
    except (TypeError, ValueError):
        raise ParseError(f"{where}: field '{key}' must be a number, got {obj[key]!r}") from None


def parse_covariance(obj: Any, where: str = "covariance") -> JointCovariance | CompoundSymmetrySpec:
    """Parse one of the three covariance layouts.

    ``{"sigma_y_sq", "sigma_yz", "sigma_z"}`` gives the blocks directly,
    ``{"cs": {"sigma_sq", "rho", "c"}}`` a full compound-symmetry matrix and
    ``{"exchangeable": {"sigma_yz", "rho_z"[, "sigma_y_sq", "sigma_z_sq"]}}``
    exchangeable covariates with arbitrary outcome covariances.
    """
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
    try:
        if "cs" in obj:
            cs = obj["cs"]
            sub = f"{where}.cs"
            if not isinstance(cs, dict):
                raise ParseError(f"{sub}: expected an object")
            c = _number(cs, "c", sub)
            if c != int(c):
                raise ParseError(f"{sub}: field 'c' must be an integer")
            return CompoundSymmetrySpec(_number(cs, "sigma_sq", sub), _number(cs, "rho", sub), int(c))
        if "exchangeable" in obj:
            ex = obj["exchangeable"]
            sub = f"{where}.exchangeable"
            if not isinstance(ex, dict) or "sigma_yz" not in ex:
                raise ParseError(f"{sub}: expected an object with 'sigma_yz'")
            return JointCovariance.exchangeable(
                _float_list(ex["sigma_yz"], f"{sub}.sigma_yz"), _number(ex, "rho_z", sub),
                _number(ex, "sigma_y_sq", sub, 1.0), _number(ex, "sigma_z_sq", sub, 1.0))
        for key in ("sigma_y_sq", "sigma_yz", "sigma_z"):
            if key not in obj:
                raise ParseError(f"{where}: missing field '{key}'")
        sigma_yz = _float_list(obj["sigma_yz"], f"{where}.sigma_yz")
        c = len(sigma_yz)
        rows = obj["sigma_z"]
        if not isinstance(rows, list) or len(rows) != c:
            raise ParseError(f"{where}.sigma_z: expected {c} rows")
        sigma_z = [_float_list(r, f"{where}.sigma_z[{i}]", length=c) for i, r in enumerate(rows)]
        return JointCovariance(_number(obj, "sigma_y_sq", where), sigma_yz,
                               np.array(sigma_z).reshape(c, c))
    except DomainError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def _float_list(value, where: str, length: int | None = None) -> list[float]:
    if not isinstance(value, list):
        raise ParseError(f"{where}: expected a list")
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ParseError(f"{where}: entries must be numbers") from None
    if length is not None and len(out) != length:
        raise ParseError(f"{where}: expected {length} entries, got {len(out)}")
    return out


def load_covariance(path) -> JointCovariance | CompoundSymmetrySpec:
    return parse_covariance(_load_json(path), where=str(path))


def as_joint(spec: JointCovariance | CompoundSymmetrySpec) -> JointCovariance:
    return spec.joint() if isinstance(spec, CompoundSymmetrySpec) else spec


def _read_numeric_csv(path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ParseError(f"{path}: line {i + 2}: expected {len(header)} fields, got {len(row)}")
        try:
            values[i] = [float(v) for v in row]
        except ValueError:
            raise ParseError(f"{path}: line {i + 2}: non-numeric value") from None
    return header, values


def _check_covariate_columns(header: list[str], path) -> None:
    for j, name in enumerate(header):
        if name != f"z{j + 1}":
            raise ParseError(f"{path}: covariate column {j + 1} must be named 'z{j + 1}', got {name!r}")


def read_trial_csv(path) -> TrialDataset:
    """CSV with header ``group,y,z1,...,zc`` and group in {1, 2}."""
    header, values = _read_numeric_csv(path)
    if header[:2] != ["group", "y"]:
        raise ParseError(f"{path}: header must start with 'group,y'")
    _check_covariate_columns(header[2:], path)
    try:
        return TrialDataset(values[:, 0], values[:, 1], values[:, 2:])
    except DomainError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def read_interim_csv(path) -> InterimData:
    """Blinded CSV with header ``y,z1,...,zc``. A group column is refused."""
    header, values = _read_numeric_csv(path)
    if "group" in header:
        raise BlindingError(f"{path}: blinded input required; remove the 'group' column")
    if header[:1] != ["y"]:
        raise ParseError(f"{path}: header must start with 'y'")
    _check_covariate_columns(header[1:], path)
    return InterimData(values[:, 0], values[:, 1:])


_RECORD_KEYS = {
    "label", "mode", "true_delta", "delta", "alpha", "power", "gamma", "true_cov",
    "planning_cov", "tau", "k_bound", "n_sim", "seed", "n_override", "fixed_method",
}


def scenario_from_record(rec: Any, where: str = "scenario") -> ScenarioSpec:
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: expected an object")
    unknown = set(rec) - _RECORD_KEYS
    if unknown:
        raise ParseError(f"{where}: unknown fields {sorted(unknown)}")
    if "true_cov" not in rec:
        raise ParseError(f"{where}: missing field 'true_cov'")
    true_cov = as_joint(parse_covariance(rec["true_cov"], f"{where}.true_cov"))
    planning = rec.get("planning_cov")
    planning_cov = as_joint(parse_covariance(planning, f"{where}.planning_cov")) if planning else None
    delta = _number(rec, "delta", where)
    try:
        design = DesignSpec(delta=delta, gamma=rec.get("gamma", "1:1"),
                            alpha=_number(rec, "alpha", where, 0.05),
                            beta=1.0 - _number(rec, "power", where, 0.8),
                            c=true_cov.c)
        n_override = rec.get("n_override")
        return ScenarioSpec(
            true_delta=_number(rec, "true_delta", where, delta),
            true_cov=true_cov,
            design=design,
            planning_cov=planning_cov,
            mode=rec.get("mode", "recalc"),
            tau=_number(rec, "tau", where, 0.5),
            k_bound=_number(rec, "k_bound", where, 4.0),
            n_sim=int(_number(rec, "n_sim", where, 100_000)),
            seed=int(_number(rec, "seed", where, 0)),
            n_override=None if n_override is None else int(n_override),
            fixed_method=rec.get("fixed_method", "GS_DF"),
            label=str(rec.get("label", "")),
        )
    except DomainError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def load_batch(path) -> list[ScenarioSpec | AncovaSSRError]:
    """Scenario records from a JSON list (or ``{"scenarios": [...]}``).

    A record that fails to parse yields its exception in place of a spec so
    the rest of the batch can still run.
    """
    data = _load_json(path)
    if isinstance(data, dict):
        data = data.get("scenarios")
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a list of scenario records")
    out: list[ScenarioSpec | AncovaSSRError] = []
    for i, rec in enumerate(data):
        try:
            out.append(scenario_from_record(rec, f"{path}[{i}]"))
        except AncovaSSRError as exc:
            out.append(exc)
    return out


RESULT_COLUMNS = [
    "index", "label", "mode", "fingerprint", "seed", "n_sim",
    "rejection_rate", "rejection_se", "mean_final_n", "max_final_n", "min_final_n",
    "mean_sigma_tau_sq", "n_sim_completed", "n_init", "error",
]

FIGURE_COLUMNS = ["label", "recalc_power", "oracle_power", "exact_n", "target"]


def result_row(index: int, spec: ScenarioSpec | None, result: ScenarioResult | None,
               error: str = "") -> dict:
    row = dict.fromkeys(RESULT_COLUMNS, "")
    row["index"] = index
    row["error"] = error
    if spec is not None:
        row.update(label=spec.label, mode=spec.mode, fingerprint=spec.fingerprint(),
                   seed=spec.seed, n_sim=spec.n_sim)
    if result is not None:
        for key, value in result.__dict__.items():
            row[key] = value
    return row


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(fh, columns: list[str], rows: Iterable[dict], meta: str) -> None:
    """Header row, data rows, then one ``#`` metadata line with the package version."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(col, "")) for col in columns])
    fh.write(f"# ancova-ssr {__version__} {meta}\n")


def write_csv_file(path, columns, rows, meta) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        write_csv(fh, columns, rows, meta)
