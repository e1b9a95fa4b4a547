"""Acceptance criteria at desk scale (1e5 simulated trials per scenario).

Each test carries a ``criterion`` marker; conftest prints one PASS/FAIL line
per criterion at the end of the run. Monte Carlo results are cached so that
criteria sharing a scenario simulate it once.
"""

import io
import itertools
import json
import zlib
import warnings
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from ancova_ssr.ancova import TrialDataset, fit_ancova
from ancova_ssr.cli import main
from ancova_ssr.design import DesignSpec, JointCovariance, RSquaredWarning, check_feasibility, r_squared_from_covariance
from ancova_ssr.recalc import RecalcConfig, recalculated_size
from ancova_ssr.simulation import ScenarioSpec, exact_size_search, mc_power_oracle, simulate
from ancova_ssr.sizing import n_basic, n_df, n_gs, size

pytestmark = pytest.mark.acceptance

N_SIM = 100_000
DELTAS = (0.25, 0.5, 0.75)
SIGMAS = ((0.25, 0.25), (0.5, 0.5), (0.75, 0.75), (0.25, 0.5), (0.25, 0.75), (0.5, 0.75))
RHOS = (0.25, 0.5, 0.75)
BASELINE = list(itertools.product(DELTAS, SIGMAS, RHOS))


def _seed(*key) -> int:
    # distinct, reproducible seed per scenario key
    return zlib.crc32(repr(key).encode())


@lru_cache(maxsize=None)
def scenario(delta, sigma_yz, rho, gamma=1, true_delta=None, plan_rho=None, mode="recalc"):
    true = JointCovariance.exchangeable(list(sigma_yz), rho)
    plan = None if plan_rho is None else JointCovariance.exchangeable(list(sigma_yz), plan_rho)
    return ScenarioSpec(
        true_delta=delta if true_delta is None else true_delta,
        true_cov=true,
        design=DesignSpec(delta=delta, gamma=gamma, c=len(sigma_yz)),
        planning_cov=plan,
        mode=mode,
        n_sim=N_SIM,
        seed=_seed(delta, sigma_yz, rho, gamma, true_delta, plan_rho),
    )


@lru_cache(maxsize=None)
def recalc_result(delta, sigma_yz, rho):
    return simulate(scenario(delta, sigma_yz, rho))


@lru_cache(maxsize=None)
def exact_size(delta, sigma_yz, rho):
    return exact_size_search(scenario(delta, sigma_yz, rho))


def _detail(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.mark.criterion(1, "case-study recalculated sizes")
def test_case_study_quadruple(request):
    cfg = RecalcConfig(DesignSpec(delta=4.0, alpha=0.05, beta=0.1, c=1), 100.0, 0.0)
    got = [recalculated_size(s, cfg) for s in (99.35, 96.99, 80.42, 77.43)]
    _detail(request, f"sizes {got}")
    assert got == [264, 258, 214, 206]


@pytest.mark.criterion(2, "infeasible covariance pitfall")
def test_pitfall(request):
    bad = JointCovariance(1.0, [0.7, 0.7], [[1.0, -0.3], [-0.3, 1.0]])
    ok = JointCovariance(1.0, [0.5, 0.5], [[1.0, -0.3], [-0.3, 1.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RSquaredWarning)
        r_bad = r_squared_from_covariance(bad)
    r_ok = r_squared_from_covariance(ok)
    report = check_feasibility(bad)
    _detail(request, f"R2 {r_bad:.6f} and {r_ok:.6f}, psd={report.is_psd}")
    assert round(r_bad, 3) == 1.4 and round(r_ok, 3) == 0.714
    assert not report.is_psd
    assert check_feasibility(ok).is_psd


@pytest.mark.criterion(3, "R2 values of the simulation grid")
def test_r_squared_grid(request):
    values = {round(r_squared_from_covariance(JointCovariance.exchangeable(list(s), r)), 3)
              for s, r in itertools.product(SIGMAS, RHOS)}
    expected = {0.071, 0.083, 0.100, 0.250, 0.267, 0.286, 0.333, 0.400, 0.567,
                0.571, 0.583, 0.643, 0.667, 0.750, 0.786, 0.900}
    _detail(request, f"{len(values)} distinct values")
    assert values == expected


@pytest.mark.criterion(4, "degrees-of-freedom identity and ordering")
def test_df_identity(request):
    rng = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    while checked < 10_000:
        c = int(rng.integers(0, 6))
        spec = DesignSpec(delta=rng.uniform(0.1, 2.0), gamma=int(rng.integers(1, 4)),
                          alpha=rng.uniform(0.01, 0.2), beta=rng.uniform(0.05, 0.5), c=c)
        sigma_sq, r_sq = rng.uniform(0.1, 10.0), rng.uniform(0.0, 0.95)
        na = n_basic(spec, sigma_sq, r_sq)
        if na <= 2 + c:
            continue
        checked += 1
        worst = max(worst, abs(n_df(spec, sigma_sq, r_sq) - (na + c + (c * c + 2 * c) / (na - 2 - c))))
    ordering = all(
        n_df(s, 1.0, r) > n_gs(s, 1.0, r)
        for c in range(2, 7)
        for d in np.linspace(0.1, 2.0, 40)
        for r in (0.0, 0.3, 0.6, 0.9)
        for s in [DesignSpec(delta=float(d), c=c)]
        if n_basic(s, 1.0, r) > 2 + c
    )
    _detail(request, f"max deviation {worst:.2e}, df > gs for c >= 2: {ordering}")
    assert worst <= 1e-9 and ordering


def _full_model_t(data):
    n = data.y.size
    x = np.column_stack([np.ones(n), (data.group == 1).astype(float), data.z])
    xtx = x.T @ x
    beta = np.linalg.solve(xtx, x.T @ data.y)
    resid = data.y - x @ beta
    return beta[1] / np.sqrt(resid @ resid / (n - x.shape[1]) * np.linalg.inv(xtx)[1, 1])


@pytest.mark.criterion(5, "ANCOVA t equals full linear model t")
def test_statistic_equivalence(request):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(1000):
        c = 1 + i % 3
        n1, n2 = (int(v) for v in rng.integers(c + 3, 60, size=2))
        a = rng.normal(size=(c + 1, c + 1))
        x = rng.multivariate_normal(np.zeros(c + 1), a @ a.T + 0.1 * np.eye(c + 1), size=n1 + n2)
        x[:n1, 0] += rng.normal()
        data = TrialDataset(np.r_[np.ones(n1), np.full(n2, 2)], x[:, 0], x[:, 1:])
        worst = max(worst, abs(fit_ancova(data).t_stat - _full_model_t(data)))
    _detail(request, f"max |diff| {worst:.2e}")
    assert worst <= 1e-10


TYPE_ONE = [(0.5, (0.5, 0.5), 0.5), (0.25, (0.25, 0.75), 0.25), (0.75, (0.75, 0.75), 0.75)]


@pytest.mark.criterion(6, "type I error of the recalculation design")
def test_type_one_error(request):
    rates = [simulate(scenario(d, s, r, true_delta=0.0)).rejection_rate for d, s, r in TYPE_ONE]
    _detail(request, "levels " + ", ".join(f"{p:.5f}" for p in rates))
    assert all(abs(p - 0.025) <= 0.0045 for p in rates)


@pytest.mark.criterion(7, "recalculation power when exact N >= 30")
def test_power_balanced(request):
    powers = {}
    for key in BASELINE:
        if exact_size(*key).n_total >= 30:
            powers[key] = recalc_result(*key).rejection_rate
    bad = {k: p for k, p in powers.items() if not 0.786 <= p <= 0.814}
    values = list(powers.values())
    _detail(request, f"{len(values)} scenarios, power {min(values):.5f} to {max(values):.5f}"
            + (f", outside: {bad}" if bad else ""))
    assert not bad


@pytest.mark.criterion(8, "unbalanced allocation power")
def test_power_unbalanced(request):
    powers = {(d, s): simulate(scenario(d, s, 0.5, gamma=2)).rejection_rate
              for d, s in itertools.product(DELTAS, SIGMAS)}
    bad = {k: p for k, p in powers.items() if p < 0.79}
    _detail(request, f"{len(powers)} scenarios, min power {min(powers.values()):.5f}"
            + (f", below: {bad}" if bad else ""))
    assert not bad


@pytest.mark.criterion(9, "sample-size overhead versus exact N")
def test_overhead(request):
    overhead = {key: recalc_result(*key).mean_final_n - exact_size(*key).n_total for key in BASELINE}
    bad = {k: round(v, 2) for k, v in overhead.items() if not 3 <= v <= 10}
    values = list(overhead.values())
    _detail(request, f"mean {np.mean(values):.2f}, range {min(values):.2f} to {max(values):.2f}"
            + (f", outside: {bad}" if bad else ""))
    assert not bad


@pytest.mark.criterion(10, "three-covariate scenario power")
def test_three_covariates(request):
    # compound symmetry at 0.5, and the banded variant with Cov(Z1, Z3) = 0.25
    layouts = {
        "exchangeable": [[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]],
        "banded": [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]],
    }
    powers = {}
    for name, sigma_z in layouts.items():
        jc = JointCovariance(1.0, [0.75, 0.75, 0.5], sigma_z)
        spec = ScenarioSpec(0.75, jc, DesignSpec(delta=0.75, c=3), n_sim=N_SIM, seed=_seed("c3", name))
        powers[name] = simulate(spec).rejection_rate
    _detail(request, ", ".join(f"{k} power {v:.5f}" for k, v in powers.items()))
    assert all(0.75 <= p <= 0.79 for p in powers.values())


MISSPEC = [(0.25, 0.75), (0.75, 0.25)]


@pytest.mark.criterion(11, "recalculation beats fixed design under misspecification")
def test_misspecification(request):
    rows = []
    for (plan_rho, true_rho), s in itertools.product(MISSPEC, SIGMAS):
        spec = scenario(0.5, s, true_rho, plan_rho=plan_rho)
        recalc = simulate(spec).rejection_rate
        fixed = simulate(replace(spec, mode="fixed")).rejection_rate
        rows.append((plan_rho, true_rho, s, recalc, fixed))
    bad = [r for r in rows if not abs(r[3] - 0.8) < abs(r[4] - 0.8)]
    _detail(request, f"{len(rows) - len(bad)}/{len(rows)} scenarios" + (f", failing: {bad}" if bad else ""))
    assert not bad


@pytest.mark.criterion(12, "oracle power at the combined-adjustment size")
def test_gs_df_power(request):
    powers = {}
    for key in BASELINE:
        spec = scenario(*key)
        n = size(spec.design, 1.0, r_squared_from_covariance(spec.true_cov), "GS_DF").n_total
        powers[key] = mc_power_oracle(n, spec)[0]
    bad = {k: p for k, p in powers.items() if p < 0.79}
    _detail(request, f"{len(powers)} scenarios, min power {min(powers.values()):.5f}"
            + (f", below: {bad}" if bad else ""))
    assert not bad


@pytest.mark.criterion(13, "simulate output independent of worker count")
def test_worker_determinism(request, tmp_path):
    batch = [
        {"label": "recalc", "delta": 0.5, "n_sim": 20_000, "seed": 11,
         "true_cov": {"exchangeable": {"sigma_yz": [0.5, 0.75], "rho_z": 0.25}}},
        {"label": "fixed", "mode": "fixed", "delta": 0.5, "gamma": "2:1", "n_sim": 20_000, "seed": 12,
         "true_cov": {"exchangeable": {"sigma_yz": [0.5, 0.5], "rho_z": 0.5}}},
        {"label": "null", "delta": 0.75, "true_delta": 0.0, "n_sim": 20_000, "seed": 13,
         "true_cov": {"exchangeable": {"sigma_yz": [0.75, 0.75], "rho_z": 0.75}}},
    ]
    path = tmp_path / "batch.json"
    path.write_text(json.dumps(batch))
    outputs = {}
    for workers in (1, 4, 8):
        target = tmp_path / f"out{workers}.csv"
        assert main(["simulate", str(path), "-o", str(target), "--workers", str(workers)], out=io.StringIO()) == 0
        outputs[workers] = target.read_bytes()
    identical = outputs[1] == outputs[4] == outputs[8]
    _detail(request, f"byte-identical across 1/4/8 workers: {identical}")
    assert identical
