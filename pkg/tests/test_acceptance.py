"""Acceptance criteria 1-11 at their stated tolerances.

Each test records a PASS/FAIL line through ``conftest.criterion``; the lines are
printed in the pytest terminal summary. The simulation fleets are module-scoped
fixtures so criteria 6 and 10 can sweep every trace produced here.
"""
import time

import numpy as np
import pytest

from conftest import criterion
from mnlbandits.cli import main as cli_main
from mnlbandits.core import batch_link_gradient, batch_probabilities, kron, link_gradient, probabilities
from mnlbandits.design import build_scaled_sets, g_optimal
from mnlbandits.estimation import (Interactions, fit_mle, mle_residual, nll_gradient, nll_hessian, nll_loss,
                                   optimal_hessian)
from mnlbandits.harness import experiment_spec, make_environment, run_experiment, successful
from mnlbandits.harness.experiments import BMNL_PRESET, RS_PRESET
from mnlbandits.policies import AlgorithmConfig, batch_schedule

GRID = (1000, 2500, 4500)
N_SEEDS = 10


def rel_err(num, exact):
    return float(np.max(np.abs(num - exact)) / max(1.0, float(np.max(np.abs(exact)))))


def random_instance(rng, max_n=500):
    K, d, n = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, max_n + 1))
    arms = rng.normal(size=(n, d))
    arms *= rng.uniform(0.05, 1.0, (n, 1)) / np.linalg.norm(arms, axis=1, keepdims=True)
    theta = rng.normal(size=K * d)
    theta *= rng.uniform(0.1, 3.0) / np.linalg.norm(theta)
    z, z0 = batch_probabilities(arms, theta)
    u = rng.random(n)[:, None]
    y = (u > np.cumsum(np.hstack([z0[:, None], z]), axis=1)).sum(axis=1)
    return K, d, arms, theta, Interactions(arms, np.minimum(y, K), K)


def mean_total(traces):
    return float(np.mean([t.total_regret for t in traces]))


def ratio(by_T, lo=1000, hi=4500):
    return (mean_total(by_T[hi]) / hi) / (mean_total(by_T[lo]) / lo)


def timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def all_ok(results):
    traces = successful(results)
    assert len(traces) == len(results), [r for r in results if r not in traces]
    return traces


# ---------------------------------------------------------------- fleets

@pytest.fixture(scope="module")
def fleet_c5():
    cfg = AlgorithmConfig(c_gamma=1.0, kappa=None, record_hessians=True)
    return timed(lambda: all_ok(run_experiment("rsmnl", experiment_spec(2, seed=0), 1000, cfg, 20, master_seed=5)))


@pytest.fixture(scope="module")
def fleet_c6():
    return timed(lambda: all_ok(run_experiment("rsmnl", experiment_spec(3, seed=0), 5000, RS_PRESET, N_SEEDS,
                                               master_seed=6)))


@pytest.fixture(scope="module")
def fleet_c7():
    def go():
        spec = experiment_spec(2, seed=0)
        return {alg: {T: all_ok(run_experiment(alg, spec, T, RS_PRESET, N_SEEDS, master_seed=7)) for T in GRID}
                for alg in ("rsmnl", "baseline")}
    return timed(go)


@pytest.fixture(scope="module")
def fleet_c8():
    def go():
        spec = experiment_spec(1, seed=0)
        rs = {T: all_ok(run_experiment("rsmnl", spec, T, RS_PRESET, N_SEEDS, master_seed=8)) for T in (1000, 4500)}
        return spec, rs
    return timed(go)


@pytest.fixture(scope="module")
def fleet_c9():
    def go():
        spec = experiment_spec(2, seed=0)
        theory = all_ok(run_experiment("bmnl", spec, 4500, AlgorithmConfig(), N_SEEDS, master_seed=9, M=3))
        preset = {T: all_ok(run_experiment("bmnl", spec, T, BMNL_PRESET, N_SEEDS, master_seed=9, M=3))
                  for T in (1000, 4500)}
        return theory, preset
    return timed(go)


# ---------------------------------------------------------------- 1-4: numerical building blocks

def test_criterion_01_mle_first_order_condition():
    with criterion(1, "MLE first-order residual <= 1e-8 on 100 instances, < 30 s") as info:
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(100):
            _, _, _, _, data = random_instance(rng)
            lam = float(rng.uniform(0.1, 5.0))
            fit = fit_mle(data, lam)  # raises ConvergenceError if Newton stalls
            worst = max(worst, mle_residual(fit, data, lam))
        elapsed = time.perf_counter() - start
        info.update(worst_residual=f"{worst:.1e}", seconds=round(elapsed, 1))
        assert worst <= 1e-8
        assert elapsed < 30


def test_criterion_02_derivative_checks():
    with criterion(2, "gradient/Hessian/link derivatives vs finite differences, 100 instances each") as info:
        rng = np.random.default_rng(102)
        g_err = h_err = j_err = 0.0
        for _ in range(100):
            K, d, arms, theta, data = random_instance(rng, 200)
            lam = float(rng.uniform(0.1, 3.0))
            th = rng.normal(size=K * d)
            h = 1e-6
            eye = np.eye(K * d)
            num_g = np.array([(nll_loss(th + h * e, data, lam) - nll_loss(th - h * e, data, lam)) / (2 * h)
                              for e in eye])
            g_err = max(g_err, rel_err(num_g, nll_gradient(th, data, lam)))
            num_h = np.array([(nll_gradient(th + h * e, data, lam) - nll_gradient(th - h * e, data, lam)) / (2 * h)
                              for e in eye])
            h_err = max(h_err, rel_err(num_h, nll_hessian(th, data, lam)))
            x = arms[0]
            num_j = np.zeros((K, K))
            for k in range(K):
                tp, tm = th.reshape(K, d).copy(), th.reshape(K, d).copy()
                tp[k] += h * x / (x @ x)
                tm[k] -= h * x / (x @ x)
                num_j[:, k] = (probabilities(x, tp.ravel()).z - probabilities(x, tm.ravel()).z) / (2 * h)
            j_err = max(j_err, rel_err(num_j, link_gradient(x, th)))
        info.update(grad=f"{g_err:.1e}", hess=f"{h_err:.1e}", link=f"{j_err:.1e}")
        assert g_err <= 1e-5 and h_err <= 1e-4 and j_err <= 1e-5


def test_criterion_03_g_optimal_certificate():
    with criterion(3, "G-optimal certificate <= 3.03 on 50 sets within 1000 iterations, < 10 s") as info:
        rng = np.random.default_rng(103)
        start = time.perf_counter()
        worst, iters = 0.0, 0
        for _ in range(50):
            arms = rng.normal(size=(10, 3))
            arms /= np.linalg.norm(arms, axis=1, keepdims=True)
            w = g_optimal(arms, 0.01, 1000)
            worst, iters = max(worst, w.certificate), max(iters, w.iterations)
        elapsed = time.perf_counter() - start
        info.update(worst=round(worst, 4), max_iterations=iters, seconds=round(elapsed, 2))
        assert worst <= 3.03 and iters <= 1000 and elapsed < 10


def test_criterion_04_scaled_set_decomposition():
    with criterion(4, "scaled-set decomposition max abs diff <= 1e-12 on 100 triples") as info:
        rng = np.random.default_rng(104)
        worst = 0.0
        for _ in range(100):
            K, d = int(rng.integers(1, 4)), int(rng.integers(1, 6))
            x = rng.normal(size=(1, d))
            x *= rng.uniform(0.05, 1.0) / np.linalg.norm(x)
            theta = rng.normal(size=K * d) * rng.uniform(0.1, 3.0)
            b = float(np.exp(rng.uniform(0, 9)))
            sets = build_scaled_sets(x, theta, b, K)
            lhs = sum(np.outer(sets[i, 0], sets[i, 0]) for i in range(K))
            z, _ = batch_probabilities(x, theta)
            rhs = kron(batch_link_gradient(z)[0] / b, np.outer(x[0], x[0]))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        info.update(worst=f"{worst:.1e}")
        assert worst <= 1e-12


# ---------------------------------------------------------------- 5-10: simulations

def test_criterion_05_hessian_orderings(fleet_c5):
    traces, seconds = fleet_c5
    with criterion(5, "H <= H* at switch rounds and V~ <= kappa H* on 20 RS traces (c_gamma = 1)") as info:
        env = make_environment(experiment_spec(2, seed=0))
        K, d = env.K, env.d
        worst_h = worst_v = np.inf
        checked = switch_points = 0
        for tr in traces:
            lam, kappa = tr.diagnostics["lam"], tr.diagnostics["kappa"]
            points = dict(tr.diagnostics["switch_hessians"])
            switch_points += len(points)
            points[tr.T + 1] = tr.diagnostics["final_h"]
            for t, h in sorted(points.items()):
                arms = tr.arms_played[: t - 1]
                h_star = optimal_hessian_from_arms(arms, env.theta_star.theta, lam, K)
                v_tilde = np.kron(np.eye(K), lam * np.eye(d) + arms.T @ arms)
                worst_h = min(worst_h, float(np.linalg.eigvalsh(h_star - h).min()))
                worst_v = min(worst_v, float(np.linalg.eigvalsh(kappa * h_star - v_tilde).min()))
                checked += 1
        info.update(points=checked, switch_points=switch_points, min_eig_Hstar_minus_H=f"{worst_h:.2e}",
                    min_eig_kappaHstar_minus_V=f"{worst_v:.2e}", kappa_hat=round(traces[0].diagnostics["kappa"], 2),
                    seconds=round(seconds, 1))
        assert worst_h >= -1e-9
        assert worst_v >= -1e-6


def optimal_hessian_from_arms(arms, theta, lam, K):
    d = arms.shape[1] if arms.size else theta.size // K
    if arms.shape[0] == 0:
        return lam * np.eye(K * d)
    y = np.zeros(arms.shape[0], dtype=int)  # outcomes do not enter the Hessian
    return optimal_hessian(Interactions(arms, y, K), theta, lam).h


def rs_fleet(fleet_c5, fleet_c6, fleet_c7, fleet_c8):
    out = list(fleet_c5[0]) + list(fleet_c6[0])
    out += [t for T in GRID for t in fleet_c7[0]["rsmnl"][T]]
    out += [t for T in fleet_c8[0][1] for t in fleet_c8[0][1][T]]
    return out


def test_criterion_06_switch_count(fleet_c5, fleet_c6, fleet_c7, fleet_c8):
    traces, seconds = fleet_c6
    with criterion(6, "switches <= Kd log2(1 + t/(lam d)) on every RS trace; T=5000 count and log growth") as info:
        worst_margin = np.inf
        fleet = rs_fleet(fleet_c5, fleet_c6, fleet_c7, fleet_c8)
        for tr in fleet:
            K = tr.provenance["environment"]["K"]
            d = tr.provenance["environment"]["d"]
            t = np.arange(1, tr.T + 1)
            bound = K * d * np.log2(1 + t / (tr.diagnostics["lam"] * d))
            worst_margin = min(worst_margin, float(np.min(bound - tr.cum_switches)))
        s = np.array([[tr.cum_switches[n - 1] for n in (50, 500, 5000)] for tr in traces], dtype=float)
        mean50, mean500, mean5000 = s.mean(axis=0)
        growth_ok = mean5000 - mean500 <= 2.5 * (mean500 - mean50)
        info.update(traces=len(fleet), min_bound_margin=round(worst_margin, 2), mean_switches_5000=mean5000,
                    increments=f"{mean500 - mean50:.1f}/{mean5000 - mean500:.1f}", seconds=round(seconds, 1))
        assert worst_margin >= 0
        assert np.all(s[:, 2] <= 0.02 * 5000)
        assert growth_ok
        assert seconds < 120


def test_criterion_07_regret_sublinear_and_competitive(fleet_c7):
    runs, seconds = fleet_c7
    with criterion(7, "RS-MNL ratio R(4500)/4500 <= 0.7 R(1000)/1000 and <= 1.5x baseline at every T") as info:
        r = ratio(runs["rsmnl"])
        rel = {T: mean_total(runs["rsmnl"][T]) / mean_total(runs["baseline"][T]) for T in GRID}
        info.update(ratio=round(r, 3), vs_baseline="/".join(f"{rel[T]:.2f}" for T in GRID), seconds=round(seconds, 1))
        assert r <= 0.7
        assert all(v <= 1.5 for v in rel.values())
        assert seconds < 300


def test_criterion_08_logistic_reduction(fleet_c8):
    (spec, rs), seconds = fleet_c8
    with criterion(8, "K=1 pipeline matches a direct sigmoid to 1e-12 and regret is sublinear") as info:
        env = make_environment(spec)
        worst = 0.0
        thetas = [tr.diagnostics["final_theta"] for T in rs for tr in rs[T]] + [env.theta_star.theta]
        for th in thetas:
            z, z0 = batch_probabilities(env.pool, th)
            direct = 1.0 / (1.0 + np.exp(-(env.pool @ th)))
            worst = max(worst, float(np.max(np.abs(z[:, 0] - direct))), float(np.max(np.abs(z0 - (1 - direct)))))
        r = ratio(rs)
        info.update(max_sigmoid_diff=f"{worst:.1e}", ratio=round(r, 3), seconds=round(seconds, 1))
        assert worst <= 1e-12
        assert r <= 0.7
        assert seconds < 180


def test_criterion_09_batched_limited_adaptivity(fleet_c9):
    (theory, preset), seconds = fleet_c9
    with criterion(9, "B-MNL-CB M=3: fits at 67/616/4500, survival >= 95% at c_gamma=1, sublinear") as info:
        want = list(batch_schedule(4500, 3).boundaries)
        fits_ok = all(tr.diagnostics["n_fits"] == 3 and list(tr.diagnostics["fit_rounds"]) == want
                      for tr in theory + preset[4500])
        survival = float(np.mean(np.concatenate([tr.diagnostics["optimal_survived"] for tr in theory])))
        survival_preset = float(np.mean(np.concatenate([tr.diagnostics["optimal_survived"] for tr in preset[4500]])))
        r = ratio(preset)
        info.update(boundaries=want, survival=round(survival, 4), survival_preset=round(survival_preset, 4),
                    ratio=round(r, 3), seconds=round(seconds, 1))
        assert want == [67, 616, 4500] and fits_ok
        assert survival >= 0.95
        assert r <= 0.7
        assert seconds < 300


def test_criterion_10_elliptical_potential(fleet_c5, fleet_c6, fleet_c7, fleet_c8, fleet_c9):
    with criterion(10, "sum ||x_s||^2_{V_s^-1} <= 2d log(1 + t/(lam_V d)) on every trace") as info:
        fleet = rs_fleet(fleet_c5, fleet_c6, fleet_c7, fleet_c8)
        fleet += [t for T in GRID for t in fleet_c7[0]["baseline"][T]]
        theory, preset = fleet_c9[0]
        fleet += list(theory) + [t for T in preset for t in preset[T]]
        worst = np.inf
        for tr in fleet:
            x = tr.arms_played
            d = x.shape[1]
            lam_v = max(1.0, tr.diagnostics["lam"])
            v_inv = np.eye(d) / lam_v
            pot = np.empty(x.shape[0])
            for s, xs in enumerate(x):
                u = v_inv @ xs
                q = float(xs @ u)
                pot[s] = q
                v_inv -= np.outer(u, u) / (1.0 + q)
            t = np.arange(1, x.shape[0] + 1)
            worst = min(worst, float(np.min(2 * d * np.log(1 + t / (lam_v * d)) - np.cumsum(pot))))
        info.update(traces=len(fleet), min_margin=round(worst, 3))
        assert worst >= 0


# ---------------------------------------------------------------- 11: reproducibility

CLI_CONFIG = """\
[experiment]
algorithm = {algorithm}
T = 150, 300
n_seeds = 3
master_seed = 11

[environment]
kind = {kind}
d = 3
K = 3
n_arms = 10
S = 2
R = 2
seed = 0

[algorithm]
preset = experiment
"""


def test_criterion_11_reproducibility(tmp_path):
    with criterion(11, "rerunning a config with the same master seed gives byte-identical trace CSVs") as info:
        compared = 0
        for algorithm, kind in (("rsmnl", "stochastic-resampled"), ("baseline", "adversarial-fresh"),
                                ("bmnl", "stochastic-fixed-pool")):
            cfg = tmp_path / f"{algorithm}.ini"
            cfg.write_text(CLI_CONFIG.format(algorithm=algorithm, kind=kind))
            a, b = tmp_path / f"{algorithm}_a", tmp_path / f"{algorithm}_b"
            assert cli_main(["run", "--config", str(cfg), "--out", str(a)]) == 0
            assert cli_main(["run", "--config", str(cfg), "--out", str(b)]) == 0
            files = sorted(a.rglob("trace_seed*.csv"))
            assert len(files) == 6
            for f in files:
                assert f.read_bytes() == (b / f.relative_to(a)).read_bytes()
                compared += 1
        info.update(files_compared=compared)
