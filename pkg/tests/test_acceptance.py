"""Release gates, one test per numbered line of the acceptance list.

Each test checks one gate at its stated tolerance, so pytest -v prints one
pass or fail line per gate. The Monte Carlo gates run at desk scale with
frozen seeds; their bands were sized so that seed luck is not load bearing.
Gate 7 states a support-recovery target the finite-sample fits do not reach;
that test is expected to fail and reports the measured rates in its message
(see the README section on known failing gates).
"""

import time

import numpy as np
import numpy.testing as npt

from conftest import (brute_psi_stats, brute_theta_stats, random_spd,
                      random_stationary_q, trapezoid_lyapunov)
from grou.estimators import (apply_network_mask_clt, psi_clt_covariance, psi_mle,
                             q_mle_matrix, theta_mle)
from grou.graphs import Graph, ThetaParams, complete, erdos_renyi, q_from_theta, ring, row_normalize, vec
from grou.harness import ExperimentConfig, replicate_seed, rmse_slope, run_experiment, save_mc_report
from grou.lasso import LassoConfig, adaptive_lasso_fit
from grou.likelihood import ContinuousPartOptions, compute_psi_stats, compute_theta_stats
from grou.simulate import (CompoundPoissonSpec, JumpSizeSampler, LevyDriverSpec,
                           SamplePath, lyapunov_stationary_cov, save_path_csv, simulate_grou)
from grou.stochvol import (MatrixSubordinatorSpec, PsouSpec, RankOneJumpSampler,
                           TimeChangeSpec, autocovariance_norms, conditional_estimate,
                           fit_decay_envelope, simulate_vol_modulated)

THETA = ThetaParams(0.3, 1.0)


def _driver(d, jumps=None):
    return LevyDriverSpec(drift=np.zeros(d), sigma=np.eye(d), jumps=jumps)


def _gaussian_jumps(d, rate=1.0, var=4.0):
    sampler = JumpSizeSampler("gaussian", {"mean": np.zeros(d), "cov": var * np.eye(d)})
    return CompoundPoissonSpec(rate=rate, sampler=sampler)


def test_criterion_1_closed_form_statistics_and_defining_systems():
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    for rep in range(50):
        d = (2, 3, 4)[rep % 3]
        graph = ring(d)
        dt = float(rng.uniform(0.1, 1.0))
        path = SamplePath(dt * np.arange(3), rng.standard_normal((3, d)))
        sigma = random_spd(rng, d)
        ts = compute_theta_stats(path, graph, sigma)
        h_ref, h_quad_ref = brute_theta_stats(path, graph, sigma)
        npt.assert_allclose(ts.h, h_ref, rtol=1e-12, atol=1e-14)
        npt.assert_allclose(ts.h_quad, h_quad_ref, rtol=1e-12, atol=1e-14)
        ps = compute_psi_stats(path, sigma)
        i_ref, k_ref = brute_psi_stats(path, sigma)
        npt.assert_allclose(ps.i_vec, i_ref, rtol=1e-12, atol=1e-14)
        npt.assert_allclose(ps.k, k_ref, rtol=1e-12, atol=1e-14)
        est = theta_mle(ts).estimate
        npt.assert_allclose(ts.h_quad @ est, ts.h, rtol=1e-10, atol=1e-12)
        if d == 2:
            # two grid intervals make the d^2 system nonsingular only at d=2
            psi_hat = psi_mle(ps).estimate
            npt.assert_allclose(ps.i_quad() @ psi_hat, ps.i_vec, rtol=1e-10, atol=1e-12)
    for rep in range(20):
        d = 3 + rep % 2
        path = SamplePath(0.2 * np.arange(11), rng.standard_normal((11, d)))
        sigma = random_spd(rng, d)
        ps = compute_psi_stats(path, sigma)
        psi_hat = psi_mle(ps).estimate
        npt.assert_allclose(ps.i_quad() @ psi_hat, ps.i_vec, rtol=1e-10, atol=1e-12)
    assert time.perf_counter() - start < 1.0


def test_criterion_2_stationary_covariance_matches_quadrature():
    rng = np.random.default_rng(23)
    start = time.perf_counter()
    for _ in range(100):
        d = int(rng.integers(1, 9))
        q = random_stationary_q(rng, d)
        sigma = random_spd(rng, d)
        ref = trapezoid_lyapunov(q, sigma, n_nodes=2 ** 14)
        npt.assert_allclose(lyapunov_stationary_cov(q, sigma), ref,
                            rtol=0.0, atol=1e-8 * np.max(np.abs(ref)))
    assert time.perf_counter() - start < 10.0


def test_criterion_3_information_matrix_reaches_its_ergodic_limit():
    start = time.perf_counter()
    report = run_experiment(ExperimentConfig(
        scenario="ergodic_limits", graph=ring(4), theta=THETA, driver=_driver(4),
        horizons=(50.0, 200.0, 800.0), dt=0.01, replicates=100, seed=301))
    medians = [report.tables[h].ergodic_errors["median"] for h in (50.0, 200.0, 800.0)]
    assert medians[0] > medians[1] > medians[2]
    assert medians[-1] <= 0.10
    assert time.perf_counter() - start < 300.0


def test_criterion_4_two_scalar_estimator_obeys_its_limit_law():
    start = time.perf_counter()
    report = run_experiment(ExperimentConfig(
        scenario="theta_clt", graph=ring(4), theta=THETA, driver=_driver(4),
        horizons=(200.0, 400.0, 800.0), dt=0.01, replicates=500, seed=401))
    table = report.tables[800.0]
    rel = np.linalg.norm(table.emp_cov - table.target_cov) / np.linalg.norm(table.target_cov)
    assert rel <= 0.15
    assert np.all(table.coverage["95"] >= 0.92) and np.all(table.coverage["95"] <= 0.98)
    assert table.mahalanobis_pvalue >= 0.01
    slopes = rmse_slope(report)
    assert np.all(slopes >= -0.65) and np.all(slopes <= -0.35)
    assert time.perf_counter() - start < 900.0


def test_criterion_5_entrywise_estimator_obeys_its_limit_law():
    start = time.perf_counter()
    q_true = q_from_theta(complete(3), THETA).matrix
    report = run_experiment(ExperimentConfig(
        scenario="psi_clt", graph=complete(3), psi=vec(q_true), driver=_driver(3),
        horizons=(800.0,), dt=0.01, replicates=500, seed=501))
    table = report.tables[800.0]
    rel = np.linalg.norm(table.emp_cov - table.target_cov) / np.linalg.norm(table.target_cov)
    assert rel <= 0.20
    # the masked limit law zeroes exactly the rows and columns of absent edges
    line = Graph(np.array([[0.0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    masked = apply_network_mask_clt(psi_clt_covariance(q_from_theta(line, THETA).matrix,
                                                       np.eye(3)), line)
    dead = np.flatnonzero(vec(np.eye(3) + row_normalize(line)) == 0.0)
    assert dead.size > 0
    npt.assert_array_equal(masked[dead, :], 0.0)
    npt.assert_array_equal(masked[:, dead], 0.0)
    assert time.perf_counter() - start < 900.0


def test_criterion_6_jump_filtering_preserves_the_limit_law():
    driver = _driver(4, jumps=_gaussian_jumps(4))
    oracle = run_experiment(ExperimentConfig(
        scenario="theta_clt", graph=ring(4), theta=THETA, driver=driver,
        horizons=(800.0,), dt=0.01, replicates=500, seed=601,
        filter_opts=ContinuousPartOptions(mode="oracle")))
    cov = oracle.tables[800.0].coverage["95"]
    assert np.all(cov >= 0.92) and np.all(cov <= 0.98)
    threshold = run_experiment(ExperimentConfig(
        scenario="theta_clt", graph=ring(4), theta=THETA, driver=driver,
        horizons=(800.0,), dt=0.001, replicates=300, seed=602,
        filter_opts=ContinuousPartOptions(mode="threshold", threshold_c=5.0,
                                          threshold_exponent=0.49)))
    table = threshold.tables[800.0]
    assert table.filter_confusion["recall"] >= 0.95
    assert np.all(table.coverage["95"] >= 0.90) and np.all(table.coverage["95"] <= 0.99)


def test_criterion_7_penalized_fit_recovers_the_support():
    start = time.perf_counter()
    graph = erdos_renyi(10, 0.2, seed=2024)
    q_true = q_from_theta(graph, THETA).matrix
    horizons = (200.0, 500.0, 1000.0)
    report = run_experiment(ExperimentConfig(
        scenario="lasso_oracle", graph=graph, theta=THETA, driver=_driver(10),
        horizons=horizons, dt=0.01, replicates=100, seed=701,
        lasso=LassoConfig(gamma=1.0, lambda_schedule=(1.0, 0.6))))
    assert all(report.tables[h].kkt_all for h in horizons)
    rates = [report.tables[h].support["exact_rate"] for h in horizons]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    path = simulate_grou(q_true, _driver(10), 200.0, 0.01, replicate_seed(701, 0))
    unpenalized = adaptive_lasso_fit(compute_psi_stats(path, np.eye(10)),
                                     LassoConfig(lambda_fixed=0.0))
    npt.assert_allclose(unpenalized.q_matrix, q_mle_matrix(path, np.eye(10)), atol=1e-8)
    assert time.perf_counter() - start < 1800.0
    assert rates[-1] >= 0.8, (
        f"exact support recovery at T=1000 is {rates[-1]:.2f} "
        f"(rates {[round(r, 2) for r in rates]} over T in {tuple(int(h) for h in horizons)}, "
        f"true-edge hit rate {report.tables[horizons[-1]].support['mean_tpr']:.2f}); "
        "the t^-0.6 penalty still sits above the weakest true edges (size about 0.1) "
        "at these horizons, so some are thresholded away on most replicates; "
        "see the README section on known failing gates")


def test_criterion_8_conditional_fit_under_stochastic_covariance():
    q = q_from_theta(ring(3), THETA).matrix
    v = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.2], [0.2, 0.0, 1.0]])
    psou = PsouSpec(v, MatrixSubordinatorSpec(0.4 * np.eye(3), 2.0,
                                              RankOneJumpSampler("exponential", {"mean": 0.5})))
    truth = THETA.as_array()
    hits = np.zeros(2)
    min_eig = np.inf
    n_reps = 300
    for rep in range(n_reps):
        path = simulate_vol_modulated(q, psou, TimeChangeSpec(), None, 800.0, 0.01,
                                      replicate_seed(801, rep))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(path.sigma_path).min()))
        fit = conditional_estimate(path, ring(3), kind="theta")
        hits += np.abs(fit.estimate - truth) <= fit.ci_halfwidths
    coverage = hits / n_reps
    assert np.all(coverage >= 0.91) and np.all(coverage <= 0.99)
    assert min_eig >= -1e-10
    lags = np.array([10, 40, 80, 120, 160, 200])
    fit = fit_decay_envelope(lags * 0.01, autocovariance_norms(path.values, lags))
    assert fit.r_squared >= 0.9


def test_criterion_9_reruns_produce_byte_identical_artifacts(tmp_path):
    cfg = ExperimentConfig(scenario="theta_clt", graph=ring(2), theta=THETA,
                           driver=_driver(2), horizons=(2.0, 4.0), dt=0.01,
                           replicates=3, seed=91)
    first = save_mc_report(run_experiment(cfg), tmp_path / "a")
    second = save_mc_report(run_experiment(cfg), tmp_path / "b")
    assert [f.split("/")[-1] for f in first] == [f.split("/")[-1] for f in second]
    for f1, f2 in zip(first, second):
        assert open(f1, "rb").read() == open(f2, "rb").read()
    q = q_from_theta(ring(2), THETA).matrix
    for name in ("p1.csv", "p2.csv"):
        save_path_csv(simulate_grou(q, _driver(2), 5.0, 0.01, seed=17), tmp_path / name)
    assert (tmp_path / "p1.csv").read_bytes() == (tmp_path / "p2.csv").read_bytes()
