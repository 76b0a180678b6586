"""Replicated Monte Carlo experiments for the estimator limit theorems.

Each replicate simulates one path at the largest horizon and estimates every
shorter horizon on a prefix, so estimates across horizons are coupled the way
the theory couples them. Residuals are standardized two ways: by the observed
information of the replicate and by the analytic target covariance built from
the true parameters, which the harness knows. Aggregation runs single
threaded in replicate order, so a report is a pure function of its config;
the replicate loop itself may fan out over processes when GROU_THREADS asks
for it.
"""

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .errors import ConfigError, NumericError
from .estimators import (_z_quantile, g_infinity, psd_sqrt, psi_clt_covariance,
                         apply_network_mask_clt, psi_mle, theta_mle)
from .graphs import (Graph, PsiParams, ThetaParams, q_from_psi, q_from_theta,
                     row_normalize, vec, vec_inverse)
from .lasso import LassoConfig, adaptive_lasso_fit, support_recovery_score
from .likelihood import ContinuousPartOptions, compute_psi_stats, compute_theta_stats
from .serialize import dump_json, fmt_float, matrix_to_obj, write_csv
from .simulate import JumpMarks, LevyDriverSpec, SamplePath, simulate_grou
from .stochvol import (JumpComponentSpec, PsouSpec, TimeChangeSpec, conditional_stats,
                       simulate_vol_modulated)
from .validation import as_float_array, check_positive

SCENARIO_THETA = "theta_clt"
SCENARIO_PSI = "psi_clt"
SCENARIO_MASKED = "q_masked_clt"
SCENARIO_LASSO = "lasso_oracle"
SCENARIO_CONDITIONAL = "conditional_clt"
SCENARIO_ERGODIC = "ergodic_limits"
SCENARIOS = (SCENARIO_THETA, SCENARIO_PSI, SCENARIO_MASKED, SCENARIO_LASSO,
             SCENARIO_CONDITIONAL, SCENARIO_ERGODIC)

_COVERAGE_LEVELS = (0.90, 0.95, 0.99)
_MIN_NORMALITY_REPS = 50
_FAILURE_TOLERANCE = 0.05
_CHI2_BINS = 10


def thread_count() -> int:
    """Worker count for replicate loops; GROU_THREADS caps it, default 1."""
    env = os.environ.get("GROU_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"GROU_THREADS must be an integer, got {env!r}") from None


def replicate_seed(seed: int, rep: int) -> int:
    """Stable child seed of replicate `rep`; distinct replicates get
    independent counter-based streams regardless of scheduling."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """One replicated experiment: scenario, truth, driver and loop sizes.

    The truth is given as theta for the two-scalar scenarios and as the
    column-stacked psi for the entrywise ones; the lasso scenario accepts
    either and scores support against the implied drift matrix. horizons
    must be increasing multiples of dt.
    """

    scenario: str
    graph: Graph
    theta: ThetaParams | None = None
    psi: np.ndarray | None = None
    driver: LevyDriverSpec | None = None
    horizons: tuple = (50.0, 200.0, 800.0)
    dt: float = 0.01
    replicates: int = 100
    seed: int = 0
    filter_opts: ContinuousPartOptions | None = None
    lasso: LassoConfig | None = None
    psou: PsouSpec | None = None
    clock: TimeChangeSpec | None = None
    jump_component: JumpComponentSpec | None = None
    plug_in: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        horizons = tuple(float(h) for h in self.horizons)
        if not horizons:
            raise ConfigError("at least one horizon is required")
        if any(h <= 0 for h in horizons) or any(b <= a for a, b in zip(horizons, horizons[1:])):
            raise ConfigError("horizons must be positive and strictly increasing")
        dt = check_positive(self.dt, "dt")
        for h in horizons:
            if abs(round(h / dt) * dt - h) > 1e-8 * max(1.0, h):
                raise ConfigError(f"horizon {h:g} is not a multiple of dt {dt:g}")
        if int(self.replicates) < 2:
            raise ConfigError("an experiment needs at least 2 replicates")
        object.__setattr__(self, "horizons", horizons)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "replicates", int(self.replicates))
        object.__setattr__(self, "seed", int(self.seed))
        if self.psi is not None:
            psi = as_float_array(self.psi, "psi")
            psi.setflags(write=False)
            object.__setattr__(self, "psi", psi)
        needs_theta = self.scenario in (SCENARIO_THETA, SCENARIO_ERGODIC, SCENARIO_CONDITIONAL)
        if needs_theta and self.theta is None:
            raise ConfigError(f"scenario {self.scenario} needs theta")
        if self.scenario in (SCENARIO_PSI, SCENARIO_MASKED) and self.psi is None:
            raise ConfigError(f"scenario {self.scenario} needs psi")
        if self.scenario == SCENARIO_LASSO and self.theta is None and self.psi is None:
            raise ConfigError("the lasso scenario needs theta or psi")
        if self.scenario == SCENARIO_CONDITIONAL:
            if self.psou is None:
                raise ConfigError("the conditional scenario needs a covariance process spec")
        elif self.driver is None:
            raise ConfigError(f"scenario {self.scenario} needs a driver")
        if self.scenario == SCENARIO_LASSO and self.lasso is None:
            object.__setattr__(self, "lasso", LassoConfig())


@dataclass(eq=False)
class HorizonTable:
    """Aggregates of one horizon: errors, covariances, coverage and tests.

    Fields that do not apply to a scenario stay None; the JSON export keeps
    every key so table shapes are stable across scenarios.
    """

    horizon: float
    n_ok: int
    n_failed: int
    runtime: float
    bias: np.ndarray | None = None
    rmse: np.ndarray | None = None
    emp_cov: np.ndarray | None = None
    target_cov: np.ndarray | None = None
    coverage: dict | None = None
    ks_pvalues: np.ndarray | None = None
    mahalanobis_pvalue: float | None = None
    std_cov_info: np.ndarray | None = None
    std_cov_target: np.ndarray | None = None
    support: dict | None = None
    kkt_all: bool | None = None
    ergodic_errors: dict | None = None
    filter_confusion: dict | None = None


@dataclass(eq=False)
class McReport:
    """Full experiment outcome: per-horizon tables plus failure records.

    raw keeps the per-replicate payloads in memory for follow-up analysis;
    it is never serialized.
    """

    scenario: str
    seed: int
    replicates: int
    horizons: tuple
    dt: float
    tables: dict
    failures: list
    raw: dict = field(default_factory=dict, repr=False)


def _prefix(path: SamplePath, n_steps: int) -> SamplePath:
    """Restriction of a path to its first n_steps grid intervals."""
    if n_steps == path.n_steps:
        return path
    marks = None
    if path.jump_marks is not None:
        keep = path.jump_marks.indices < n_steps
        if np.any(keep):
            marks = JumpMarks(path.jump_marks.indices[keep], path.jump_marks.sizes[keep])
    sig = None if path.sigma_path is None else path.sigma_path[:n_steps + 1]
    return SamplePath(path.times[:n_steps + 1], path.values[:n_steps + 1],
                      jump_marks=marks, sigma_path=sig)


def _spd_inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    if w.min() <= 0.0:
        raise NumericError("target covariance is not positive definite")
    return (v / np.sqrt(w)) @ v.T


def _theta_payload(stats, truth: np.ndarray) -> dict:
    report = theta_mle(stats)
    return {"est": report.estimate, "std": report.std_errors,
            "z_info": psd_sqrt(stats.h_quad) @ (report.estimate - truth)}


def _replicate_theta(cfg: ExperimentConfig, ctx: dict, rep: int) -> list:
    path = simulate_grou(ctx["q"], cfg.driver, cfg.horizons[-1], cfg.dt,
                         replicate_seed(cfg.seed, rep))
    out = []
    for n_steps in ctx["steps"]:
        t0 = time.perf_counter()
        try:
            stats = compute_theta_stats(_prefix(path, n_steps), cfg.graph,
                                        cfg.driver.sigma, cfg.filter_opts)
            payload = _theta_payload(stats, ctx["truth"])
            if stats.filter_report is not None and stats.filter_report.confusion is not None:
                payload["confusion"] = stats.filter_report.confusion
        except NumericError as exc:
            payload = {"error": str(exc)}
        payload["runtime"] = time.perf_counter() - t0
        out.append(payload)
    return out


def _replicate_psi(cfg: ExperimentConfig, ctx: dict, rep: int) -> list:
    path = simulate_grou(ctx["q"], cfg.driver, cfg.horizons[-1], cfg.dt,
                         replicate_seed(cfg.seed, rep))
    mask_idx = ctx.get("mask_idx")
    out = []
    for n_steps in ctx["steps"]:
        t0 = time.perf_counter()
        try:
            stats = compute_psi_stats(_prefix(path, n_steps), cfg.driver.sigma, cfg.filter_opts)
            report = psi_mle(stats)
            est = report.estimate
            std = report.std_errors
            if mask_idx is None:
                resid = est - ctx["truth"]
                # (k kron inv(sigma))^{1/2} r = vec(sigma^{-1/2} R k^{1/2})
                z_info = vec(ctx["sigma_inv_sqrt"] @ vec_inverse(resid) @ psd_sqrt(stats.k))
            else:
                # masked estimator: entrywise MLE pushed through the weighted
                # mask I + row-normalized adjacency, off-mask entries exact zero
                est = est * ctx["mask_weights"]
                std = std * ctx["mask_weights"]
                resid = (est - ctx["truth"])[mask_idx]
                w_m = ctx["mask_weights"][mask_idx]
                sub = (w_m[:, None] * report.cov_clt[np.ix_(mask_idx, mask_idx)]
                       * w_m[None, :]) / stats.t_end
                z_info = _spd_inv_sqrt(sub) @ resid
            payload = {"est": est, "std": std, "z_info": z_info}
        except NumericError as exc:
            payload = {"error": str(exc)}
        payload["runtime"] = time.perf_counter() - t0
        out.append(payload)
    return out


def _replicate_lasso(cfg: ExperimentConfig, ctx: dict, rep: int) -> list:
    path = simulate_grou(ctx["q"], cfg.driver, cfg.horizons[-1], cfg.dt,
                         replicate_seed(cfg.seed, rep))
    out = []
    for n_steps in ctx["steps"]:
        t0 = time.perf_counter()
        try:
            stats = compute_psi_stats(_prefix(path, n_steps), cfg.driver.sigma, cfg.filter_opts)
            result = adaptive_lasso_fit(stats, cfg.lasso)
            payload = {"est": vec(result.q_matrix), "support": result.support,
                       "kkt": bool(result.kkt["satisfied"])}
        except NumericError as exc:
            payload = {"error": str(exc)}
        payload["runtime"] = time.perf_counter() - t0
        out.append(payload)
    return out


def _replicate_conditional(cfg: ExperimentConfig, ctx: dict, rep: int) -> list:
    clock = cfg.clock if cfg.clock is not None else TimeChangeSpec()
    path = simulate_vol_modulated(ctx["q"], cfg.psou, clock, cfg.jump_component,
                                  cfg.horizons[-1], cfg.dt, replicate_seed(cfg.seed, rep))
    out = []
    for n_steps in ctx["steps"]:
        t0 = time.perf_counter()
        try:
            stats = conditional_stats(_prefix(path, n_steps), graph=cfg.graph,
                                      kind="theta", opts=cfg.filter_opts)
            payload = _theta_payload(stats, ctx["truth"])
        except NumericError as exc:
            payload = {"error": str(exc)}
        payload["runtime"] = time.perf_counter() - t0
        out.append(payload)
    return out


def _replicate_ergodic(cfg: ExperimentConfig, ctx: dict, rep: int) -> list:
    path = simulate_grou(ctx["q"], cfg.driver, cfg.horizons[-1], cfg.dt,
                         replicate_seed(cfg.seed, rep))
    out = []
    for n_steps, horizon in zip(ctx["steps"], cfg.horizons):
        t0 = time.perf_counter()
        try:
            stats = compute_theta_stats(_prefix(path, n_steps), cfg.graph,
                                        cfg.driver.sigma, cfg.filter_opts)
            rel = np.linalg.norm(stats.h_quad / horizon - ctx["g_inf"]) / ctx["g_norm"]
            payload = {"rel_err": float(rel)}
        except NumericError as exc:
            payload = {"error": str(exc)}
        payload["runtime"] = time.perf_counter() - t0
        out.append(payload)
    return out


_WORKERS = {
    SCENARIO_THETA: _replicate_theta,
    SCENARIO_PSI: _replicate_psi,
    SCENARIO_MASKED: _replicate_psi,
    SCENARIO_LASSO: _replicate_lasso,
    SCENARIO_CONDITIONAL: _replicate_conditional,
    SCENARIO_ERGODIC: _replicate_ergodic,
}


def _scenario_context(cfg: ExperimentConfig) -> dict:
    """Truth, drift matrix, targets and grid sizes shared by all replicates."""
    ctx = {"steps": [int(round(h / cfg.dt)) for h in cfg.horizons]}
    if cfg.theta is not None:
        q = q_from_theta(cfg.graph, cfg.theta).matrix
    else:
        q = q_from_psi(cfg.graph, PsiParams(cfg.psi)).matrix
    ctx["q"] = q
    scenario = cfg.scenario
    if scenario in (SCENARIO_THETA, SCENARIO_CONDITIONAL, SCENARIO_ERGODIC):
        ctx["truth"] = cfg.theta.as_array()
    else:
        ctx["truth"] = vec(q)
    ctx["target_cov"] = None
    if scenario in (SCENARIO_THETA, SCENARIO_ERGODIC):
        g = g_infinity(q, cfg.driver.sigma, cfg.graph)
        ctx["g_inf"] = g
        ctx["g_norm"] = float(np.linalg.norm(g))
        if scenario == SCENARIO_THETA:
            ctx["target_cov"] = np.linalg.inv(g)
            ctx["target_inv_sqrt"] = psd_sqrt(g)
    elif scenario in (SCENARIO_PSI, SCENARIO_MASKED):
        pair = psi_clt_covariance(q, cfg.driver.sigma)
        ctx["sigma_inv_sqrt"] = _spd_inv_sqrt(cfg.driver.sigma)
        if scenario == SCENARIO_PSI:
            dense = pair.dense()
            ctx["target_cov"] = dense
            ctx["target_inv_sqrt"] = _spd_inv_sqrt(dense)
        else:
            weights = vec(np.eye(cfg.graph.d) + row_normalize(cfg.graph))
            ctx["mask_weights"] = weights
            ctx["mask_idx"] = np.flatnonzero(weights)
            ctx["truth"] = weights * ctx["truth"]
            ctx["target_cov"] = apply_network_mask_clt(pair, cfg.graph)
    elif scenario == SCENARIO_LASSO:
        ctx["q_true"] = q
    return ctx


def _aggregate(cfg: ExperimentConfig, ctx: dict, horizon: float, payloads: list) -> HorizonTable:
    ok = [p for p in payloads if "error" not in p]
    table = HorizonTable(horizon=horizon, n_ok=len(ok), n_failed=len(payloads) - len(ok),
                         runtime=float(sum(p.get("runtime", 0.0) for p in payloads)))
    if not ok:
        return table
    if cfg.scenario == SCENARIO_ERGODIC:
        rel = np.array([p["rel_err"] for p in ok])
        table.ergodic_errors = {"median": float(np.median(rel)), "mean": float(rel.mean()),
                                "max": float(rel.max())}
        return table
    ests = np.array([p["est"] for p in ok])
    resid = ests - ctx["truth"]
    table.bias = resid.mean(axis=0)
    table.rmse = np.sqrt((resid ** 2).mean(axis=0))
    # second moment about the truth, the quantity the limit law describes
    scaled = math.sqrt(horizon) * resid
    table.emp_cov = scaled.T @ scaled / len(ok)
    table.target_cov = ctx["target_cov"]
    if cfg.scenario == SCENARIO_LASSO:
        scores = [support_recovery_score(p["support"], ctx["q_true"]) for p in ok]
        table.support = {
            "exact_rate": float(np.mean([s["exact_match"] for s in scores])),
            "mean_tpr": float(np.mean([s["tpr"] for s in scores])),
            "mean_fpr": float(np.mean([s["fpr"] for s in scores])),
        }
        table.kkt_all = bool(all(p["kkt"] for p in ok))
        return table
    stds = np.array([p["std"] for p in ok])
    table.coverage = {}
    for level in _COVERAGE_LEVELS:
        zq = _z_quantile(level)
        hit = np.abs(resid) <= zq * stds
        table.coverage[str(int(round(level * 100)))] = hit.mean(axis=0)
    z_info = np.array([p["z_info"] for p in ok])
    table.std_cov_info = z_info.T @ z_info / len(ok)
    z_norm = z_info
    if ctx["target_cov"] is not None:
        mask_idx = ctx.get("mask_idx")
        if mask_idx is not None:
            sub = ctx["target_cov"][np.ix_(mask_idx, mask_idx)]
            z_target = scaled[:, mask_idx] @ _spd_inv_sqrt(sub).T
        else:
            z_target = scaled @ ctx["target_inv_sqrt"].T
        table.std_cov_target = z_target.T @ z_target / len(ok)
        if not cfg.plug_in:
            z_norm = z_target
    if len(ok) >= _MIN_NORMALITY_REPS:
        tests = normality_tests(z_norm)
        table.ks_pvalues = tests["ks_pvalues"]
        table.mahalanobis_pvalue = tests["mahalanobis_chi2_pvalue"]
    if any("confusion" in p for p in ok):
        total = {key: int(sum(p["confusion"][key] for p in ok if "confusion" in p))
                 for key in ("tp", "fp", "fn", "tn")}
        total["recall"] = total["tp"] / max(1, total["tp"] + total["fn"])
        table.filter_confusion = total
    return table


def run_experiment(cfg: ExperimentConfig) -> McReport:
    """Run the replicate loop of one experiment and aggregate its tables.

    Replicates with a numeric failure are recorded rather than fatal; more
    than 5 percent of failed fits aborts the experiment with the collected
    diagnostics.
    """
    ctx = _scenario_context(cfg)
    worker = _WORKERS[cfg.scenario]
    n_jobs = thread_count()
    if n_jobs > 1:
        from joblib import Parallel, delayed
        rows = Parallel(n_jobs=n_jobs)(
            delayed(worker)(cfg, ctx, rep) for rep in range(cfg.replicates))
    else:
        rows = [worker(cfg, ctx, rep) for rep in range(cfg.replicates)]
    tables = {}
    failures = []
    raw = {}
    for pos, horizon in enumerate(cfg.horizons):
        payloads = [rows[rep][pos] for rep in range(cfg.replicates)]
        for rep, payload in enumerate(payloads):
            if "error" in payload:
                failures.append({"horizon": horizon, "replicate": rep,
                                 "message": payload["error"]})
        tables[horizon] = _aggregate(cfg, ctx, horizon, payloads)
        raw[horizon] = payloads
    n_total = cfg.replicates * len(cfg.horizons)
    if len(failures) > _FAILURE_TOLERANCE * n_total:
        raise NumericError(
            f"{len(failures)} of {n_total} replicate fits failed, above the 5 percent "
            f"tolerance; first failure: {failures[0]['message']}")
    return McReport(scenario=cfg.scenario, seed=cfg.seed, replicates=cfg.replicates,
                    horizons=cfg.horizons, dt=cfg.dt, tables=tables, failures=failures,
                    raw=raw)


def rmse_slope(report: McReport) -> np.ndarray:
    """Per-coordinate least-squares slope of log RMSE against log horizon."""
    horizons = [h for h in report.horizons if report.tables[h].rmse is not None]
    if len(horizons) < 3:
        raise ValueError("the slope needs at least three horizons with estimates")
    log_t = np.log(np.asarray(horizons))
    if np.ptp(log_t) <= 0.0:
        raise ValueError("degenerate horizons")
    log_rmse = np.log(np.array([report.tables[h].rmse for h in horizons]))
    design = np.column_stack([np.ones_like(log_t), log_t])
    coef, *_ = np.linalg.lstsq(design, log_rmse, rcond=None)
    return coef[1]


def normality_tests(standardized: np.ndarray) -> dict:
    """Kolmogorov-Smirnov per coordinate and a chi-square test of the squared
    Mahalanobis norms against chi-square(k), on replicate-by-k residuals."""
    z = np.asarray(standardized, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n, k = z.shape
    if n < _MIN_NORMALITY_REPS:
        raise ValueError(f"normality tests need at least {_MIN_NORMALITY_REPS} replicates, got {n}")
    ks = np.array([scipy.stats.kstest(z[:, j], "norm").pvalue for j in range(k)])
    squared = np.sum(z ** 2, axis=1)
    edges = scipy.stats.chi2.ppf(np.linspace(0.0, 1.0, _CHI2_BINS + 1), df=k)
    counts, _ = np.histogram(squared, bins=edges)
    chi2_p = float(scipy.stats.chisquare(counts, f_exp=np.full(_CHI2_BINS, n / _CHI2_BINS)).pvalue)
    return {"ks_pvalues": ks, "mahalanobis_chi2_pvalue": chi2_p}


def _table_to_obj(table: HorizonTable, include_runtime: bool) -> dict:
    def arr(x):
        return None if x is None else x.tolist()

    def mat(x):
        return None if x is None else matrix_to_obj(x)

    obj = {
        "n_ok": table.n_ok,
        "n_failed": table.n_failed,
        "bias": arr(table.bias),
        "rmse": arr(table.rmse),
        "emp_cov": mat(table.emp_cov),
        "target_cov": mat(table.target_cov),
        "coverage": None if table.coverage is None else
            {k: v.tolist() for k, v in table.coverage.items()},
        "ks_pvalues": arr(table.ks_pvalues),
        "mahalanobis_pvalue": table.mahalanobis_pvalue,
        "std_cov_info": mat(table.std_cov_info),
        "std_cov_target": mat(table.std_cov_target),
        "support": table.support,
        "kkt_all": table.kkt_all,
        "ergodic_errors": table.ergodic_errors,
        "filter_confusion": table.filter_confusion,
    }
    if include_runtime:
        obj["runtime"] = table.runtime
    return obj


def mc_report_to_obj(report: McReport, include_runtime: bool = False) -> dict:
    """JSON form of a report; runtimes are left out by default so identical
    configs serialize to identical bytes."""
    return {
        "scenario": report.scenario,
        "seed": report.seed,
        "replicates": report.replicates,
        "dt": report.dt,
        "horizons": list(report.horizons),
        "failures": report.failures,
        "tables": {fmt_float(h): _table_to_obj(report.tables[h], include_runtime)
                   for h in report.horizons},
    }


def save_mc_report(report: McReport, out_dir, stem: str = "mc") -> list:
    """Write the JSON report plus one flat CSV per populated table kind.

    Returns the written paths. The CSVs are plot-ready: one row per horizon
    and coordinate in the summary, one row per matrix entry in the
    covariance file.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def target(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    dump_json(mc_report_to_obj(report), target(f"{stem}_report.json"))

    tables = [report.tables[h] for h in report.horizons]
    if any(t.bias is not None for t in tables):
        rows = []
        for h in report.horizons:
            t = report.tables[h]
            if t.bias is None:
                continue
            for j in range(t.bias.shape[0]):
                rows.append([h, j, t.bias[j], t.rmse[j]]
                            + [t.coverage[lvl][j] if t.coverage else math.nan
                               for lvl in ("90", "95", "99")]
                            + [t.ks_pvalues[j] if t.ks_pvalues is not None
                               and j < t.ks_pvalues.shape[0] else math.nan])
        write_csv(target(f"{stem}_summary.csv"),
                  ["horizon", "coord", "bias", "rmse", "cov90", "cov95", "cov99", "ks_pvalue"],
                  rows)
    if any(t.emp_cov is not None for t in tables):
        rows = []
        for h in report.horizons:
            t = report.tables[h]
            if t.emp_cov is None:
                continue
            k = t.emp_cov.shape[0]
            tgt = t.target_cov
            for i in range(k):
                for j in range(k):
                    rows.append([h, i, j, t.emp_cov[i, j],
                                 tgt[i, j] if tgt is not None else math.nan])
        write_csv(target(f"{stem}_covariance.csv"),
                  ["horizon", "row", "col", "empirical", "target"], rows)
    if any(t.support is not None for t in tables):
        rows = [[h, report.tables[h].support["exact_rate"], report.tables[h].support["mean_tpr"],
                 report.tables[h].support["mean_fpr"], int(bool(report.tables[h].kkt_all)),
                 report.tables[h].n_ok]
                for h in report.horizons if report.tables[h].support is not None]
        write_csv(target(f"{stem}_support.csv"),
                  ["horizon", "exact_rate", "mean_tpr", "mean_fpr", "kkt_all", "n_ok"], rows)
    if any(t.ergodic_errors is not None for t in tables):
        rows = [[h] + [report.tables[h].ergodic_errors[k] for k in ("median", "mean", "max")]
                for h in report.horizons if report.tables[h].ergodic_errors is not None]
        write_csv(target(f"{stem}_ergodic.csv"),
                  ["horizon", "median_rel_err", "mean_rel_err", "max_rel_err"], rows)
    return written
