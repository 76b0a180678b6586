"""Closed-form drift estimators and their asymptotic covariances.

Both drift parametrizations have quadratic likelihoods, so the maximizer is
a single linear solve against the observed information. The entrywise solve
never materializes the d^2 x d^2 information: its Kronecker factorization
reduces the problem to one solve against the state second-moment integral
and one multiplication by sigma.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.stats
from sklearn.base import BaseEstimator

from .errors import IdentifiabilityError
from .graphs import (DynamicsMatrix, Graph, ThetaParams, q_from_theta, row_normalize, vec,
                     vec_inverse)
from .likelihood import (ContinuousPartOptions, LikelihoodStats, compute_psi_stats,
                         compute_theta_stats, log_likelihood_psi, log_likelihood_theta)
from .simulate import lyapunov_stationary_cov
from .serialize import matrix_to_obj
from .validation import check_spd, check_square

_COND_LIMIT = 1e10
_DENSE_LIMIT = 12


@dataclass(eq=False)
class EstimateReport:
    """Point estimate with its uncertainty summaries.

    estimate is the 2-vector (network, momentum) or the d^2 entrywise
    vector. cov_clt is the plug-in limiting covariance of
    sqrt(t) * (estimate - truth); std errors and confidence half-widths are
    finite-horizon Wald quantities from the observed information.
    """

    kind: str
    estimate: np.ndarray
    std_errors: np.ndarray
    ci_level: float
    ci_halfwidths: np.ndarray
    t_end: float
    info_matrix: np.ndarray | None = None
    info_factors: tuple | None = None
    cov_clt: np.ndarray | None = None

    @property
    def d(self) -> int | None:
        if self.kind == "psi":
            return int(round(np.sqrt(self.estimate.shape[0])))
        return None


class KroneckerPair(NamedTuple):
    """Covariance stored as a Kronecker product left kron right."""

    left: np.ndarray
    right: np.ndarray

    def dense(self) -> np.ndarray:
        dim = self.left.shape[0] * self.right.shape[0]
        if self.left.shape[0] > _DENSE_LIMIT and dim > _DENSE_LIMIT ** 2:
            raise ValueError(f"refusing to expand a {dim} dimensional dense matrix")
        return np.kron(self.left, self.right)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    w, v = np.linalg.eigh(np.asarray(m, dtype=float))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def _guarded_spd_solve(m: np.ndarray, rhs: np.ndarray, what: str):
    """Solve m x = rhs for SPD m with a relative condition guard."""
    w = np.linalg.eigvalsh(m)
    if w[0] <= 0.0 or w[-1] / w[0] > _COND_LIMIT:
        cond = np.inf if w[0] <= 0.0 else w[-1] / w[0]
        raise IdentifiabilityError(
            f"{what} is singular or too ill-conditioned to invert (condition {cond:.3g}); "
            "the neighbour average and the state are collinear along this path, "
            "as happens on an edgeless graph or a degenerate record")
    cho = scipy.linalg.cho_factor(0.5 * (m + m.T))
    return scipy.linalg.cho_solve(cho, rhs)


def _z_quantile(level: float) -> float:
    if not 0.0 <= level < 1.0:
        raise ValueError(f"confidence level must lie in [0, 1), got {level}")
    return float(scipy.stats.norm.ppf(0.5 * (1.0 + level)))


def theta_mle(stats: LikelihoodStats, ci_level: float = 0.95) -> EstimateReport:
    """Maximizer of the two-scalar likelihood: solve h_quad theta = h.

    The observed information h_quad is a.s. positive definite whenever the
    graph has edges; the guard turns near-singular systems into an
    IdentifiabilityError instead of returning noise.
    """
    if stats.h is None:
        raise ValueError("stats carry no two-scalar terms")
    h_quad = stats.h_quad
    est = _guarded_spd_solve(h_quad, stats.h, "observed information")
    info_inv = _guarded_spd_solve(h_quad, np.eye(2), "observed information")
    std = np.sqrt(np.diag(info_inv))
    z = _z_quantile(ci_level)
    cov_clt = stats.t_end * info_inv if stats.t_end > 0 else None
    return EstimateReport(kind="theta", estimate=est, std_errors=std, ci_level=ci_level,
                          ci_halfwidths=z * std, t_end=stats.t_end, info_matrix=h_quad,
                          cov_clt=cov_clt)


def psi_mle(stats: LikelihoodStats, ci_level: float = 0.95) -> EstimateReport:
    """Maximizer of the entrywise likelihood through the Kronecker factorization.

    With the quadratic term kron(k, inv(sigma)), the solution in matrix form
    is sigma . vec_inverse(i_vec) . inv(k): one guarded solve against k and
    one multiplication by sigma. A dense quadratic term (time-varying sigma)
    falls back to a direct solve.
    """
    if stats.i_vec is None:
        raise ValueError("stats carry no entrywise terms")
    z = _z_quantile(ci_level)
    if stats.i_quad_dense is not None:
        dense = stats.i_quad_dense
        est = _guarded_spd_solve(dense, stats.i_vec, "observed information")
        info_inv = _guarded_spd_solve(dense, np.eye(dense.shape[0]), "observed information")
        std = np.sqrt(np.diag(info_inv))
        cov_clt = stats.t_end * info_inv if stats.t_end > 0 else None
        return EstimateReport(kind="psi", estimate=est, std_errors=std, ci_level=ci_level,
                              ci_halfwidths=z * std, t_end=stats.t_end, info_matrix=dense,
                              cov_clt=cov_clt)
    k = stats.k
    d = k.shape[0]
    x = vec_inverse(stats.i_vec)
    k_inv = _guarded_spd_solve(k, np.eye(d), "state second-moment integral")
    q_hat = stats.sigma @ x @ k_inv
    est = vec(q_hat)
    # diag of inv(kron(k, inv(sigma))) = kron(inv(k), sigma); entry (i, j) sits
    # at position d (j - 1) + i of the column-stacked vector
    std = np.sqrt(np.outer(np.diag(stats.sigma), np.diag(k_inv)).reshape(-1, order="F"))
    cov_clt = None
    if stats.t_end > 0 and d <= _DENSE_LIMIT:
        cov_clt = stats.t_end * np.kron(k_inv, stats.sigma)
    return EstimateReport(kind="psi", estimate=est, std_errors=std, ci_level=ci_level,
                          ci_halfwidths=z * std, t_end=stats.t_end,
                          info_factors=(k, stats.sigma), cov_clt=cov_clt)


def q_mle_matrix(path, sigma, opts: ContinuousPartOptions | None = None) -> np.ndarray:
    """Unconstrained matrix MLE of the drift: the matrix Q with dY ~ -Q Y dt.

    Equals vec_inverse of the entrywise MLE; exposed separately because the
    adaptive penalty weights are built from its entries.
    """
    stats = compute_psi_stats(path, sigma, opts)
    report = psi_mle(stats)
    return vec_inverse(report.estimate)


def g_infinity(q, sigma: np.ndarray, graph: Graph) -> np.ndarray:
    """Limiting information per unit time of the two-scalar estimator.

    Entries are stationary expectations of the sigma-weighted inner products
    of the neighbour average and the state, computed as traces against the
    stationary covariance.
    """
    qm = q.matrix if isinstance(q, DynamicsMatrix) else check_square(q, "dynamics matrix")
    sigma = check_spd(sigma, "sigma")
    s_cov = lyapunov_stationary_cov(qm, sigma)
    a_bar = row_normalize(graph)
    b = np.linalg.solve(sigma, a_bar)
    g11 = float(np.sum(a_bar * (b @ s_cov)))
    g12 = float(np.sum(a_bar * np.linalg.solve(sigma, s_cov)))
    g22 = float(np.trace(np.linalg.solve(sigma, s_cov)))
    return np.array([[g11, g12], [g12, g22]])


def info_matrix_integrand(graph: Graph, sigma: np.ndarray):
    """State functional whose ergodic average is g_infinity; feeds ergodic_average."""
    a_bar = row_normalize(graph)
    sigma_inv = np.linalg.inv(check_spd(sigma, "sigma"))

    def integrand(y):
        n = a_bar @ y
        sn = sigma_inv @ n
        sy = sigma_inv @ y
        return np.array([[n @ sn, n @ sy], [n @ sy, y @ sy]])

    return integrand


def psi_clt_covariance(q, sigma: np.ndarray) -> KroneckerPair:
    """Limiting covariance of the entrywise estimator, factored.

    The covariance of sqrt(t) * (psi_hat - psi) is the Kronecker product of
    the inverse stationary covariance and sigma.
    """
    qm = q.matrix if isinstance(q, DynamicsMatrix) else check_square(q, "dynamics matrix")
    sigma = check_spd(sigma, "sigma")
    s_cov = lyapunov_stationary_cov(qm, sigma)
    return KroneckerPair(np.linalg.inv(s_cov), sigma)


def apply_network_mask_clt(pair: KroneckerPair, graph: Graph) -> np.ndarray:
    """Limiting covariance of the graph-masked entrywise estimator.

    Sandwiches the dense covariance with the diagonal of the vectorized mask
    (identity plus row-normalized adjacency), so coordinates outside the
    mask get exact zeros.
    """
    mask = np.eye(graph.d) + row_normalize(graph)
    d_mask = vec(mask)
    dense = pair.dense()
    return dense * np.outer(d_mask, d_mask)


@dataclass(eq=False)
class ConfidenceRegion:
    """Per-coordinate Wald intervals and the Wald ellipsoid at one level."""

    level: float
    lower: np.ndarray
    upper: np.ndarray
    ellipsoid_radius_sq: float
    shape_matrix: np.ndarray | None


def confidence_region(report: EstimateReport, level: float | None = None) -> ConfidenceRegion:
    """Wald confidence region derived from an estimate report.

    The ellipsoid is {x : (x - est)' info (x - est) <= radius_sq} with the
    chi-square quantile at the coordinate count.
    """
    if level is None:
        level = report.ci_level
    z = _z_quantile(level)
    half = z * report.std_errors
    k = report.estimate.shape[0] if report.estimate.ndim == 1 else report.estimate.size
    radius_sq = float(scipy.stats.chi2.ppf(level, df=k))
    info = report.info_matrix
    if info is None and report.info_factors is not None:
        k_mat, sigma = report.info_factors
        if k_mat.shape[0] <= _DENSE_LIMIT:
            info = np.kron(k_mat, np.linalg.inv(sigma))
    return ConfidenceRegion(level=level, lower=report.estimate - half,
                            upper=report.estimate + half, ellipsoid_radius_sq=radius_sq,
                            shape_matrix=info)


def report_to_obj(report: EstimateReport) -> dict:
    obj = {
        "kind": report.kind,
        "estimate": report.estimate.tolist(),
        "std_errors": report.std_errors.tolist(),
        "ci_level": report.ci_level,
        "ci_halfwidths": report.ci_halfwidths.tolist(),
        "t_end": report.t_end,
    }
    if report.info_matrix is not None:
        obj["info_matrix"] = matrix_to_obj(report.info_matrix)
    if report.info_factors is not None:
        obj["info_factors"] = {"k": matrix_to_obj(report.info_factors[0]),
                               "sigma": matrix_to_obj(report.info_factors[1])}
    if report.cov_clt is not None:
        obj["cov_clt"] = matrix_to_obj(report.cov_clt)
    return obj


def _coordinate_names(report: EstimateReport):
    if report.kind == "theta":
        return ["network", "momentum"]
    d = report.d
    return [f"q[{i + 1},{j + 1}]" for j in range(d) for i in range(d)]


def format_report(report: EstimateReport) -> str:
    """Fixed-width text table of estimates with Wald intervals."""
    names = _coordinate_names(report)
    lines = [
        f"horizon {report.t_end:g}, confidence level {report.ci_level:g}",
        f"{'coordinate':<12}{'estimate':>14}{'std error':>14}{'ci low':>14}{'ci high':>14}",
    ]
    est = report.estimate
    for name, e, s, h in zip(names, est, report.std_errors, report.ci_halfwidths):
        lines.append(f"{name:<12}{e:>14.6g}{s:>14.6g}{e - h:>14.6g}{e + h:>14.6g}")
    return "\n".join(lines)


class ThetaGrouMLE(BaseEstimator):
    """Estimator-style wrapper for the two-scalar drift fit.

    Parameters are the model context (graph, sigma, jump filter options);
    fit consumes a SamplePath and exposes theta_, q_matrix_ and the full
    report_.
    """

    def __init__(self, graph=None, sigma=None, options=None, ci_level=0.95):
        self.graph = graph
        self.sigma = sigma
        self.options = options
        self.ci_level = ci_level

    def fit(self, path, y=None):
        if self.graph is None or self.sigma is None:
            raise ValueError("graph and sigma must be set before fitting")
        self.stats_ = compute_theta_stats(path, self.graph, np.asarray(self.sigma, dtype=float),
                                          self.options)
        self.report_ = theta_mle(self.stats_, ci_level=self.ci_level)
        self.theta_ = self.report_.estimate
        self.q_matrix_ = q_from_theta(self.graph,
                                      ThetaParams(*self.theta_.tolist())).matrix
        return self

    def predict_drift(self, states) -> np.ndarray:
        """Instantaneous drift -Q(theta_) y for each state row."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return -(states @ self.q_matrix_.T)

    def conf_int(self, level=None) -> ConfidenceRegion:
        return confidence_region(self.report_, level)

    def log_likelihood(self, theta=None) -> float:
        if theta is None:
            theta = self.theta_
        return log_likelihood_theta(self.stats_, theta)


class PsiGrouMLE(BaseEstimator):
    """Estimator-style wrapper for the entrywise drift fit."""

    def __init__(self, sigma=None, options=None, ci_level=0.95):
        self.sigma = sigma
        self.options = options
        self.ci_level = ci_level

    def fit(self, path, y=None):
        if self.sigma is None:
            raise ValueError("sigma must be set before fitting")
        self.stats_ = compute_psi_stats(path, np.asarray(self.sigma, dtype=float), self.options)
        self.report_ = psi_mle(self.stats_, ci_level=self.ci_level)
        self.psi_ = self.report_.estimate
        self.q_matrix_ = vec_inverse(self.psi_)
        return self

    def predict_drift(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return -(states @ self.q_matrix_.T)

    def conf_int(self, level=None) -> ConfidenceRegion:
        return confidence_region(self.report_, level)

    def log_likelihood(self, psi=None) -> float:
        if psi is None:
            psi = self.psi_
        return log_likelihood_psi(self.stats_, psi)
