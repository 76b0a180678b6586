"""Sufficient statistics of the continuous-record likelihood.

The log-likelihood in either drift parametrization is quadratic: a linear
term driven by the increments of the continuous part of the path, and a
quadratic term given by time integrals of the state. Both are accumulated
with left-point sums, which keeps the Ito convention of the underlying
stochastic integrals. Jump removal happens first, through an oracle that
subtracts recorded jumps or a threshold that discards large increments.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .graphs import Graph, ThetaParams, row_normalize, vec, vec_inverse
from .serialize import matrix_to_obj, obj_to_matrix
from .simulate import SamplePath
from .validation import check_spd, check_vector

MODE_NONE = "none"
MODE_ORACLE = "oracle"
MODE_THRESHOLD = "threshold"

_KRON_DENSE_LIMIT = 12


@dataclass(frozen=True, eq=False)
class ContinuousPartOptions:
    """How to extract the continuous part of the observed increments.

    mode "none" keeps raw increments, "oracle" subtracts the simulator's
    recorded jumps, "threshold" zeroes any increment whose norm exceeds
    threshold_c * dt ** threshold_exponent. The optional drift is removed
    from every increment (dt * drift) before filtering.
    """

    mode: str = MODE_NONE
    threshold_c: float | None = None
    threshold_exponent: float = 0.49
    drift: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (MODE_NONE, MODE_ORACLE, MODE_THRESHOLD):
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if not 0.0 < self.threshold_exponent < 0.5:
            raise ValueError(f"threshold exponent must lie in (0, 1/2), got {self.threshold_exponent}")
        if self.threshold_c is not None and not self.threshold_c > 0.0:
            raise ValueError(f"threshold scale must be positive, got {self.threshold_c}")
        if self.mode == MODE_THRESHOLD and self.threshold_c is None:
            raise ValueError("threshold mode needs threshold_c")
        if self.drift is not None:
            drift = check_vector(self.drift, name="drift")
            drift.setflags(write=False)
            object.__setattr__(self, "drift", drift)

    @classmethod
    def threshold_for(cls, sigma, c_mult: float = 4.0, exponent: float = 0.49) -> "ContinuousPartOptions":
        """Threshold options with the default scale c_mult * sqrt(max diag sigma)."""
        sigma = np.asarray(sigma, dtype=float)
        c = c_mult * float(np.sqrt(np.max(np.diag(sigma))))
        return cls(mode=MODE_THRESHOLD, threshold_c=c, threshold_exponent=exponent)


@dataclass(frozen=True)
class FilterReport:
    """What the jump filter did: counts and, in oracle mode, how a threshold
    would have scored against the recorded truth."""

    mode: str
    n_intervals: int
    n_flagged: int
    threshold_value: float | None = None
    confusion: dict | None = None


@dataclass(eq=False)
class LikelihoodStats:
    """Accumulated sufficient statistics at horizon t_end.

    For the two-scalar parametrization: linear term h (2-vector) and
    quadratic term h_quad (2x2). For the entrywise parametrization: linear
    term i_vec (d^2), the state second-moment integral k (d x d) and sigma,
    which factor the quadratic term as kron(k, inv(sigma)). A dense
    quadratic term i_quad_dense replaces the factored form when sigma varies
    along the path.
    """

    t_end: float
    n_steps: int
    h: np.ndarray | None = None
    h_quad: np.ndarray | None = None
    i_vec: np.ndarray | None = None
    k: np.ndarray | None = None
    sigma: np.ndarray | None = None
    i_quad_dense: np.ndarray | None = None
    filter_report: FilterReport | None = field(default=None, repr=False)

    @property
    def d(self) -> int | None:
        if self.k is not None:
            return self.k.shape[0]
        if self.i_quad_dense is not None:
            return int(round(np.sqrt(self.i_quad_dense.shape[0])))
        return None

    def i_quad(self) -> np.ndarray:
        """Dense quadratic term of the entrywise parametrization.

        Expanded on demand from the (k, sigma) factorization; refuses to
        materialize beyond d = 12.
        """
        if self.i_quad_dense is not None:
            return self.i_quad_dense
        if self.k is None:
            raise ValueError("stats carry no entrywise quadratic term")
        if self.k.shape[0] > _KRON_DENSE_LIMIT:
            raise ValueError(f"refusing to expand a {self.k.shape[0] ** 2} dimensional dense matrix")
        return np.kron(self.k, np.linalg.inv(self.sigma))

    def i_quad_matvec(self, psi: np.ndarray) -> np.ndarray:
        """Quadratic term applied to a vector without dense expansion."""
        if self.i_quad_dense is not None:
            return self.i_quad_dense @ psi
        qm = vec_inverse(psi)
        return vec(np.linalg.solve(self.sigma, qm @ self.k))


def continuous_increments(path: SamplePath, opts: ContinuousPartOptions | None = None):
    """Increments of the continuous part of the path.

    Returns (increments, FilterReport); increments has one row per grid
    interval.
    """
    if opts is None:
        opts = ContinuousPartOptions()
    if path.n_steps < 1:
        return np.zeros((0, path.d)), FilterReport(opts.mode, 0, 0)
    inc = np.diff(path.values, axis=0)
    if opts.drift is not None:
        inc = inc - path.dt * opts.drift

    threshold = None
    if opts.threshold_c is not None:
        threshold = opts.threshold_c * path.dt ** opts.threshold_exponent

    if opts.mode == MODE_NONE:
        return inc, FilterReport(opts.mode, inc.shape[0], 0, threshold_value=threshold)

    if opts.mode == MODE_ORACLE:
        confusion = None
        if threshold is not None:
            flagged = np.linalg.norm(inc, axis=1) > threshold
            truth = np.zeros(inc.shape[0], dtype=bool)
            if path.jump_marks is not None:
                truth[path.jump_marks.indices] = True
            confusion = {
                "tp": int(np.sum(flagged & truth)),
                "fp": int(np.sum(flagged & ~truth)),
                "fn": int(np.sum(~flagged & truth)),
                "tn": int(np.sum(~flagged & ~truth)),
            }
        n_marks = 0
        if path.jump_marks is not None and len(path.jump_marks):
            inc = inc.copy()
            np.subtract.at(inc, path.jump_marks.indices, path.jump_marks.sizes)
            n_marks = len(path.jump_marks)
        return inc, FilterReport(opts.mode, inc.shape[0], n_marks,
                                 threshold_value=threshold, confusion=confusion)

    # threshold mode: treat a flagged increment as pure jump and zero it
    flagged = np.linalg.norm(inc, axis=1) > threshold
    confusion = None
    if path.jump_marks is not None:
        truth = np.zeros(inc.shape[0], dtype=bool)
        truth[path.jump_marks.indices] = True
        confusion = {
            "tp": int(np.sum(flagged & truth)),
            "fp": int(np.sum(flagged & ~truth)),
            "fn": int(np.sum(~flagged & truth)),
            "tn": int(np.sum(~flagged & ~truth)),
        }
    inc = np.where(flagged[:, None], 0.0, inc)
    return inc, FilterReport(opts.mode, inc.shape[0], int(flagged.sum()),
                             threshold_value=threshold, confusion=confusion)


def _solve_sigma(sigma, block):
    """inv(sigma) applied to the rows of `block`."""
    cho = scipy.linalg.cho_factor(sigma)
    return scipy.linalg.cho_solve(cho, block.T).T


def compute_theta_stats(path: SamplePath, graph: Graph, sigma: np.ndarray,
                        opts: ContinuousPartOptions | None = None) -> LikelihoodStats:
    """Sufficient statistics for the two-scalar drift parametrization."""
    sigma = check_spd(sigma, "sigma")
    if graph.d != path.d or sigma.shape[0] != path.d:
        raise ValueError("path, graph and sigma dimensions disagree")
    inc, report = continuous_increments(path, opts)
    t_end = path.t_end
    if path.n_steps < 1:
        return LikelihoodStats(t_end, 0, h=np.zeros(2), h_quad=np.zeros((2, 2)),
                               filter_report=report)
    left = path.values[:-1]
    neigh = left @ row_normalize(graph).T
    s_inc = _solve_sigma(sigma, inc)
    s_left = _solve_sigma(sigma, left)
    s_neigh = _solve_sigma(sigma, neigh)
    h = -np.array([np.sum(neigh * s_inc), np.sum(left * s_inc)])
    dt = path.dt
    hq11 = dt * np.sum(neigh * s_neigh)
    hq12 = dt * np.sum(neigh * s_left)
    hq22 = dt * np.sum(left * s_left)
    h_quad = np.array([[hq11, hq12], [hq12, hq22]])
    return LikelihoodStats(t_end, path.n_steps, h=h, h_quad=h_quad, filter_report=report)


def compute_psi_stats(path: SamplePath, sigma: np.ndarray,
                      opts: ContinuousPartOptions | None = None) -> LikelihoodStats:
    """Sufficient statistics for the entrywise drift parametrization.

    The quadratic term is kept factored as (k, sigma); only the d^2 linear
    term and the d x d state integral are stored.
    """
    sigma = check_spd(sigma, "sigma")
    if sigma.shape[0] != path.d:
        raise ValueError("path and sigma dimensions disagree")
    inc, report = continuous_increments(path, opts)
    d = path.d
    if path.n_steps < 1:
        return LikelihoodStats(path.t_end, 0, i_vec=np.zeros(d * d), k=np.zeros((d, d)),
                               sigma=sigma, filter_report=report)
    left = path.values[:-1]
    s_inc = _solve_sigma(sigma, inc)
    cross = s_inc.T @ left
    i_vec = -vec(cross)
    k = path.dt * (left.T @ left)
    k = 0.5 * (k + k.T)
    return LikelihoodStats(path.t_end, path.n_steps, i_vec=i_vec, k=k, sigma=sigma,
                           filter_report=report)


def log_likelihood_theta(stats: LikelihoodStats, theta) -> float:
    """Quadratic log-likelihood theta . h - 0.5 theta' [h_quad] theta."""
    if stats.h is None:
        raise ValueError("stats carry no two-scalar terms")
    if isinstance(theta, ThetaParams):
        theta = theta.as_array()
    theta = check_vector(theta, d=2, name="theta")
    return float(theta @ stats.h - 0.5 * theta @ stats.h_quad @ theta)


def log_likelihood_psi(stats: LikelihoodStats, psi) -> float:
    """Quadratic log-likelihood in the entrywise parametrization."""
    if stats.i_vec is None:
        raise ValueError("stats carry no entrywise terms")
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    psi = check_vector(psi, d=stats.i_vec.shape[0], name="psi")
    return float(psi @ stats.i_vec - 0.5 * psi @ stats.i_quad_matvec(psi))


def stats_to_obj(stats: LikelihoodStats) -> dict:
    """JSON-friendly dict of a LikelihoodStats (matrices row-major)."""
    obj = {"t_end": stats.t_end, "n_steps": stats.n_steps}
    for name in ("h", "i_vec"):
        val = getattr(stats, name)
        if val is not None:
            obj[name] = np.asarray(val).tolist()
    for name in ("h_quad", "k", "sigma", "i_quad_dense"):
        val = getattr(stats, name)
        if val is not None:
            obj[name] = matrix_to_obj(val)
    if stats.filter_report is not None:
        fr = stats.filter_report
        obj["filter"] = {
            "mode": fr.mode,
            "n_intervals": fr.n_intervals,
            "n_flagged": fr.n_flagged,
            "threshold_value": fr.threshold_value,
            "confusion": fr.confusion,
        }
    return obj


def stats_from_obj(obj: dict) -> LikelihoodStats:
    kwargs = {"t_end": obj["t_end"], "n_steps": obj["n_steps"]}
    for name in ("h", "i_vec"):
        if name in obj:
            kwargs[name] = np.asarray(obj[name], dtype=float)
    for name in ("h_quad", "k", "sigma", "i_quad_dense"):
        if name in obj:
            kwargs[name] = obj_to_matrix(obj[name])
    if "filter" in obj and obj["filter"] is not None:
        fr = obj["filter"]
        kwargs["filter_report"] = FilterReport(fr["mode"], fr["n_intervals"], fr["n_flagged"],
                                               fr.get("threshold_value"), fr.get("confusion"))
    return LikelihoodStats(**kwargs)
