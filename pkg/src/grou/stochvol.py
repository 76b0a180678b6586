"""Stochastic volatility extension of the graph OU process.

The spot covariance follows a matrix OU equation dSigma = -(V Sigma
+ Sigma V^T) dt + dL driven by a matrix subordinator with PSD drift and
rank-1 PSD jumps, so Sigma stays positive semidefinite pathwise. Between
jumps the decay is exact and the drift integral over a step comes from the
Lyapunov-difference identity

    int_0^D e^{-sV} G e^{-sV^T} ds = S - e^{-DV} S e^{-DV^T},
    where V S + S V^T = G,

so no quadrature enters the scheme. The observation process advances by
operator splitting with the spot covariance frozen over each grid step,
and a pure-jump component can be fed through a strictly increasing clock.
Estimation conditional on the recorded covariance path reuses the plain
likelihood machinery with a per-interval weight.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import ConfigError, NonStationaryError
from .estimators import EstimateReport, psi_mle, theta_mle
from .graphs import Graph, check_stationary_spectral, row_normalize, vec
from .likelihood import ContinuousPartOptions, LikelihoodStats, continuous_increments
from .rng import rng_stream
from .serialize import write_csv
from .simulate import (CompoundPoissonSpec, JumpMarks, SamplePath, _ar1_path, _as_matrix,
                       _grid_steps, _propagate_jumps, lyapunov_stationary_cov,
                       matrix_exponential)
from .validation import as_float_array, check_positive, check_psd, check_square, check_vector

_EIG_FLOOR = 1e-10

CLOCK_LINEAR = "linear"
CLOCK_INTEGRATED = "integrated_positive"


@dataclass(frozen=True, eq=False)
class RankOneJumpSampler:
    """Law of a PSD covariance jump w * v v^T.

    The weight w is positive, drawn from "exponential" (params mean) or
    "uniform" (params low >= 0, high); the direction v is uniform on the unit
    sphere. Rank-1 with positive weight keeps every jump PSD by construction,
    and both weight laws carry the log-moment the stationary theory needs.
    """

    name: str
    params: dict

    def __post_init__(self):
        if self.name == "exponential":
            mean = check_positive(self.params["mean"], "weight mean")
            object.__setattr__(self, "params", {"mean": mean})
        elif self.name == "uniform":
            low = float(self.params["low"])
            high = float(self.params["high"])
            if low < 0.0 or high <= low:
                raise ValueError("uniform weight bounds must satisfy 0 <= low < high")
            object.__setattr__(self, "params", {"low": low, "high": high})
        else:
            raise ValueError(f"unknown weight distribution {self.name!r}")

    @property
    def mean_weight(self) -> float:
        if self.name == "exponential":
            return self.params["mean"]
        return 0.5 * (self.params["low"] + self.params["high"])

    def sample(self, rng: np.random.Generator, n: int, d: int):
        """Draw (weights, directions); directions have unit norm."""
        if self.name == "exponential":
            w = rng.exponential(self.params["mean"], size=n)
        else:
            w = rng.uniform(self.params["low"], self.params["high"], size=n)
        v = rng.standard_normal((n, d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        # a zero normal draw has probability zero; guard the division anyway
        v = v / np.where(norms > 0.0, norms, 1.0)
        return w, v

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, obj) -> "RankOneJumpSampler":
        return cls(obj["name"], dict(obj["params"]))


@dataclass(frozen=True, eq=False)
class MatrixSubordinatorSpec:
    """Matrix subordinator: PSD drift per unit time plus rank-1 PSD jumps.

    Finite activity, so the usual integrability conditions on the jump
    measure hold for free.
    """

    gamma_l: np.ndarray
    jump_rate: float = 0.0
    jump_sampler: RankOneJumpSampler | None = None

    def __post_init__(self):
        gamma = check_psd(self.gamma_l, "subordinator drift")
        rate = float(self.jump_rate)
        if rate < 0.0:
            raise ValueError(f"jump rate must be nonnegative, got {rate}")
        if rate > 0.0 and self.jump_sampler is None:
            raise ValueError("a positive jump rate needs a jump sampler")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma_l", gamma)
        object.__setattr__(self, "jump_rate", rate)

    @property
    def d(self) -> int:
        return self.gamma_l.shape[0]

    @property
    def has_jumps(self) -> bool:
        return self.jump_rate > 0.0

    def mean_increment(self) -> np.ndarray:
        """E L_1: the drift plus rate * E[w] * E[v v^T], and E[v v^T] = I / d."""
        out = self.gamma_l.copy()
        if self.has_jumps:
            out = out + self.jump_rate * self.jump_sampler.mean_weight / self.d * np.eye(self.d)
        return out

    def to_dict(self) -> dict:
        obj = {"gamma_l": self.gamma_l.tolist(), "jump_rate": self.jump_rate}
        if self.jump_sampler is not None:
            obj["jump_sampler"] = self.jump_sampler.to_dict()
        return obj

    @classmethod
    def from_dict(cls, obj) -> "MatrixSubordinatorSpec":
        sampler = None
        if obj.get("jump_sampler") is not None:
            sampler = RankOneJumpSampler.from_dict(obj["jump_sampler"])
        return cls(np.asarray(obj["gamma_l"], dtype=float), obj.get("jump_rate", 0.0), sampler)


@dataclass(frozen=True, eq=False)
class PsouSpec:
    """Mean reversion and driving subordinator of the covariance process.

    The drift acts through rho(X) = V X + X V^T, so stationarity needs every
    eigenvalue of v_matrix in the open right half-plane.
    """

    v_matrix: np.ndarray
    subordinator: MatrixSubordinatorSpec

    def __post_init__(self):
        v = check_square(self.v_matrix, "mean reversion")
        check = check_stationary_spectral(v)
        if not check:
            raise NonStationaryError(check.reason)
        if v.shape[0] != self.subordinator.d:
            raise ValueError("mean reversion and subordinator dimensions differ")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "v_matrix", v)

    @property
    def d(self) -> int:
        return self.v_matrix.shape[0]

    def stationary_mean(self) -> np.ndarray:
        """E Sigma at stationarity: the S solving V S + S V^T = E L_1."""
        return lyapunov_stationary_cov(self.v_matrix, self.subordinator.mean_increment())

    def to_dict(self) -> dict:
        return {"v_matrix": self.v_matrix.tolist(), "subordinator": self.subordinator.to_dict()}

    @classmethod
    def from_dict(cls, obj) -> "PsouSpec":
        return cls(np.asarray(obj["v_matrix"], dtype=float),
                   MatrixSubordinatorSpec.from_dict(obj["subordinator"]))


@dataclass(frozen=True)
class TimeChangeSpec:
    """Strictly increasing clock for the jump component.

    "linear" gives T_t = rate * t. "integrated_positive" integrates
    floor + X_s^2 by left-point sums for a stationary scalar OU X with the
    given mean reversion and volatility; the floor keeps the clock strictly
    increasing.
    """

    kind: str = CLOCK_LINEAR
    rate: float = 1.0
    mean_reversion: float = 1.0
    volatility: float = 1.0
    floor: float = 0.05

    def __post_init__(self):
        if self.kind == CLOCK_LINEAR:
            check_positive(self.rate, "clock rate")
        elif self.kind == CLOCK_INTEGRATED:
            check_positive(self.mean_reversion, "clock mean reversion")
            check_positive(self.volatility, "clock volatility")
            check_positive(self.floor, "clock floor")
        else:
            raise ValueError(f"unknown time change {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == CLOCK_LINEAR:
            return {"kind": self.kind, "rate": self.rate}
        return {"kind": self.kind, "mean_reversion": self.mean_reversion,
                "volatility": self.volatility, "floor": self.floor}

    @classmethod
    def from_dict(cls, obj) -> "TimeChangeSpec":
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class JumpComponentSpec:
    """Pure-jump component fed through the clock: drift plus compound Poisson."""

    drift: np.ndarray
    jumps: CompoundPoissonSpec | None = None

    def __post_init__(self):
        drift = check_vector(self.drift, name="jump component drift").copy()
        if self.jumps is not None and self.jumps.sampler.d != drift.shape[0]:
            raise ValueError("jump distribution dimension does not match the drift")
        drift.setflags(write=False)
        object.__setattr__(self, "drift", drift)

    @property
    def d(self) -> int:
        return self.drift.shape[0]

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None

    def to_dict(self) -> dict:
        obj = {"drift": self.drift.tolist()}
        if self.jumps is not None:
            obj["jumps"] = self.jumps.to_dict()
        return obj

    @classmethod
    def from_dict(cls, obj) -> "JumpComponentSpec":
        jumps = None
        if obj.get("jumps") is not None:
            jumps = CompoundPoissonSpec.from_dict(obj["jumps"])
        return cls(np.asarray(obj["drift"], dtype=float), jumps)


def _psou_innovations(spec: PsouSpec, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Per-interval innovations of the column-stacked covariance recursion."""
    d = spec.d
    v_m = spec.v_matrix
    if np.any(spec.subordinator.gamma_l != 0.0):
        s_v = lyapunov_stationary_cov(v_m, spec.subordinator.gamma_l)
        a = matrix_exponential(-dt * v_m)
        drift_inc = s_v - a @ s_v @ a.T
    else:
        drift_inc = np.zeros((d, d))
    # every matrix here is symmetric, so the row-major flatten equals vec
    innov = np.tile(drift_inc.reshape(-1), (n, 1))
    if spec.subordinator.has_jumps:
        counts = rng.poisson(spec.subordinator.jump_rate * dt, size=n)
        m = int(counts.sum())
        if m:
            intervals = np.repeat(np.arange(n), counts)
            offsets = rng.uniform(0.0, dt, size=m)
            weights, dirs = spec.subordinator.jump_sampler.sample(rng, m, d)
            decayed = _propagate_jumps(v_m, dt - offsets, dirs)
            contrib = weights[:, None] * np.einsum("ki,kj->kij", decayed, decayed).reshape(m, d * d)
            np.add.at(innov, intervals, contrib)
    return innov


def _psou_path(spec: PsouSpec, n: int, dt: float, rng: np.random.Generator, init) -> np.ndarray:
    d = spec.d
    stationary = isinstance(init, str)
    if stationary:
        if init != "stationary":
            raise ConfigError(f"unknown initial condition {init!r}")
        sigma0 = spec.stationary_mean()
    else:
        sigma0 = check_psd(init, "initial covariance")
        if sigma0.shape[0] != d:
            raise ValueError("initial covariance dimension does not match the spec")
    n_burn = 0
    if stationary and spec.subordinator.has_jumps:
        lam_min = float(np.linalg.eigvals(spec.v_matrix).real.min())
        n_burn = int(math.ceil(20.0 / lam_min / dt))
    total = n_burn + n
    innov = _psou_innovations(spec, total, dt, rng)
    a = matrix_exponential(-dt * spec.v_matrix)
    flat = _ar1_path(np.kron(a, a), innov, sigma0.reshape(-1))[n_burn:]
    out = flat.reshape(n + 1, d, d)
    return 0.5 * (out + out.transpose(0, 2, 1))


def simulate_psou(spec: PsouSpec, t_end: float, dt: float, seed: int,
                  init="stationary") -> np.ndarray:
    """Covariance path on a uniform grid, shape (n_steps + 1, d, d).

    Between jumps the decay is exact and the drift integral over a step comes
    from the Lyapunov-difference identity; jumps land at Poisson times inside
    each interval and decay through the remaining fraction. init "stationary"
    starts at the stationary mean and, when jumps are present, burns in
    20 / (min real eigenvalue of v_matrix) time units before recording;
    an explicit PSD array pins Sigma_0 instead.
    """
    n = _grid_steps(t_end, dt)
    return _psou_path(spec, n, float(dt), rng_stream(seed), init)


def _time_change_values(spec: TimeChangeSpec, times: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    if spec.kind == CLOCK_LINEAR:
        return spec.rate * times
    n = times.shape[0] - 1
    dt = float(times[1] - times[0])
    a = spec.mean_reversion
    var_inf = spec.volatility ** 2 / (2.0 * a)
    phi = math.exp(-a * dt)
    x = np.empty(n + 1)
    x[0] = math.sqrt(var_inf) * rng.standard_normal()
    innov = math.sqrt(var_inf * (1.0 - phi * phi)) * rng.standard_normal(n)
    x[1:], _ = scipy.signal.lfilter([1.0], [1.0, -phi], innov, zi=[phi * x[0]])
    out = np.empty(n + 1)
    out[0] = 0.0
    np.cumsum((spec.floor + x[:-1] ** 2) * dt, out=out[1:])
    return out


def simulate_time_change(spec: TimeChangeSpec, t_end: float, dt: float, seed: int) -> np.ndarray:
    """Clock values on the grid: T_0 = 0, strictly increasing, one per grid point."""
    n = _grid_steps(t_end, dt)
    times = np.arange(n + 1) * float(dt)
    return _time_change_values(spec, times, rng_stream(seed))


def simulate_vol_modulated(q, psou: PsouSpec, clock: TimeChangeSpec,
                           jump_component: JumpComponentSpec | None,
                           t_end: float, dt: float, seed: int,
                           init="stationary", sigma_init="stationary") -> SamplePath:
    """Path of dY = -Q Y dt + Sigma_t^{1/2} dW_t + dJ_{T_t} on a uniform grid.

    Per grid step the state decays exactly and receives a Gaussian increment
    with covariance int_0^dt e^{-sQ} Sigma e^{-sQ^T} ds, Sigma frozen at the
    left endpoint (second-order accurate in dt). Jump arrivals are thinned at
    rate * (T_{t+dt} - T_t) and propagated through the remaining decay, with
    the raw sizes recorded in jump_marks. Four independent substreams drive
    the covariance, the Brownian part, the jumps and the clock, so switching
    one component off does not shift the others. The returned sigma_path
    holds the spot covariance at every grid point.
    """
    qm = _as_matrix(q)
    d = qm.shape[0]
    check = check_stationary_spectral(qm)
    if not check:
        raise NonStationaryError(check.reason)
    if psou.d != d:
        raise ValueError("covariance process dimension does not match the drift matrix")
    if jump_component is not None and jump_component.d != d:
        raise ValueError("jump component dimension does not match the drift matrix")
    n = _grid_steps(t_end, dt)
    dt = float(dt)

    stationary = isinstance(init, str)
    if stationary and init != "stationary":
        raise ConfigError(f"unknown initial condition {init!r}")
    y0 = np.zeros(d) if stationary else check_vector(init, d=d, name="initial state")
    n_burn = 0
    if stationary:
        lam_min = float(np.linalg.eigvals(qm).real.min())
        n_burn = int(math.ceil(10.0 / lam_min / dt))
    total = n_burn + n

    rng_vol = rng_stream(seed, 0)
    rng_bm = rng_stream(seed, 1)
    rng_jump = rng_stream(seed, 2)
    rng_clock = rng_stream(seed, 3)

    sigmas = _psou_path(psou, total, dt, rng_vol, sigma_init)
    clock_values = _time_change_values(clock, np.arange(total + 1) * dt, rng_clock)
    clock_steps = np.diff(clock_values)

    # one-step Gaussian covariance, frozen Sigma: vec(C_j) = M vec(Sigma_j)
    # with M = (I - phi kron phi) (I kron Q + Q kron I)^{-1}
    phi = matrix_exponential(-dt * qm)
    eye = np.eye(d)
    kron_sum = np.kron(eye, qm) + np.kron(qm, eye)
    m_step = (np.eye(d * d) - np.kron(phi, phi)) @ np.linalg.inv(kron_sum)
    cov = (sigmas[:-1].reshape(total, d * d) @ m_step.T).reshape(total, d, d)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    draws = np.sqrt(evals) * rng_bm.standard_normal((total, d))
    innov = np.einsum("nij,nj->ni", evecs, draws)

    marks = None
    if jump_component is not None:
        if np.any(jump_component.drift != 0.0):
            # drift of J accrues in clock time; decay it as a constant rate over the step
            base = (eye - phi) @ np.linalg.solve(qm, jump_component.drift)
            innov += (clock_steps / dt)[:, None] * base
        if jump_component.has_jumps:
            cp = jump_component.jumps
            counts = rng_jump.poisson(cp.rate * clock_steps)
            m = int(counts.sum())
            if m:
                intervals = np.repeat(np.arange(total), counts)
                offsets = rng_jump.uniform(0.0, dt, size=m)
                sizes = cp.sampler.sample(rng_jump, m)
                np.add.at(innov, intervals, _propagate_jumps(qm, dt - offsets, sizes))
                keep = intervals >= n_burn
                if np.any(keep):
                    marks = JumpMarks(intervals[keep] - n_burn, sizes[keep])

    values = _ar1_path(phi, innov, y0)[n_burn:]
    times = np.arange(n + 1) * dt
    return SamplePath(times, values, jump_marks=marks, sigma_path=sigmas[n_burn:])


def _floored_inverses(mats: np.ndarray, floor: float = _EIG_FLOOR) -> np.ndarray:
    """Pseudo-inverse of each symmetric matrix; eigenvalues at or below floor drop out."""
    w, u = np.linalg.eigh(mats)
    inv_w = np.where(w > floor, 1.0 / np.where(w > floor, w, 1.0), 0.0)
    return np.einsum("nik,nk,njk->nij", u, inv_w, u)


def conditional_stats(path: SamplePath, graph: Graph | None = None, kind: str = "theta",
                      opts: ContinuousPartOptions | None = None) -> LikelihoodStats:
    """Sufficient statistics weighted by the recorded spot covariance.

    Every grid interval is weighted by the pseudo-inverse of Sigma at its
    left endpoint, which is what the limit theory conditional on the
    volatility path calls for. The entrywise quadratic term no longer
    factors, so it is stored dense.
    """
    if path.sigma_path is None:
        raise ConfigError("path carries no spot covariance record")
    if kind not in ("theta", "psi"):
        raise ConfigError(f"unknown parametrization {kind!r}")
    inc, report = continuous_increments(path, opts)
    d = path.d
    if path.n_steps < 1:
        if kind == "theta":
            return LikelihoodStats(path.t_end, 0, h=np.zeros(2), h_quad=np.zeros((2, 2)),
                                   filter_report=report)
        return LikelihoodStats(path.t_end, 0, i_vec=np.zeros(d * d),
                               i_quad_dense=np.zeros((d * d, d * d)), filter_report=report)
    left = path.values[:-1]
    sig_inv = _floored_inverses(path.sigma_path[:-1])
    s_inc = np.einsum("nij,nj->ni", sig_inv, inc)
    dt = path.dt
    if kind == "theta":
        if graph is None:
            raise ConfigError("the two-scalar statistics need the graph")
        neigh = left @ row_normalize(graph).T
        s_neigh = np.einsum("nij,nj->ni", sig_inv, neigh)
        s_left = np.einsum("nij,nj->ni", sig_inv, left)
        h = -np.array([np.sum(neigh * s_inc), np.sum(left * s_inc)])
        hq12 = dt * np.sum(neigh * s_left)
        h_quad = np.array([[dt * np.sum(neigh * s_neigh), hq12],
                           [hq12, dt * np.sum(left * s_left)]])
        return LikelihoodStats(path.t_end, path.n_steps, h=h, h_quad=h_quad,
                               filter_report=report)
    i_vec = -vec(s_inc.T @ left)
    dense = dt * np.einsum("na,nik,nb->aibk", left, sig_inv, left).reshape(d * d, d * d)
    dense = 0.5 * (dense + dense.T)
    return LikelihoodStats(path.t_end, path.n_steps, i_vec=i_vec, i_quad_dense=dense,
                           filter_report=report)


def conditional_estimate(path: SamplePath, graph: Graph | None = None, kind: str = "theta",
                         opts: ContinuousPartOptions | None = None,
                         ci_level: float = 0.95) -> EstimateReport:
    """Drift estimate from a volatility-modulated record.

    Same linear systems as the constant-covariance estimators, with the
    recorded sigma_path supplying the weight of every interval.
    """
    stats = conditional_stats(path, graph=graph, kind=kind, opts=opts)
    if kind == "theta":
        return theta_mle(stats, ci_level=ci_level)
    return psi_mle(stats, ci_level=ci_level)


def autocovariance_norms(values: np.ndarray, lags) -> np.ndarray:
    """Frobenius norm of the sample lag-h autocovariance, one value per lag."""
    x = as_float_array(values, "values")
    if x.ndim != 2:
        raise ValueError("values must be a (points, d) record")
    x = x - x.mean(axis=0)
    n = x.shape[0]
    out = np.empty(len(lags))
    for pos, lag in enumerate(lags):
        lag = int(lag)
        if not 0 <= lag < n:
            raise ValueError(f"lag {lag} outside the record of length {n}")
        out[pos] = np.linalg.norm(x[lag:].T @ x[:n - lag] / (n - lag))
    return out


@dataclass(frozen=True)
class DecayFit:
    """Exponential envelope log(norm) ~ log_scale - rate * lag time."""

    rate: float
    log_scale: float
    r_squared: float


def fit_decay_envelope(lag_times, norms) -> DecayFit:
    """Least-squares exponential envelope through autocovariance norms.

    r_squared reports how much of the variation of the log norms the
    envelope explains; mixing paths give values near one.
    """
    t = as_float_array(lag_times, "lag times")
    y = np.log(as_float_array(norms, "autocovariance norms"))
    if t.shape != y.shape or t.ndim != 1 or t.shape[0] < 3:
        raise ValueError("need at least three lags to fit an envelope")
    design = np.column_stack([np.ones_like(t), -t])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / total if total > 0.0 else 1.0
    return DecayFit(rate=float(coef[1]), log_scale=float(coef[0]), r_squared=r2)


def save_sigma_path_csv(path: SamplePath, file) -> None:
    """Spot covariance record, one grid point per row, matrices row-major."""
    if path.sigma_path is None:
        raise ConfigError("path carries no spot covariance record")
    d = path.d
    header = ["t"] + [f"sigma{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    n_points = path.times.shape[0]
    rows = np.column_stack([path.times, path.sigma_path.reshape(n_points, d * d)])
    write_csv(file, header, rows)


def load_sigma_path_csv(file) -> np.ndarray:
    """Covariance record written by save_sigma_path_csv, shape (points, d, d)."""
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    d = int(round(math.sqrt(data.shape[1] - 1)))
    if (data.shape[1] - 1) != d * d:
        raise ConfigError("sigma path file does not hold square matrices")
    return data[:, 1:].reshape(data.shape[0], d, d)


def with_sigma_path(path: SamplePath, sigma_path: np.ndarray) -> SamplePath:
    """Copy of the path with the given spot covariance record attached."""
    return SamplePath(path.times, path.values, jump_marks=path.jump_marks,
                      sigma_path=as_float_array(sigma_path, "sigma path"))
