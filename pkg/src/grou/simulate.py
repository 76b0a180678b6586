"""Exact path simulation for the graph OU process.

On a uniform grid the process is an exact vector AR(1): the state decays
through the matrix exponential of the drift and picks up a Gaussian
innovation whose covariance comes from the stationary Lyapunov equation.
Compound Poisson jumps are drawn per interval and propagated through the
remaining decay, so grid marginals follow the exact law for any step size.
An Euler scheme is kept behind a flag for cross-checks only.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import ConfigError, NonStationaryError, NumericError
from .graphs import DynamicsMatrix, check_stationary_spectral, vec, vec_inverse
from .rng import rng_stream
from .serialize import dump_json, fmt_float, load_json, write_csv
from .validation import as_float_array, check_positive, check_spd, check_square, check_vector

_EIG_COND_LIMIT = 1e6


def matrix_exponential(m: np.ndarray) -> np.ndarray:
    """Matrix exponential via scaling and squaring."""
    m = check_square(m, "matrix")
    return scipy.linalg.expm(m)


def lyapunov_stationary_cov(q, sigma: np.ndarray) -> np.ndarray:
    """Stationary covariance S solving q S + S q^T = sigma.

    Solved through the vectorized linear system (I kron q + q kron I) vec(S)
    = vec(sigma). The drift must be stationary so the Kronecker sum is
    invertible.
    """
    q = _as_matrix(q)
    sigma = check_square(sigma, "sigma")
    if not check_stationary_spectral(q):
        raise NonStationaryError("drift matrix has an eigenvalue outside the right half-plane")
    d = q.shape[0]
    eye = np.eye(d)
    lhs = np.kron(eye, q) + np.kron(q, eye)
    try:
        s = np.linalg.solve(lhs, vec(sigma))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Lyapunov system is singular: {exc}") from None
    s = vec_inverse(s)
    return 0.5 * (s + s.T)


@dataclass(frozen=True, eq=False)
class JumpSizeSampler:
    """Named distribution for jump sizes in R^d.

    Supported names: "gaussian" (params mean, cov), "laplace" (params loc,
    scale, independent coordinates), "uniform" (params low, high, bounded
    box). All three have finite exponential log-moments near zero, as the
    stationary theory requires.
    """

    name: str
    params: dict

    def __post_init__(self):
        if self.name == "gaussian":
            mean = check_vector(self.params["mean"], name="jump mean")
            cov = check_spd(self.params["cov"], "jump covariance")
            if cov.shape[0] != mean.shape[0]:
                raise ValueError("jump mean and covariance sizes differ")
            object.__setattr__(self, "params", {"mean": mean, "cov": cov})
        elif self.name == "laplace":
            loc = check_vector(self.params["loc"], name="jump loc")
            scale = check_vector(self.params["scale"], d=loc.shape[0], name="jump scale")
            if np.any(scale <= 0):
                raise ValueError("laplace scale must be positive")
            object.__setattr__(self, "params", {"loc": loc, "scale": scale})
        elif self.name == "uniform":
            low = check_vector(self.params["low"], name="jump low")
            high = check_vector(self.params["high"], d=low.shape[0], name="jump high")
            if np.any(high <= low):
                raise ValueError("uniform jump bounds must satisfy low < high")
            object.__setattr__(self, "params", {"low": low, "high": high})
        else:
            raise ValueError(f"unknown jump distribution {self.name!r}")

    @property
    def d(self) -> int:
        first = next(iter(self.params.values()))
        return first.shape[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.name == "gaussian":
            chol = _psd_factor(p["cov"])
            return p["mean"] + rng.standard_normal((n, self.d)) @ chol.T
        if self.name == "laplace":
            return rng.laplace(p["loc"], p["scale"], size=(n, self.d))
        return rng.uniform(p["low"], p["high"], size=(n, self.d))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": {k: v.tolist() for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, obj) -> "JumpSizeSampler":
        return cls(obj["name"], {k: np.asarray(v, dtype=float) for k, v in obj["params"].items()})


@dataclass(frozen=True, eq=False)
class CompoundPoissonSpec:
    """Jump component: arrival rate and size distribution."""

    rate: float
    sampler: JumpSizeSampler

    def __post_init__(self):
        object.__setattr__(self, "rate", check_positive(self.rate, "jump rate"))

    def to_dict(self) -> dict:
        return {"rate": self.rate, "sampler": self.sampler.to_dict()}

    @classmethod
    def from_dict(cls, obj) -> "CompoundPoissonSpec":
        return cls(obj["rate"], JumpSizeSampler.from_dict(obj["sampler"]))


@dataclass(frozen=True, eq=False)
class LevyDriverSpec:
    """Driving noise: deterministic drift, Brownian covariance, optional jumps.

    The drift is the plain (untruncated) drift of the driver, i.e. any small
    jump compensator is already folded in.
    """

    drift: np.ndarray
    sigma: np.ndarray
    jumps: CompoundPoissonSpec | None = None

    def __post_init__(self):
        sigma = check_spd(self.sigma, "sigma")
        drift = check_vector(self.drift, d=sigma.shape[0], name="drift")
        if self.jumps is not None and self.jumps.sampler.d != sigma.shape[0]:
            raise ValueError("jump distribution dimension does not match sigma")
        drift = drift.copy()
        drift.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None

    def to_dict(self) -> dict:
        obj = {"drift": self.drift.tolist(), "sigma": self.sigma.tolist()}
        if self.jumps is not None:
            obj["jumps"] = self.jumps.to_dict()
        return obj

    @classmethod
    def from_dict(cls, obj) -> "LevyDriverSpec":
        jumps = None
        if obj.get("jumps") is not None:
            jumps = CompoundPoissonSpec.from_dict(obj["jumps"])
        return cls(np.asarray(obj["drift"], dtype=float), np.asarray(obj["sigma"], dtype=float), jumps)


@dataclass(frozen=True, eq=False)
class Var1Representation:
    """One-step exact transition: y' = phi y + eps, eps ~ N(noise_mean, noise_cov)."""

    phi: np.ndarray
    noise_mean: np.ndarray
    noise_cov: np.ndarray
    dt: float
    stationary_cov: np.ndarray


def var1_decompose(q, driver: LevyDriverSpec, dt: float) -> Var1Representation:
    """Exact AR(1) representation of the Gaussian part on a grid of step dt."""
    q = _as_matrix(q)
    dt = check_positive(dt, "dt")
    if driver.d != q.shape[0]:
        raise ValueError("driver dimension does not match the drift matrix")
    phi = matrix_exponential(-dt * q)
    s_cov = lyapunov_stationary_cov(q, driver.sigma)
    noise_cov = s_cov - phi @ s_cov @ phi.T
    noise_cov = 0.5 * (noise_cov + noise_cov.T)
    if np.any(driver.drift != 0.0):
        mean_inf = np.linalg.solve(q, driver.drift)
        noise_mean = (np.eye(q.shape[0]) - phi) @ mean_inf
    else:
        noise_mean = np.zeros(q.shape[0])
    return Var1Representation(phi, noise_mean, noise_cov, dt, s_cov)


@dataclass(frozen=True, eq=False)
class JumpMarks:
    """True jumps inserted by the simulator: interval index and raw size."""

    indices: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        sizes = as_float_array(self.sizes, "jump sizes")
        if idx.ndim != 1 or sizes.ndim != 2 or sizes.shape[0] != idx.shape[0]:
            raise ValueError("jump indices and sizes are inconsistent")
        idx.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return self.indices.shape[0]

    def __iter__(self):
        return zip(self.indices.tolist(), self.sizes)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Values of the process on a uniform time grid.

    jump_marks records the true jumps the simulator inserted (used by the
    oracle jump filter); sigma_path carries the spot covariance at each grid
    point for volatility-modulated simulations.
    """

    times: np.ndarray
    values: np.ndarray
    jump_marks: JumpMarks | None = None
    sigma_path: np.ndarray | None = None

    def __post_init__(self):
        times = as_float_array(self.times, "times")
        values = as_float_array(self.values, "values")
        if times.ndim != 1 or values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ValueError("times and values are inconsistent")
        if times.shape[0] >= 2:
            steps = np.diff(times)
            dt = steps[0]
            if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
                raise ValueError("times must form a uniform increasing grid")
        if self.jump_marks is not None and len(self.jump_marks):
            if self.jump_marks.sizes.shape[1] != values.shape[1]:
                raise ValueError("jump mark dimension does not match the path")
            if self.jump_marks.indices.min() < 0 or self.jump_marks.indices.max() >= times.shape[0] - 1:
                raise ValueError("jump mark interval index out of range")
        if self.sigma_path is not None:
            sp = as_float_array(self.sigma_path, "sigma path")
            d = values.shape[1]
            if sp.shape != (times.shape[0], d, d):
                raise ValueError("sigma path must have one d x d matrix per grid point")
            sp.setflags(write=False)
            object.__setattr__(self, "sigma_path", sp)
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def dt(self) -> float | None:
        if self.times.shape[0] < 2:
            return None
        return float(self.times[1] - self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


def _as_matrix(q) -> np.ndarray:
    if isinstance(q, DynamicsMatrix):
        return np.asarray(q.matrix)
    return check_square(q, "dynamics matrix")


def _psd_factor(m: np.ndarray) -> np.ndarray:
    """Factor L with L L^T = m for a PSD matrix, tolerating zero eigenvalues."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(m)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)


def _ar1_path(phi: np.ndarray, innovations: np.ndarray, y0: np.ndarray) -> np.ndarray:
    """Run y_j = phi y_{j-1} + u_j and return the (n+1, d) path from y0.

    When phi has a well-conditioned eigenbasis the recursion runs per
    eigencoordinate through a C-level IIR filter; otherwise it falls back to
    a plain loop.
    """
    n, d = innovations.shape
    out = np.empty((n + 1, d))
    out[0] = y0
    if n == 0:
        return out
    use_eig = False
    try:
        evals, vecs = np.linalg.eig(phi)
        if np.isfinite(np.linalg.cond(vecs)) and np.linalg.cond(vecs) < _EIG_COND_LIMIT:
            use_eig = True
    except np.linalg.LinAlgError:
        pass
    if use_eig:
        vinv = np.linalg.inv(vecs)
        z0 = vinv @ y0
        w = innovations @ vinv.T
        z = np.empty((n, d), dtype=complex)
        for k in range(d):
            zi = np.array([evals[k] * z0[k]])
            z[:, k], _ = scipy.signal.lfilter([1.0], [1.0, -evals[k]], w[:, k], zi=zi)
        out[1:] = (z @ vecs.T).real
    else:
        y = np.array(y0, dtype=float)
        for j in range(n):
            y = phi @ y + innovations[j]
            out[j + 1] = y
    return out


def _propagate_jumps(q: np.ndarray, remaining: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """exp(-s q) z for each remaining time s and jump z, batched."""
    try:
        evals, vecs = np.linalg.eig(q)
        cond = np.linalg.cond(vecs)
    except np.linalg.LinAlgError:
        cond = np.inf
    if np.isfinite(cond) and cond < _EIG_COND_LIMIT:
        vinv = np.linalg.inv(vecs)
        w = sizes @ vinv.T
        decay = np.exp(-remaining[:, None] * evals[None, :])
        return ((w * decay) @ vecs.T).real
    out = np.empty_like(sizes)
    for k in range(sizes.shape[0]):
        out[k] = scipy.linalg.expm(-remaining[k] * q) @ sizes[k]
    return out


def _grid_steps(t_end: float, dt: float) -> int:
    dt = check_positive(dt, "dt")
    t_end = check_positive(t_end, "t_end")
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-8 * max(1.0, t_end):
        raise ConfigError(f"t_end {t_end:g} is not a multiple of dt {dt:g}")
    return n


def simulate_grou(q, driver: LevyDriverSpec, t_end: float, dt: float, seed: int,
                  init="stationary", method: str = "exact") -> SamplePath:
    """Simulate the process dY = -Q Y dt + dL on a uniform grid.

    :param q: drift matrix (DynamicsMatrix or array), must be stationary.
    :param init: "stationary" for a draw from the Gaussian stationary law
        (with a burn-in of 10 / min real eigenvalue when jumps are present),
        or an array fixing y0.
    :param method: "exact" for the AR(1) scheme, "euler" for the first-order
        cross-check scheme.
    """
    qm = _as_matrix(q)
    d = qm.shape[0]
    if driver.d != d:
        raise ValueError("driver dimension does not match the drift matrix")
    if method not in ("exact", "euler"):
        raise ConfigError(f"unknown simulation method {method!r}")
    check = check_stationary_spectral(qm)
    if not check:
        raise NonStationaryError(check.reason)
    n = _grid_steps(t_end, dt)
    rep = var1_decompose(qm, driver, dt)
    rng = rng_stream(seed)

    stationary = isinstance(init, str)
    if stationary:
        if init != "stationary":
            raise ConfigError(f"unknown initial condition {init!r}")
        mean_inf = np.linalg.solve(qm, driver.drift) if np.any(driver.drift != 0.0) else np.zeros(d)
        y0 = mean_inf + _psd_factor(rep.stationary_cov) @ rng.standard_normal(d)
    else:
        y0 = check_vector(init, d=d, name="initial state")

    n_burn = 0
    if driver.has_jumps and stationary:
        lam_min = float(np.linalg.eigvals(qm).real.min())
        n_burn = int(math.ceil(10.0 / lam_min / dt))
    n_total = n_burn + n

    if method == "exact":
        phi = rep.phi
        noise_factor = _psd_factor(rep.noise_cov)
        innov = rng.standard_normal((n_total, d)) @ noise_factor.T + rep.noise_mean
    else:
        phi = np.eye(d) - dt * qm
        sigma_factor = _psd_factor(driver.sigma)
        innov = (rng.standard_normal((n_total, d)) @ sigma_factor.T) * math.sqrt(dt) + dt * driver.drift

    marks = None
    if driver.has_jumps:
        jumps = driver.jumps
        counts = rng.poisson(jumps.rate * dt, size=n_total)
        m = int(counts.sum())
        if m:
            intervals = np.repeat(np.arange(n_total), counts)
            offsets = rng.uniform(0.0, dt, size=m)
            sizes = jumps.sampler.sample(rng, m)
            if method == "exact":
                contrib = _propagate_jumps(qm, dt - offsets, sizes)
            else:
                contrib = sizes
            np.add.at(innov, intervals, contrib)
            keep = intervals >= n_burn
            if np.any(keep):
                marks = JumpMarks(intervals[keep] - n_burn, sizes[keep])

    values = _ar1_path(phi, innov, y0)[n_burn:]
    times = np.arange(n + 1) * dt
    return SamplePath(times, values, jump_marks=marks)


def ergodic_average(path: SamplePath, g):
    """Left-point time average of a functional along the path.

    :param g: "identity", "outer" (outer product of the state with itself),
        or any callable mapping a state vector to a scalar or array.
    """
    values = path.values
    if values.shape[0] == 1:
        if g == "identity":
            return values[0].copy()
        if g == "outer":
            return np.outer(values[0], values[0])
        return np.asarray(g(values[0]), dtype=float)
    left = values[:-1]
    if g == "identity":
        return left.mean(axis=0)
    if g == "outer":
        return left.T @ left / left.shape[0]
    acc = np.asarray(g(left[0]), dtype=float).copy()
    for row in left[1:]:
        acc += g(row)
    return acc / left.shape[0]


def path_sidecar(path: SamplePath, seed=None, driver: LevyDriverSpec | None = None) -> dict:
    """Metadata dict describing a stored path."""
    obj = {
        "d": path.d,
        "n_steps": path.n_steps,
        "dt": path.dt,
        "t_end": path.t_end,
        "n_jumps": 0 if path.jump_marks is None else len(path.jump_marks),
    }
    if seed is not None:
        obj["seed"] = int(seed)
    if driver is not None:
        obj["driver"] = driver.to_dict()
    return obj


def save_path_csv(path: SamplePath, file) -> None:
    header = ["t"] + [f"y{i + 1}" for i in range(path.d)]
    rows = np.column_stack([path.times, path.values])
    write_csv(file, header, rows)


def load_path_csv(file, jump_file=None) -> SamplePath:
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    marks = load_jump_marks_csv(jump_file) if jump_file is not None else None
    return SamplePath(data[:, 0], data[:, 1:], jump_marks=marks)


def save_jump_marks_csv(marks: JumpMarks, file) -> None:
    d = marks.sizes.shape[1] if len(marks) else 0
    header = ["interval"] + [f"z{i + 1}" for i in range(d)]
    with open(file, "w") as fh:
        fh.write(",".join(header) + "\n")
        for idx, size in marks:
            fh.write(",".join([str(idx)] + [fmt_float(v) for v in size]) + "\n")


def load_jump_marks_csv(file) -> JumpMarks:
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return JumpMarks(np.zeros(0, dtype=np.int64), np.zeros((0, 1)))
    return JumpMarks(data[:, 0].astype(np.int64), data[:, 1:])


def save_path_binary(path: SamplePath, file, seed=None, driver=None) -> None:
    """Columnar binary dump plus a JSON sidecar at `<file>.json`."""
    arrays = {"times": path.times, "values": path.values}
    if path.jump_marks is not None:
        arrays["jump_indices"] = path.jump_marks.indices
        arrays["jump_sizes"] = path.jump_marks.sizes
    if path.sigma_path is not None:
        arrays["sigma_path"] = path.sigma_path
    np.savez(file, **arrays)
    dump_json(path_sidecar(path, seed=seed, driver=driver), str(file) + ".json")


def load_path_binary(file):
    """Load a binary path dump; returns (path, sidecar dict or None)."""
    with np.load(file) as data:
        marks = None
        if "jump_indices" in data:
            marks = JumpMarks(data["jump_indices"], data["jump_sizes"])
        sigma_path = data["sigma_path"] if "sigma_path" in data else None
        path = SamplePath(data["times"], data["values"], jump_marks=marks, sigma_path=sigma_path)
    try:
        sidecar = load_json(str(file) + ".json")
    except OSError:
        sidecar = None
    return path, sidecar
