"""Shared fixtures and independent reference implementations.

The reference functions here recompute the library's quantities by explicit
Python loops over the defining formulas, with no shared code path, so the
vectorized implementations are tested against genuinely independent sums.
"""

import numpy as np
import pytest

from grou.graphs import Graph, ring, row_normalize
from grou.simulate import LevyDriverSpec, SamplePath, simulate_grou


def brute_theta_stats(path, graph, sigma):
    """Loop evaluation of the two-scalar sufficient statistics.

    h = -(sum <A y_j, dy_j>_sigma, sum <y_j, dy_j>_sigma), left points;
    h_quad entries are dt-weighted left-point sums of the same inner
    products of (A y, y) with themselves.
    """
    a_bar = row_normalize(graph)
    sig_inv = np.linalg.inv(sigma)
    y = path.values
    dt = path.dt
    h = np.zeros(2)
    h_quad = np.zeros((2, 2))
    for j in range(path.n_steps):
        left = y[j]
        inc = y[j + 1] - y[j]
        neigh = a_bar @ left
        h[0] -= neigh @ sig_inv @ inc
        h[1] -= left @ sig_inv @ inc
        h_quad[0, 0] += dt * (neigh @ sig_inv @ neigh)
        h_quad[0, 1] += dt * (neigh @ sig_inv @ left)
        h_quad[1, 1] += dt * (left @ sig_inv @ left)
    h_quad[1, 0] = h_quad[0, 1]
    return h, h_quad


def brute_psi_stats(path, sigma):
    """Loop evaluation of the entrywise statistics.

    i_vec = -sum (y_j kron sigma^-1) dy_j, k = dt-weighted sum of outer
    products of the left points.
    """
    sig_inv = np.linalg.inv(sigma)
    y = path.values
    d = y.shape[1]
    dt = path.dt
    i_vec = np.zeros(d * d)
    k = np.zeros((d, d))
    for j in range(path.n_steps):
        left = y[j]
        inc = y[j + 1] - y[j]
        i_vec -= np.kron(left.reshape(-1, 1), sig_inv) @ inc
        k += dt * np.outer(left, left)
    return i_vec, k


def trapezoid_lyapunov(q, sigma, n_nodes=2 ** 15):
    """Quadrature oracle for the stationary covariance integral.

    Trapezoid rule on [0, 40 / lambda_min] with one Richardson
    extrapolation step; independent of the linear-solve route.
    """
    lam = np.linalg.eigvals(q).real.min()
    upper = 40.0 / lam

    def trap(n):
        s = np.linspace(0.0, upper, n + 1)
        w, v = np.linalg.eig(q)
        v_inv = np.linalg.inv(v)
        # e^{-sQ} = V e^{-s w} V^-1 batched over quadrature nodes
        decay = np.exp(-np.outer(s, w))
        mats = np.einsum("ij,nj,jk->nik", v, decay, v_inv).real
        integrand = np.einsum("nij,jk,nlk->nil", mats, sigma, mats)
        weights = np.full(n + 1, upper / n)
        weights[0] *= 0.5
        weights[-1] *= 0.5
        return np.einsum("n,nij->ij", weights, integrand)

    coarse = trap(n_nodes // 2)
    fine = trap(n_nodes)
    return fine + (fine - coarse) / 3.0


def hand_path(values, dt):
    """SamplePath from explicit grid values."""
    values = np.asarray(values, dtype=float)
    times = dt * np.arange(values.shape[0])
    return SamplePath(times, values)


@pytest.fixture(scope="session")
def ring4():
    return ring(4)


@pytest.fixture(scope="session")
def brownian_path_d4(ring4):
    """Medium Brownian path on the 4-ring for cross-module checks."""
    from grou.graphs import ThetaParams, q_from_theta

    q = q_from_theta(ring4, ThetaParams(0.3, 1.0)).matrix
    driver = LevyDriverSpec(drift=np.zeros(4), sigma=np.eye(4))
    return q, driver, simulate_grou(q, driver, 200.0, 0.01, seed=909)


def random_stationary_q(rng, d):
    """Diagonally dominant random drift matrix, always stationary."""
    m = rng.uniform(-0.4, 0.4, size=(d, d))
    np.fill_diagonal(m, 0.0)
    diag = np.abs(m).sum(axis=1) + rng.uniform(0.5, 1.5, size=d)
    return m + np.diag(diag)


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)
