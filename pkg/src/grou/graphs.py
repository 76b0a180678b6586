"""Graphs, drift parametrizations and stationarity checks.

The drift of the process is a matrix Q acting on the node values. Q is
assembled either from two scalars (a momentum effect on the diagonal and a
network effect spread over row-normalized neighbours) or from one value per
matrix entry masked by the graph. Both parametrizations and the checks that
guarantee a stationary solution live here.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import rng_stream
from .validation import as_float_array, check_probability, check_square, check_vector

FROM_THETA = "theta"
FROM_PSI = "psi"
EXPLICIT = "explicit"


@dataclass(frozen=True)
class Graph:
    """Directed graph on d nodes with 0/1 adjacency and empty diagonal."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = check_square(self.adjacency, "adjacency")
        if not np.all((adj == 0.0) | (adj == 1.0)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj) != 0.0):
            raise ValueError("adjacency diagonal must be zero")
        adj = adj.copy()
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Out-degree of each node (row sums)."""
        return self.adjacency.sum(axis=1)

    @property
    def has_edges(self) -> bool:
        """False for the edgeless graph, where the network effect is unidentifiable."""
        return bool(self.adjacency.any())

    def edge_list(self):
        """Edges as a list of (i, j) pairs, row-major order."""
        rows, cols = np.nonzero(self.adjacency)
        return list(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True)
class ThetaParams:
    """Two-scalar drift parametrization.

    theta1 is the network effect (weight of the row-normalized neighbour
    average), theta2 the momentum effect (weight of the node's own value).
    """

    theta1: float
    theta2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2], dtype=float)


@dataclass(frozen=True)
class PsiParams:
    """Entrywise drift parametrization: d*d values in column-stacked order."""

    values: np.ndarray

    def __post_init__(self):
        v = check_vector(self.values, name="psi values")
        d = int(round(np.sqrt(v.shape[0])))
        if d * d != v.shape[0]:
            raise ValueError(f"psi must have a square length, got {v.shape[0]}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.values.shape[0])))


@dataclass(frozen=True)
class DynamicsMatrix:
    """Assembled d x d drift matrix with a provenance tag."""

    matrix: np.ndarray
    source: str = EXPLICIT

    def __post_init__(self):
        m = check_square(self.matrix, "dynamics matrix")
        if self.source not in (FROM_THETA, FROM_PSI, EXPLICIT):
            raise ValueError(f"unknown source tag {self.source!r}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class StationarityCheck:
    """Outcome of a stationarity test with the reason for a failure."""

    ok: bool
    reason: str = ""
    failing_rows: tuple = field(default=())

    def __bool__(self):
        return self.ok


def row_normalize(graph: Graph) -> np.ndarray:
    """Adjacency scaled so each non-isolated row sums to one.

    Row i is divided by max(1, out-degree of i); isolated nodes keep an
    all-zero row instead of dividing by zero.
    """
    deg = graph.degrees
    scale = np.maximum(deg, 1.0)
    return graph.adjacency / scale[:, None]


def q_from_theta(graph: Graph, theta: ThetaParams) -> DynamicsMatrix:
    """Assemble theta2 * I + theta1 * row_normalize(graph)."""
    a_bar = row_normalize(graph)
    q = theta.theta2 * np.eye(graph.d) + theta.theta1 * a_bar
    return DynamicsMatrix(q, source=FROM_THETA)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking of a matrix into a vector."""
    m = as_float_array(m, "matrix")
    if m.ndim != 2:
        raise ValueError(f"vec expects a matrix, got shape {m.shape}")
    return m.reshape(-1, order="F")


def vec_inverse(x: np.ndarray) -> np.ndarray:
    """Inverse of column-stacking: consecutive length-d blocks become columns."""
    x = check_vector(x, name="vectorized matrix")
    d = int(round(np.sqrt(x.shape[0])))
    if d * d != x.shape[0]:
        raise ValueError(f"length {x.shape[0]} is not a perfect square")
    return x.reshape(d, d, order="F")


def q_from_psi(graph: Graph, psi: PsiParams) -> DynamicsMatrix:
    """Assemble the entrywise drift matrix masked by the graph.

    The mask keeps the diagonal and the entries where the row-normalized
    adjacency is nonzero; all other entries of the assembled matrix are zero
    regardless of psi.
    """
    if psi.d != graph.d:
        raise ValueError(f"psi is {psi.d}x{psi.d} but the graph has {graph.d} nodes")
    mask = np.eye(graph.d) + row_normalize(graph)
    q = mask * vec_inverse(psi.values)
    return DynamicsMatrix(q, source=FROM_PSI)


def network_mask(graph: Graph) -> np.ndarray:
    """0/1 matrix of the entries the graph allows in the drift: diagonal plus edges."""
    return (np.eye(graph.d) + graph.adjacency > 0).astype(float)


def check_stationary_theta(theta: ThetaParams) -> StationarityCheck:
    """Sufficient condition for stationarity of the two-scalar drift.

    Requires theta2 > 0 and theta2 > |theta1|, which places every Gershgorin
    disc of the assembled matrix strictly in the right half-plane for any
    graph.
    """
    if not theta.theta2 > 0.0:
        return StationarityCheck(False, f"momentum effect must be positive, got {theta.theta2:g}")
    if not theta.theta2 > abs(theta.theta1):
        return StationarityCheck(
            False,
            f"momentum effect {theta.theta2:g} must exceed |network effect| {abs(theta.theta1):g}",
        )
    return StationarityCheck(True)


def check_stationary_psi(graph: Graph, psi: PsiParams) -> StationarityCheck:
    """Row diagonal dominance of the assembled entrywise drift matrix.

    Each diagonal entry must be positive and strictly larger than the sum of
    the absolute off-diagonal entries in its row.
    """
    q = q_from_psi(graph, psi).matrix
    diag = np.diag(q)
    off = np.abs(q).sum(axis=1) - np.abs(diag)
    bad = np.nonzero(~((diag > 0.0) & (diag > off)))[0]
    if bad.size:
        rows = ", ".join(str(i) for i in bad.tolist())
        return StationarityCheck(
            False,
            f"diagonal dominance fails at row(s) {rows}",
            failing_rows=tuple(bad.tolist()),
        )
    return StationarityCheck(True)


def check_stationary_spectral(q) -> StationarityCheck:
    """Exact stationarity test: all eigenvalues in the open right half-plane.

    Positivity is read relative to the matrix 1-norm so the verdict does not
    depend on the overall scale of q.
    """
    m = q.matrix if isinstance(q, DynamicsMatrix) else check_square(q, "dynamics matrix")
    eigs = np.linalg.eigvals(m)
    tol = 1e-12 * max(1.0, float(np.linalg.norm(m, 1)))
    min_re = float(eigs.real.min())
    if min_re <= tol:
        return StationarityCheck(False, f"minimum eigenvalue real part {min_re:g} is not positive")
    return StationarityCheck(True)


def erdos_renyi(d: int, p: float, seed: int) -> Graph:
    """Seeded undirected Erdos-Renyi graph: each unordered pair is an edge
    with probability p, mirrored into a symmetric adjacency."""
    if d < 1:
        raise ValueError(f"need at least one node, got {d}")
    p = check_probability(p, "edge probability")
    rng = rng_stream(seed)
    upper = rng.random((d, d)) < p
    adj = np.triu(upper, k=1)
    adj = (adj | adj.T).astype(float)
    return Graph(adj)


def ring(d: int) -> Graph:
    """Undirected cycle on d nodes."""
    if d < 2:
        raise ValueError(f"a ring needs at least two nodes, got {d}")
    adj = np.zeros((d, d))
    idx = np.arange(d)
    adj[idx, (idx + 1) % d] = 1.0
    adj[idx, (idx - 1) % d] = 1.0
    return Graph(adj)


def complete(d: int) -> Graph:
    """Complete graph on d nodes."""
    return Graph(np.ones((d, d)) - np.eye(d))


def load_edge_list(path, d=None) -> Graph:
    """Read a graph from a text file with one `i j` pair per line, 0-based.

    :param d: number of nodes; defaults to 1 + the largest index seen.
    """
    pairs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'i j', got {line!r}")
            i, j = int(parts[0]), int(parts[1])
            if i < 0 or j < 0:
                raise ValueError(f"{path}:{ln}: negative node index")
            if i == j:
                raise ValueError(f"{path}:{ln}: self-loops are not allowed")
            pairs.append((i, j))
    if d is None:
        d = 1 + max((max(i, j) for i, j in pairs), default=-1)
        if d < 1:
            raise ValueError(f"{path}: empty edge list and no node count given")
    adj = np.zeros((d, d))
    for i, j in pairs:
        if i >= d or j >= d:
            raise ValueError(f"edge ({i}, {j}) outside a graph on {d} nodes")
        adj[i, j] = 1.0
    return Graph(adj)


def save_edge_list(graph: Graph, path) -> None:
    with open(path, "w") as fh:
        for i, j in graph.edge_list():
            fh.write(f"{i} {j}\n")


def load_adjacency_csv(path) -> Graph:
    """Read a dense 0/1 adjacency matrix from CSV."""
    adj = np.loadtxt(path, delimiter=",", ndmin=2)
    return Graph(adj)


def save_adjacency_csv(graph: Graph, path) -> None:
    np.savetxt(path, graph.adjacency, delimiter=",", fmt="%d")
