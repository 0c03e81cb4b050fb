"""Fuzzy neighbour graph over sentences and the low-dimensional layout.

Pipeline: exact k-nearest neighbours from the full distance matrix, per-node
smooth-kNN calibration (rho = nearest positive distance, sigma solved by
bisection), directed memberships symmetrized with the probabilistic t-conorm,
spectral coordinates from the normalized graph Laplacian, then edge-sampled
stochastic gradient descent on the membership cross-entropy.

Train and test sentences are projected jointly from one distance matrix;
there is no transform of unseen points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from . import _layout
from .errors import EmapError
from .setdist import DistanceMatrix

logger = logging.getLogger(__name__)

SMOOTH_K_TOLERANCE = 1e-5
SMOOTH_K_MAX_ITER = 64
MIN_SIGMA_SCALE = 1e-3
COMPONENT_OFFSET = 20.0
COORD_RANGE = 10.0


@dataclass(frozen=True)
class HyperParams:
    """Projection configuration.

    ``a`` and ``b`` shape the low-dimensional similarity curve directly;
    ``min_dist`` and ``spread`` are recorded in run metadata but do not
    re-derive them.
    """

    embedding_dim: int
    n_neighbors: int = 40
    min_dist: float = 1.0
    spread: float = 1.0
    a: float = 1.929
    b: float = 0.791
    n_iters: int = 1000
    negative_sample_rate: int = 5
    initial_learning_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise EmapError("embedding_dim must be >= 1")
        if self.n_neighbors < 2:
            raise EmapError("n_neighbors must be >= 2")
        if self.a <= 0 or self.b <= 0:
            raise EmapError("curve parameters a and b must be positive")
        if self.n_iters < 1:
            raise EmapError("n_iters must be >= 1")
        if self.negative_sample_rate < 0:
            raise EmapError("negative_sample_rate must be >= 0")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetric membership weights over node pairs, stored once per pair (i < j)."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(self.vals <= 0.0) or np.any(self.vals > 1.0):
            raise EmapError("membership weights must lie in (0, 1]")
        if np.any(self.rows >= self.cols):
            raise EmapError("edges must be stored with row < col")
        if np.any(self.sigma <= 0.0):
            raise EmapError("sigma must be positive")

    @property
    def n_edges(self) -> int:
        return self.vals.size


def _matrix_values(D):
    if isinstance(D, DistanceMatrix):
        return D.values
    return np.asarray(D, dtype=np.float64)


def knn_from_matrix(D, k):
    """The k smallest off-diagonal distances per node, ties broken by smaller index.

    Returns (indices, distances), each of shape (n, k), rows sorted
    ascending by (distance, index).
    """
    values = _matrix_values(D)
    n = values.shape[0]
    if k >= n:
        raise EmapError(f"k={k} must be smaller than the number of nodes ({n})")
    if k < 1:
        raise EmapError("k must be >= 1")
    indices = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k), dtype=np.float64)
    ids = np.arange(n)
    for i in range(n):
        order = np.lexsort((ids, values[i]))
        order = order[order != i][:k]
        indices[i] = order
        dists[i] = values[i, order]
    return indices, dists


def smooth_knn_params(neigh_dists, k):
    """Per-node calibration of the membership kernel.

    rho is the smallest positive neighbour distance (0 if all are zero);
    sigma solves sum_i exp(-max(0, d_i - rho) / sigma) = log2(k) by
    bisection, clamped from below at MIN_SIGMA_SCALE times the mean
    neighbour distance.
    """
    d = np.asarray(neigh_dists, dtype=np.float64)
    positive = d[d > 0.0]
    rho = float(positive.min()) if positive.size else 0.0
    target = np.log2(k)
    shifted = np.maximum(d - rho, 0.0)

    lo = 0.0
    hi = np.inf
    mid = 1.0
    for _ in range(SMOOTH_K_MAX_ITER):
        total = float(np.exp(-shifted / mid).sum())
        if abs(total - target) < SMOOTH_K_TOLERANCE:
            break
        if total > target:
            hi = mid
            mid = (lo + hi) / 2.0
        else:
            lo = mid
            mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
    sigma = max(mid, MIN_SIGMA_SCALE * float(d.mean()))
    return rho, sigma


def fuzzy_graph(neighbours, dists, params: HyperParams) -> FuzzyGraph:
    """Directed memberships exp(-max(0, d - rho) / sigma), symmetrized by
    the probabilistic t-conorm v1 + v2 - v1*v2 over the union of directed edges."""
    neighbours = np.asarray(neighbours)
    dists = np.asarray(dists, dtype=np.float64)
    n, k = neighbours.shape
    rho = np.empty(n)
    sigma = np.empty(n)
    vals = np.empty((n, k))
    for i in range(n):
        rho[i], sigma[i] = smooth_knn_params(dists[i], k)
        vals[i] = np.exp(-np.maximum(dists[i] - rho[i], 0.0) / sigma[i])

    rows = np.repeat(np.arange(n), k)
    directed = sp.coo_matrix((vals.ravel(), (rows, neighbours.ravel())), shape=(n, n))
    directed = directed.tocsr()
    transpose = directed.T.tocsr()
    merged = (directed + transpose - directed.multiply(transpose)).tocoo()

    keep = (merged.row < merged.col) & (merged.data > 0.0)
    order = np.lexsort((merged.col[keep], merged.row[keep]))
    return FuzzyGraph(
        n=n,
        rows=merged.row[keep][order].astype(np.int64),
        cols=merged.col[keep][order].astype(np.int64),
        vals=np.minimum(merged.data[keep][order], 1.0),
        rho=rho,
        sigma=sigma,
    )


def _component_spectral_coords(adj, dim):
    """Coordinates from eigenvectors of the symmetric normalized Laplacian.

    Returns the eigenvectors for the smallest nonzero eigenvalues, sign-fixed
    so the largest-magnitude entry is positive; columns beyond the available
    spectrum are zero. Raises on eigensolver failure.
    """
    m = adj.shape[0]
    coords = np.zeros((m, dim))
    if m == 1:
        return coords
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    scale = sp.diags(inv_sqrt)
    lap = sp.identity(m, format="csr") - scale @ adj @ scale
    k_eig = min(dim + 1, m)
    if m <= max(64, 2 * (dim + 2)):
        eigvals, eigvecs = np.linalg.eigh(lap.toarray())
    else:
        ncv = min(m, max(2 * k_eig + 1, int(np.sqrt(m)) * 2))
        v0 = np.linspace(1.0, 2.0, m)
        eigvals, eigvecs = eigsh(
            lap.tocsc(), k=k_eig, which="SM", v0=v0, ncv=ncv, maxiter=m * 5, tol=1e-4
        )
    order = np.argsort(eigvals)
    take = order[1:k_eig]
    for col, idx in enumerate(take):
        vec = eigvecs[:, idx]
        anchor = np.argmax(np.abs(vec))
        coords[:, col] = vec if vec[anchor] >= 0 else -vec
    return coords


def spectral_init(graph: FuzzyGraph, d_e, seed, return_info=False):
    """Initial coordinates from the graph Laplacian, one component at a time.

    Each connected component is embedded independently, scaled to
    [-COORD_RANGE, COORD_RANGE], then offset along the first axis by
    COMPONENT_OFFSET times its component index. If the sparse eigensolver
    fails to converge the component falls back to seeded uniform random
    coordinates and the fallback is recorded.
    """
    n = graph.n
    adj = sp.coo_matrix(
        (
            np.concatenate([graph.vals, graph.vals]),
            (
                np.concatenate([graph.rows, graph.cols]),
                np.concatenate([graph.cols, graph.rows]),
            ),
        ),
        shape=(n, n),
    ).tocsr()
    n_components, labels = connected_components(adj, directed=False)
    rng = np.random.default_rng(seed)
    coords = np.zeros((n, d_e), dtype=np.float64)
    fallback = False
    for comp in range(n_components):
        nodes = np.flatnonzero(labels == comp)
        sub = adj[nodes][:, nodes]
        try:
            comp_coords = _component_spectral_coords(sub, d_e)
            max_abs = np.max(np.abs(comp_coords)) if nodes.size > 1 else 0.0
            if max_abs > 0:
                comp_coords = comp_coords * (COORD_RANGE / max_abs)
        except Exception:
            fallback = True
            logger.warning(
                "spectral initialization failed for component %d (%d nodes); "
                "falling back to seeded random coordinates",
                comp,
                nodes.size,
            )
            comp_coords = rng.uniform(-COORD_RANGE, COORD_RANGE, size=(nodes.size, d_e))
        comp_coords[:, 0] += COMPONENT_OFFSET * comp
        coords[nodes] = comp_coords
    if return_info:
        return coords, {"spectral_fallback": fallback, "n_components": n_components}
    return coords


def curve_weight(dist, a, b):
    """Low-dimensional similarity (1 + a * dist^(2b))^-1 in (0, 1]."""
    if dist < 0:
        raise EmapError("distance must be nonnegative")
    return 1.0 / (1.0 + a * dist ** (2.0 * b))


def edge_attractive_cost(x, y, v, a, b):
    """Membership-weighted attraction cost: the part of v*log(v/w) that moves."""
    d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    return v * np.log1p(a * d2**b)


def edge_attractive_grad(x, y, v, a, b):
    """Gradient of edge_attractive_cost with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = float(np.sum((x - y) ** 2))
    coeff = v * 2.0 * a * b * d2 ** (b - 1.0) / (1.0 + a * d2**b)
    return coeff * (x - y)


def edge_repulsive_cost(x, y, v, a, b):
    """Repulsion cost: the part of (1-v)*log((1-v)/(1-w)) that moves."""
    d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    w = 1.0 / (1.0 + a * d2**b)
    return -(1.0 - v) * np.log1p(-w)


def edge_repulsive_grad(x, y, v, a, b):
    """Gradient of edge_repulsive_cost with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = float(np.sum((x - y) ** 2))
    coeff = -(1.0 - v) * 2.0 * b / (d2 * (1.0 + a * d2**b))
    return coeff * (x - y)


def edge_cross_entropy(x, y, v, a, b):
    """Full per-edge cross-entropy between membership v and curve weight w."""
    d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    w = 1.0 / (1.0 + a * d2**b)
    total = 0.0
    if v > 0.0:
        total += v * np.log(v / w)
    if v < 1.0:
        total += (1.0 - v) * np.log((1.0 - v) / (1.0 - w))
    return total


def optimize(graph: FuzzyGraph, init, params: HyperParams):
    """Edge-sampled SGD over the cross-entropy objective; returns new coordinates.

    Positive edges are sampled proportionally to membership strength; the
    learning rate decays linearly to zero; per-coordinate steps are clipped
    to [-4, 4]. With a fixed seed the result is bitwise reproducible.
    """
    init = np.asarray(init, dtype=np.float64)
    if init.shape[0] != graph.n:
        raise EmapError("initial coordinates do not match the graph size")
    embedding = np.ascontiguousarray(init.copy())
    if graph.n_edges == 0:
        return embedding
    head = np.concatenate([graph.rows, graph.cols])
    tail = np.concatenate([graph.cols, graph.rows])
    weights = np.concatenate([graph.vals, graph.vals])
    epochs_per_sample = weights.max() / weights
    _layout.optimize_layout(
        embedding,
        head,
        tail,
        epochs_per_sample,
        params.n_iters,
        params.initial_learning_rate,
        params.negative_sample_rate,
        params.a,
        params.b,
        _layout.make_rng_state(params.seed),
    )
    if not np.all(np.isfinite(embedding)):
        raise EmapError("layout optimization produced non-finite coordinates")
    return embedding


def project(D, params: HyperParams, return_info=False):
    """Full projection: kNN graph, fuzzy memberships, spectral init, SGD layout.

    All rows of the distance matrix are projected jointly. ``n_neighbors``
    is clamped to n - 1 for small inputs.
    """
    values = _matrix_values(D)
    n = values.shape[0]
    if n < 2:
        raise EmapError("need at least two sentences to project")
    k = min(params.n_neighbors, n - 1)
    neighbours, dists = knn_from_matrix(values, k)
    graph = fuzzy_graph(neighbours, dists, params)
    coords, info = spectral_init(graph, params.embedding_dim, params.seed, return_info=True)
    embedding = optimize(graph, coords, params)
    info["k_used"] = k
    if return_info:
        return embedding, info
    return embedding


def write_embeddings_tsv(path, doc_ids, labels, coords, splits=None):
    """One row per sentence: doc_id, label[, split], coordinates at 9 significant digits."""
    coords = np.asarray(coords)
    with open(path, "w", encoding="utf-8") as fh:
        for pos, doc_id in enumerate(doc_ids):
            cells = [str(int(doc_id)), str(labels[pos])]
            if splits is not None:
                cells.append(str(splits[pos]))
            cells.extend(format(float(c), ".9g") for c in coords[pos])
            fh.write("\t".join(cells) + "\n")


def read_embeddings_tsv(path):
    """Read rows written by write_embeddings_tsv; returns (ids, labels, splits, coords)."""
    doc_ids = []
    labels = []
    splits = []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            if len(cells) < 3:
                raise EmapError(f"{path}: malformed embedding row")
            doc_ids.append(int(cells[0]))
            labels.append(cells[1])
            try:
                float(cells[2])
                coord_start = 2
                splits.append(None)
            except ValueError:
                coord_start = 3
                splits.append(cells[2])
            rows.append([float(c) for c in cells[coord_start:]])
    has_splits = all(s is not None for s in splits)
    coords = np.asarray(rows, dtype=np.float64)
    return doc_ids, labels, (splits if has_splits else None), coords


def write_run_metadata(path, params: HyperParams, **extra):
    """Key=value sidecar recording the configuration and any fallback flags."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in params.as_dict().items():
            fh.write(f"{key}={value}\n")
        for key in sorted(extra):
            fh.write(f"{key}={extra[key]}\n")
