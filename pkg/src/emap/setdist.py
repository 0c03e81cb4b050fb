"""Sentence-to-sentence set distances and the full pairwise distance matrix.

Three metrics over weighted word-vector point clouds:

* energy: twice the mean cross-cloud word distance minus both mean
  within-cloud word distances, with every sum weighted by term frequency
  (equivalent to summing over token multisets).
* hausdorff: the larger of the two directed max-min point-set distances;
  term weights are ignored.
* wmd: the optimal cost of transporting one cloud's term-frequency mass
  to the other's over Euclidean word distances, solved exactly.

All distances are computed in float64. The pairwise matrix distributes
unordered pairs over numba threads with a deterministic write location per
pair, so results do not depend on the worker count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np

from . import _transport
from ._transport import METRIC_ENERGY, METRIC_HAUSDORFF, METRIC_WMD
from .errors import EmapError, MatrixFormatError, TransportError

METRIC_CODES = {"energy": METRIC_ENERGY, "hausdorff": METRIC_HAUSDORFF, "wmd": METRIC_WMD}
METRIC_NAMES = {code: name for name, code in METRIC_CODES.items()}

_MAGIC = b"EMAPDM1\x00"
_BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class TransportPlan:
    """Sparse optimal solution of a balanced transportation problem."""

    entries: tuple
    cost: float


@dataclass
class DistanceMatrix:
    """Symmetric nonnegative matrix of sentence distances for one metric."""

    n: int
    values: np.ndarray
    metric_kind: str

    def validate(self):
        if self.metric_kind not in METRIC_CODES:
            raise EmapError(f"unknown metric kind: {self.metric_kind!r}")
        if self.values.shape != (self.n, self.n):
            raise EmapError("distance matrix shape does not match n")
        if not np.all(np.isfinite(self.values)):
            raise EmapError("distance matrix contains non-finite entries")
        if np.any(self.values < 0.0):
            raise EmapError("distance matrix contains negative entries")
        if np.any(np.abs(np.diagonal(self.values)) > 1e-9):
            raise EmapError("distance matrix diagonal is not zero")
        if np.max(np.abs(self.values - self.values.T)) > 1e-9:
            raise EmapError("distance matrix is not symmetric")
        return self


def word_distance(w_i, w_j) -> float:
    """Euclidean distance between two word vectors of equal dimension."""
    w_i = np.asarray(w_i, dtype=np.float64)
    w_j = np.asarray(w_j, dtype=np.float64)
    if w_i.shape != w_j.shape:
        raise EmapError(f"dimension mismatch: {w_i.shape} vs {w_j.shape}")
    return float(np.linalg.norm(w_i - w_j))


def _sqnorms(vectors):
    return (vectors * vectors).sum(axis=1)


def _cloud_block(cloud, table):
    vectors = table.vectors[cloud.word_indices].astype(np.float64)
    return np.ascontiguousarray(vectors), _sqnorms(vectors)


def _pair_distances(s, s_prime, table):
    va, sq_a = _cloud_block(s, table)
    vb, sq_b = _cloud_block(s_prime, table)
    return _transport._cross_distances(va, vb, sq_a, sq_b)


def energy_distance(s, s_prime, table) -> float:
    """Count-weighted energy distance between two clouds (zero for identical clouds)."""
    va, sq_a = _cloud_block(s, table)
    vb, sq_b = _cloud_block(s_prime, table)
    d_ab = _transport._cross_distances(va, vb, sq_a, sq_b)
    intra_a = _transport._intra_energy(
        _transport._cross_distances(va, va, sq_a, sq_a), s.weights
    )
    intra_b = _transport._intra_energy(
        _transport._cross_distances(vb, vb, sq_b, sq_b), s_prime.weights
    )
    return float(_transport._energy_from_dists(d_ab, s.weights, s_prime.weights, intra_a, intra_b))


def directed_hausdorff(s, s_prime, table) -> float:
    """Max over words of s of the min distance to words of s_prime."""
    dists = _pair_distances(s, s_prime, table)
    return float(np.max(np.min(dists, axis=1)))


def hausdorff(s, s_prime, table) -> float:
    """Symmetric Hausdorff distance: the larger of the two directed distances."""
    return float(_transport._hausdorff_from_dists(_pair_distances(s, s_prime, table)))


def wmd(s, s_prime, table) -> float:
    """Optimal transport cost between the clouds' term-frequency distributions."""
    dists = _pair_distances(s, s_prime, table)
    value = float(_transport._transport_cost(dists, s.weights, s_prime.weights))
    if np.isnan(value):
        raise EmapError("transport solver failed to converge")
    return value


def solve_transport(cost, supply, demand) -> TransportPlan:
    """Exactly solve the balanced transportation problem.

    Zero-weight rows and columns are dropped before solving; the returned
    plan is basic, so it has at most p + q - 1 strictly positive entries.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    if cost.ndim != 2 or cost.shape != (supply.size, demand.size):
        raise TransportError("cost matrix shape does not match the marginals")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0.0):
        raise TransportError("costs must be finite and nonnegative")
    if np.any(supply < 0.0) or np.any(demand < 0.0):
        raise TransportError("marginals must be nonnegative")
    if abs(supply.sum() - demand.sum()) > _BALANCE_TOL:
        raise TransportError(
            f"unbalanced marginals: supply {supply.sum()!r} vs demand {demand.sum()!r}"
        )

    keep_i = np.flatnonzero(supply > 0.0)
    keep_j = np.flatnonzero(demand > 0.0)
    if keep_i.size == 0 or keep_j.size == 0:
        return TransportPlan(entries=(), cost=0.0)

    sub_cost = np.ascontiguousarray(cost[np.ix_(keep_i, keep_j)])
    sub_supply = supply[keep_i]
    sub_demand = demand[keep_j]

    flow = np.zeros_like(sub_cost)
    if keep_i.size == 1:
        flow[0, :] = sub_demand
    elif keep_j.size == 1:
        flow[:, 0] = sub_supply
    else:
        status = _transport._network_simplex(sub_cost, sub_supply, sub_demand, flow)
        if status != _transport.STATUS_OK:
            raise EmapError("transport solver failed to converge")

    rows, cols = np.nonzero(flow > 0.0)
    entries = tuple(
        (int(keep_i[r]), int(keep_j[c]), float(flow[r, c])) for r, c in zip(rows, cols)
    )
    total = float((flow * sub_cost).sum())
    return TransportPlan(entries=entries, cost=total)


_METRIC_FUNCS = {"energy": energy_distance, "hausdorff": hausdorff, "wmd": wmd}


def distance(s, s_prime, table, metric_kind) -> float:
    """Dispatch to one of the three metrics by name."""
    try:
        func = _METRIC_FUNCS[metric_kind]
    except KeyError:
        raise EmapError(f"unknown metric kind: {metric_kind!r}") from None
    return func(s, s_prime, table)


def pairwise_matrix(clouds, table, metric_kind, workers=None) -> DistanceMatrix:
    """Compute the full symmetric distance matrix over a list of clouds.

    Each unordered pair is computed once. ``workers`` bounds the numba
    thread count; the output is identical for any value.
    """
    if metric_kind not in METRIC_CODES:
        raise EmapError(f"unknown metric kind: {metric_kind!r}")
    n = len(clouds)
    if n == 0:
        raise EmapError("no clouds to compare")
    for pos, cloud in enumerate(clouds):
        if np.any(cloud.word_indices >= table.size) or np.any(cloud.word_indices < 0):
            raise EmapError(f"cloud {pos} references words outside the embedding table")

    out = np.zeros((n, n), dtype=np.float64)
    if n > 1:
        offsets = np.zeros(n + 1, dtype=np.int64)
        for pos, cloud in enumerate(clouds):
            offsets[pos + 1] = offsets[pos] + cloud.n_words
        all_indices = np.concatenate([c.word_indices for c in clouds])
        weights = np.concatenate([c.weights for c in clouds])
        used = np.unique(all_indices)
        word_rows = np.searchsorted(used, all_indices).astype(np.int64)
        vectors = np.ascontiguousarray(table.vectors[used].astype(np.float64))
        sqnorms = _sqnorms(vectors)

        old_threads = numba.get_num_threads()
        if workers is not None:
            numba.set_num_threads(max(1, min(int(workers), old_threads)))
        try:
            _transport._pairwise_kernel(
                offsets, word_rows, weights, vectors, sqnorms, METRIC_CODES[metric_kind], out
            )
        finally:
            numba.set_num_threads(old_threads)

        bad = np.argwhere(~np.isfinite(out))
        if bad.size:
            i, j = bad[0]
            raise EmapError(f"{metric_kind} failed for pair ({i}, {j})")

    return DistanceMatrix(n=n, values=out, metric_kind=metric_kind).validate()


def save_matrix(matrix: DistanceMatrix, path) -> None:
    """Persist in the binary format: magic, u32 version, u8 metric, u64 n, n*n f64 LE."""
    matrix.validate()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IBQ", 1, METRIC_CODES[matrix.metric_kind], matrix.n))
        fh.write(np.ascontiguousarray(matrix.values, dtype="<f8").tobytes())


def load_matrix(path) -> DistanceMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<IBQ")
    if len(blob) < len(_MAGIC) + header:
        raise MatrixFormatError(f"{path}: truncated header")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise MatrixFormatError(f"{path}: bad magic bytes")
    version, code, n = struct.unpack_from("<IBQ", blob, len(_MAGIC))
    if version != 1:
        raise MatrixFormatError(f"{path}: unsupported version {version}")
    if code not in METRIC_NAMES:
        raise MatrixFormatError(f"{path}: unknown metric code {code}")
    expected = len(_MAGIC) + header + 8 * n * n
    if len(blob) != expected:
        raise MatrixFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", offset=len(_MAGIC) + header).reshape(n, n)
    matrix = DistanceMatrix(n=int(n), values=values.copy(), metric_kind=METRIC_NAMES[code])
    try:
        return matrix.validate()
    except EmapError as exc:
        raise MatrixFormatError(f"{path}: {exc}") from None
