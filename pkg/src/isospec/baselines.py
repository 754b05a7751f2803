"""Isospectrality (IS) and Gromov-Hausdorff (GH) isomorphism baselines.

IS compares the largest Laplacian eigenvalues of the k-nearest-neighbour
graphs of two spaces.  GH is approximated by the bottleneck distance between
the H0 persistence diagrams of the Vietoris-Rips filtrations over the most
frequent words; an H0 diagram is read directly off a minimum spanning tree.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import pdist, squareform

from .embedio import EmbeddingSpace
from .measures import Measure, PairScore

logger = logging.getLogger(__name__)

__all__ = [
    "LaplacianSpectrum",
    "NeighborGraph",
    "PersistenceDiagram",
    "bottleneck_distance",
    "distance_matrix",
    "gromov_hausdorff",
    "h0_persistence",
    "isospectral_gap",
    "isospectrality",
    "knn_graph",
    "laplacian_spectrum",
    "mass_index",
    "mst_weights",
]

_DENSE_EIGEN_LIMIT = 4000


def _require_normalized(space: EmbeddingSpace, what: str) -> None:
    if not space.length_normalized:
        raise ValueError(f"{what} expects length-normalized vectors; {space.lang_id!r} is not")


# -- isospectrality ------------------------------------------------------------


@dataclass(frozen=True)
class NeighborGraph:
    """Undirected, unweighted k-NN graph as a symmetric 0/1 CSR matrix."""

    adjacency: scipy.sparse.csr_matrix
    k: int

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def edges(self) -> set[tuple[int, int]]:
        coo = scipy.sparse.triu(self.adjacency, k=1).tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col)}


def knn_graph(space: EmbeddingSpace, top_n: int, k: int, block_rows: int = 1024) -> NeighborGraph:
    """Cosine k-NN graph over the first ``top_n`` rows, symmetrized by union.

    Ties at the k-th similarity go to the lower row index.
    """
    _require_normalized(space, "knn_graph")
    if top_n < 2:
        raise ValueError(f"top_n must be at least 2, got {top_n}")
    if top_n > space.n:
        raise ValueError(f"top_n={top_n} exceeds the {space.n} rows of {space.lang_id!r}")
    if not 1 <= k < top_n:
        raise ValueError(f"k must be in [1, top_n - 1], got k={k} with top_n={top_n}")

    x = space.matrix[:top_n]
    rows, cols = [], []
    for start in range(0, top_n, block_rows):
        stop = min(start + block_rows, top_n)
        sims = x[start:stop] @ x.T
        idx = np.arange(stop - start)
        sims[idx, start + idx] = -np.inf
        # k-th largest similarity per row, then all strictly greater entries
        # plus the lowest-indexed entries equal to it
        kth = -np.partition(-sims, k - 1, axis=1)[:, k - 1]
        above = sims > kth[:, None]
        tied = sims == kth[:, None]
        room = k - above.sum(axis=1)
        chosen = above | (tied & (np.cumsum(tied, axis=1) <= room[:, None]))
        r, c = np.nonzero(chosen)
        rows.append(r + start)
        cols.append(c)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    directed = scipy.sparse.coo_matrix((np.ones(r.size, dtype=np.int8), (r, c)), shape=(top_n, top_n)).tocsr()
    undirected = ((directed + directed.T) > 0).astype(np.int8).tocsr()
    undirected.sort_indices()
    return NeighborGraph(undirected, k)


@dataclass(frozen=True)
class LaplacianSpectrum:
    """Largest Laplacian eigenvalues (descending) and the exact total mass.

    ``eigenvalues`` may hold only the leading ``m`` values; ``total`` is the
    trace (sum of degrees), which equals the sum of all ``node_count``
    eigenvalues.
    """

    eigenvalues: np.ndarray
    total: float
    node_count: int

    @property
    def complete(self) -> bool:
        return self.eigenvalues.size == self.node_count


def laplacian_matrix(graph: NeighborGraph) -> scipy.sparse.csr_matrix:
    adj = graph.adjacency.astype(np.float64)
    return (scipy.sparse.diags(graph.degrees().astype(np.float64)) - adj).tocsr()


def laplacian_spectrum(graph: NeighborGraph, max_eigs: int | None = None) -> LaplacianSpectrum:
    """Eigenvalues of ``L = D - A``, descending, with round-off negatives set to 0.

    With ``max_eigs`` (and a large graph) only that many leading eigenvalues
    are computed by Lanczos iteration; otherwise the full dense spectrum.
    """
    n = graph.node_count
    if n < 1:
        raise ValueError("graph has no nodes")
    lap = laplacian_matrix(graph)
    total = float(graph.degrees().sum())
    if max_eigs is None or n <= _DENSE_EIGEN_LIMIT or max_eigs >= n // 3:
        eig = scipy.linalg.eigh(lap.toarray(), eigvals_only=True)
    else:
        v0 = np.ones(n) / np.sqrt(n)
        eig = scipy.sparse.linalg.eigsh(lap, k=max_eigs, which="LA", v0=v0, return_eigenvectors=False)
    eig = np.sort(np.clip(eig, 0.0, None))[::-1]
    return LaplacianSpectrum(eig, total, n)


def mass_index(spec: LaplacianSpectrum, mass: float = 0.9) -> int | None:
    """Smallest ``k`` whose ``k`` largest eigenvalues hold ``mass`` of the total.

    ``None`` when the computed eigenvalues do not reach that mass yet (the
    spectrum is partial).  ``mass >= 1`` means every eigenvalue.
    """
    if not 0 < mass <= 1:
        raise ValueError(f"mass must be in (0, 1], got {mass}")
    if spec.total <= 0:
        raise ValueError("degenerate all-zero Laplacian spectrum (edgeless graph)")
    if mass >= 1:
        return spec.node_count if spec.complete else None
    reached = np.flatnonzero(np.cumsum(spec.eigenvalues) >= mass * spec.total)
    if reached.size:
        return int(reached[0]) + 1
    return spec.eigenvalues.size if spec.complete else None


def space_laplacian(space: EmbeddingSpace, top_n: int = 10000, k: int = 10, mass: float = 0.9,
                    max_eigs: int = 2000) -> LaplacianSpectrum:
    """Laplacian spectrum of a space's k-NN graph, holding at least ``mass`` of the trace.

    Fewer than ``mass * trace / l_1`` eigenvalues cannot reach the mass, so
    that bound sets the first request; each retry adds at least enough
    eigenvalues to cover the missing mass at the current smallest one.
    """
    graph = knn_graph(space, min(top_n, space.n), k)
    n = graph.node_count
    total = float(graph.degrees().sum())
    m = max_eigs
    if n > _DENSE_EIGEN_LIMIT and total > 0:
        v0 = np.ones(n) / np.sqrt(n)
        lam1 = scipy.sparse.linalg.eigsh(laplacian_matrix(graph), k=1, which="LA", v0=v0,
                                         return_eigenvectors=False)[0]
        m = max(m, math.ceil(mass * total / lam1))
    while True:
        spec = laplacian_spectrum(graph, min(m, n))
        if spec.complete or mass_index(spec, mass) is not None:
            return spec
        missing = mass * spec.total - float(spec.eigenvalues.sum())
        smallest = max(float(spec.eigenvalues[-1]), 1e-12)
        m = max(2 * m, m + math.ceil(missing / smallest))
        logger.info("%s: %d eigenvalues hold < %.0f%% of the trace; retrying with %d", space.lang_id,
                    spec.eigenvalues.size, 100 * mass, m)


def isospectral_gap(spec_a: LaplacianSpectrum, spec_b: LaplacianSpectrum, mass: float = 0.9) -> float:
    """``sum_{i<=k} (l_i^a - l_i^b)^2`` with ``k = min(k_a, k_b)`` from the mass rule."""
    ka, kb = mass_index(spec_a, mass), mass_index(spec_b, mass)
    if ka is None or kb is None:
        raise ValueError("Laplacian spectrum does not cover the requested mass; compute more eigenvalues")
    k = min(ka, kb)
    gap = spec_a.eigenvalues[:k] - spec_b.eigenvalues[:k]
    return float(gap @ gap)


def isospectrality(space_a: EmbeddingSpace, space_b: EmbeddingSpace, top_n: int = 10000, k: int = 10,
                   mass: float = 0.9) -> PairScore:
    """IS score; lower means the two neighbourhood graphs are closer to isospectral."""
    la = space_laplacian(space_a, top_n, k, mass)
    lb = space_laplacian(space_b, top_n, k, mass)
    value = isospectral_gap(la, lb, mass)
    return PairScore(space_a.lang_id, space_b.lang_id, Measure.IS, value,
                     {"is_top_n": top_n, "is_k": k, "is_mass": mass})


# -- Gromov-Hausdorff via H0 persistence ----------------------------------------


def distance_matrix(space: EmbeddingSpace, sample_n: int) -> np.ndarray:
    """Euclidean distances among the first ``sample_n`` rows."""
    _require_normalized(space, "distance_matrix")
    if sample_n < 2:
        raise ValueError(f"sample_n must be at least 2, got {sample_n}")
    if sample_n > space.n:
        raise ValueError(f"sample_n={sample_n} exceeds the {space.n} rows of {space.lang_id!r}")
    return squareform(pdist(space.matrix[:sample_n], "euclidean"))


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Finite (birth, death) pairs; shape ``(k, 2)``."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 2)
        if not np.isfinite(pts).all():
            raise ValueError("persistence diagram must have finite coordinates")
        if (pts[:, 0] < 0).any() or (pts[:, 1] < pts[:, 0]).any():
            raise ValueError("persistence pairs need 0 <= birth <= death")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["birth", "death"])
        for b, d in self.points:
            writer.writerow([repr(float(b)), repr(float(d))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> PersistenceDiagram:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["birth", "death"]:
            raise ValueError("persistence CSV must start with a 'birth,death' header")
        return cls(np.array([[float(b), float(d)] for b, d in rows[1:]]).reshape(-1, 2))


def mst_weights(dist: np.ndarray) -> np.ndarray:
    """Edge weights of a minimum spanning tree of the complete graph (Prim, O(n^2))."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    if n < 2:
        return np.empty(0)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = dist[0].copy()
    best[0] = np.inf
    weights = np.empty(n - 1)
    for step in range(n - 1):
        j = int(np.argmin(best))
        weights[step] = best[j]
        in_tree[j] = True
        np.minimum(best, dist[j], out=best)
        best[in_tree] = np.inf
    return np.sort(weights)


def h0_persistence(dist: np.ndarray) -> PersistenceDiagram:
    """H0 diagram of the Rips filtration: ``(0, w)`` per MST edge ``w``.

    The one essential class (never dies) is left out.
    """
    w = mst_weights(dist)
    return PersistenceDiagram(np.column_stack([np.zeros_like(w), w]))


def _as_points(diag: PersistenceDiagram | np.ndarray) -> np.ndarray:
    if isinstance(diag, PersistenceDiagram):
        return diag.points
    return PersistenceDiagram(diag).points


def _pair_costs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(a[:, None, 0] - b[None, :, 0]), np.abs(a[:, None, 1] - b[None, :, 1]))


def _saturates(adj: np.ndarray) -> bool:
    """Does the bipartite graph have a matching covering every row?"""
    if adj.shape[0] == 0:
        return True
    if adj.shape[0] > adj.shape[1] or not adj.any(axis=1).all():
        return False
    match = maximum_bipartite_matching(scipy.sparse.csr_matrix(adj), perm_type="column")
    return bool((match >= 0).all())


def bottleneck_distance(diag_a: PersistenceDiagram | np.ndarray, diag_b: PersistenceDiagram | np.ndarray) -> float:
    """Exact bottleneck distance under the L-infinity ground metric.

    Unmatched points pay their distance to the diagonal, ``(death - birth) / 2``.
    The answer is the smallest candidate cost at which a feasible matching
    exists; candidates are all pairwise costs and diagonal costs, searched by
    bisection.  Feasibility at ``eps``: the points that cannot go to the
    diagonal must be matched to points within ``eps``.  A matching covering
    them on one side and one covering them on the other side combine into a
    single matching (Mendelsohn-Dulmage), so two one-sided checks suffice.
    """
    a, b = _as_points(diag_a), _as_points(diag_b)
    diag_cost_a = (a[:, 1] - a[:, 0]) / 2
    diag_cost_b = (b[:, 1] - b[:, 0]) / 2
    upper = max(diag_cost_a.max(initial=0.0), diag_cost_b.max(initial=0.0))
    if upper == 0.0:
        return 0.0
    costs = _pair_costs(a, b)

    def feasible(eps: float) -> bool:
        must_a = diag_cost_a > eps
        must_b = diag_cost_b > eps
        within = costs <= eps
        return _saturates(within[must_a]) and _saturates(within[:, must_b].T)

    candidates = np.unique(np.concatenate([costs[costs < upper], diag_cost_a, diag_cost_b, [0.0]]))
    candidates = candidates[candidates <= upper]
    lo, hi = 0, candidates.size - 1  # candidates[hi] == upper is always feasible
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(float(candidates[mid])):
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])


def space_diagram(space: EmbeddingSpace, sample_n: int = 5000) -> PersistenceDiagram:
    return h0_persistence(distance_matrix(space, min(sample_n, space.n)))


def gromov_hausdorff(space_a: EmbeddingSpace, space_b: EmbeddingSpace, sample_n: int = 5000) -> PairScore:
    """Bottleneck distance between the H0 diagrams of the two spaces' top words."""
    value = bottleneck_distance(space_diagram(space_a, sample_n), space_diagram(space_b, sample_n))
    return PairScore(space_a.lang_id, space_b.lang_id, Measure.GH, value, {"gh_sample": sample_n})
