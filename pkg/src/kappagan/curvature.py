"""Graph curvature: sectional-curvature estimation from sampled geodesic triangles,
Ollivier-Ricci edge curvature via exact optimal transport, and the Ricci
regulariser applied to generated points.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
from scipy.sparse.csgraph import shortest_path

from . import geometry
from .graphdata import Graph

log = logging.getLogger(__name__)

# embedding distances below this count as coincident points
ZERO_DISTANCE = 1e-12


class CurvatureError(ValueError):
    pass


class GraphMetric:
    """Hop distances on an unweighted graph; one BFS per source node, memoised."""

    def __init__(self, graph: Graph):
        self.graph = graph
        self._rows: dict[int, np.ndarray] = {}

    def prefetch(self, nodes) -> None:
        todo = sorted({int(u) for u in np.atleast_1d(nodes)} - self._rows.keys())
        if not todo:
            return
        d = shortest_path(self.graph.adjacency, unweighted=True, directed=False, indices=todo)
        for u, row in zip(todo, np.atleast_2d(d)):
            self._rows[u] = row

    def row(self, u: int) -> np.ndarray:
        u = int(u)
        if u not in self._rows:
            self.prefetch([u])
        return self._rows[u]

    def __call__(self, a: int, b: int) -> float:
        return float(self.row(a)[b])

    def pairs(self, a, b) -> np.ndarray:
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        self.prefetch(a)
        return np.array([self._rows[int(i)][j] for i, j in zip(a, b)], dtype=float)

    def matrix(self, src, dst) -> np.ndarray:
        self.prefetch(src)
        return np.stack([self._rows[int(i)][np.asarray(dst)] for i in src])


class EmbeddingMetric:
    """Manifold distance between embedded nodes, for post-training curvature estimates."""

    def __init__(self, points, kappa: float):
        self.points = geometry.as_tensor(points).detach()
        self.kappa = kappa

    def pairs(self, a, b) -> np.ndarray:
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        return geometry.distance(self.points[a], self.points[b], self.kappa).numpy()

    def matrix(self, src, dst) -> np.ndarray:
        x = self.points[np.asarray(src)][:, None, :]
        y = self.points[np.asarray(dst)][None, :, :]
        return geometry.distance(x, y, self.kappa).numpy()


def _local_hops(graph: Graph, src: np.ndarray, dst: np.ndarray, dense=None) -> np.ndarray:
    """Hop distances between the closed neighbourhoods of the two ends of an edge.

    Every such pair is joined by a path of length at most 3, so the distance is
    0 (same node), 1 (adjacent), 2 (common neighbour) or 3.
    """
    if dense is None:
        a = graph.adjacency
        rs, rd = a[src], a[dst]
        two = (rs @ rd.T).toarray() > 0
        one = rs[:, dst].toarray() > 0
    else:
        rs, rd = dense[src], dense[dst]
        two = rs @ rd.T > 0
        one = rs[:, dst] > 0
    d = np.where(two, 2.0, 3.0)
    d[one] = 1.0
    d[src[:, None] == dst[None, :]] = 0.0
    return d


def _dense_adjacency(graph: Graph, max_nodes: int = 8192):
    if graph.n > max_nodes:
        return None
    return graph.adjacency.toarray().astype(np.float32)


# -- global (sectional) curvature --------------------------------------------


def xi_triangle(m: int, a: int, b: int, c: int, metric) -> float:
    """Median-length defect of the triangle ``(a, b, c)`` with ``m`` in the midpoint role.

    Zero when the metric satisfies the Euclidean median identity, positive for
    cycle-like and negative for tree-like configurations.
    """
    d_am = float(metric.pairs([a], [m])[0])
    if d_am == 0 or not math.isfinite(d_am):
        raise CurvatureError(f"degenerate triangle sample: d({a}, {m}) = {d_am}")
    d_bc, d_ab, d_ac = metric.pairs([b, a, a], [c, b, c])
    return (d_am**2 + d_bc**2 / 4 - (d_ab**2 + d_ac**2) / 2) / (2 * d_am)


def sample_triangles(graph: Graph, n_s: int, rng: np.random.Generator) -> np.ndarray:
    """``n_s`` rows ``(m, a, b, c)`` per node of degree >= 2.

    ``b, c`` are distinct neighbours of ``m``; ``a`` is uniform over the other nodes.
    """
    if graph.n < 4:
        raise CurvatureError("need at least four nodes to sample triangles")
    rows = []
    for m in range(graph.n):
        nbrs = graph.neighbors(m)
        if len(nbrs) < 2:
            continue
        for _ in range(n_s):
            b, c = rng.choice(nbrs, size=2, replace=False)
            a = int(rng.integers(graph.n))
            while a in (m, b, c):
                a = int(rng.integers(graph.n))
            rows.append((m, a, int(b), int(c)))
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def average_xi(triangles: np.ndarray, metric) -> float:
    """Mean over midpoint nodes of the per-node mean defect; unusable samples dropped."""
    if metric.__class__ is GraphMetric:
        metric.prefetch(np.unique(triangles[:, 1]))
    m, a, b, c = triangles.T
    d_am = metric.pairs(a, m)
    d_bc = metric.pairs(b, c)
    d_ab = metric.pairs(a, b)
    d_ac = metric.pairs(a, c)
    ok = (d_am > 0) & np.isfinite(d_am) & np.isfinite(d_ab) & np.isfinite(d_ac)
    if not ok.any():
        raise CurvatureError("no usable triangle samples")
    d_am, d_bc, d_ab, d_ac = d_am[ok], d_bc[ok], d_ab[ok], d_ac[ok]
    xi = (d_am**2 + d_bc**2 / 4 - (d_ab**2 + d_ac**2) / 2) / (2 * d_am)
    nodes, inv = np.unique(m[ok], return_inverse=True)
    per_node = np.bincount(inv, weights=xi) / np.bincount(inv)
    return float(per_node.mean())


@dataclass(frozen=True)
class CurvatureEstimate:
    kappa: float
    samples_per_node: int
    seed: int


def estimate_global_curvature(graph: Graph, n_s: int = 10, seed: int = 0,
                              metric=None) -> CurvatureEstimate:
    """Average sectional curvature of ``graph`` (hop metric unless ``metric`` is given)."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    rng = np.random.default_rng(seed)
    tri = sample_triangles(graph, n_s, rng)
    if not len(tri):
        raise CurvatureError("every node has degree < 2")
    kappa = average_xi(tri, GraphMetric(graph) if metric is None else metric)
    return CurvatureEstimate(kappa, n_s, seed)


# -- Ollivier-Ricci curvature -------------------------------------------------


@dataclass(frozen=True, eq=False)
class MassDistribution:
    support: np.ndarray
    weights: np.ndarray
    alpha: float

    def as_dict(self) -> dict[int, float]:
        return {int(s): float(w) for s, w in zip(self.support, self.weights)}


def mass_distribution(graph: Graph, x: int, alpha: float = 0.5) -> MassDistribution:
    """``alpha`` on ``x`` and ``(1 - alpha)/deg(x)`` on each neighbour."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    nbrs = graph.neighbors(x)
    if not len(nbrs):
        raise CurvatureError(f"node {x} is isolated")
    support = np.concatenate([[x], nbrs]).astype(np.int64)
    weights = np.concatenate([[alpha], np.full(len(nbrs), (1 - alpha) / len(nbrs))])
    return MassDistribution(support, weights, float(alpha))


def _emd2(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    # keep POT from probing the TensorFlow / JAX backends at import
    os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
    import ot

    return float(ot.emd2(a, b, np.ascontiguousarray(cost, dtype=np.float64), numItermax=10**7))


def wasserstein_distance(mu: MassDistribution, nu: MassDistribution, metric=None,
                         cost: np.ndarray | None = None) -> float:
    """Exact 1-Wasserstein distance between two finitely supported distributions."""
    for dist in (mu, nu):
        if abs(dist.weights.sum() - 1.0) > 1e-12 or (dist.weights < 0).any():
            raise CurvatureError("mass distributions must be non-negative and sum to 1")
    if cost is None:
        cost = metric.matrix(mu.support, nu.support)
    if not np.isfinite(cost).all():
        raise CurvatureError("distributions live on disconnected components")
    return _emd2(mu.weights, nu.weights, cost)


def ollivier_ricci(graph: Graph, edge: tuple[int, int], alpha: float = 0.5, metric=None,
                   _dense=None) -> float:
    """``1 - W(m_x, m_y) / d(x, y)`` for the edge ``(x, y)``."""
    x, y = int(edge[0]), int(edge[1])
    mx, my = mass_distribution(graph, x, alpha), mass_distribution(graph, y, alpha)
    if metric is None:
        if not graph.has_edge(x, y):
            raise CurvatureError(f"({x}, {y}) is not an edge")
        cost, d_xy = _local_hops(graph, mx.support, my.support, _dense), 1.0
    else:
        cost, d_xy = metric.matrix(mx.support, my.support), float(metric.pairs([x], [y])[0])
    return 1.0 - wasserstein_distance(mx, my, cost=cost) / d_xy


@dataclass(eq=False)
class RicciMap:
    """Per-edge curvature aligned with ``graph.edges``."""

    graph: Graph
    values: np.ndarray
    alpha: float

    def __getitem__(self, edge) -> float:
        u, v = sorted(int(e) for e in edge)
        keys = self.graph.edges[:, 0] * self.graph.n + self.graph.edges[:, 1]
        i = np.searchsorted(keys, u * self.graph.n + v)
        if i >= len(keys) or keys[i] != u * self.graph.n + v:
            raise KeyError(edge)
        return float(self.values[i])

    def to_tsv(self, path) -> None:
        with open(path, "w") as fh:
            for (u, v), r in zip(self.graph.edges, self.values):
                fh.write(f"{self.graph.node_name(u)}\t{self.graph.node_name(v)}\t{r:.12g}\n")


def ricci_map(graph: Graph, alpha: float = 0.5) -> RicciMap:
    dense = _dense_adjacency(graph)
    values = np.array([ollivier_ricci(graph, e, alpha, _dense=dense) for e in graph.edges], dtype=float)
    return RicciMap(graph, values, alpha)


# -- regulariser --------------------------------------------------------------


def ricci_regularizer_terms(nodes, fakes: torch.Tensor, points: torch.Tensor, graph: Graph,
                            kappa: float) -> torch.Tensor:
    """Per-node ``mean_{v in N(u)} (1 - d(fake_u, v) / d(u, v))``.

    With the fake assumed to share ``u``'s one-hop mass distribution, the
    Wasserstein factors of the two Ricci curvatures cancel and only this
    ratio of manifold distances is left. Neighbours at zero distance from
    ``u`` are skipped; a node with no usable neighbour contributes 0.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    # d(u, v) depends only on u, so compute it once per distinct node
    uniq, inv = np.unique(nodes, return_inverse=True)
    udeg = graph.degrees[uniq]
    uoff = np.cumsum(udeg) - udeg
    local = np.arange(udeg.sum()) - np.repeat(uoff, udeg)
    unbrs = graph.indices[np.repeat(graph.indptr[uniq], udeg) + local]
    d_uniq = geometry.distance(points[np.repeat(uniq, udeg)], points[unbrs], kappa)

    deg = udeg[inv]
    rows = np.repeat(np.arange(len(nodes)), deg)
    pos = np.repeat(uoff[inv], deg) + np.arange(deg.sum()) - np.repeat(np.cumsum(deg) - deg, deg)
    nbrs = unbrs[pos]
    rows_t = torch.as_tensor(rows)
    d_real = d_uniq[torch.as_tensor(pos)]
    d_fake = geometry.distance(fakes[rows_t], points[nbrs], kappa)
    usable = d_real > ZERO_DISTANCE
    ratio = torch.where(usable, d_fake / torch.where(usable, d_real, torch.ones_like(d_real)),
                        torch.ones_like(d_real))
    terms = torch.zeros(len(nodes), dtype=geometry.DTYPE).index_add(0, rows_t, 1.0 - ratio)
    counts = torch.zeros(len(nodes), dtype=geometry.DTYPE).index_add(0, rows_t, usable.to(geometry.DTYPE))
    if bool((counts == 0).any()):
        log.warning("%d node(s) without a usable neighbour in the Ricci regulariser",
                    int((counts == 0).sum()))
    return terms / counts.clamp_min(1.0)


def ricci_regularizer(u: int, u_fake, points, graph: Graph, kappa: float) -> torch.Tensor:
    """Regulariser for a single node ``u`` with generated point ``u_fake``."""
    if graph.degrees[u] < 1:
        raise CurvatureError(f"node {u} has no neighbours")
    fake = geometry.check_point(u_fake, kappa).reshape(1, -1)
    return ricci_regularizer_terms([u], fake, geometry.as_tensor(points), graph, kappa)[0]
