"""Undirected simple graphs: synthetic generators, edge-list IO, splits and RAND attacks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    pass


def _canonical(edges: np.ndarray, n: int) -> tuple[np.ndarray, int, int]:
    """Sort endpoints, drop self-loops and duplicates. Returns (edges, loops, dups)."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise ValueError(f"edge endpoint outside [0, {n})")
    loops = int((e[:, 0] == e[:, 1]).sum())
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    uniq = np.unique(e, axis=0) if len(e) else e.reshape(0, 2)
    return uniq, loops, len(e) - len(uniq)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph on nodes ``0..n-1``; ``edges`` holds each edge once as ``(u < v)``."""

    n: int
    edges: np.ndarray
    labels: np.ndarray | None = None
    names: tuple[str, ...] | None = field(default=None, repr=False)

    @classmethod
    def from_edges(cls, n: int, edges, labels=None, names=None) -> "Graph":
        e, _, _ = _canonical(np.asarray(edges), n)
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError(f"expected {n} labels, got {labels.shape}")
        return cls(int(n), e, labels, None if names is None else tuple(names))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * self.m, dtype=np.int8)
        a = sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(self.n, self.n))
        a.sort_indices()
        return a

    @property
    def indptr(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adjacency.indices

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, u: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[u] : a.indptr[u + 1]]

    @cached_property
    def _keys(self) -> np.ndarray:
        return np.sort(self.edges[:, 0] * self.n + self.edges[:, 1])

    def has_edges(self, u, v) -> np.ndarray:
        u, v = np.asarray(u, dtype=np.int64), np.asarray(v, dtype=np.int64)
        keys = np.minimum(u, v) * self.n + np.maximum(u, v)
        if not self.m:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._keys, keys).clip(max=self.m - 1)
        return self._keys[pos] == keys

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.has_edges(u, v))

    def with_edges(self, edges) -> "Graph":
        """Same nodes, labels and names; different edge set."""
        return Graph.from_edges(self.n, edges, self.labels, self.names)

    def node_name(self, u: int) -> str:
        return self.names[u] if self.names is not None else str(u)


# -- synthetic generators -------------------------------------------------


def generate_sbm(n: int = 1000, blocks: int = 5, p: float = 0.21, q: float = 0.025,
                 seed: int = 0) -> Graph:
    """Stochastic block model with equal blocks; node label = block index."""
    if n % blocks:
        raise ValueError(f"n={n} is not divisible by blocks={blocks}")
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise ValueError(f"probabilities must lie in [0, 1], got p={p}, q={q}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(blocks), n // blocks)
    chunks = []
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        prob = np.where(labels[j] == labels[i], p, q)
        hit = j[rng.random(len(j)) < prob]
        chunks.append(np.column_stack([np.full(len(hit), i), hit]))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    return Graph.from_edges(n, edges, labels)


def generate_ba(n: int = 1000, m_range: tuple[int, int] = (1, 10), seed: int = 0) -> Graph:
    """Preferential attachment where each arriving node draws its edge count from ``m_range``.

    Starts from a clique on ``max(m_range) + 1`` nodes, so every draw is satisfiable.
    """
    lo, hi = int(m_range[0]), int(m_range[1])
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid m_range {m_range}")
    n0 = hi + 1
    if n <= n0:
        raise ValueError(f"n must exceed {n0}")
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n0) for j in range(i + 1, n0)]
    # every node appears once per incident edge endpoint
    repeated = [v for e in edges for v in e]
    for t in range(n0, n):
        m = int(rng.integers(lo, hi + 1))
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for s in sorted(targets):
            edges.append((s, t))
            repeated.extend((s, t))
    return Graph.from_edges(n, edges)


def generate_ws(n: int = 1000, k: int = 24, beta: float = 0.21, seed: int = 0) -> Graph:
    """Ring lattice with ``k/2`` neighbours per side; each edge rewired with probability ``beta``."""
    if k % 2 or not 0 < k < n:
        raise ValueError(f"k must be even and 0 < k < n, got k={k}")
    if not 0 <= beta <= 1:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    rng = np.random.default_rng(seed)
    adj = [set() for _ in range(n)]
    for u in range(n):
        for j in range(1, k // 2 + 1):
            v = (u + j) % n
            adj[u].add(v)
            adj[v].add(u)
    for j in range(1, k // 2 + 1):
        for u in range(n):
            v = (u + j) % n
            if rng.random() >= beta or v not in adj[u] or len(adj[u]) >= n - 1:
                continue
            w = int(rng.integers(n))
            while w == u or w in adj[u]:
                w = int(rng.integers(n))
            adj[u].remove(v)
            adj[v].remove(u)
            adj[u].add(w)
            adj[w].add(u)
    edges = [(u, v) for u in range(n) for v in adj[u] if u < v]
    return Graph.from_edges(n, edges)


# -- edge-list IO ---------------------------------------------------------


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _as_ids(tokens: list[str]) -> tuple[dict[str, int], tuple[str, ...] | None]:
    uniq = sorted(set(tokens), key=lambda t: (not t.isdigit(), int(t) if t.isdigit() else 0, t))
    if all(t.isdigit() for t in uniq) and (not uniq or int(uniq[-1]) == len(uniq) - 1):
        return {t: int(t) for t in uniq}, None
    return {t: i for i, t in enumerate(uniq)}, tuple(uniq)


def load_edge_list(path, labels_path=None) -> Graph:
    """Parse ``src dst`` lines (whitespace separated, ``#`` comments) into a simple graph.

    Node tokens forming the range ``0..n-1`` are kept as ids; anything else is
    relabelled in sorted order and the original tokens are kept in ``names``.
    """
    pairs = []
    for lineno, parts in _data_lines(path):
        if len(parts) < 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'src dst', got {' '.join(parts)!r}")
        pairs.append((parts[0], parts[1]))
    label_rows = load_labels(labels_path) if labels_path is not None else {}
    tokens = [t for pr in pairs for t in pr] + list(label_rows)
    ids, names = _as_ids(tokens)
    n = len(ids)
    raw = np.array([(ids[a], ids[b]) for a, b in pairs], dtype=np.int64).reshape(-1, 2)
    edges, loops, dups = _canonical(raw, n)
    if loops or dups:
        log.info("%s: dropped %d self-loops and %d duplicate edges", path, loops, dups)
    labels = None
    if label_rows:
        classes = {c: i for i, c in enumerate(sorted(set(label_rows.values()), key=_natural))}
        labels = np.full(n, -1, dtype=np.int64)
        for node, c in label_rows.items():
            labels[ids[node]] = classes[c]
    return Graph(n, edges, labels, names)


def _natural(token: str):
    return (0, int(token), "") if token.lstrip("-").isdigit() else (1, 0, token)


def load_labels(path) -> dict[str, str]:
    """``node_id label`` lines as a dict of raw tokens."""
    rows = {}
    for lineno, parts in _data_lines(path):
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'node_id label'")
        rows[parts[0]] = parts[1]
    return rows


def save_edge_list(graph: Graph, path, edges=None) -> None:
    edges = graph.edges if edges is None else np.asarray(edges).reshape(-1, 2)
    with open(path, "w") as fh:
        for u, v in edges:
            fh.write(f"{graph.node_name(u)}\t{graph.node_name(v)}\n")


def save_labels(graph: Graph, path) -> None:
    if graph.labels is None:
        raise ValueError("graph has no labels")
    with open(path, "w") as fh:
        for u, c in enumerate(graph.labels):
            fh.write(f"{graph.node_name(u)}\t{c}\n")


# -- sampling non-edges, splits, attacks -----------------------------------


def sample_non_edges(graph: Graph, count: int, rng: np.random.Generator,
                     exclude: np.ndarray | None = None) -> np.ndarray:
    """``count`` distinct uniform node pairs ``(u < v)`` that are not edges of ``graph``."""
    n = graph.n
    taken = np.zeros(0, dtype=np.int64) if exclude is None else np.unique(
        np.sort(np.asarray(exclude).reshape(-1, 2), axis=1) @ np.array([n, 1]))
    available = n * (n - 1) // 2 - graph.m - int((~graph.has_edges(taken // n, taken % n)).sum())
    if count > available:
        raise ValueError(f"requested {count} non-edges but only {available} exist")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if count > available // 2:
        # dense regime: enumerate the complement instead of rejection sampling
        iu, ju = np.triu_indices(n, 1)
        keys = iu * n + ju
        keys = keys[~graph.has_edges(iu, ju) & ~np.isin(keys, taken)]
        pick = np.sort(rng.choice(len(keys), size=count, replace=False))
        keys = keys[pick]
        return np.column_stack([keys // n, keys % n])
    found = np.zeros(0, dtype=np.int64)
    while len(found) < count:
        need = count - len(found)
        u = rng.integers(n, size=2 * need + 8)
        v = rng.integers(n, size=2 * need + 8)
        ok = (u != v) & ~graph.has_edges(u, v)
        keys = np.minimum(u, v)[ok] * n + np.maximum(u, v)[ok]
        keys = keys[~np.isin(keys, taken) & ~np.isin(keys, found)]
        _, first = np.unique(keys, return_index=True)
        found = np.concatenate([found, keys[np.sort(first)][:need]])
    return np.column_stack([found // n, found % n])


@dataclass(eq=False)
class EdgeSplit:
    train: Graph
    test_pos: np.ndarray
    test_neg: np.ndarray
    ratio: float
    seed: int

    def counts(self) -> dict[str, int]:
        return {"train": self.train.m, "test_pos": len(self.test_pos), "test_neg": len(self.test_neg)}

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_edge_list(self.train, d / "train.tsv")
        save_edge_list(self.train, d / "test_pos.tsv", self.test_pos)
        save_edge_list(self.train, d / "test_neg.tsv", self.test_neg)
        manifest = {"ratio": self.ratio, "seed": self.seed, "counts": self.counts(), "n": self.train.n}
        (d / "split.json").write_text(json.dumps(manifest, indent=2) + "\n")


def split_edges(graph: Graph, test_ratio: float = 0.5, seed: int = 0) -> EdgeSplit:
    """Hold out ``round(test_ratio * m)`` edges plus as many uniform non-edges of ``graph``."""
    if not 0 <= test_ratio < 1:
        raise ValueError(f"test_ratio must lie in [0, 1), got {test_ratio}")
    if graph.m < 2:
        raise ValueError("need at least two edges to split")
    rng = np.random.default_rng(seed)
    n_test = int(round(test_ratio * graph.m))
    perm = rng.permutation(graph.m)
    test_pos = graph.edges[np.sort(perm[:n_test])]
    train = graph.with_edges(graph.edges[np.sort(perm[n_test:])])
    test_neg = sample_non_edges(graph, n_test, rng)
    return EdgeSplit(train, test_pos, test_neg, float(test_ratio), int(seed))


@dataclass(frozen=True)
class AttackSpec:
    mode: str
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("add", "remove"):
            raise ValueError(f"attack mode must be 'add' or 'remove', got {self.mode!r}")
        if not 0 < self.ratio < 1:
            raise ValueError(f"attack ratio must lie in (0, 1), got {self.ratio}")

    def count(self, m: int) -> int:
        c = int(round(self.ratio * m))
        if c < 1:
            raise ValueError(f"ratio {self.ratio} perturbs no edge of a {m}-edge graph")
        return c


def rand_attack(graph: Graph, spec: AttackSpec, exclude: np.ndarray | None = None) -> Graph:
    """Randomly insert or delete ``round(ratio * m)`` edges; the input graph is left untouched.

    ``exclude`` lists pairs that add mode must not insert (held-out test pairs).
    """
    rng = np.random.default_rng(spec.seed)
    c = spec.count(graph.m)
    if spec.mode == "remove":
        keep = np.sort(rng.permutation(graph.m)[c:])
        return graph.with_edges(graph.edges[keep])
    added = sample_non_edges(graph, c, rng, exclude)
    return graph.with_edges(np.concatenate([graph.edges, added]))
