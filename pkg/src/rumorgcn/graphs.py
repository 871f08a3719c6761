"""User-tweet bipartite graphs, reply trees and GCN adjacency normalization."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


class MalformedTreeError(GraphError):
    pass


@dataclass(frozen=True)
class SparseAdjacency:
    n: int
    edges: tuple[tuple[int, int, float], ...] = ()
    directed: bool = False

    def __post_init__(self):
        seen = set()
        for s, d, w in self.edges:
            if not (0 <= s < self.n and 0 <= d < self.n):
                raise GraphError(f"edge ({s}, {d}) out of range for n={self.n}")
            if w <= 0:
                raise GraphError(f"edge ({s}, {d}) has non-positive weight {w}")
            if (s, d) in seen:
                raise GraphError(f"duplicate edge ({s}, {d})")
            seen.add((s, d))

    def to_csr(self) -> sp.csr_matrix:
        if not self.edges:
            return sp.csr_matrix((self.n, self.n))
        src, dst, w = zip(*self.edges)
        return sp.csr_matrix((np.asarray(w, float), (src, dst)), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()


@dataclass(frozen=True)
class BipartiteGraph:
    """Users occupy node indices ``[0, n_users)``, tweets follow."""

    user_ids: tuple[str, ...]
    tweet_ids: tuple[str, ...]
    adjacency: SparseAdjacency

    def __post_init__(self):
        nu = len(self.user_ids)
        if self.adjacency.n != nu + len(self.tweet_ids):
            raise GraphError("node count must equal |users| + |tweets|")
        for s, d, _ in self.adjacency.edges:
            if (s < nu) == (d < nu):
                raise GraphError(f"edge ({s}, {d}) does not join a user and a tweet")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_tweets(self) -> int:
        return len(self.tweet_ids)

    @property
    def n_edges(self) -> int:
        """Undirected edge count (each edge is stored in both directions)."""
        return len(self.adjacency.edges) // 2

    def tweet_node(self, tweet_index: int) -> int:
        return self.n_users + tweet_index

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.adjacency.n)]
        for s, d, _ in self.adjacency.edges:
            nbrs[s].append(d)
        return nbrs


def build_bipartite(interactions: Iterable[tuple[str, str, str]]) -> BipartiteGraph:
    """One unit-weight edge per distinct (user, tweet) pair, whatever the actions."""
    pairs = {(str(u), str(t)) for u, t, _ in interactions}
    users = sorted({u for u, _ in pairs})
    tweets = sorted({t for _, t in pairs})
    uidx = {u: i for i, u in enumerate(users)}
    tidx = {t: len(users) + i for i, t in enumerate(tweets)}
    edges = []
    for u, t in sorted(pairs):
        edges.append((uidx[u], tidx[t], 1.0))
        edges.append((tidx[t], uidx[u], 1.0))
    edges.sort()
    adj = SparseAdjacency(len(users) + len(tweets), tuple(edges))
    return BipartiteGraph(tuple(users), tuple(tweets), adj)


@dataclass(frozen=True)
class NormalizedAdjacency:
    n: int
    matrix: sp.csr_matrix
    degrees: np.ndarray

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize_adjacency(adj: SparseAdjacency, add_self_loops: bool = True) -> NormalizedAdjacency:
    """Symmetric normalization ``D^-1/2 (A + I) D^-1/2``.

    For undirected adjacencies the degree is the row sum of ``A + I``. For
    directed ones (reply trees) it is the total degree: in plus out, with the
    self-loop counted once.
    """
    if adj.n < 1:
        raise GraphError("cannot normalize an empty graph")
    a = adj.to_csr()
    if add_self_loops:
        a = a + sp.identity(adj.n, format="csr")
    a = a.tocsr()
    if adj.directed:
        diag = a.diagonal()
        deg = np.asarray(a.sum(axis=1)).ravel() + np.asarray(a.sum(axis=0)).ravel() - diag
    else:
        deg = np.asarray(a.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise GraphError(f"node {bad} has zero degree; enable self-loops")
    coo = a.tocoo()
    vals = coo.data / np.sqrt(deg[coo.row] * deg[coo.col])
    norm = sp.csr_matrix((vals, (coo.row, coo.col)), shape=a.shape)
    norm.sort_indices()
    return NormalizedAdjacency(adj.n, norm, deg)


def k_hop_nodes(neighbors: Sequence[Sequence[int]], start: Iterable[int], k: int) -> np.ndarray:
    """Sorted node indices within ``k`` hops of ``start`` (breadth-first)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    dist = {v: 0 for v in start}
    queue = deque(dist)
    while queue:
        v = queue.popleft()
        if dist[v] == k:
            continue
        for w in neighbors[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return np.array(sorted(dist), dtype=np.int64)


def k_hop_subgraph(graph: BipartiteGraph, seeds: Sequence[int], k: int = 2):
    """Induced subgraph on nodes within ``k`` hops of the seed tweets.

    ``seeds`` are tweet indices (not node indices). Returns the subgraph and
    the array of original node indices, one per subgraph node.
    """
    start = []
    for s in seeds:
        if not 0 <= s < graph.n_tweets:
            raise IndexError(f"seed tweet index {s} out of range")
        start.append(graph.tweet_node(s))
    keep = k_hop_nodes(graph.neighbors(), start, k)
    remap = {int(old): new for new, old in enumerate(keep)}
    edges = tuple(
        (remap[s], remap[d], w) for s, d, w in graph.adjacency.edges if s in remap and d in remap
    )
    nu = graph.n_users
    users = tuple(graph.user_ids[i] for i in keep if i < nu)
    tweets = tuple(graph.tweet_ids[i - nu] for i in keep if i >= nu)
    sub = BipartiteGraph(users, tweets, SparseAdjacency(len(keep), edges))
    return sub, keep


@dataclass(frozen=True)
class PropagationTree:
    """Reply tree; node 0 is conventionally the source tweet."""

    parent: tuple[int | None, ...]
    node_texts: tuple[str, ...] = field(default=())
    root: int = 0

    def __post_init__(self):
        if self.node_texts and len(self.node_texts) != len(self.parent):
            raise MalformedTreeError("one text per node required")

    @property
    def n(self) -> int:
        return len(self.parent)

    def depths(self) -> list[int]:
        order = _topological_order(self)
        depth = [0] * self.n
        for v in order:
            p = self.parent[v]
            if p is not None:
                depth[v] = depth[p] + 1
        return depth


def _topological_order(tree: PropagationTree) -> list[int]:
    roots = [i for i, p in enumerate(tree.parent) if p is None]
    if roots != [tree.root]:
        raise MalformedTreeError(f"expected a single root at {tree.root}, found {roots}")
    children: list[list[int]] = [[] for _ in range(tree.n)]
    for i, p in enumerate(tree.parent):
        if p is not None:
            if not 0 <= p < tree.n:
                raise MalformedTreeError(f"node {i} has invalid parent {p}")
            children[p].append(i)
    order = []
    stack = [tree.root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(reversed(children[v]))
    if len(order) != tree.n:
        raise MalformedTreeError("cycle or unreachable node in reply tree")
    return order


def tree_adjacency(tree: PropagationTree) -> SparseAdjacency:
    """Top-down directed edges, parent -> child only."""
    _topological_order(tree)
    edges = tuple(sorted((p, i, 1.0) for i, p in enumerate(tree.parent) if p is not None))
    return SparseAdjacency(tree.n, edges, directed=True)
