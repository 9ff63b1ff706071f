"""Weighted communication digraph, root set and (expanded) Laplacians.

Edge convention: ``adjacency[i, j] > 0`` is an edge from node ``j`` to node
``i``, i.e. agent ``i`` receives information from agent ``j``. Nodes are
0-based in this API; scenario files use 1-based numbering.
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput


def _check_adjacency(adjacency):
    W = np.array(adjacency, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidInput(f"adjacency must be square, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise InvalidInput("adjacency contains non-finite weights")
    if np.any(W < 0):
        raise InvalidInput("adjacency has negative weights")
    if np.any(np.diag(W) != 0):
        raise InvalidInput("adjacency has self-loops (nonzero diagonal)")
    return W


@dataclass(frozen=True)
class Topology:
    adjacency: np.ndarray
    root_set: frozenset
    N: int = field(init=False)

    def __post_init__(self):
        W = _check_adjacency(self.adjacency)
        W.setflags(write=False)
        roots = frozenset(int(r) for r in self.root_set)
        if not roots:
            raise InvalidInput("root set must be nonempty")
        N = W.shape[0]
        bad = [r for r in roots if not 0 <= r < N]
        if bad:
            raise InvalidInput(f"root nodes {sorted(bad)} outside 0..{N - 1}")
        object.__setattr__(self, "adjacency", W)
        object.__setattr__(self, "root_set", roots)
        object.__setattr__(self, "N", N)

    @property
    def iota(self):
        """Root indicator vector."""
        v = np.zeros(self.N)
        v[sorted(self.root_set)] = 1.0
        return v

    @classmethod
    def from_edges(cls, N, edges, roots, weight=1.0):
        """Build from ``(src, dst)`` pairs, each meaning information flows src -> dst."""
        W = np.zeros((N, N))
        for src, dst in edges:
            W[dst, src] = weight
        return cls(W, frozenset(roots))


@dataclass(frozen=True)
class ExpandedLaplacian:
    L: np.ndarray
    Lbar: np.ndarray


def laplacian(topology):
    """Row-sum-zero Laplacian: l_ii = sum_k a_ik, l_ij = -a_ij."""
    W = topology.adjacency if isinstance(topology, Topology) else _check_adjacency(topology)
    L = -W.copy()
    np.fill_diagonal(L, W.sum(axis=1))
    return L


def expanded_laplacian(L, root_set):
    L = np.asarray(L, dtype=float)
    N = L.shape[0]
    roots = sorted(int(r) for r in root_set)
    if not roots:
        raise InvalidInput("root set must be nonempty")
    if roots[0] < 0 or roots[-1] >= N:
        raise InvalidInput(f"root nodes {roots} outside 0..{N - 1}")
    iota = np.zeros(N)
    iota[roots] = 1.0
    return ExpandedLaplacian(L=L.copy(), Lbar=L + np.diag(iota))


def check_membership(topology):
    """True iff every node is reachable from the root set along directed edges."""
    W = topology.adjacency
    seen = set(topology.root_set)
    queue = deque(seen)
    while queue:
        j = queue.popleft()
        # edges j -> i are the nonzeros of column j
        for i in np.flatnonzero(W[:, j] > 0):
            if i not in seen:
                seen.add(int(i))
                queue.append(int(i))
    return len(seen) == topology.N


# Stand-ins for the 3/5/6/10-node example networks. The original edge sets
# were only published as figures, so these are representative members of the
# admissible graph set, not reproductions.
_REPRESENTATIVE = {
    3: ([(0, 1), (1, 2)], [0]),
    5: ([(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], [0]),
    6: ([(0, 1), (1, 2), (0, 3), (3, 4), (4, 5)], [0]),
    10: (
        [(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 5), (5, 3),
         (6, 7), (7, 8), (8, 9), (9, 6), (2, 9)],
        [0, 6],
    ),
}


def representative_graph(N):
    """Deterministic admissible topology with ``N`` nodes.

    Sizes 3, 5, 6 and 10 return the shipped example networks; other sizes
    get a directed path rooted at node 0 plus a feedback edge.
    """
    if N < 1:
        raise InvalidInput("N must be positive")
    if N in _REPRESENTATIVE:
        edges, roots = _REPRESENTATIVE[N]
        return Topology.from_edges(N, edges, roots)
    edges = [(i, i + 1) for i in range(N - 1)]
    if N > 2:
        edges.append((N - 1, 1))
    return Topology.from_edges(N, edges, [0])
