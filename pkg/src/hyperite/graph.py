"""Undirected simple graphs in the form the encoder consumes."""

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


class Graph:
    """Undirected graph on nodes ``0..n-1``.

    Each edge is stored once as ``(min, max)``; self-loops and duplicates are
    rejected. Self-loops are added implicitly by :meth:`norm_adjacency`.
    """

    def __init__(self, n, edges=()):
        self.n = int(n)
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= self.n:
                raise GraphError(f"edge endpoint out of range [0, {self.n})")
            loops = np.flatnonzero(e[:, 0] == e[:, 1])
            if loops.size:
                i = int(loops[0])
                raise GraphError(f"self-loop ({e[i, 0]}, {e[i, 1]}) at edge {i}")
            e = np.sort(e, axis=1)
            uniq = np.unique(e, axis=0)
            if len(uniq) != len(e):
                raise GraphError("duplicate undirected edge")
        self.edges = e
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        self.adjacency = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n)
        )
        self.adjacency.sort_indices()
        self.degrees = np.diff(self.adjacency.indptr).astype(np.int64)
        self._norm = None

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def aug_degrees(self):
        return self.degrees + 1

    def neighbors(self, i):
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def agg_weight(self, i, j):
        """Symmetric-normalised weight ``1/sqrt(d^_i d^_j)``."""
        d = self.aug_degrees
        return 1.0 / np.sqrt(d[i] * d[j])

    def norm_adjacency(self):
        """``D^-1/2 (A + I) D^-1/2`` with ``D`` the augmented degrees, as CSR."""
        if self._norm is None:
            a = self.adjacency + sp.identity(self.n, format="csr")
            s = sp.diags(1.0 / np.sqrt(self.aug_degrees))
            self._norm = (s @ a @ s).tocsr()
            self._norm.sort_indices()
        return self._norm

    def permuted(self, perm):
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        return Graph(self.n, perm[self.edges] if self.num_edges else self.edges)

    def without_edges(self):
        return Graph(self.n, ())

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.edges, other.edges)

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.num_edges})"
