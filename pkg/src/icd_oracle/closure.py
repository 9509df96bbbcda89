"""Dynamic transitive closure kept as an explicit path-count matrix.

A[u, v] is the number of distinct u -> v paths, with A[v, v] = 1 for the
empty path. Inserting or deleting (x, y) adds or subtracts A[u, x] * A[y, v]
for every ancestor u of x and every descendant v of y (both inclusive).
Reachability is then a single nonzero test.
"""

from __future__ import annotations

import numpy as np

from .model import CompositeGraph, topological_order

MERSENNE_61 = (1 << 61) - 1


class CyclicGraphError(ValueError):
    pass


class PathCountClosure:
    """Path-count matrix. `modulus=None` keeps exact counts (Python ints)."""

    def __init__(self, n: int, modulus: int | None = None):
        self.n = n
        self.modulus = modulus
        # products of two residues below 2**31 fit in int64
        self._native = modulus is not None and modulus <= (1 << 31)
        dtype = np.int64 if self._native else object
        self.A = np.zeros((n, n), dtype=dtype)
        if n:
            self.A[np.arange(n), np.arange(n)] = 1

    def copy(self) -> "PathCountClosure":
        c = PathCountClosure.__new__(PathCountClosure)
        c.n, c.modulus, c._native = self.n, self.modulus, self._native
        c.A = self.A.copy()
        return c

    def signature(self) -> bytes:
        if self._native:
            return self.A.tobytes()
        return repr(self.A.tolist()).encode()

    def equals(self, other: "PathCountClosure") -> bool:
        return self.n == other.n and bool(np.array_equal(self.A, other.A))

    def reach_matrix(self) -> np.ndarray:
        return self.A != 0

    def _update(self, x: int, y: int, sign: int) -> int:
        A = self.A
        col = A[:, x]
        row = A[y, :]
        P = np.flatnonzero(col != 0)
        S = np.flatnonzero(row != 0)
        cx = col[P].copy()
        ry = row[S].copy()
        block = np.ix_(P, S)
        if self.modulus is None:
            A[block] = A[block] + sign * np.outer(cx, ry)
        else:
            p = self.modulus
            delta = np.outer(cx, ry) % p
            A[block] = (A[block] + (p - delta if sign < 0 else delta)) % p
        return len(P) * len(S)


def recompute_tc(graph: CompositeGraph, modulus: int | None = None) -> PathCountClosure:
    closure, _ = recompute_tc_counted(graph, modulus)
    return closure


def recompute_tc_counted(graph: CompositeGraph, modulus: int | None = None) -> tuple[PathCountClosure, int]:
    """Dynamic programme over reverse topological order; also returns the work spent."""
    work = 0
    closure = PathCountClosure(graph.n, modulus)
    for step in recompute_steps(graph, closure):
        work += step
    return closure, work


def recompute_steps(graph: CompositeGraph, closure: PathCountClosure):
    """Fill `closure` row by row, yielding the work for each vertex."""
    order = topological_order(graph)
    if order is None:
        raise CyclicGraphError("path counts are undefined on a cyclic graph")
    A, n, p = closure.A, graph.n, closure.modulus
    for u in reversed(order):
        succ = graph.succ[u]
        if succ:
            row = A[list(succ)].sum(axis=0)
            row[u] += 1
            A[u] = row % p if p is not None else row
        yield (len(succ) + 1) * n


def tc_insert(closure: PathCountClosure, x: int, y: int) -> int:
    """Apply the insertion of (x, y). Returns the number of entries touched."""
    return closure._update(x, y, +1)


def tc_delete(closure: PathCountClosure, x: int, y: int) -> int:
    return closure._update(x, y, -1)


def tc_query(closure: PathCountClosure, x: int, y: int) -> bool:
    return bool(closure.A[x, y] != 0)


def would_close_cycle(closure: PathCountClosure, x: int, y: int) -> bool:
    """Inserting (x, y) closes a cycle iff y already reaches x."""
    return bool(closure.A[y, x] != 0)
