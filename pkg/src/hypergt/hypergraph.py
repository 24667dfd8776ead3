"""Hypergraph container, star expansion and hMETIS-style file I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class HypergraphError(ValueError):
    """Raised for structurally invalid hypergraphs."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid hypergraph: " + "; ".join(self.violations))


class HypergraphFormatError(ValueError):
    """Raised when a hypergraph file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """Nodes, hyperedges and the dense n x m incidence matrix.

    ``incidence[i, j] == 1`` iff hyperedge ``j`` contains node ``i``. The
    array is copied and made read-only on construction.
    """

    incidence: np.ndarray

    def __post_init__(self):
        inc = np.array(self.incidence, dtype=np.float64, copy=True)
        if inc.ndim != 2:
            raise ValueError(f"incidence must be 2-D, got shape {inc.shape}")
        if inc.shape[0] < 1:
            raise ValueError("a hypergraph needs at least one node")
        inc.setflags(write=False)
        object.__setattr__(self, "incidence", inc)

    @classmethod
    def from_hyperedges(cls, n: int, hyperedges: Iterable[Iterable[int]]) -> "Hypergraph":
        """Build from 0-based member lists."""
        edges = [sorted(set(int(v) for v in e)) for e in hyperedges]
        inc = np.zeros((n, len(edges)))
        for j, members in enumerate(edges):
            for v in members:
                if not 0 <= v < n:
                    raise ValueError(f"node {v} out of range for n={n}")
                inc[v, j] = 1.0
        return cls(inc)

    @property
    def n(self) -> int:
        return self.incidence.shape[0]

    @property
    def m(self) -> int:
        return self.incidence.shape[1]

    @property
    def node_degrees(self) -> np.ndarray:
        return self.incidence.sum(axis=1)

    @property
    def edge_sizes(self) -> np.ndarray:
        return self.incidence.sum(axis=0)

    @property
    def hyperedges(self) -> list[list[int]]:
        """0-based member lists, one per hyperedge."""
        return [np.flatnonzero(self.incidence[:, j]).tolist() for j in range(self.m)]

    def __eq__(self, other):
        if not isinstance(other, Hypergraph):
            return NotImplemented
        return self.incidence.shape == other.incidence.shape and bool(
            np.array_equal(self.incidence, other.incidence)
        )

    def __repr__(self):
        return f"Hypergraph(n={self.n}, m={self.m}, nnz={int(self.incidence.sum())})"


@dataclass(frozen=True, eq=False)
class StarExpansion:
    """Bipartite node/hyperedge graph of a hypergraph.

    Instances ``0..n-1`` are nodes and ``n..n+m-1`` are hyperedges, the same
    order used when node and hyperedge features are stacked.
    """

    adjacency: np.ndarray
    degrees: np.ndarray
    n: int
    _transition: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.adjacency.shape[0] - self.n

    @property
    def incidence(self) -> np.ndarray:
        """Top-right block, i.e. the original incidence matrix."""
        return self.adjacency[: self.n, self.n :]

    @property
    def transition(self) -> np.ndarray:
        if self._transition is None:
            object.__setattr__(self, "_transition", transition_matrix(self))
        return self._transition

    @cached_property
    def edge_list(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, 1/d_row) for every directed star-expansion edge."""
        rows, cols = np.nonzero(self.adjacency)
        return rows, cols, 1.0 / self.degrees[rows]


def validate(hg: Hypergraph) -> list[str]:
    """Return a list of structural violations; empty means valid.

    Duplicate hyperedges are allowed.
    """
    violations = []
    inc = hg.incidence
    bad = np.argwhere((inc != 0) & (inc != 1))
    for i, j in bad:
        violations.append(f"non-binary entry at ({i},{j})")
    for k in np.flatnonzero(inc.sum(axis=0) == 0):
        violations.append(f"empty hyperedge at index {k}")
    return violations


def star_expand(hg: Hypergraph) -> StarExpansion:
    """Build ``A_s = [[0, H], [H^T, 0]]`` and its degree vector."""
    violations = validate(hg)
    if violations:
        raise HypergraphError(violations)
    return _star_expand_unchecked(hg.incidence)


def _star_expand_unchecked(inc: np.ndarray) -> StarExpansion:
    n, m = inc.shape
    adj = np.zeros((n + m, n + m))
    adj[:n, n:] = inc
    adj[n:, :n] = inc.T
    adj.setflags(write=False)
    degrees = adj.sum(axis=1)
    degrees.setflags(write=False)
    return StarExpansion(adjacency=adj, degrees=degrees, n=n)


def transition_matrix(se: StarExpansion) -> np.ndarray:
    """Row-normalise the adjacency; zero-degree rows stay all-zero."""
    deg = se.degrees
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return se.adjacency * inv[:, None]


def load_hypergraph(path: str | os.PathLike) -> Hypergraph:
    """Read the hMETIS-style format: header ``m n``, then one line per hyperedge.

    Node indices in the file are 1-based. Blank lines and ``%`` comments are
    skipped.
    """
    header = None
    edges: list[list[int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            tokens = line.split()
            try:
                values = [int(t) for t in tokens]
            except ValueError:
                bad = next(t for t in tokens if not _is_int(t))
                raise HypergraphFormatError(f"non-integer token {bad!r}", lineno) from None
            if header is None:
                if len(values) != 2:
                    raise HypergraphFormatError(
                        f"header must be 'm n', got {len(values)} tokens", lineno
                    )
                m, n = values
                if m < 0 or n < 1:
                    raise HypergraphFormatError(f"bad header counts m={m}, n={n}", lineno)
                header = (m, n)
                continue
            m, n = header
            if len(edges) >= m:
                raise HypergraphFormatError(f"more than m={m} hyperedge lines", lineno)
            for v in values:
                if not 1 <= v <= n:
                    raise HypergraphFormatError(
                        f"node index {v} out of range [1, {n}]", lineno
                    )
            edges.append([v - 1 for v in values])
    if header is None:
        raise HypergraphFormatError("missing header line")
    m, n = header
    if len(edges) != m:
        raise HypergraphFormatError(f"expected {m} hyperedge lines, found {len(edges)}")
    return Hypergraph.from_hyperedges(n, edges)


def save_hypergraph(hg: Hypergraph, path: str | os.PathLike) -> None:
    lines = [f"{hg.m} {hg.n}"]
    for members in hg.hyperedges:
        lines.append(" ".join(str(v + 1) for v in members))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True
