"""Proximity-graph construction over word box centers.

The production graph is the beta = 1 member of the beta-skeleton family,
i.e. the Gabriel graph: vertices i and j are connected exactly when no
third point lies strictly inside the open disk whose diameter is the
segment (p_i, p_j). The blocking predicate is evaluated as

    (p_i - p_k) . (p_j - p_k) < 0

which says the segment subtends an obtuse angle at k (Thales), avoids any
division, and makes "exactly on the circle" a non-blocker. Both the
brute-force oracle and the vectorized production path evaluate this exact
expression in 64-bit floats so their edge sets agree bit-for-bit.

At desk scale (hundreds of tokens per page) the O(n^3) predicate sweep is
cheap; no Delaunay-filtered fast path is provided on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .docmodel import Document, box_center


class UnsupportedBeta(ValueError):
    """Raised for beta values other than 1.0."""


@dataclass(frozen=True)
class SkeletonGraph:
    """Undirected proximity graph: vertex count plus (i, j) pairs with i < j."""

    n_vertices: int
    undirected_edges: tuple[tuple[int, int], ...]

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.undirected_edges)


@dataclass(frozen=True)
class DocGraph:
    """Directed message-passing view of a document's skeleton.

    Every skeleton edge appears in both orientations in `directed_edges`.
    `in_edges[v]` lists the rows of `directed_edges` whose destination is v.
    Tokens with coincident box centers are merged into one vertex; the
    member with the smallest reading index is the representative whose box
    anchors the vertex, and `vertex_members` records all merged token
    positions.
    """

    skeleton: SkeletonGraph
    directed_edges: tuple[tuple[int, int], ...]
    in_edges: tuple[tuple[int, ...], ...]
    vertex_members: tuple[tuple[int, ...], ...]
    vertex_reading_index: tuple[int, ...]
    token_to_vertex: tuple[int, ...]
    vertex_centers: tuple[tuple[float, float], ...]

    @property
    def n_vertices(self) -> int:
        return self.skeleton.n_vertices


def _as_points(points: Sequence[Sequence[float]]) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        pts = pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("non-finite point coordinates")
    return pts


def gabriel_bruteforce(points: Sequence[Sequence[float]]) -> SkeletonGraph:
    """Reference Gabriel graph via the plain triple loop.

    Kept deliberately dumb: python floats, explicit loops, no early
    vectorization. This is the oracle the production path is tested against.
    """
    pts = _as_points(points)
    n = len(pts)
    xs = [float(p[0]) for p in pts]
    ys = [float(p[1]) for p in pts]

    edges: list[tuple[int, int]] = []
    for i in range(n):
        for j in range(i + 1, n):
            blocked = False
            for k in range(n):
                if k == i or k == j:
                    continue
                dot = (xs[i] - xs[k]) * (xs[j] - xs[k]) + (ys[i] - ys[k]) * (ys[j] - ys[k])
                if dot < 0.0:
                    blocked = True
                    break
            if not blocked:
                edges.append((i, j))
    return SkeletonGraph(n_vertices=n, undirected_edges=tuple(edges))


def beta_skeleton(points: Sequence[Sequence[float]], beta: float = 1.0) -> SkeletonGraph:
    """Beta-skeleton over 2D points. Only beta = 1 (Gabriel) is supported.

    Vectorized over the blocking point k: one pass per k marks every pair
    (i, j) that k blocks. The elementwise arithmetic matches
    `gabriel_bruteforce` operation for operation, so the two paths produce
    identical edge sets, not merely close ones.
    """
    if beta != 1.0:
        raise UnsupportedBeta(f"beta={beta!r} not supported; only beta=1.0")
    pts = _as_points(points)
    n = len(pts)
    if n == 0:
        raise ValueError("need at least one point")

    x = pts[:, 0]
    y = pts[:, 1]
    blocked = np.zeros((n, n), dtype=bool)
    for k in range(n):
        ux = x - x[k]
        uy = y - y[k]
        dot = ux[:, None] * ux[None, :] + uy[:, None] * uy[None, :]
        dot[k, :] = 0.0
        dot[:, k] = 0.0
        blocked |= dot < 0.0

    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if not blocked[i, j]]
    return SkeletonGraph(n_vertices=n, undirected_edges=tuple(edges))


def is_connected(g: SkeletonGraph) -> bool:
    """True when every vertex is reachable from vertex 0 (single component).

    Gabriel graphs over points in general position come out connected; this
    is a sanity probe for diagnostics, not an enforced invariant (degenerate
    inputs can split components).
    """
    if g.n_vertices <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(g.n_vertices)]
    for i, j in g.undirected_edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == g.n_vertices


def build_doc_graph(d: Document) -> DocGraph:
    """Skeleton over token box centers, materialized as directed edges.

    Tokens whose centers coincide exactly share a vertex (the Gabriel
    predicate is ill-defined for coincident points); the earliest token in
    reading order represents the merged vertex.
    """
    if d.n_tokens < 1:
        raise ValueError(f"document {d.id} has no tokens")

    center_to_vertex: dict[tuple[float, float], int] = {}
    members: list[list[int]] = []
    token_to_vertex: list[int] = []
    points: list[tuple[float, float]] = []
    for pos, tok in enumerate(d.tokens):
        c = box_center(tok.box)
        v = center_to_vertex.get(c)
        if v is None:
            v = len(points)
            center_to_vertex[c] = v
            points.append(c)
            members.append([pos])
        else:
            members[v].append(pos)
        token_to_vertex.append(v)

    skeleton = beta_skeleton(points, beta=1.0)

    directed: list[tuple[int, int]] = []
    for i, j in skeleton.undirected_edges:
        directed.append((i, j))
        directed.append((j, i))

    incoming: list[list[int]] = [[] for _ in range(skeleton.n_vertices)]
    for row, (_src, dst) in enumerate(directed):
        incoming[dst].append(row)

    return DocGraph(
        skeleton=skeleton,
        directed_edges=tuple(directed),
        in_edges=tuple(tuple(rows) for rows in incoming),
        vertex_members=tuple(tuple(m) for m in members),
        vertex_reading_index=tuple(d.tokens[m[0]].index for m in members),
        token_to_vertex=tuple(token_to_vertex),
        vertex_centers=tuple(points),
    )
