"""Reading-order positional codes for graph neighborhoods.

For every target vertex, its in-neighbors are ranked by their original
reading-order index and numbered 0, 1, 2, ... in that order. The code of
an incoming edge therefore depends only on where its source falls inside
the target's neighborhood, never on absolute index values: shifting the
whole neighborhood through the document, or re-serializing other parts of
the page, leaves every code unchanged.

Codes can enter the network raw (scaled index), through a small sinusoidal
map, or both concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import DocGraph

MODES = ("off", "index", "sinusoidal", "combined")

# CLI speaks off|index|sine|both; internal names are the long forms.
MODE_ALIASES = {"off": "off", "index": "index", "sine": "sinusoidal", "both": "combined"}


@dataclass(frozen=True)
class RopeEncodingConfig:
    """How neighbor rank codes are turned into message features.

    The 0.1 index scale keeps raw ranks O(1) next to page-normalized
    geometry: skeleton in-degrees rarely exceed 8. The sinusoidal schedule
    is the standard geometric one with base 10000 over 3 frequencies.
    """

    mode: str = "combined"
    n_frequencies: int = 3
    frequency_base: float = 10000.0
    index_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not one of {MODES}")
        if self.n_frequencies < 1:
            raise ValueError("need at least one frequency")

    @property
    def width(self) -> int:
        if self.mode == "off":
            return 0
        if self.mode == "index":
            return 1
        if self.mode == "sinusoidal":
            return 2 * self.n_frequencies
        return 1 + 2 * self.n_frequencies


@dataclass(frozen=True)
class RopeAssignment:
    """Per directed edge (src, dst): the rank of src among dst's in-neighbors."""

    edges: tuple[tuple[int, int], ...]
    codes: np.ndarray  # int64, aligned with `edges`

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {e: int(c) for e, c in zip(self.edges, self.codes)}

    def codes_for_target(self, dst: int) -> dict[int, int]:
        """Map src vertex -> code, restricted to edges into `dst`."""
        return {e[0]: int(c) for e, c in zip(self.edges, self.codes) if e[1] == dst}


def rope_codes(g: DocGraph, reading_order: Sequence[int]) -> RopeAssignment:
    """Assign neighbor rank codes for every directed edge of the graph.

    `reading_order[v]` is the reading index of vertex v. For each target,
    in-neighbors sorted ascending by reading index get codes 0, 1, 2, ...
    Reading indexes are unique per document, so no tie-break is needed.
    """
    n = g.n_vertices
    if len(reading_order) != n:
        raise ValueError(f"{len(reading_order)} reading indexes for {n} vertices")
    for src, dst in g.directed_edges:
        if not (0 <= src < n and 0 <= dst < n):
            raise ValueError(f"edge ({src}, {dst}) references unknown vertex")

    codes = np.zeros(len(g.directed_edges), dtype=np.int64)
    for rows in g.in_edges:
        if not rows:
            continue
        srcs = [g.directed_edges[r][0] for r in rows]
        order = sorted(range(len(rows)), key=lambda a: reading_order[srcs[a]])
        for rank, a in enumerate(order):
            codes[rows[a]] = rank
    return RopeAssignment(edges=g.directed_edges, codes=codes)


def sinusoidal_encode(p, n_frequencies: int = 3, base: float = 10000.0) -> np.ndarray:
    """[sin(p/f_0), cos(p/f_0), ...] with f_k = base**(k / n_frequencies).

    Accepts a scalar code (returns shape (2f,)) or an array of codes
    (returns shape (len, 2f)).
    """
    p_arr = np.asarray(p, dtype=np.float64)
    scalar = p_arr.ndim == 0
    p_arr = np.atleast_1d(p_arr)
    freqs = base ** (np.arange(n_frequencies) / n_frequencies)
    phase = p_arr[:, None] / freqs[None, :]
    out = np.empty((len(p_arr), 2 * n_frequencies), dtype=np.float64)
    out[:, 0::2] = np.sin(phase)
    out[:, 1::2] = np.cos(phase)
    return out[0] if scalar else out


def rope_edge_encoding(p: int, cfg: RopeEncodingConfig) -> np.ndarray:
    """Feature vector for one code under the configured mode (width 0/1/6/7)."""
    return encode_codes(np.array([p], dtype=np.int64), cfg)[0]


def encode_codes(codes: np.ndarray, cfg: RopeEncodingConfig) -> np.ndarray:
    """(n_edges, width) encoding of an array of codes; width 0 when mode is off."""
    codes = np.asarray(codes, dtype=np.float64)
    n = len(codes)
    if cfg.mode == "off":
        return np.zeros((n, 0), dtype=np.float64)
    if cfg.mode == "index":
        return (codes * cfg.index_scale)[:, None]
    sin_part = sinusoidal_encode(codes, cfg.n_frequencies, cfg.frequency_base)
    if cfg.mode == "sinusoidal":
        return sin_part
    return np.concatenate([(codes * cfg.index_scale)[:, None], sin_part], axis=1)
