"""Node and edge feature extraction.

Feature layout version "featv1". The layout below is frozen; checkpoints
and result files carry the version string so numbers are never compared
across layouts.

Node vector, 74 dims = 64 text + 10 spatial. Spatial slots (H, W are page
height/width, diag the page diagonal):

    0  h / H            box height, page-normalized
    1  w / W            box width, page-normalized
    2  x0 / W           top-left corner x
    3  y0 / H           top-left corner y
    4  x1 / W           bottom-right corner x
    5  y1 / H           bottom-right corner y
    6  cx / W           center x
    7  cy / H           center y
    8  (h * w) / (H * W)  normalized area
    9  min(h, w) / max(h, w)  box aspect, 0 for degenerate boxes

Edge vector ("EdgeGeo"), 10 dims for the directed edge i -> j:

    0  (cx_j - cx_i) / diag      center displacement x
    1  (cy_j - cy_i) / diag      center displacement y
    2  (x0_j - x0_i) / diag      top-left displacement x
    3  (y0_j - y0_i) / diag      top-left displacement y
    4  (x1_j - x1_i) / diag      bottom-right displacement x
    5  (y1_j - y1_i) / diag      bottom-right displacement y
    6  h_i / w_i                 aspect ratio of source box
    7  h_j / w_j                 aspect ratio of destination box
    8  h_i / h_j                 relative height
    9  w_i / w_j                 relative width

Displacements are signed, so slot s of edge (i -> j) is the negation of
slot s of (j -> i) for s < 6. Heights and widths are floored at 0.5 px
before any ratio and every ratio slot is clamped to [1/50, 50]; OCR emits
zero-area boxes now and then and unclamped ratios blow up gradients.

The text embedding is a deterministic hashed bag of character trigrams of
the lowercased text, one whole-word bucket, and one word-shape bucket
(each character mapped to d / a / p for digit / alpha / punctuation-or-
other). Buckets are signed and the sum is L2-normalized. It is a
dependency-free stand-in for a pretrained language model: good enough to
carry lexical identity, not a claim of comparable quality.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .docmodel import Document, box_center
from .geometry import DocGraph

FEATURE_LAYOUT_VERSION = "featv1"

TEXT_DIM = 64
SPATIAL_DIM = 10
NODE_DIM = TEXT_DIM + SPATIAL_DIM
EDGE_GEO_DIM = 10
EDGE_DISTANCE_SLOTS = slice(0, 6)

RATIO_CLAMP_LO = 1.0 / 50.0
RATIO_CLAMP_HI = 50.0
MIN_SIDE_PX = 0.5


@dataclass(frozen=True)
class TextEmbedderConfig:
    """Hashed text embedding settings; fixed per experiment and echoed in checkpoints."""

    dimension: int = TEXT_DIM
    seed: int = 9172
    ngram: int = 3


def _word_shape(text: str) -> str:
    return "".join("d" if c.isdigit() else "a" if c.isalpha() else "p" for c in text)


def _bucket_and_sign(feature: str, cfg: TextEmbedderConfig) -> tuple[int, float]:
    salt = cfg.seed.to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, salt=salt).digest()
    h = int.from_bytes(digest, "little")
    return h % cfg.dimension, 1.0 if (h >> 32) & 1 else -1.0


def hash_text_embedding(text: str, cfg: Optional[TextEmbedderConfig] = None) -> np.ndarray:
    """Deterministic signed-hash embedding of one word; unit L2 norm unless all-zero."""
    if cfg is None:
        cfg = TextEmbedderConfig()
    if not text.strip():
        raise ValueError("cannot embed empty text")

    word = text.lower()
    feats = [f"g:{word[i:i + cfg.ngram]}" for i in range(len(word) - cfg.ngram + 1)]
    feats.append(f"w:{word}")
    feats.append(f"s:{_word_shape(text)}")

    vec = np.zeros(cfg.dimension, dtype=np.float64)
    for f in feats:
        bucket, sign = _bucket_and_sign(f, cfg)
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def shape_bucket(text: str, cfg: Optional[TextEmbedderConfig] = None) -> int:
    """Bucket index the word-shape feature of `text` hashes to."""
    if cfg is None:
        cfg = TextEmbedderConfig()
    bucket, _ = _bucket_and_sign(f"s:{_word_shape(text)}", cfg)
    return bucket


def spatial_features(box, page_width: float, page_height: float) -> np.ndarray:
    """The 10 featv1 spatial slots for one box."""
    w = box.width
    h = box.height
    cx, cy = box_center(box)
    area = (h * w) / (page_height * page_width)
    side_max = max(h, w)
    aspect = (min(h, w) / side_max) if side_max > 0.0 else 0.0
    return np.array(
        [
            h / page_height,
            w / page_width,
            box.x0 / page_width,
            box.y0 / page_height,
            box.x1 / page_width,
            box.y1 / page_height,
            cx / page_width,
            cy / page_height,
            area,
            aspect,
        ],
        dtype=np.float64,
    )


def node_features(d: Document, i: int, cfg: Optional[TextEmbedderConfig] = None) -> np.ndarray:
    """74-dim feature vector for the token at list position `i`."""
    tok = d.tokens[i]
    return np.concatenate(
        [hash_text_embedding(tok.text, cfg), spatial_features(tok.box, d.page_width, d.page_height)]
    )


def node_feature_table(d: Document, cfg: Optional[TextEmbedderConfig] = None) -> np.ndarray:
    """(n_tokens, 74) stacked node features."""
    return np.stack([node_features(d, i, cfg) for i in range(d.n_tokens)])


def vertex_feature_table(
    d: Document, g: DocGraph, cfg: Optional[TextEmbedderConfig] = None
) -> np.ndarray:
    """(n_vertices, 74) features: representative box spatially, summed text for merged tokens.

    For the common case of one token per vertex this equals
    node_feature_table. Merged vertices sum their members' text embeddings
    (renormalized) and take spatial slots from the representative box.
    """
    rows = []
    for members in g.vertex_members:
        rep = d.tokens[members[0]]
        if len(members) == 1:
            text_vec = hash_text_embedding(rep.text, cfg)
        else:
            text_vec = np.zeros(TEXT_DIM, dtype=np.float64)
            for m in members:
                text_vec += hash_text_embedding(d.tokens[m].text, cfg)
            norm = float(np.linalg.norm(text_vec))
            if norm > 0.0:
                text_vec = text_vec / norm
        rows.append(
            np.concatenate([text_vec, spatial_features(rep.box, d.page_width, d.page_height)])
        )
    return np.stack(rows)


def _clamped_sides(box) -> tuple[float, float]:
    return max(box.height, MIN_SIDE_PX), max(box.width, MIN_SIDE_PX)


def _clamp_ratio(r: float) -> float:
    return min(max(r, RATIO_CLAMP_LO), RATIO_CLAMP_HI)


def edge_geo_features(d: Document, i: int, j: int) -> np.ndarray:
    """10-dim EdgeGeo vector for the directed edge between token positions i -> j."""
    if i == j:
        raise ValueError("edge endpoints must differ")
    bi = d.tokens[i].box
    bj = d.tokens[j].box
    diag = float(np.hypot(d.page_width, d.page_height))
    cxi, cyi = box_center(bi)
    cxj, cyj = box_center(bj)
    hi, wi = _clamped_sides(bi)
    hj, wj = _clamped_sides(bj)
    return np.array(
        [
            (cxj - cxi) / diag,
            (cyj - cyi) / diag,
            (bj.x0 - bi.x0) / diag,
            (bj.y0 - bi.y0) / diag,
            (bj.x1 - bi.x1) / diag,
            (bj.y1 - bi.y1) / diag,
            _clamp_ratio(hi / wi),
            _clamp_ratio(hj / wj),
            _clamp_ratio(hi / hj),
            _clamp_ratio(wi / wj),
        ],
        dtype=np.float64,
    )


def edge_geo_table(d: Document, g: DocGraph) -> np.ndarray:
    """(n_directed_edges, 10) EdgeGeo rows, vectorized, aligned with g.directed_edges.

    Edge endpoints are graph vertices; the representative token's box anchors
    each vertex. Matches edge_geo_features row for row.
    """
    n_edges = len(g.directed_edges)
    if n_edges == 0:
        return np.zeros((0, EDGE_GEO_DIM), dtype=np.float64)

    boxes = np.array(
        [
            (b.x0, b.y0, b.x1, b.y1)
            for b in (d.tokens[m[0]].box for m in g.vertex_members)
        ],
        dtype=np.float64,
    )
    src = np.array([e[0] for e in g.directed_edges], dtype=np.intp)
    dst = np.array([e[1] for e in g.directed_edges], dtype=np.intp)

    diag = float(np.hypot(d.page_width, d.page_height))
    centers = np.column_stack([(boxes[:, 0] + boxes[:, 2]) / 2.0, (boxes[:, 1] + boxes[:, 3]) / 2.0])
    heights = np.maximum(boxes[:, 3] - boxes[:, 1], MIN_SIDE_PX)
    widths = np.maximum(boxes[:, 2] - boxes[:, 0], MIN_SIDE_PX)

    out = np.empty((n_edges, EDGE_GEO_DIM), dtype=np.float64)
    out[:, 0] = (centers[dst, 0] - centers[src, 0]) / diag
    out[:, 1] = (centers[dst, 1] - centers[src, 1]) / diag
    out[:, 2] = (boxes[dst, 0] - boxes[src, 0]) / diag
    out[:, 3] = (boxes[dst, 1] - boxes[src, 1]) / diag
    out[:, 4] = (boxes[dst, 2] - boxes[src, 2]) / diag
    out[:, 5] = (boxes[dst, 3] - boxes[src, 3]) / diag
    out[:, 6] = np.clip(heights[src] / widths[src], RATIO_CLAMP_LO, RATIO_CLAMP_HI)
    out[:, 7] = np.clip(heights[dst] / widths[dst], RATIO_CLAMP_LO, RATIO_CLAMP_HI)
    out[:, 8] = np.clip(heights[src] / heights[dst], RATIO_CLAMP_LO, RATIO_CLAMP_HI)
    out[:, 9] = np.clip(widths[src] / widths[dst], RATIO_CLAMP_LO, RATIO_CLAMP_HI)
    return out
