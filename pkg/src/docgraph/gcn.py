"""Attention-aggregated message passing over document graphs.

Per hop, every incoming message is the sender's hidden state concatenated
with the edge geometry vector and the reading-order code encoding (each
optional per ablation flags), projected to the model width. A target's
aggregate is computed by stacked multi-head self-attention over the set
{target state} + {its incoming messages}, reading off the target slot
after the last layer. The node update is a 2-layer MLP on
[previous state, aggregate]. Parameters are shared across hops so hop
count never changes parameter count and ablations stay comparable.

Incoming messages are a set, not a sequence. To make that literal at the
bit level, each target's messages are laid out in a canonical order: by
the sender vertex's box center (y, then x). Centers are unique per vertex
(coincident-center tokens share a vertex), so the order is total and
independent of how the OCR serialized the page. Reordering the input
messages therefore cannot change any output, not even in the last float
bit, and reading-order information reaches the model only through the
code channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .features import EDGE_GEO_DIM, NODE_DIM
from .geometry import DocGraph
from .nn import ParamStore, Tensor
from .rope import RopeAssignment, RopeEncodingConfig, encode_codes


@dataclass(frozen=True)
class GcnConfig:
    """Architecture and ablation switches; width must equal heads * head_size."""

    hops: int
    n_classes: int
    width: int = 128
    heads: int = 4
    head_size: int = 32
    attn_layers: int = 3
    hidden: int = 128
    use_edge_geo: bool = True
    rope: RopeEncodingConfig = field(default_factory=RopeEncodingConfig)
    node_dim: int = NODE_DIM
    edge_geo_dim: int = EDGE_GEO_DIM

    def __post_init__(self) -> None:
        if self.hops < 1:
            raise ValueError("need at least one hop")
        if self.width != self.heads * self.head_size:
            raise ValueError(f"width {self.width} != heads {self.heads} x head_size {self.head_size}")

    @property
    def message_in_width(self) -> int:
        """Pre-projection message width under the current ablation flags."""
        return self.width + (self.edge_geo_dim if self.use_edge_geo else 0) + self.rope.width

    @property
    def edge_head_in_width(self) -> int:
        return 3 * self.width + self.edge_geo_dim

    def to_dict(self) -> dict:
        return {
            "hops": self.hops,
            "n_classes": self.n_classes,
            "width": self.width,
            "heads": self.heads,
            "head_size": self.head_size,
            "attn_layers": self.attn_layers,
            "hidden": self.hidden,
            "use_edge_geo": self.use_edge_geo,
            "rope_mode": self.rope.mode,
            "rope_n_frequencies": self.rope.n_frequencies,
            "rope_frequency_base": self.rope.frequency_base,
            "rope_index_scale": self.rope.index_scale,
            "node_dim": self.node_dim,
            "edge_geo_dim": self.edge_geo_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "GcnConfig":
        rope = RopeEncodingConfig(
            mode=d["rope_mode"],
            n_frequencies=d["rope_n_frequencies"],
            frequency_base=d["rope_frequency_base"],
            index_scale=d["rope_index_scale"],
        )
        return GcnConfig(
            hops=d["hops"],
            n_classes=d["n_classes"],
            width=d["width"],
            heads=d["heads"],
            head_size=d["head_size"],
            attn_layers=d["attn_layers"],
            hidden=d["hidden"],
            use_edge_geo=d["use_edge_geo"],
            rope=rope,
            node_dim=d["node_dim"],
            edge_geo_dim=d["edge_geo_dim"],
        )


def param_shapes(cfg: GcnConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in the fixed initialization order."""
    shapes: dict[str, tuple[int, ...]] = {
        "input_proj/W": (cfg.node_dim, cfg.width),
        "input_proj/b": (cfg.width,),
        "msg_proj/W": (cfg.message_in_width, cfg.width),
        "msg_proj/b": (cfg.width,),
    }
    for layer in range(cfg.attn_layers):
        for part in ("wq", "wk", "wv", "wo"):
            shapes[f"attn{layer}/{part}"] = (cfg.width, cfg.width)
            shapes[f"attn{layer}/{part[1]}b"] = (cfg.width,)
    shapes["update/W1"] = (2 * cfg.width, cfg.hidden)
    shapes["update/b1"] = (cfg.hidden,)
    shapes["update/W2"] = (cfg.hidden, cfg.width)
    shapes["update/b2"] = (cfg.width,)
    shapes["node_head/W"] = (cfg.width, cfg.n_classes)
    shapes["node_head/b"] = (cfg.n_classes,)
    shapes["edge_head/W"] = (cfg.edge_head_in_width, 1)
    shapes["edge_head/b"] = (1,)
    return shapes


def init_gcn_params(cfg: GcnConfig, seed: int) -> ParamStore:
    """Xavier-uniform weights, zero biases, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    store = ParamStore(seed=seed)
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            store.add(name, nn.xavier_uniform(rng, shape[0], shape[1]))
        else:
            store.add(name, np.zeros(shape))
    return store


@dataclass
class PreparedGraph:
    """Index plumbing for one document's batched forward pass.

    Edge-level arrays are in canonical order: grouped by destination, and
    within a group sorted by the sender's box center (y, then x). `canon`
    maps canonical row -> row in DocGraph.directed_edges, so feature tables
    aligned with the original edge list are reordered with it once.
    """

    n: int
    n_edges: int
    set_width: int
    edge_src: np.ndarray
    edge_dst: np.ndarray
    canon: np.ndarray
    set_index: np.ndarray  # (n * set_width,) rows into [h; messages; pad-row]
    key_mask: np.ndarray  # (n, set_width) bool
    und_pairs: np.ndarray  # (U, 2) vertex pairs, i < j
    und_dir_rows: np.ndarray  # (U, 2) canonical rows of (i->j) and (j->i)


def prepare_graph(g: DocGraph) -> PreparedGraph:
    n = g.n_vertices
    e = len(g.directed_edges)
    if e:
        src = np.array([p[0] for p in g.directed_edges], dtype=np.intp)
        dst = np.array([p[1] for p in g.directed_edges], dtype=np.intp)
        centers = np.asarray(g.vertex_centers, dtype=np.float64)
        # canonical order: destination group, then sender center (y, x)
        canon = np.lexsort((centers[src, 0], centers[src, 1], dst))
        src_c = src[canon]
        dst_c = dst[canon]
        counts = np.bincount(dst_c, minlength=n)
    else:
        src_c = np.zeros(0, dtype=np.intp)
        dst_c = np.zeros(0, dtype=np.intp)
        canon = np.zeros(0, dtype=np.intp)
        counts = np.zeros(n, dtype=np.intp)

    starts = np.concatenate([[0], np.cumsum(counts)])
    s_width = int(counts.max()) + 1 if n else 1

    set_index = np.full((n, s_width), n + e, dtype=np.intp)
    set_index[:, 0] = np.arange(n)
    if s_width > 1:
        cols = np.arange(1, s_width)[None, :]
        valid = cols <= counts[:, None]
        slot_rows = starts[:-1, None] + cols - 1 + n
        set_index[:, 1:][valid] = slot_rows[valid]
    key_mask = np.concatenate(
        [np.ones((n, 1), dtype=bool), (np.arange(1, s_width)[None, :] <= counts[:, None])], axis=1
    )

    pair_rows: dict[tuple[int, int], list[int]] = {}
    for canon_row in range(e):
        a, b = int(src_c[canon_row]), int(dst_c[canon_row])
        key = (a, b) if a < b else (b, a)
        pair_rows.setdefault(key, []).append(canon_row)
    und_sorted = sorted(pair_rows)
    und_pairs = np.array(und_sorted, dtype=np.intp).reshape(len(und_sorted), 2)
    und_dir_rows = np.array([pair_rows[k] for k in und_sorted], dtype=np.intp).reshape(
        len(und_sorted), 2
    )

    return PreparedGraph(
        n=n,
        n_edges=e,
        set_width=s_width,
        edge_src=src_c,
        edge_dst=dst_c,
        canon=canon,
        set_index=set_index.reshape(-1),
        key_mask=key_mask,
        und_pairs=und_pairs,
        und_dir_rows=und_dir_rows,
    )


def _attn_params(leaves: dict[str, Tensor], layer: int) -> tuple[Tensor, ...]:
    p = f"attn{layer}/"
    return (
        leaves[p + "wq"], leaves[p + "qb"],
        leaves[p + "wk"], leaves[p + "kb"],
        leaves[p + "wv"], leaves[p + "vb"],
        leaves[p + "wo"], leaves[p + "ob"],
    )


def forward_states(
    pg: PreparedGraph,
    node_feats: np.ndarray,
    edge_geo_canon: Optional[np.ndarray],
    rope_canon: Optional[np.ndarray],
    cfg: GcnConfig,
    leaves: dict[str, Tensor],
) -> Tensor:
    """Hidden states after the final hop, shape (n_vertices, width).

    `edge_geo_canon` and `rope_canon` are per-edge tables already reordered
    into canonical edge order (use PreparedGraph.canon).
    """
    h = nn.affine(nn.tensor(node_feats), leaves["input_proj/W"], leaves["input_proj/b"])
    pad_row = nn.tensor(np.zeros((1, cfg.width)))

    static_parts: list[Tensor] = []
    if cfg.use_edge_geo:
        if edge_geo_canon is None:
            raise ValueError("use_edge_geo set but no edge geometry table given")
        static_parts.append(nn.tensor(edge_geo_canon))
    if cfg.rope.width > 0:
        if rope_canon is None:
            raise ValueError(f"rope mode {cfg.rope.mode} needs a code table")
        static_parts.append(nn.tensor(rope_canon))

    for _hop in range(cfg.hops):
        if pg.n_edges:
            sender = nn.take_rows(h, pg.edge_src)
            msg_in = nn.concat([sender] + static_parts, axis=1) if static_parts else sender
            msg = nn.affine(msg_in, leaves["msg_proj/W"], leaves["msg_proj/b"])
            stacked = nn.concat([h, msg, pad_row], axis=0)
        else:
            stacked = nn.concat([h, pad_row], axis=0)
        sets = nn.reshape(nn.take_rows(stacked, pg.set_index), (pg.n, pg.set_width, cfg.width))
        x = sets
        for layer in range(cfg.attn_layers):
            x = nn.multi_head_attention(
                x, x, pg.key_mask, *_attn_params(leaves, layer),
                n_heads=cfg.heads, head_size=cfg.head_size,
            )
        agg = nn.take_slot(x, 0)
        h = nn.mlp2(
            nn.concat([h, agg], axis=1),
            leaves["update/W1"], leaves["update/b1"],
            leaves["update/W2"], leaves["update/b2"],
        )
    return h


def gcn_forward(
    g: DocGraph,
    node_feats: np.ndarray,
    edge_geo: Optional[np.ndarray],
    rope_assign: Optional[RopeAssignment],
    cfg: GcnConfig,
    params: ParamStore | dict[str, Tensor],
) -> Tensor:
    """Full forward pass from a DocGraph; feature tables follow g.directed_edges order."""
    leaves = params.leaves() if isinstance(params, ParamStore) else params
    pg = prepare_graph(g)
    eg_c = None
    if cfg.use_edge_geo:
        if edge_geo is None:
            raise ValueError("use_edge_geo set but no edge geometry table given")
        eg_c = np.asarray(edge_geo, dtype=np.float64)[pg.canon]
    rp_c = None
    if cfg.rope.width > 0:
        if rope_assign is None:
            raise ValueError(f"rope mode {cfg.rope.mode} needs a code assignment")
        rp_c = encode_codes(rope_assign.codes, cfg.rope)[pg.canon]
    return forward_states(pg, node_feats, eg_c, rp_c, cfg, leaves)


def node_head(h: Tensor, leaves: dict[str, Tensor]) -> Tensor:
    """Per-vertex class logits, (n, n_classes)."""
    return nn.affine(h, leaves["node_head/W"], leaves["node_head/b"])


def edge_head(
    h: Tensor,
    edge_geo_canon: np.ndarray,
    pg: PreparedGraph,
    leaves: dict[str, Tensor],
) -> Tensor:
    """Symmetrized same-entity logit per undirected skeleton edge, shape (U,).

    Each orientation scores [h_src, h_dst, h_src * h_dst, edge_geo]; the two
    orientation logits are averaged, so score(i, j) == score(j, i) exactly.
    """
    hs = nn.take_rows(h, pg.edge_src)
    hd = nn.take_rows(h, pg.edge_dst)
    feats = nn.concat([hs, hd, nn.mul(hs, hd), nn.tensor(edge_geo_canon)], axis=1)
    logits = nn.reshape(
        nn.affine(feats, leaves["edge_head/W"], leaves["edge_head/b"]), (pg.n_edges,)
    )
    fwd = nn.take_rows(logits, pg.und_dir_rows[:, 0])
    rev = nn.take_rows(logits, pg.und_dir_rows[:, 1])
    return nn.scale(nn.add(fwd, rev), 0.5)


def build_message(
    h_j: np.ndarray,
    edge_geo: Optional[np.ndarray],
    rope_vec: Optional[np.ndarray],
    cfg: GcnConfig,
    leaves: dict[str, Tensor],
) -> Tensor:
    """Single-edge message: concat sender state with optional feature slices, project.

    Mostly useful in tests; the forward pass batches this across all edges.
    """
    parts = [np.asarray(h_j, dtype=np.float64)]
    if edge_geo is not None:
        parts.append(np.asarray(edge_geo, dtype=np.float64))
    if rope_vec is not None:
        parts.append(np.asarray(rope_vec, dtype=np.float64))
    pre = np.concatenate(parts)
    if pre.shape[0] != cfg.message_in_width:
        raise nn.ShapeMismatch(
            f"message width {pre.shape[0]} != configured {cfg.message_in_width}"
        )
    return nn.affine(nn.tensor(pre), leaves["msg_proj/W"], leaves["msg_proj/b"])


def aggregate(
    h_i: np.ndarray,
    messages: Sequence[np.ndarray],
    cfg: GcnConfig,
    leaves: dict[str, Tensor],
) -> np.ndarray:
    """Single-target aggregation over an (unordered) message collection.

    Messages are sorted canonically by content before attention, so any
    permutation of the input yields the identical output. The batched
    forward pass achieves the same set semantics via the sender-center
    ordering.
    """
    msgs = [np.asarray(m, dtype=np.float64) for m in messages]
    if msgs:
        table = np.stack(msgs)
        order = np.lexsort(tuple(table[:, col] for col in range(table.shape[1] - 1, -1, -1)))
        table = table[order]
        tokens = np.concatenate([np.asarray(h_i, dtype=np.float64)[None, :], table])
    else:
        tokens = np.asarray(h_i, dtype=np.float64)[None, :]
    x = nn.tensor(tokens[None, :, :])
    mask = np.ones((1, tokens.shape[0]), dtype=bool)
    for layer in range(cfg.attn_layers):
        x = nn.multi_head_attention(
            x, x, mask, *_attn_params(leaves, layer), n_heads=cfg.heads, head_size=cfg.head_size
        )
    return nn.take_slot(x, 0).data[0]
