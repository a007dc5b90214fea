"""Training loops, metrics, ablation matrices, and shuffle-sensitivity sweeps.

Word labeling is node classification over graph vertices (per-token
metrics, merged vertices broadcast their prediction to members). Word
grouping is binary classification of skeleton edges, positive when both
endpoints belong to the same gold entity, decoded to clusters by
connected components over positive edges.

One model carries both task heads and trains on the summed cross-entropy
losses, batch size one document per optimizer step, Adam with linear
warmup. Training is bit-deterministic given (seed, config, corpus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import gcn as gcn_mod
from . import nn
from .data_io import Corpus
from .docmodel import Document, EntityGroup, WordToken
from .errors import DataError, NumericFailure, SchemaMismatch
from .features import (
    EDGE_GEO_DIM,
    FEATURE_LAYOUT_VERSION,
    TextEmbedderConfig,
    edge_geo_table,
    vertex_feature_table,
)
from .gcn import GcnConfig, PreparedGraph
from .geometry import build_doc_graph
from .nn import ParamStore
from .rope import rope_codes

RESULT_FORMAT = "resultv1"

TABLE_ENCODING_TYPES = (
    ("none", False, "off"),
    ("edge_geo", True, "off"),
    ("order_codes", False, "combined"),
    ("both", True, "combined"),
)
TABLE_ENCODING_FUNCTIONS = (
    ("none", True, "off"),
    ("index", True, "index"),
    ("sine", True, "sinusoidal"),
    ("both", True, "combined"),
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; echoed verbatim into logs, checkpoints, results."""

    dataset_id: str
    gcn: GcnConfig
    seed: int
    epochs: int = 20
    lr: float = 1e-4
    warmup_proportion: float = 0.01
    grad_clip: Optional[float] = None  # sanctioned stability knob, off by default
    eval_every_epochs: Optional[int] = None
    tasks: tuple[str, ...] = ("labeling", "grouping")
    shuffle_rho: float = 0.0
    shuffle_test_only: bool = False
    text_cfg: TextEmbedderConfig = field(default_factory=TextEmbedderConfig)

    def to_dict(self) -> dict:
        d = {
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "epochs": self.epochs,
            "lr": self.lr,
            "warmup_proportion": self.warmup_proportion,
            "grad_clip": self.grad_clip,
            "eval_every_epochs": self.eval_every_epochs,
            "tasks": list(self.tasks),
            "shuffle_rho": self.shuffle_rho,
            "shuffle_test_only": self.shuffle_test_only,
            "text_dimension": self.text_cfg.dimension,
            "text_seed": self.text_cfg.seed,
            "text_ngram": self.text_cfg.ngram,
        }
        d.update({f"gcn_{k}": v for k, v in self.gcn.to_dict().items()})
        return d

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        gcn_cfg = GcnConfig.from_dict({k[4:]: v for k, v in d.items() if k.startswith("gcn_")})
        return ExperimentConfig(
            dataset_id=d["dataset_id"],
            gcn=gcn_cfg,
            seed=d["seed"],
            epochs=d["epochs"],
            lr=d["lr"],
            warmup_proportion=d["warmup_proportion"],
            grad_clip=d["grad_clip"],
            eval_every_epochs=d["eval_every_epochs"],
            tasks=tuple(d["tasks"]),
            shuffle_rho=d["shuffle_rho"],
            shuffle_test_only=d["shuffle_test_only"],
            text_cfg=TextEmbedderConfig(
                dimension=d["text_dimension"], seed=d["text_seed"], ngram=d["text_ngram"]
            ),
        )


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    task: str
    micro_precision: float
    micro_recall: float
    micro_f1: float
    per_class: tuple[tuple[str, ClassMetrics], ...]
    n_items: int
    config_echo: dict = field(default_factory=dict)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 from confusion counts; zero denominators give 0."""
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def report_from_counts(
    task: str, class_names: Sequence[str], tp: np.ndarray, fp: np.ndarray, fn: np.ndarray,
    n_items: int, config_echo: Optional[dict] = None,
) -> MetricsReport:
    """Micro-averaged report: pooled counts over all classes plus per-class rows."""
    per_class = []
    for c, name in enumerate(class_names):
        p, r, f1 = prf(int(tp[c]), int(fp[c]), int(fn[c]))
        per_class.append((name, ClassMetrics(p, r, f1, int(tp[c]), int(fp[c]), int(fn[c]))))
    mp, mr, mf1 = prf(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    return MetricsReport(
        task=task,
        micro_precision=mp,
        micro_recall=mr,
        micro_f1=mf1,
        per_class=tuple(per_class),
        n_items=n_items,
        config_echo=config_echo or {},
    )


# ---------------------------------------------------------------------------
# per-document preparation


@dataclass
class PreparedDoc:
    """Static per-document arrays reused across training steps and configs."""

    doc_id: str
    pg: PreparedGraph
    feats: np.ndarray
    edge_geo_canon: np.ndarray
    codes_canon: np.ndarray
    vertex_labels: Optional[np.ndarray]
    token_labels: Optional[np.ndarray]
    token_to_vertex: np.ndarray
    gold_und: Optional[np.ndarray]


def prepare_doc(d: Document, text_cfg: Optional[TextEmbedderConfig] = None) -> PreparedDoc:
    g = build_doc_graph(d)
    pg = gcn_mod.prepare_graph(g)
    feats = vertex_feature_table(d, g, text_cfg)
    eg = edge_geo_table(d, g)[pg.canon] if pg.n_edges else np.zeros((0, EDGE_GEO_DIM))
    codes = rope_codes(g, g.vertex_reading_index).codes[pg.canon] if pg.n_edges else np.zeros(0, dtype=np.int64)

    reps = np.array([m[0] for m in g.vertex_members], dtype=np.intp)
    vertex_labels = None
    token_labels = None
    if d.labels is not None:
        token_labels = np.array(d.labels, dtype=np.intp)
        vertex_labels = token_labels[reps]

    gold_und = None
    if d.entities is not None:
        ent_of_token = np.full(d.n_tokens, -1, dtype=np.intp)
        for gi, group in enumerate(d.entities):
            for pos in group.token_positions:
                ent_of_token[pos] = gi
        ent_of_vertex = ent_of_token[reps]
        if len(pg.und_pairs):
            a = ent_of_vertex[pg.und_pairs[:, 0]]
            b = ent_of_vertex[pg.und_pairs[:, 1]]
            gold_und = ((a == b) & (a >= 0)).astype(np.float64)
        else:
            gold_und = np.zeros(0, dtype=np.float64)

    return PreparedDoc(
        doc_id=d.id,
        pg=pg,
        feats=feats,
        edge_geo_canon=eg,
        codes_canon=codes,
        vertex_labels=vertex_labels,
        token_labels=token_labels,
        token_to_vertex=np.array(g.token_to_vertex, dtype=np.intp),
        gold_und=gold_und,
    )


def prepare_corpus(corpus: Corpus, text_cfg: Optional[TextEmbedderConfig] = None) -> list[PreparedDoc]:
    return [prepare_doc(d, text_cfg) for d in corpus.documents]


def _forward(pd: PreparedDoc, cfg: GcnConfig, leaves: dict) -> nn.Tensor:
    from .rope import encode_codes

    eg = pd.edge_geo_canon if cfg.use_edge_geo else None
    rp = encode_codes(pd.codes_canon, cfg.rope) if cfg.rope.width > 0 else None
    return gcn_mod.forward_states(pd.pg, pd.feats, eg, rp, cfg, leaves)


def doc_losses(
    pd: PreparedDoc, cfg: GcnConfig, leaves: dict, tasks: Sequence[str]
) -> Optional[nn.Tensor]:
    """Summed task losses for one document; None when no task applies."""
    h = _forward(pd, cfg, leaves)
    parts = []
    if "labeling" in tasks and pd.vertex_labels is not None:
        logits = gcn_mod.node_head(h, leaves)
        parts.append(nn.cross_entropy(logits, pd.vertex_labels))
    if "grouping" in tasks and pd.gold_und is not None and len(pd.gold_und):
        e_logits = gcn_mod.edge_head(h, pd.edge_geo_canon, pd.pg, leaves)
        parts.append(nn.bce_with_logits(e_logits, pd.gold_und))
    if not parts:
        return None
    total = parts[0]
    for p in parts[1:]:
        total = nn.add(total, p)
    return total


def loss_and_grads(
    pd: PreparedDoc, cfg: GcnConfig, store: ParamStore, tasks: Sequence[str]
) -> tuple[float, dict[str, np.ndarray]]:
    leaves = store.leaves()
    total = doc_losses(pd, cfg, leaves, tasks)
    if total is None:
        return 0.0, {k: np.zeros_like(v) for k, v in store.params.items()}
    total.backward()
    grads = {
        k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for k, leaf in leaves.items()
    }
    return float(total.data), grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    store: ParamStore
    config: ExperimentConfig
    log: list[str]
    total_steps: int


def train(
    train_corpus: Corpus,
    cfg: ExperimentConfig,
    eval_corpus: Optional[Corpus] = None,
    log_path=None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Adam over documents, one per step, in a seeded shuffled order per epoch.

    Aborts with NumericFailure on a non-finite loss. Identical
    (seed, config, corpus) inputs reproduce the log byte for byte.
    """
    if len(train_corpus) == 0:
        raise DataError("training corpus is empty")
    if cfg.gcn.n_classes != train_corpus.schema.n_classes:
        raise SchemaMismatch(
            f"model has {cfg.gcn.n_classes} classes, corpus schema {train_corpus.schema.n_classes}"
        )

    prepared = prepare_corpus(train_corpus, cfg.text_cfg)
    eval_prepared = prepare_corpus(eval_corpus, cfg.text_cfg) if eval_corpus is not None else None
    store = gcn_mod.init_gcn_params(cfg.gcn, cfg.seed)
    total_steps = cfg.epochs * len(prepared)
    order_rng = np.random.default_rng(np.random.SeedSequence(entropy=[cfg.seed, 815]))

    log: list[str] = [f"config {sorted(cfg.to_dict().items())!r}", f"total_steps={total_steps}"]
    step = 0
    for epoch in range(cfg.epochs):
        for di in order_rng.permutation(len(prepared)):
            pd = prepared[di]
            loss, grads = loss_and_grads(pd, cfg.gcn, store, cfg.tasks)
            if not math.isfinite(loss):
                raise NumericFailure(f"non-finite loss at step {step + 1} on doc {pd.doc_id}")
            if cfg.grad_clip is not None:
                nn.clip_grad_norm(grads, cfg.grad_clip)
            nn.adam_step(
                store,
                grads,
                lr=cfg.lr,
                warmup_proportion=cfg.warmup_proportion,
                total_steps=total_steps,
            )
            step += 1
            log.append(f"step={step} epoch={epoch} doc={pd.doc_id} loss={loss!r}")
        if (
            cfg.eval_every_epochs
            and eval_prepared is not None
            and (epoch + 1) % cfg.eval_every_epochs == 0
        ):
            rep = _evaluate_prepared(store, eval_prepared, eval_corpus, cfg, "labeling")
            log.append(f"eval epoch={epoch} labeling_micro_f1={rep.micro_f1!r}")
            if progress:
                progress(log[-1])
        if progress:
            progress(f"epoch {epoch + 1}/{cfg.epochs} done, last loss {loss:.4f}")

    if log_path is not None:
        Path(log_path).write_text("\n".join(log) + "\n", encoding="utf-8")
    return TrainResult(store=store, config=cfg, log=log, total_steps=total_steps)


# ---------------------------------------------------------------------------
# evaluation


def _check_schema(cfg: ExperimentConfig, corpus: Corpus) -> None:
    if cfg.gcn.n_classes != corpus.schema.n_classes:
        raise SchemaMismatch(
            f"checkpoint expects {cfg.gcn.n_classes} classes, corpus has {corpus.schema.n_classes}"
        )


def _evaluate_prepared(
    store: ParamStore,
    prepared: list[PreparedDoc],
    corpus: Corpus,
    cfg: ExperimentConfig,
    task: str,
    threshold: float = 0.5,
) -> MetricsReport:
    leaves_cache = store.leaves()
    if task == "labeling":
        n_classes = cfg.gcn.n_classes
        tp = np.zeros(n_classes, dtype=np.int64)
        fp = np.zeros(n_classes, dtype=np.int64)
        fn = np.zeros(n_classes, dtype=np.int64)
        n_items = 0
        for pd in prepared:
            if pd.token_labels is None:
                raise DataError(f"document {pd.doc_id} has no token labels")
            h = _forward(pd, cfg.gcn, leaves_cache)
            logits = gcn_mod.node_head(h, leaves_cache).data
            pred_tok = logits.argmax(axis=1)[pd.token_to_vertex]
            gold_tok = pd.token_labels
            n_items += len(gold_tok)
            for c in range(n_classes):
                tp[c] += int(((pred_tok == c) & (gold_tok == c)).sum())
                fp[c] += int(((pred_tok == c) & (gold_tok != c)).sum())
                fn[c] += int(((pred_tok != c) & (gold_tok == c)).sum())
        return report_from_counts(
            "labeling", corpus.schema.class_names, tp, fp, fn, n_items, cfg.to_dict()
        )

    if task == "grouping":
        tp = np.zeros(2, dtype=np.int64)
        fp = np.zeros(2, dtype=np.int64)
        fn = np.zeros(2, dtype=np.int64)
        n_items = 0
        for pd in prepared:
            if pd.gold_und is None:
                raise DataError(f"document {pd.doc_id} has no entity annotations")
            if not len(pd.gold_und):
                continue
            h = _forward(pd, cfg.gcn, leaves_cache)
            logits = gcn_mod.edge_head(h, pd.edge_geo_canon, pd.pg, leaves_cache).data
            prob = 1.0 / (1.0 + np.exp(-logits))
            pred = prob >= threshold
            gold = pd.gold_und > 0.5
            n_items += len(gold)
            tp[1] += int((pred & gold).sum())
            fp[1] += int((pred & ~gold).sum())
            fn[1] += int((~pred & gold).sum())
            tp[0] += int((~pred & ~gold).sum())
            fp[0] += int((~pred & gold).sum())
            fn[0] += int((pred & ~gold).sum())
        p, r, f1 = prf(int(tp[1]), int(fp[1]), int(fn[1]))
        per_class = (
            ("different_entity", ClassMetrics(*prf(int(tp[0]), int(fp[0]), int(fn[0])), int(tp[0]), int(fp[0]), int(fn[0]))),
            ("same_entity", ClassMetrics(p, r, f1, int(tp[1]), int(fp[1]), int(fn[1]))),
        )
        # binary task: headline numbers are the positive (same-entity) class
        return MetricsReport(
            task="grouping",
            micro_precision=p,
            micro_recall=r,
            micro_f1=f1,
            per_class=per_class,
            n_items=n_items,
            config_echo=cfg.to_dict(),
        )

    raise ValueError(f"unknown task {task!r}")


def evaluate_labeling(
    store: ParamStore,
    corpus: Corpus,
    cfg: ExperimentConfig,
    prepared: Optional[list[PreparedDoc]] = None,
) -> MetricsReport:
    """Per-token argmax classification, micro-averaged over all classes."""
    _check_schema(cfg, corpus)
    if prepared is None:
        prepared = prepare_corpus(corpus, cfg.text_cfg)
    return _evaluate_prepared(store, prepared, corpus, cfg, "labeling")


def evaluate_grouping(
    store: ParamStore,
    corpus: Corpus,
    cfg: ExperimentConfig,
    prepared: Optional[list[PreparedDoc]] = None,
    threshold: float = 0.5,
) -> MetricsReport:
    """Binary same-entity classification over undirected skeleton edges."""
    _check_schema(cfg, corpus)
    if any(d.entities is None for d in corpus.documents):
        raise DataError("corpus lacks entity annotations; cannot evaluate grouping")
    if prepared is None:
        prepared = prepare_corpus(corpus, cfg.text_cfg)
    return _evaluate_prepared(store, prepared, corpus, cfg, "grouping", threshold)


def majority_baseline_labeling(train_corpus: Corpus, test_corpus: Corpus) -> MetricsReport:
    """Micro F1 of always predicting the most frequent training class."""
    counts = np.zeros(train_corpus.schema.n_classes, dtype=np.int64)
    for d in train_corpus.documents:
        for lab in d.labels or ():
            counts[lab] += 1
    maj = int(counts.argmax())
    n_classes = test_corpus.schema.n_classes
    tp = np.zeros(n_classes, dtype=np.int64)
    fp = np.zeros(n_classes, dtype=np.int64)
    fn = np.zeros(n_classes, dtype=np.int64)
    n_items = 0
    for d in test_corpus.documents:
        for lab in d.labels or ():
            n_items += 1
            if lab == maj:
                tp[maj] += 1
            else:
                fp[maj] += 1
                fn[lab] += 1
    return report_from_counts(
        "labeling", test_corpus.schema.class_names, tp, fp, fn, n_items,
        {"model": "majority_baseline", "majority_class": maj},
    )


# ---------------------------------------------------------------------------
# grouping decode


def decode_groups(
    n_vertices: int,
    edges: Sequence[tuple[int, int]],
    probs: Sequence[float],
    threshold: float = 0.5,
) -> list[list[int]]:
    """Connected components over edges with probability >= threshold; singletons kept."""
    parent = list(range(n_vertices))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (i, j), p in zip(edges, probs):
        if p >= threshold:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for v in range(n_vertices):
        clusters.setdefault(find(v), []).append(v)
    return sorted(clusters.values())


# ---------------------------------------------------------------------------
# reading-order shuffling


def shuffle_reading_order(d: Document, rho: float, seed: int) -> Document:
    """Permute reading indexes among ceil(rho * N) sampled token positions.

    Boxes, text, labels, and entity membership stay attached to their
    tokens; only the serialization order moves. rho = 0 returns the input
    document unchanged, and any rho keeps the index multiset intact.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"shuffle fraction {rho} outside [0, 1]")
    n = d.n_tokens
    m = math.ceil(rho * n)
    if m <= 1:
        return d

    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 2718]))
    selected = np.sort(rng.choice(n, size=m, replace=False))
    perm = rng.permutation(m)

    old_indexes = np.array([t.index for t in d.tokens], dtype=np.int64)
    new_indexes = old_indexes.copy()
    new_indexes[selected] = old_indexes[selected][perm]

    order = np.argsort(new_indexes, kind="stable")
    new_pos = np.empty(n, dtype=np.intp)
    new_pos[order] = np.arange(n)

    tokens = tuple(
        WordToken(index=int(new_indexes[p]), text=d.tokens[p].text, box=d.tokens[p].box)
        for p in order
    )
    labels = tuple(d.labels[p] for p in order) if d.labels is not None else None
    entities = None
    if d.entities is not None:
        entities = tuple(
            EntityGroup(
                label=g.label,
                token_positions=tuple(sorted(int(new_pos[p]) for p in g.token_positions)),
            )
            for g in d.entities
        )
    return Document(
        id=d.id,
        page_width=d.page_width,
        page_height=d.page_height,
        tokens=tokens,
        labels=labels,
        entities=entities,
    )


def shuffle_corpus(corpus: Corpus, rho: float, seed: int) -> Corpus:
    """Shuffle every document's reading order with per-document derived seeds."""
    if rho == 0.0:
        return corpus
    docs = tuple(
        shuffle_reading_order(d, rho, seed=int(np.random.SeedSequence(entropy=[seed, pos]).generate_state(1)[0]))
        for pos, d in enumerate(corpus.documents)
    )
    meta = dict(corpus.meta)
    meta["shuffle_rho"] = rho
    meta["shuffle_seed"] = seed
    return Corpus(documents=docs, schema=corpus.schema, meta=meta)


# ---------------------------------------------------------------------------
# ablation matrices


@dataclass
class AblationCell:
    row_name: str
    seed: int
    labeling: MetricsReport
    grouping: Optional[MetricsReport]


@dataclass
class AblationRow:
    name: str
    use_edge_geo: bool
    rope_mode: str
    cells: list[AblationCell]

    def _vals(self, metric: Callable[[AblationCell], float]) -> list[float]:
        return [metric(c) for c in self.cells]

    def mean_range(self, metric: Callable[[AblationCell], float]) -> tuple[float, float]:
        vals = self._vals(metric)
        return float(np.mean(vals)), float(max(vals) - min(vals))

    @property
    def labeling_f1(self) -> tuple[float, float]:
        return self.mean_range(lambda c: c.labeling.micro_f1)

    @property
    def grouping_f1(self) -> tuple[float, float]:
        return self.mean_range(lambda c: c.grouping.micro_f1 if c.grouping else float("nan"))


@dataclass
class AblationTable:
    axis: str
    rows: list[AblationRow]
    seeds: tuple[int, ...]
    base_config: dict


def run_ablation_matrix(
    train_corpus: Corpus,
    test_corpus: Corpus,
    base_cfg: ExperimentConfig,
    seeds: Sequence[int],
    rows: Sequence[tuple[str, bool, str]] = TABLE_ENCODING_TYPES,
    axis: str = "encoding_types",
    cell_cache: Optional[dict] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> AblationTable:
    """Train and evaluate every (row, seed) cell; deterministic given seeds.

    `cell_cache` (keyed by edge-geo flag, rope mode, and seed) lets callers
    share cells between the two standard matrices, which overlap in two
    configurations.
    """
    out_rows = []
    for name, use_eg, rope_mode in rows:
        cells = []
        for seed in seeds:
            key = (use_eg, rope_mode, seed)
            cached = cell_cache.get(key) if cell_cache is not None else None
            if cached is None:
                cfg = replace(
                    base_cfg,
                    seed=seed,
                    gcn=replace(
                        base_cfg.gcn,
                        use_edge_geo=use_eg,
                        rope=replace(base_cfg.gcn.rope, mode=rope_mode),
                    ),
                )
                if progress:
                    progress(f"[{axis}] training row={name} seed={seed}")
                result = train(train_corpus, cfg, progress=None)
                test_prepared = prepare_corpus(test_corpus, cfg.text_cfg)
                labeling = evaluate_labeling(result.store, test_corpus, cfg, test_prepared)
                grouping = None
                if all(d.entities is not None for d in test_corpus.documents):
                    grouping = evaluate_grouping(result.store, test_corpus, cfg, test_prepared)
                cached = AblationCell(row_name=name, seed=seed, labeling=labeling, grouping=grouping)
                if cell_cache is not None:
                    cell_cache[key] = cached
            cells.append(
                AblationCell(row_name=name, seed=seed, labeling=cached.labeling, grouping=cached.grouping)
            )
        out_rows.append(AblationRow(name=name, use_edge_geo=use_eg, rope_mode=rope_mode, cells=cells))
    return AblationTable(axis=axis, rows=out_rows, seeds=tuple(seeds), base_config=base_cfg.to_dict())


# ---------------------------------------------------------------------------
# shuffle sensitivity sweep


@dataclass
class SweepPoint:
    rho: float
    labeling: MetricsReport
    grouping: Optional[MetricsReport]


@dataclass
class SweepResult:
    points: list[SweepPoint]
    test_only: bool
    base_config: dict


def run_shuffle_sweep(
    train_corpus: Corpus,
    test_corpus: Corpus,
    cfg: ExperimentConfig,
    fractions: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    test_only: bool = False,
    progress: Optional[Callable[[str], None]] = None,
) -> SweepResult:
    """Reading-order sensitivity curve: shuffle, retrain (unless test_only), evaluate.

    By default both the training and the test serializations are shuffled at
    each fraction; with test_only a single model trained on clean order is
    evaluated against increasingly shuffled test orders.
    """
    clean_result = train(train_corpus, cfg) if test_only else None
    points = []
    for rho in fractions:
        if progress:
            progress(f"[sweep] rho={rho}")
        if test_only:
            result = clean_result
        elif rho == 0.0:
            result = train(train_corpus, cfg)
        else:
            shuffled_train = shuffle_corpus(train_corpus, rho, seed=cfg.seed * 7701 + int(round(rho * 1000)))
            result = train(shuffled_train, cfg)
        shuffled_test = shuffle_corpus(test_corpus, rho, seed=cfg.seed * 7703 + int(round(rho * 1000)))
        test_prepared = prepare_corpus(shuffled_test, cfg.text_cfg)
        labeling = evaluate_labeling(result.store, shuffled_test, cfg, test_prepared)
        grouping = None
        if all(d.entities is not None for d in shuffled_test.documents):
            grouping = evaluate_grouping(result.store, shuffled_test, cfg, test_prepared)
        points.append(SweepPoint(rho=rho, labeling=labeling, grouping=grouping))
    return SweepResult(points=points, test_only=test_only, base_config=cfg.to_dict())


# ---------------------------------------------------------------------------
# result files


def _header_lines(extra: dict) -> list[str]:
    lines = [
        f"# format = {RESULT_FORMAT}",
        f"# feature_layout = {FEATURE_LAYOUT_VERSION}",
        f"# checkpoint_format = {nn.CHECKPOINT_FORMAT}",
    ]
    for k in sorted(extra):
        lines.append(f"# {k} = {extra[k]}")
    return lines


def format_metrics_line(rep: MetricsReport) -> str:
    return (
        f"p={rep.micro_precision:.4f} r={rep.micro_recall:.4f} f1={rep.micro_f1:.4f} n={rep.n_items}"
    )


def write_ablation_table(table: AblationTable, path) -> None:
    extra = {f"config.{k}": v for k, v in sorted(table.base_config.items())}
    extra["axis"] = table.axis
    extra["seeds"] = ",".join(str(s) for s in table.seeds)
    lines = _header_lines(extra)
    lines.append("row\tedge_geo\trope\tlabel_f1_mean\tlabel_f1_range\tgroup_p_mean\tgroup_r_mean\tgroup_f1_mean\tgroup_f1_range")
    for row in table.rows:
        lf1, lrange = row.labeling_f1
        if row.cells[0].grouping is not None:
            gp = float(np.mean([c.grouping.micro_precision for c in row.cells]))
            gr = float(np.mean([c.grouping.micro_recall for c in row.cells]))
            gf1, grange = row.grouping_f1
            group_cols = f"{gp:.4f}\t{gr:.4f}\t{gf1:.4f}\t{grange:.4f}"
        else:
            group_cols = "nan\tnan\tnan\tnan"
        lines.append(
            f"{row.name}\t{int(row.use_edge_geo)}\t{row.rope_mode}\t{lf1:.4f}\t{lrange:.4f}\t{group_cols}"
        )
    for row in table.rows:
        for c in row.cells:
            lines.append(f"# cell row={row.name} seed={c.seed} labeling {format_metrics_line(c.labeling)}")
            if c.grouping is not None:
                lines.append(f"# cell row={row.name} seed={c.seed} grouping {format_metrics_line(c.grouping)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_curve(sweep: SweepResult, path) -> None:
    extra = {f"config.{k}": v for k, v in sorted(sweep.base_config.items())}
    extra["test_only"] = sweep.test_only
    lines = _header_lines(extra)
    lines.append("rho\tlabel_p\tlabel_r\tlabel_f1\tgroup_p\tgroup_r\tgroup_f1")
    for pt in sweep.points:
        lab = pt.labeling
        if pt.grouping is not None:
            grp = f"{pt.grouping.micro_precision:.4f}\t{pt.grouping.micro_recall:.4f}\t{pt.grouping.micro_f1:.4f}"
        else:
            grp = "nan\tnan\tnan"
        lines.append(
            f"{pt.rho:g}\t{lab.micro_precision:.4f}\t{lab.micro_recall:.4f}\t{lab.micro_f1:.4f}\t{grp}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_metrics_report(rep: MetricsReport, path) -> None:
    extra = {f"config.{k}": v for k, v in sorted(rep.config_echo.items())}
    extra["task"] = rep.task
    lines = _header_lines(extra)
    lines.append("class\tprecision\trecall\tf1\ttp\tfp\tfn")
    for name, cm in rep.per_class:
        lines.append(f"{name}\t{cm.precision:.4f}\t{cm.recall:.4f}\t{cm.f1:.4f}\t{cm.tp}\t{cm.fp}\t{cm.fn}")
    lines.append(f"micro\t{rep.micro_precision:.4f}\t{rep.micro_recall:.4f}\t{rep.micro_f1:.4f}\t-\t-\t-")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
