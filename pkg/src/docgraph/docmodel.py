"""In-memory model of an OCR-processed form page.

Coordinates are raw pixels with the origin at the top-left corner and y
growing downward, which is what OCR engines emit. Boxes stay in pixels
here; normalization belongs to the feature extractor, so geometry has a
single source of truth.

All types are frozen after construction and safe for concurrent reads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with (x0, y0) top-left and (x1, y1) bottom-right."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"inverted box {coords}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


def box_center(b: BoundingBox) -> tuple[float, float]:
    """Midpoint of the box in pixels."""
    return ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0)


def box_union(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    """Smallest box containing both inputs."""
    return BoundingBox(
        min(a.x0, b.x0), min(a.y0, b.y0), max(a.x1, b.x1), max(a.y1, b.y1)
    )


def clamp_box(b: BoundingBox, page_width: float, page_height: float) -> BoundingBox:
    """Clip a box into the page rectangle."""

    def clip(v: float, hi: float) -> float:
        return min(max(v, 0.0), hi)

    return BoundingBox(
        clip(b.x0, page_width),
        clip(b.y0, page_height),
        clip(b.x1, page_width),
        clip(b.y1, page_height),
    )


@dataclass(frozen=True)
class WordToken:
    """One OCR word. `index` is its position in the reading-order serialization."""

    index: int
    text: str
    box: BoundingBox


@dataclass(frozen=True)
class EntityGroup:
    """A gold entity: its class id and the list positions of its member tokens."""

    label: int
    token_positions: tuple[int, ...]


@dataclass(frozen=True)
class Document:
    """A single page: ordered word tokens plus optional gold annotations.

    Tokens are sorted by ascending reading index. `labels` and the positions
    inside `entities` refer to positions in the `tokens` list. For documents
    built by the loaders and the generator, reading index equals list
    position; hand-built documents may use any strictly increasing indexes.
    """

    id: str
    page_width: float
    page_height: float
    tokens: tuple[WordToken, ...]
    labels: Optional[tuple[int, ...]] = None
    entities: Optional[tuple[EntityGroup, ...]] = None

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def reading_indexes(self) -> tuple[int, ...]:
        return tuple(t.index for t in self.tokens)


@dataclass(frozen=True)
class LabelSchema:
    """Ordered token class names plus the id of the background class."""

    class_names: tuple[str, ...]
    background_id: int

    def __post_init__(self) -> None:
        if len(self.class_names) < 2:
            raise ValueError("schema needs at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        if not 0 <= self.background_id < len(self.class_names):
            raise ValueError("background id out of range")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class Violation:
    """One broken document invariant. Violations are data, not exceptions."""

    rule: str
    token_position: Optional[int]
    detail: str

    def __str__(self) -> str:
        where = "" if self.token_position is None else f" @token {self.token_position}"
        return f"{self.rule}{where}: {self.detail}"


def make_document(
    doc_id: str,
    page_width: float,
    page_height: float,
    words: Sequence[tuple[str, BoundingBox]],
    labels: Optional[Sequence[int]] = None,
    entities: Optional[Sequence[tuple[int, Sequence[int]]]] = None,
) -> Document:
    """Build a canonical Document from words given in reading order.

    Words with blank text are dropped with a warning, boxes are clamped into
    the page, and the survivors are re-indexed densely. `labels` aligns with
    `words`; `entities` are (class_id, word positions) pairs referring to the
    original `words` sequence and are remapped after dropping.
    """
    if labels is not None and len(labels) != len(words):
        raise ValueError(f"{len(labels)} labels for {len(words)} words")

    keep: list[int] = []
    for pos, (text, _box) in enumerate(words):
        if text.strip():
            keep.append(pos)
        else:
            logger.warning("document %s: dropping empty-text word at position %d", doc_id, pos)

    old_to_new = {old: new for new, old in enumerate(keep)}
    tokens = tuple(
        WordToken(index=new, text=words[old][0], box=clamp_box(words[old][1], page_width, page_height))
        for new, old in enumerate(keep)
    )
    new_labels = tuple(labels[old] for old in keep) if labels is not None else None

    new_entities: Optional[tuple[EntityGroup, ...]] = None
    if entities is not None:
        groups = []
        for class_id, members in entities:
            remapped = tuple(old_to_new[m] for m in members if m in old_to_new)
            if remapped:
                groups.append(EntityGroup(label=class_id, token_positions=remapped))
        new_entities = tuple(groups)

    return Document(
        id=doc_id,
        page_width=float(page_width),
        page_height=float(page_height),
        tokens=tokens,
        labels=new_labels,
        entities=new_entities,
    )


def validate_document(d: Document, schema: Optional[LabelSchema] = None) -> list[Violation]:
    """Check every Document invariant; return an empty list when all hold.

    Partition completeness (every non-background labeled token sits in exactly
    one entity) can only be checked when a schema identifies the background
    class, so that rule is skipped when `schema` is None.
    """
    out: list[Violation] = []

    seen: set[int] = set()
    prev = None
    for pos, tok in enumerate(d.tokens):
        if tok.index in seen:
            out.append(Violation("DuplicateIndex", pos, f"reading index {tok.index} repeats"))
        seen.add(tok.index)
        if prev is not None and tok.index <= prev:
            out.append(Violation("UnsortedTokens", pos, f"index {tok.index} after {prev}"))
        prev = tok.index
        if not tok.text.strip():
            out.append(Violation("EmptyText", pos, "token text blank after trim"))
        b = tok.box
        if b.x0 < 0 or b.y0 < 0 or b.x1 > d.page_width or b.y1 > d.page_height:
            out.append(Violation("OutOfPage", pos, f"box {(b.x0, b.y0, b.x1, b.y1)} outside page"))

    if d.labels is not None:
        if len(d.labels) != d.n_tokens:
            out.append(
                Violation("LabelsIncomplete", None, f"{len(d.labels)} labels for {d.n_tokens} tokens")
            )
        elif schema is not None:
            for pos, lab in enumerate(d.labels):
                if not 0 <= lab < schema.n_classes:
                    out.append(Violation("LabelOutOfRange", pos, f"label {lab}"))

    if d.entities is not None:
        membership: dict[int, int] = {}
        for gi, group in enumerate(d.entities):
            for pos in group.token_positions:
                if not 0 <= pos < d.n_tokens:
                    out.append(Violation("BadEntityMember", None, f"group {gi} references token {pos}"))
                elif pos in membership:
                    out.append(
                        Violation("OverlappingPartition", pos, f"token in groups {membership[pos]} and {gi}")
                    )
                else:
                    membership[pos] = gi
        if schema is not None and d.labels is not None and len(d.labels) == d.n_tokens:
            for pos, lab in enumerate(d.labels):
                if lab != schema.background_id and pos not in membership:
                    out.append(
                        Violation("IncompletePartition", pos, f"labeled token (class {lab}) in no entity")
                    )

    return out
