"""Corpus ingestion and generation.

Three responsibilities: loading the FUNSD form-understanding dataset,
generating a synthetic payment-style corpus (a stand-in for private
invoice data), and persisting corpora in the line-delimited "corpv1"
format with bit-exact round-trips.

FUNSD annotations group words by entity rather than giving an OCR stream,
so a page-global reading order is reconstructed by row banding: word
boxes whose vertical centers fall within half the median box height share
a band, bands run top to bottom, and words run left to right inside a
band. That approximates the left-right top-bottom order a real OCR engine
emits, and result files should be read with that caveat (the banding is
labeled in corpus metadata).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .docmodel import (
    BoundingBox,
    Document,
    EntityGroup,
    LabelSchema,
    WordToken,
    make_document,
    validate_document,
)
from .errors import MalformedAnnotation, MissingFile, VersionMismatch

logger = logging.getLogger(__name__)

CORPUS_FORMAT = "corpv1"
SYNTH_SPEC_FORMAT = "sformv1"

FUNSD_SCHEMA = LabelSchema(class_names=("header", "question", "answer", "other"), background_id=3)

SYNTH_ENTITY_TYPES = (
    "invoice_number",
    "account_number",
    "invoice_date",
    "due_date",
    "ship_date",
    "subtotal",
    "tax_amount",
    "total_amount",
    "amount_due",
    "vendor_name",
    "customer_name",
    "vendor_address",
    "customer_address",
)
SYNTH_SCHEMA = LabelSchema(class_names=SYNTH_ENTITY_TYPES + ("other",), background_id=13)


@dataclass(frozen=True)
class Corpus:
    """A set of documents sharing one label schema, plus free-form metadata."""

    documents: tuple[Document, ...]
    schema: LabelSchema
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.documents)

    def by_id(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.id == doc_id:
                return d
        raise KeyError(f"no document {doc_id!r} in corpus")


# ---------------------------------------------------------------------------
# reading order reconstruction


def reading_order_by_banding(boxes: Sequence[BoundingBox]) -> list[int]:
    """Positions of `boxes` in band-serialized order (top-bottom, then left-right)."""
    n = len(boxes)
    if n == 0:
        return []
    half_med = float(np.median([b.height for b in boxes])) / 2.0
    cy = [(b.y0 + b.y1) / 2.0 for b in boxes]

    by_y = sorted(range(n), key=lambda p: (cy[p], boxes[p].x0, p))
    bands: list[list[int]] = []
    anchor = None
    for p in by_y:
        if anchor is None or cy[p] - anchor > half_med:
            bands.append([p])
            anchor = cy[p]
        else:
            bands[-1].append(p)

    order: list[int] = []
    for band in bands:
        order.extend(sorted(band, key=lambda p: (boxes[p].x0, cy[p], boxes[p].x1, p)))
    return order


# ---------------------------------------------------------------------------
# corpus persistence


def _doc_to_record(d: Document) -> dict:
    return {
        "id": d.id,
        "page_width": d.page_width,
        "page_height": d.page_height,
        "tokens": [[t.index, t.text, [t.box.x0, t.box.y0, t.box.x1, t.box.y1]] for t in d.tokens],
        "labels": list(d.labels) if d.labels is not None else None,
        "entities": [[g.label, list(g.token_positions)] for g in d.entities]
        if d.entities is not None
        else None,
    }


def _doc_from_record(rec: dict) -> Document:
    tokens = tuple(
        WordToken(index=int(i), text=t, box=BoundingBox(*map(float, b))) for i, t, b in rec["tokens"]
    )
    labels = tuple(int(x) for x in rec["labels"]) if rec["labels"] is not None else None
    entities = (
        tuple(EntityGroup(label=int(lab), token_positions=tuple(int(p) for p in pos)) for lab, pos in rec["entities"])
        if rec["entities"] is not None
        else None
    )
    return Document(
        id=rec["id"],
        page_width=float(rec["page_width"]),
        page_height=float(rec["page_height"]),
        tokens=tokens,
        labels=labels,
        entities=entities,
    )


def save_corpus(corpus: Corpus, path) -> None:
    """Write the corpus as corpv1: a header line then one JSON record per document."""
    path = Path(path)
    header = {
        "format": CORPUS_FORMAT,
        "schema": {"class_names": list(corpus.schema.class_names), "background_id": corpus.schema.background_id},
        "meta": corpus.meta,
        "n_docs": len(corpus.documents),
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for d in corpus.documents:
            fh.write(json.dumps(_doc_to_record(d), sort_keys=True, separators=(",", ":")) + "\n")


def load_corpus(path) -> Corpus:
    """Read a corpv1 file; load(save(c)) == c bit-exactly."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise MalformedAnnotation(f"{path}: empty file")
        header = json.loads(first)
        fmt = header.get("format", "<missing>")
        if fmt != CORPUS_FORMAT:
            raise VersionMismatch(CORPUS_FORMAT, fmt)
        schema = LabelSchema(
            class_names=tuple(header["schema"]["class_names"]),
            background_id=int(header["schema"]["background_id"]),
        )
        docs = []
        for line in fh:
            if line.strip():
                docs.append(_doc_from_record(json.loads(line)))
    if len(docs) != header["n_docs"]:
        raise MalformedAnnotation(f"{path}: header says {header['n_docs']} docs, found {len(docs)}")
    return Corpus(documents=tuple(docs), schema=schema, meta=header["meta"])


# ---------------------------------------------------------------------------
# FUNSD


@dataclass(frozen=True)
class FunsdSplit:
    train: Corpus
    test: Corpus


def _page_size_from_image(ann_path: Path, words) -> tuple[float, float]:
    """Page dims from the sibling image when Pillow can read it, else box extent."""
    images_dir = ann_path.parent.parent / "images"
    for suffix in (".png", ".jpg", ".jpeg", ".tif"):
        img = images_dir / (ann_path.stem + suffix)
        if img.exists():
            try:
                from PIL import Image

                with Image.open(img) as im:
                    return float(im.width), float(im.height)
            except ImportError:
                break
    width = max((b.x1 for _, b in words), default=1.0)
    height = max((b.y1 for _, b in words), default=1.0)
    return width + 8.0, height + 8.0


def _load_funsd_page(ann_path: Path) -> Document:
    try:
        payload = json.loads(ann_path.read_text(encoding="utf-8"))
        form = payload["form"]
    except (json.JSONDecodeError, KeyError) as e:
        raise MalformedAnnotation(f"{ann_path}: {e}") from e

    words: list[tuple[str, BoundingBox]] = []
    word_labels: list[int] = []
    word_entity: list[int] = []
    for ent_pos, entity in enumerate(form):
        try:
            label = entity["label"]
            entity_words = entity["words"]
        except (KeyError, TypeError) as e:
            raise MalformedAnnotation(
                f"{ann_path}: entity id {entity.get('id', ent_pos)!r}: {e}"
            ) from e
        if label not in FUNSD_SCHEMA.class_names:
            raise MalformedAnnotation(f"{ann_path}: entity id {entity.get('id', ent_pos)!r}: label {label!r}")
        class_id = FUNSD_SCHEMA.class_names.index(label)
        for w in entity_words:
            try:
                x0, y0, x1, y1 = w["box"]
                text = w["text"]
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedAnnotation(
                    f"{ann_path}: entity id {entity.get('id', ent_pos)!r}: word {w!r}"
                ) from e
            # a handful of FUNSD boxes are inverted by a pixel; normalize
            box = BoundingBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
            words.append((text, box))
            word_labels.append(class_id)
            word_entity.append(ent_pos)

    order = reading_order_by_banding([b for _, b in words])
    words_o = [words[p] for p in order]
    labels_o = [word_labels[p] for p in order]
    entity_members: dict[int, list[int]] = {}
    for new_pos, p in enumerate(order):
        entity_members.setdefault(word_entity[p], []).append(new_pos)
    entities = [
        (FUNSD_SCHEMA.class_names.index(form[e]["label"]), members)
        for e, members in sorted(entity_members.items())
    ]

    page_w, page_h = _page_size_from_image(ann_path, words)
    return make_document(
        doc_id=ann_path.stem,
        page_width=page_w,
        page_height=page_h,
        words=words_o,
        labels=labels_o,
        entities=entities,
    )


def _load_funsd_dir(split_dir: Path, split_name: str) -> Corpus:
    ann_dir = split_dir / "annotations"
    if not ann_dir.is_dir():
        raise MissingFile(f"{ann_dir} (expected FUNSD layout <root>/{split_dir.name}/annotations)")
    docs = [_load_funsd_page(p) for p in sorted(ann_dir.glob("*.json"))]
    if not docs:
        raise MissingFile(f"no annotation files under {ann_dir}")
    meta = {"dataset": "funsd", "split": split_name, "reading_order": "row-banding reconstruction"}
    return Corpus(documents=tuple(docs), schema=FUNSD_SCHEMA, meta=meta)


def load_funsd(root) -> FunsdSplit:
    """Load the official train/test split from a FUNSD dataset directory."""
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(str(root))
    return FunsdSplit(
        train=_load_funsd_dir(root / "training_data", "train"),
        test=_load_funsd_dir(root / "testing_data", "test"),
    )


# ---------------------------------------------------------------------------
# synthetic payment-style forms


@dataclass(frozen=True)
class SyntheticFormSpec:
    """Knobs for the synthetic form generator; serializable and versioned.

    Pages are key-value forms whose field values repeat a handful of text
    formats (dates, amounts, ids, names), so class identity hinges on which
    key sits nearby, on which side, and in what order. Multi-column grids
    make naive left-right serialization interleave unrelated fields.
    """

    page_width: float = 1700.0
    page_height: float = 2200.0
    column_weights: tuple[float, ...] = (0.55, 0.35, 0.10)
    max_filler_cells: int = 2
    ambiguous_key_rate: float = 0.85
    filler_rate: float = 0.12
    label_above_rate: float = 0.3
    jitter: float = 3.0
    char_width_range: tuple[float, float] = (5.2, 7.2)
    line_height_range: tuple[float, float] = (11.0, 15.0)
    version: str = SYNTH_SPEC_FORMAT

    def to_json(self) -> str:
        payload = {
            "format": self.version,
            "page_width": self.page_width,
            "page_height": self.page_height,
            "column_weights": list(self.column_weights),
            "max_filler_cells": self.max_filler_cells,
            "ambiguous_key_rate": self.ambiguous_key_rate,
            "filler_rate": self.filler_rate,
            "label_above_rate": self.label_above_rate,
            "jitter": self.jitter,
            "char_width_range": list(self.char_width_range),
            "line_height_range": list(self.line_height_range),
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "SyntheticFormSpec":
        d = json.loads(text)
        fmt = d.get("format", "<missing>")
        if fmt != SYNTH_SPEC_FORMAT:
            raise VersionMismatch(SYNTH_SPEC_FORMAT, fmt)
        return SyntheticFormSpec(
            page_width=d["page_width"],
            page_height=d["page_height"],
            column_weights=tuple(d["column_weights"]),
            max_filler_cells=d["max_filler_cells"],
            ambiguous_key_rate=d["ambiguous_key_rate"],
            filler_rate=d["filler_rate"],
            label_above_rate=d["label_above_rate"],
            jitter=d["jitter"],
            char_width_range=tuple(d["char_width_range"]),
            line_height_range=tuple(d["line_height_range"]),
        )


_KEYS: dict[str, tuple[str, ...]] = {
    "invoice_number": ("Invoice #:", "Invoice No.", "Inv Number:"),
    "account_number": ("Account #:", "Acct No:", "Account Number:"),
    "invoice_date": ("Invoice Date:", "Billed:", "Issued:"),
    "due_date": ("Due Date:", "Payment Due:", "Due By:"),
    "ship_date": ("Ship Date:", "Shipped:", "Delivery Date:"),
    "subtotal": ("Subtotal:", "Net Amount:"),
    "tax_amount": ("Tax:", "Sales Tax:", "VAT:"),
    "total_amount": ("Total:", "Invoice Total:", "Gross Total:"),
    "amount_due": ("Amount Due:", "Balance Due:", "Pay This Amount:"),
    "vendor_name": ("Vendor:", "From:", "Remit To:"),
    "customer_name": ("Customer:", "Bill To:", "Sold To:"),
    "vendor_address": ("Vendor Address:", "Remit Address:"),
    "customer_address": ("Customer Address:", "Mailing Address:"),
}

# Fields sharing an ambiguous fallback key can only be told apart by
# layout: stack position, block side, or reading context.
_AMBIGUOUS_KEYS: dict[str, str] = {
    "invoice_number": "Ref #:",
    "account_number": "Ref #:",
    "invoice_date": "Date:",
    "due_date": "Date:",
    "ship_date": "Date:",
    "subtotal": "Amount:",
    "tax_amount": "Amount:",
    "total_amount": "Amount:",
    "amount_due": "Amount:",
    "vendor_name": "Name:",
    "customer_name": "Name:",
    "vendor_address": "Address:",
    "customer_address": "Address:",
}

_COMPANY_WORDS = ("Acme", "Globex", "Initech", "Umbrella", "Stark", "Wayne", "Hooli", "Vandelay")
_COMPANY_SUFFIX = ("Supply", "Industries", "Partners", "Logistics", "Holdings", "Trading")
_COMPANY_TAIL = ("Co", "Inc", "LLC", "Ltd")
_PERSON_FIRST = ("Ada", "Grace", "Alan", "Edsger", "Barbara", "Donald", "Radia", "Claude")
_PERSON_LAST = ("Lovelace", "Hopper", "Turing", "Dijkstra", "Liskov", "Knuth", "Perlman", "Shannon")
_STREETS = ("Maple", "Oak", "Cedar", "Elm", "Market", "Harbor", "Summit", "Prairie")
_STREET_SUFFIX = ("Ave", "St", "Blvd", "Rd", "Lane", "Way")
_CITIES = ("Springfield", "Fairview", "Riverton", "Lakewood", "Georgetown", "Ashland")
_STATES = ("CA", "NY", "TX", "WA", "IL", "OH")
_FILLER_WORDS = (
    "Thank", "you", "for", "your", "business", "Terms", "net", "30", "days",
    "Please", "remit", "payment", "promptly", "Questions", "call", "billing",
    "Reference", "Code", "Statement", "Period", "Approved", "by", "Page", "of",
)
_TITLES = ("INVOICE", "STATEMENT", "PAYMENT", "ADVICE", "PURCHASE", "ORDER")


def _gen_value(field_type: str, rng: np.random.Generator, doc_style: dict) -> str:
    if field_type in ("invoice_date", "due_date", "ship_date"):
        m, d = rng.integers(1, 13), rng.integers(1, 29)
        if doc_style["date_long"]:
            return f"{m:02d}/{d:02d}/{rng.integers(1995, 2026)}"
        return f"{m}/{d}/{rng.integers(0, 100):02d}"
    if field_type in ("subtotal", "tax_amount", "total_amount", "amount_due"):
        return f"${rng.integers(10, 20000) + rng.integers(0, 100) / 100.0:,.2f}"
    if field_type in ("invoice_number", "account_number"):
        digits = "".join(str(x) for x in rng.integers(0, 10, size=int(rng.integers(5, 9))))
        if doc_style["id_prefix"]:
            return f"{'INV' if field_type == 'invoice_number' else 'AC'}-{digits}"
        return digits
    if field_type in ("vendor_name", "customer_name"):
        if rng.random() < 0.5:
            parts = [rng.choice(_COMPANY_WORDS), rng.choice(_COMPANY_SUFFIX)]
            if rng.random() < 0.5:
                parts.append(rng.choice(_COMPANY_TAIL))
        else:
            parts = [rng.choice(_PERSON_FIRST), rng.choice(_PERSON_LAST)]
        return " ".join(parts)
    if field_type in ("vendor_address", "customer_address"):
        parts = [str(rng.integers(10, 9900)), rng.choice(_STREETS), rng.choice(_STREET_SUFFIX)]
        if rng.random() < 0.4:
            parts.append(rng.choice(_CITIES))
        return " ".join(parts)
    raise ValueError(f"unknown field type {field_type!r}")


@dataclass
class _PageBuilder:
    spec: SyntheticFormSpec
    rng: np.random.Generator
    char_w: float
    line_h: float
    doc_style: dict = field(default_factory=dict)
    words: list[tuple[str, BoundingBox]] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    entity_of: list[Optional[int]] = field(default_factory=list)
    n_entities: int = 0
    used_centers: set[tuple[float, float]] = field(default_factory=set)
    audit_n_columns: int = 1
    audit_side_by_side: bool = True

    def _emit(self, text: str, x: float, y: float, label: int, entity: Optional[int]) -> float:
        w = len(text) * self.char_w
        h = self.line_h
        y = y + float(self.rng.uniform(-0.8, 0.8))
        box = BoundingBox(x, y, x + w, y + h)
        cx, cy = (box.x0 + box.x1) / 2.0, (box.y0 + box.y1) / 2.0
        while (cx, cy) in self.used_centers:
            x += 0.37
            box = BoundingBox(x, y, x + w, y + h)
            cx, cy = (box.x0 + box.x1) / 2.0, (box.y0 + box.y1) / 2.0
        self.used_centers.add((cx, cy))
        self.words.append((text, box))
        self.labels.append(label)
        self.entity_of.append(entity)
        return x + w + 0.9 * self.char_w

    def emit_line(self, text: str, x: float, y: float, label: int, entity: Optional[int]) -> float:
        start_x = x
        for word in text.split():
            # wrap instead of running off the right edge (clamping would
            # squash boxes and break entity contiguity)
            if x + len(word) * self.char_w > self.spec.page_width - 12.0:
                x = start_x + self.char_w
                y += 1.15 * self.line_h
            x = self._emit(word, x, y, label, entity)
        return x

    def emit_field(self, field_type: str, x: float, y: float, key_text: str, above: bool) -> float:
        """Key tokens (background) plus value tokens (entity); returns lines used."""
        class_id = SYNTH_SCHEMA.class_names.index(field_type)
        value = _gen_value(field_type, self.rng, self.doc_style)
        entity_id = self.n_entities
        self.n_entities += 1
        jx = float(self.rng.uniform(-self.spec.jitter, self.spec.jitter))
        jy = float(self.rng.uniform(-self.spec.jitter, self.spec.jitter))
        if above:
            self.emit_line(key_text, x + jx, y + jy, SYNTH_SCHEMA.background_id, None)
            self.emit_line(value, x + jx + self.char_w, y + jy + self.line_h + 3.0, class_id, entity_id)
            return 2.0
        x_end = self.emit_line(key_text, x + jx, y + jy, SYNTH_SCHEMA.background_id, None)
        self.emit_line(value, x_end + 2.0, y + jy, class_id, entity_id)
        return 1.0


def _build_page(spec: SyntheticFormSpec, rng: np.random.Generator, doc_id: str) -> tuple[Document, dict]:
    char_w = float(rng.uniform(*spec.char_width_range))
    line_h = float(rng.uniform(*spec.line_height_range))
    b = _PageBuilder(
        spec=spec,
        rng=rng,
        char_w=char_w,
        line_h=line_h,
        doc_style={
            "date_long": bool(rng.random() < 0.3),
            "id_prefix": bool(rng.random() < 0.5),
        },
    )
    bg = SYNTH_SCHEMA.background_id
    margin = 40.0
    usable_w = spec.page_width - 2 * margin

    # Zones land in a random vertical order with random offsets so absolute
    # page position never identifies a field class (node features expose
    # absolute coordinates). Only relative arrangement is stable: vendor
    # precedes customer, grid fields keep their conventional sequence, and
    # the money stack keeps its top-to-bottom order.

    def island_x(width_needed: float) -> float:
        return margin + float(rng.uniform(0, max(1.0, usable_w - width_needed)))

    def zone_parties(y: float) -> float:
        side_by_side = rng.random() < 0.8
        b.audit_side_by_side = side_by_side
        party_fields = [("vendor_name", "vendor_address"), ("customer_name", "customer_address")]
        ambiguous = rng.random() < spec.ambiguous_key_rate
        gap = float(rng.uniform(320, 520)) if side_by_side else 0.0
        x_base = island_x(gap + 340)
        block_h = 0.0
        for which, (name_f, addr_f) in enumerate(party_fields):
            bx = x_base + (which * gap if side_by_side else float(rng.uniform(0, 10)))
            by = y + (0.0 if side_by_side else which * 3.4 * line_h)
            key_name = _AMBIGUOUS_KEYS[name_f] if ambiguous else str(rng.choice(_KEYS[name_f]))
            key_addr = _AMBIGUOUS_KEYS[addr_f] if ambiguous else str(rng.choice(_KEYS[addr_f]))
            b.emit_field(name_f, bx, by, key_name, above=False)
            b.emit_field(addr_f, bx, by + 1.5 * line_h, key_addr, above=False)
            block_h = max(block_h, (by - y) + 3.0 * line_h)
        return y + block_h + 0.5 * line_h

    def zone_grid(y: float) -> float:
        n_cols = int(rng.choice(len(spec.column_weights), p=np.array(spec.column_weights))) + 1
        b.audit_n_columns = n_cols
        cells: list[Optional[str]] = [
            "invoice_number", "account_number", "invoice_date", "due_date", "ship_date",
        ]
        # filler cells shift the fields around the grid without reordering them
        for _ in range(int(rng.integers(0, spec.max_filler_cells + 1))):
            cells.insert(int(rng.integers(0, 2)) * len(cells), None)
        ambiguous = rng.random() < spec.ambiguous_key_rate
        col_w = float(rng.uniform(300, 430))
        x_base = island_x(n_cols * col_w)
        n_rows = (len(cells) + n_cols - 1) // n_cols
        for pos, cell in enumerate(cells):
            row, col = pos // n_cols, pos % n_cols
            cx = x_base + col * col_w
            cy = y + row * 2.8 * line_h
            if cell is None:
                if rng.random() < spec.filler_rate * 3:
                    n_words = int(rng.integers(2, 4))
                    text = " ".join(str(w) for w in rng.choice(_FILLER_WORDS, size=n_words))
                    b.emit_line(text, cx + float(rng.uniform(0, 8)), cy, bg, None)
                continue
            key = _AMBIGUOUS_KEYS[cell] if ambiguous else str(rng.choice(_KEYS[cell]))
            above = rng.random() < spec.label_above_rate
            b.emit_field(cell, cx, cy, key, above=above)
        return y + n_rows * 2.8 * line_h + 0.5 * line_h

    def zone_money(y: float) -> float:
        money = ["subtotal", "tax_amount", "total_amount"]
        if rng.random() < 0.5:
            money.append("amount_due")
        ambiguous = rng.random() < spec.ambiguous_key_rate
        stack_x = island_x(300)
        for row, m_field in enumerate(money):
            key = _AMBIGUOUS_KEYS[m_field] if ambiguous else str(rng.choice(_KEYS[m_field]))
            b.emit_field(m_field, stack_x, y + row * 1.7 * line_h, key, above=False)
        return y + len(money) * 1.7 * line_h + 0.5 * line_h

    # title word (background)
    b.emit_line(str(rng.choice(_TITLES)), island_x(180), margin + float(rng.uniform(0, 2 * line_h)), bg, None)
    y = margin + 3.0 * line_h

    # zones float: random order, large random vertical gaps, random x
    # islands, so absolute page coordinates carry almost no class signal
    zone_fns = [zone_parties, zone_grid, zone_money]
    order = rng.permutation(len(zone_fns))
    slack = spec.page_height - y - 30 * line_h
    for zi in order:
        y += float(rng.uniform(0.5, 2.0)) * line_h + float(rng.uniform(0, max(0.0, slack / 3)))
        y = zone_fns[int(zi)](y)

    # footer filler
    if rng.random() < 0.5:
        n_words = int(rng.integers(3, 6))
        text = " ".join(str(w) for w in rng.choice(_FILLER_WORDS, size=n_words))
        b.emit_line(text, island_x(260), min(y + line_h, spec.page_height - 2 * line_h), bg, None)

    # serialize the way a naive OCR pass would: bands left to right
    order = reading_order_by_banding([box for _, box in b.words])
    words_o = [b.words[p] for p in order]
    labels_o = [b.labels[p] for p in order]
    members: dict[int, list[int]] = {}
    entity_class: dict[int, int] = {}
    for new_pos, p in enumerate(order):
        ent = b.entity_of[p]
        if ent is not None:
            members.setdefault(ent, []).append(new_pos)
            entity_class[ent] = b.labels[p]
    entities = [(entity_class[e], pos) for e, pos in sorted(members.items())]

    doc = make_document(
        doc_id=doc_id,
        page_width=spec.page_width,
        page_height=spec.page_height,
        words=words_o,
        labels=labels_o,
        entities=entities,
    )
    audit = {
        "n_columns": b.audit_n_columns,
        "n_tokens": doc.n_tokens,
        "side_by_side_parties": b.audit_side_by_side,
    }
    return doc, audit


def gen_synthetic(spec: SyntheticFormSpec, n_docs: int, seed: int) -> Corpus:
    """Deterministic synthetic corpus; same (spec, seed) gives byte-identical output."""
    docs = []
    audits = {}
    for idx in range(n_docs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, idx]))
        doc_id = f"synth-{seed}-{idx:05d}"
        doc, audit = _build_page(spec, rng, doc_id)
        violations = validate_document(doc, SYNTH_SCHEMA)
        if violations:
            raise AssertionError(f"generator produced invalid {doc_id}: {violations[:3]}")
        docs.append(doc)
        audits[doc_id] = audit
    meta = {
        "dataset": "synthetic",
        "generator": SYNTH_SPEC_FORMAT,
        "seed": seed,
        "text_embedding": "hashed trigram stand-in, not a pretrained model",
        "audit": audits,
    }
    return Corpus(documents=tuple(docs), schema=SYNTH_SCHEMA, meta=meta)


def multi_column_fraction(corpus: Corpus) -> float:
    """Share of generated pages whose field grid has 2+ columns (from audit metadata)."""
    audits = corpus.meta.get("audit", {})
    if not audits:
        return 0.0
    multi = sum(1 for a in audits.values() if a["n_columns"] >= 2)
    return multi / len(audits)
