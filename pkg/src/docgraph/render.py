"""Static SVG renders of documents, their skeleton graphs, and neighbor codes.

The SVG is built by plain string assembly: same input, same bytes, no
font or timestamp nondeterminism. Word boxes are drawn as rectangles,
skeleton edges as lines between box centers, and (optionally) the
reading-order codes of one target's neighborhood as red numerals.
"""

from __future__ import annotations

from typing import Optional

from .docmodel import Document
from .geometry import DocGraph, build_doc_graph
from .rope import rope_codes


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_document_svg(
    d: Document,
    g: Optional[DocGraph] = None,
    show_rope_target: Optional[int] = None,
    show_text: bool = False,
) -> str:
    """SVG markup for one page; `show_rope_target` is a vertex id or None."""
    if g is None:
        g = build_doc_graph(d)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(d.page_width)}" '
        f'height="{_fmt(d.page_height)}" viewBox="0 0 {_fmt(d.page_width)} {_fmt(d.page_height)}">',
        f'<rect x="0" y="0" width="{_fmt(d.page_width)}" height="{_fmt(d.page_height)}" fill="white"/>',
    ]

    for i, j in g.skeleton.undirected_edges:
        xi, yi = g.vertex_centers[i]
        xj, yj = g.vertex_centers[j]
        parts.append(
            f'<line x1="{_fmt(xi)}" y1="{_fmt(yi)}" x2="{_fmt(xj)}" y2="{_fmt(yj)}" '
            'stroke="#4477aa" stroke-width="0.8"/>'
        )

    for tok in d.tokens:
        b = tok.box
        parts.append(
            f'<rect x="{_fmt(b.x0)}" y="{_fmt(b.y0)}" width="{_fmt(b.width)}" '
            f'height="{_fmt(b.height)}" fill="none" stroke="#222222" stroke-width="0.6"/>'
        )
        if show_text:
            parts.append(
                f'<text x="{_fmt(b.x0 + 1)}" y="{_fmt(b.y1 - 2)}" font-size="{_fmt(max(b.height - 4, 4))}" '
                f'font-family="monospace" fill="#555555">{_escape(tok.text)}</text>'
            )

    if show_rope_target is not None:
        target = show_rope_target
        if not 0 <= target < g.n_vertices:
            raise ValueError(f"target vertex {target} out of range")
        assignment = rope_codes(g, g.vertex_reading_index)
        tx, ty = g.vertex_centers[target]
        parts.append(
            f'<circle cx="{_fmt(tx)}" cy="{_fmt(ty)}" r="5" fill="none" stroke="#cc3311" stroke-width="1.5"/>'
        )
        for src, code in assignment.codes_for_target(target).items():
            sx, sy = g.vertex_centers[src]
            parts.append(
                f'<text x="{_fmt(sx + 3)}" y="{_fmt(sy - 3)}" font-size="11" '
                f'font-family="monospace" fill="#cc3311">{code}</text>'
            )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_to_file(
    d: Document,
    out_path,
    show_rope_target: Optional[int] = None,
    show_text: bool = False,
) -> None:
    svg = render_document_svg(d, show_rope_target=show_rope_target, show_text=show_text)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
