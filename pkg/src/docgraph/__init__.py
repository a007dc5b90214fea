"""docgraph: graph toolkit for key information extraction from form-like pages."""

__version__ = "0.1.0"

from .docmodel import BoundingBox, Document, LabelSchema, WordToken, box_center, box_union
from .features import FEATURE_LAYOUT_VERSION, TextEmbedderConfig
from .geometry import DocGraph, SkeletonGraph, beta_skeleton, build_doc_graph, gabriel_bruteforce
from .rope import RopeAssignment, RopeEncodingConfig, rope_codes, sinusoidal_encode

__all__ = [
    "BoundingBox",
    "Document",
    "DocGraph",
    "FEATURE_LAYOUT_VERSION",
    "LabelSchema",
    "RopeAssignment",
    "RopeEncodingConfig",
    "SkeletonGraph",
    "TextEmbedderConfig",
    "WordToken",
    "beta_skeleton",
    "box_center",
    "box_union",
    "build_doc_graph",
    "gabriel_bruteforce",
    "rope_codes",
    "sinusoidal_encode",
    "__version__",
]
