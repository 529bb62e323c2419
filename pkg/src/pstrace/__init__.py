"""Source-paper tracing toolkit.

Two scoring routes share one corpus: citation contexts pulled from Grobid TEI
files (emitted as sequence-classification records for an external trainer)
and a per-paper graph classified with a small numpy GCN. Score tables from
either route are ensembled and evaluated with average precision.
"""

__version__ = "0.1.0"

CIT = "⟨CIT⟩"
TARGET = "[TARGET]"
