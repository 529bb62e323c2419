"""Per-paper graph construction.

Nodes are the paper title, the abstract (when present), sentence-packed body
chunks and one node per manifest reference. Edges: abstract -> title, a
reference <-> title pair for every reference, and chunk -> reference for each
chunk that cites the reference. Both one-way directions are configurable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping

from .corpus import DatasetEntry, TeiDocument
from .errors import ConfigError
from .gcn import Adjacency
from .text import DEFAULT_ABBREVIATIONS, SentenceSegmenter, clean_text

NodeKind = Literal["title", "abstract", "chunk", "reference"]


@dataclass(frozen=True)
class ChunkingConfig:
    target_chars: int = 300
    min_chars: int = 200
    abbreviations: tuple[str, ...] = DEFAULT_ABBREVIATIONS

    def __post_init__(self) -> None:
        if not 0 < self.min_chars <= self.target_chars:
            raise ConfigError("chunking requires 0 < min_chars <= target_chars")


@dataclass(frozen=True)
class GraphConfig:
    abstract_to_title: bool = True
    chunk_to_reference: bool = True


@dataclass(frozen=True)
class Chunk:
    text: str
    bib_keys: tuple[str, ...] = ()
    size: int = 0  # sentence characters, join spaces excluded


@dataclass(frozen=True)
class Node:
    index: int
    kind: NodeKind
    text: str
    ref_id: str | None = None


@dataclass(frozen=True)
class PaperGraph:
    paper_id: str
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def reference_mask(self) -> list[int]:
        return [n.index for n in self.nodes if n.kind == "reference"]

    @property
    def n(self) -> int:
        return len(self.nodes)

    def to_dict(self) -> dict:
        nodes = []
        for node in self.nodes:
            d = {"i": node.index, "kind": node.kind, "text": node.text}
            if node.ref_id is not None:
                d["ref_id"] = node.ref_id
            nodes.append(d)
        return {"paper_id": self.paper_id, "nodes": nodes, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PaperGraph":
        nodes = tuple(Node(x["i"], x["kind"], x["text"], x.get("ref_id")) for x in d["nodes"])
        if [n.index for n in nodes] != list(range(len(nodes))):
            raise ValueError(f"graph {d['paper_id']}: node indices must be dense and ordered")
        edges = tuple((int(s), int(t)) for s, t in d["edges"])
        return cls(d["paper_id"], nodes, edges)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)


def save_graph(graph: PaperGraph, path: str | Path) -> None:
    Path(path).write_text(graph.dumps(), encoding="utf-8")


def load_graph(path: str | Path) -> PaperGraph:
    return PaperGraph.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def chunk_body(doc: TeiDocument, cfg: ChunkingConfig | None = None) -> list[Chunk]:
    """Greedily pack whole sentences into chunks of at most ``target_chars``.

    Chunk size counts sentence characters only. A sentence longer than the
    target becomes its own chunk. A chunk still shorter than ``min_chars`` at a
    paragraph end keeps filling from the next paragraph of the same section.
    """
    cfg = cfg or ChunkingConfig()
    segmenter = SentenceSegmenter(cfg.abbreviations)
    chunks: list[Chunk] = []
    sentences: list[str] = []
    keys: list[str] = []
    size = 0

    def flush() -> None:
        nonlocal sentences, keys, size
        if sentences:
            chunks.append(Chunk(" ".join(sentences), tuple(keys), size))
        sentences, keys, size = [], [], 0

    for section in doc.sections:
        for para in section.paragraphs:
            for a, b in segmenter.spans(para.text):
                if sentences and size + (b - a) > cfg.target_chars:
                    flush()
                sentences.append(para.text[a:b])
                keys.extend(m.bib_key for m in para.markers if a <= m.span[0] < b)
                size += b - a
            if size >= cfg.min_chars:
                flush()
        flush()
    return chunks


def build_graph(
    doc: TeiDocument,
    link: Mapping[str, str],
    entry: DatasetEntry,
    chunks: list[Chunk],
    cfg: GraphConfig | None = None,
) -> PaperGraph:
    cfg = cfg or GraphConfig()
    nodes: list[Node] = [Node(0, "title", clean_text(entry.title or doc.title))]
    edges: dict[tuple[int, int], None] = {}

    def directed(src: int, dst: int, forward: bool) -> None:
        edges[(src, dst) if forward else (dst, src)] = None

    abstract = clean_text(doc.abstract)
    if abstract:
        nodes.append(Node(1, "abstract", abstract))
        directed(1, 0, cfg.abstract_to_title)

    chunk_start = len(nodes)
    for c in chunks:
        nodes.append(Node(len(nodes), "chunk", c.text))

    ref_node: dict[str, int] = {}
    for ref in entry.references:
        idx = len(nodes)
        nodes.append(Node(idx, "reference", clean_text(ref.title), ref.ref_id))
        ref_node[ref.ref_id] = idx
        edges[(idx, 0)] = None
        edges[(0, idx)] = None

    for ci, c in enumerate(chunks):
        for key in c.bib_keys:
            rid = link.get(key)
            if rid in ref_node:
                directed(chunk_start + ci, ref_node[rid], cfg.chunk_to_reference)

    return PaperGraph(entry.paper_id, tuple(nodes), tuple(edges))


def to_adjacency(graph: PaperGraph) -> Adjacency:
    """Message-passing adjacency: entry ``[dst, src] = 1`` for each edge ``src -> dst``."""
    return Adjacency.from_entries(graph.n, [(dst, src, 1.0) for src, dst in graph.edges])
