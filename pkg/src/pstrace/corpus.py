"""Dataset manifest loading and Grobid TEI parsing."""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import CIT
from .text import clean_text, normalize_title

log = logging.getLogger(__name__)

XML_ID = "{http://www.w3.org/XML/1998/namespace}id"


class ManifestError(ValueError):
    """Malformed manifest; the message carries the line or field locus."""


class IntegrityError(ValueError):
    pass


class TeiParseError(ValueError):
    pass


@dataclass(frozen=True)
class Reference:
    ref_id: str
    title: str


@dataclass(frozen=True)
class DatasetEntry:
    paper_id: str
    title: str
    references: tuple[Reference, ...]
    source_labels: frozenset[str] = frozenset()
    labels_present: bool = False

    @property
    def ref_ids(self) -> list[str]:
        return [r.ref_id for r in self.references]


def _require(obj: Mapping, key: str, kind: type, locus: str) -> Any:
    if key not in obj:
        raise ManifestError(f"{locus}: missing field '{key}'")
    value = obj[key]
    if not isinstance(value, kind):
        raise ManifestError(f"{locus}: field '{key}' must be {kind.__name__}")
    return value


def parse_manifest(payload: str) -> list[DatasetEntry]:
    try:
        data = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, list):
        raise ManifestError("top level must be a JSON array of papers")

    entries = []
    seen: set[str] = set()
    for i, obj in enumerate(data):
        locus = f"papers[{i}]"
        if not isinstance(obj, dict):
            raise ManifestError(f"{locus}: expected an object")
        paper_id = _require(obj, "paper_id", str, locus)
        locus = f"papers[{i}] ({paper_id!r})"
        title = _require(obj, "title", str, locus)
        raw_refs = _require(obj, "references", list, locus)

        refs = []
        ref_ids: set[str] = set()
        for j, r in enumerate(raw_refs):
            rl = f"{locus}.references[{j}]"
            if not isinstance(r, dict):
                raise ManifestError(f"{rl}: expected an object")
            ref = Reference(_require(r, "ref_id", str, rl), _require(r, "title", str, rl))
            if ref.ref_id in ref_ids:
                raise IntegrityError(f"{rl}: duplicate ref_id {ref.ref_id!r}")
            ref_ids.add(ref.ref_id)
            refs.append(ref)

        labels_present = "source_labels" in obj
        labels: frozenset[str] = frozenset()
        if labels_present:
            raw_labels = _require(obj, "source_labels", list, locus)
            if not all(isinstance(x, str) for x in raw_labels):
                raise ManifestError(f"{locus}: source_labels must be strings")
            labels = frozenset(raw_labels)
            stray = sorted(labels - ref_ids)
            if stray:
                raise IntegrityError(f"{locus}: source_labels not among references: {stray}")

        if paper_id in seen:
            raise IntegrityError(f"duplicate paper_id {paper_id!r} at papers[{i}]")
        seen.add(paper_id)
        entries.append(DatasetEntry(paper_id, title, tuple(refs), labels, labels_present))
    return entries


def load_manifest(path: str | Path) -> list[DatasetEntry]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def dump_manifest(entries: list[DatasetEntry]) -> str:
    out = []
    for e in entries:
        obj: dict[str, Any] = {
            "paper_id": e.paper_id,
            "title": e.title,
            "references": [{"ref_id": r.ref_id, "title": r.title} for r in e.references],
        }
        if e.labels_present:
            obj["source_labels"] = sorted(e.source_labels)
        out.append(obj)
    return json.dumps(out, ensure_ascii=False, indent=1)


# --- TEI ---------------------------------------------------------------------


@dataclass(frozen=True)
class CitationMarker:
    bib_key: str
    span: tuple[int, int]


@dataclass(frozen=True)
class Paragraph:
    text: str
    markers: tuple[CitationMarker, ...] = ()


@dataclass(frozen=True)
class Section:
    heading: str
    paragraphs: tuple[Paragraph, ...]


@dataclass(frozen=True)
class BibEntry:
    bib_key: str
    raw_title: str


@dataclass(frozen=True)
class TeiDocument:
    title: str
    abstract: str
    sections: tuple[Section, ...] = ()
    bibliography: tuple[BibEntry, ...] = ()
    unresolved_markers: int = 0

    @property
    def marker_count(self) -> int:
        return sum(len(p.markers) for s in self.sections for p in s.paragraphs)

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "abstract": self.abstract,
            "sections": [
                {
                    "heading": s.heading,
                    "paragraphs": [
                        {"text": p.text, "markers": [[m.bib_key, m.span[0], m.span[1]] for m in p.markers]}
                        for p in s.paragraphs
                    ],
                }
                for s in self.sections
            ],
            "bibliography": [[b.bib_key, b.raw_title] for b in self.bibliography],
            "unresolved_markers": self.unresolved_markers,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TeiDocument":
        sections = tuple(
            Section(
                s["heading"],
                tuple(
                    Paragraph(p["text"], tuple(CitationMarker(k, (a, b)) for k, a, b in p["markers"]))
                    for p in s["paragraphs"]
                ),
            )
            for s in d["sections"]
        )
        bib = tuple(BibEntry(k, t) for k, t in d["bibliography"])
        return cls(d["title"], d["abstract"], sections, bib, d.get("unresolved_markers", 0))


def _localize(root: ET.Element) -> None:
    for el in root.iter():
        if isinstance(el.tag, str) and "}" in el.tag:
            el.tag = el.tag.split("}", 1)[1]


def _text(el: ET.Element | None) -> str:
    return "" if el is None else clean_text("".join(el.itertext()))


def _abstract(el: ET.Element | None) -> str:
    if el is None:
        return ""
    paras = list(el.iter("p"))
    if not paras:
        return _text(el)
    return clean_text(" ".join(_text(p) for p in paras))


class _ParagraphBuilder:
    def __init__(self) -> None:
        self.parts: list[str] = []
        self.keys: list[str] = []
        self.unresolved = 0

    def add(self, s: str | None) -> None:
        if s:
            self.parts.append(s.replace(CIT, " "))

    def walk(self, el: ET.Element) -> None:
        self.add(el.text)
        for child in el:
            if child.tag == "ref" and child.get("type") == "bibr":
                targets = [t[1:] for t in (child.get("target") or "").split() if t.startswith("#") and len(t) > 1]
                if targets:
                    self.parts.append(" ".join(CIT for _ in targets))
                    self.keys.extend(targets)
                else:
                    self.unresolved += 1
            else:
                self.walk(child)
            self.add(child.tail)

    def build(self) -> Paragraph:
        text = clean_text("".join(self.parts))
        spans = [(m.start(), m.end()) for m in re.finditer(re.escape(CIT), text)]
        assert len(spans) == len(self.keys)
        return Paragraph(text, tuple(CitationMarker(k, s) for k, s in zip(self.keys, spans)))


def _bib_title(bs: ET.Element) -> str:
    for path in ("analytic/title[@type='main']", "analytic/title", "monogr/title[@type='main']", "monogr/title"):
        t = _text(bs.find(path))
        if t:
            return t
    return ""


def parse_tei(xml: bytes | str) -> TeiDocument:
    """Parse the Grobid TEI subset into a :class:`TeiDocument`.

    Inline ``<ref type="bibr" target="#key">`` markers are replaced by the
    placeholder token; markers without a target are dropped and counted.
    """
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise TeiParseError(f"malformed TEI XML: {exc}") from exc
    _localize(root)

    title_el = root.find("teiHeader/fileDesc/titleStmt/title[@type='main']")
    if title_el is None:
        title_el = root.find("teiHeader/fileDesc/titleStmt/title")
    title = _text(title_el)
    abstract = _abstract(root.find("teiHeader/profileDesc/abstract"))

    sections: list[Section] = []
    unresolved = 0
    body = root.find("text/body")

    def paragraphs_of(container: ET.Element) -> list[Paragraph]:
        nonlocal unresolved
        out = []
        for p in container.findall("p"):
            builder = _ParagraphBuilder()
            builder.walk(p)
            unresolved += builder.unresolved
            para = builder.build()
            if para.text:
                out.append(para)
        return out

    def visit_div(div: ET.Element) -> None:
        paras = paragraphs_of(div)
        if paras:
            sections.append(Section(_text(div.find("head")), tuple(paras)))
        for sub in div.findall("div"):
            visit_div(sub)

    if body is not None:
        loose: list[Paragraph] = []
        for child in body:
            if child.tag == "p":
                wrapper = ET.Element("x")
                wrapper.append(child)
                loose.extend(paragraphs_of(wrapper))
                continue
            if loose:
                sections.append(Section("", tuple(loose)))
                loose = []
            if child.tag == "div":
                visit_div(child)
        if loose:
            sections.append(Section("", tuple(loose)))

    bibliography = []
    seen: set[str] = set()
    back = root.find("text/back")
    if back is not None:
        for bs in back.iter("biblStruct"):
            key = bs.get(XML_ID) or bs.get("id")
            if not key:
                continue
            if key in seen:
                log.warning("duplicate bibliography id %s ignored", key)
                continue
            seen.add(key)
            bibliography.append(BibEntry(key, _bib_title(bs)))

    return TeiDocument(title, abstract, tuple(sections), tuple(bibliography), unresolved)


# --- bibliography linking ----------------------------------------------------

JACCARD_THRESHOLD = 0.8


@dataclass(frozen=True)
class Linkage:
    """Result of joining TEI bibliography keys to manifest references."""

    mapping: dict[str, str]
    unmatched: tuple[str, ...] = ()
    ties: tuple[tuple[str, str, str], ...] = ()  # (ref_id, winner bib_key, loser bib_key)


def title_similarity(a: str, b: str) -> float:
    """Score two normalized titles: 3 exact, 2+ratio containment, 1+J token Jaccard, else 0."""
    if not a or not b:
        return 0.0
    if a == b:
        return 3.0
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if f" {short} " in f" {long_} ":
        return 2.0 + len(short) / len(long_)
    ta, tb = set(a.split()), set(b.split())
    jac = len(ta & tb) / len(ta | tb)
    return 1.0 + jac if jac >= JACCARD_THRESHOLD else 0.0


def link_bibliography(doc: TeiDocument, entry: DatasetEntry) -> Linkage:
    """Map bibliography keys to manifest ref_ids as a partial injection.

    Candidate pairs are assigned greedily by descending score; among equal
    scores the lexicographically smaller bib_key wins and the tie is recorded.
    """
    refs = [(r.ref_id, normalize_title(r.title)) for r in entry.references]
    ref_order = {rid: i for i, (rid, _) in enumerate(refs)}
    candidates = []
    for bib in doc.bibliography:
        nb = normalize_title(bib.raw_title)
        for rid, nr in refs:
            score = title_similarity(nb, nr)
            if score > 0:
                candidates.append((-score, bib.bib_key, ref_order[rid], rid))
    candidates.sort()

    mapping: dict[str, str] = {}
    taken: dict[str, tuple[float, str]] = {}
    ties = []
    for neg, key, _, rid in candidates:
        if key in mapping:
            continue
        if rid in taken:
            win_score, winner = taken[rid]
            if win_score == -neg:
                ties.append((rid, winner, key))
                log.info("bibliography tie on %s: %s kept over %s", rid, winner, key)
            continue
        mapping[key] = rid
        taken[rid] = (-neg, key)

    unmatched = tuple(b.bib_key for b in doc.bibliography if b.bib_key not in mapping)
    return Linkage(mapping, unmatched, tuple(ties))
