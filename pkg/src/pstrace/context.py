"""Citation-context extraction and sequence-record emission.

Each reference's occurrences in the body are masked (other citations deleted,
the target marked ``[TARGET]``), truncated either by whole sentences or by a
fixed character window, cleaned, and merged into a single context string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Mapping

from . import CIT, TARGET
from .corpus import DatasetEntry, TeiDocument
from .errors import ContractViolation
from .text import DEFAULT_ABBREVIATIONS, SentenceSegmenter, clean_text, collapse_ws

SEP = " [SEP] "
Mode = Literal["semantic", "absolute"]
MODES: tuple[Mode, ...] = ("semantic", "absolute")


@dataclass(frozen=True)
class ContextParams:
    window_sentences: int = 1
    before: int = 200
    after: int = 200
    abbreviations: tuple[str, ...] = DEFAULT_ABBREVIATIONS


@dataclass(frozen=True)
class CitationInstance:
    ref_id: str
    section_heading: str
    section_index: int
    paragraph_index: int
    marker_span: tuple[int, int]


@dataclass(frozen=True)
class ContextRecord:
    paper_id: str
    ref_id: str
    paper_title: str
    ref_title: str
    section_prompt: str
    context: str
    truncation_mode: Mode
    label: Literal["source", "non-source", "unknown"] = "unknown"
    instance_count: int = 0

    @property
    def empty(self) -> bool:
        return self.instance_count == 0

    @property
    def input_text(self) -> str:
        return self.paper_title + SEP + self.ref_title + SEP + self.section_prompt + " " + self.context

    @property
    def label_field(self) -> str:
        return {"source": "1", "non-source": "0"}.get(self.label, "-")


def find_instances(doc: TeiDocument, link: Mapping[str, str], target: str) -> list[CitationInstance]:
    out = []
    for si, section in enumerate(doc.sections):
        for pi, para in enumerate(section.paragraphs):
            for m in para.markers:
                if link.get(m.bib_key) == target:
                    out.append(CitationInstance(target, section.heading, si, pi, m.span))
    return out


def mask_other_refs(paragraph_text: str, keep_span: tuple[int, int]) -> str:
    """Delete every placeholder except the one at ``keep_span``, which becomes ``[TARGET]``."""
    start, end = keep_span
    if paragraph_text[start:end] != CIT:
        raise ContractViolation(f"span {keep_span} does not address a citation placeholder")
    head = paragraph_text[:start].replace(CIT, "")
    tail = paragraph_text[end:].replace(CIT, "")
    return collapse_ws(f"{head}{TARGET}{tail}")


def truncate_semantic(
    paragraph_text: str,
    anchor: int,
    window_sentences: int = 1,
    segmenter: SentenceSegmenter | None = None,
) -> str:
    spans = (segmenter or SentenceSegmenter()).spans(paragraph_text)
    if not spans:
        return ""
    idx = len(spans) - 1
    for i, (_, b) in enumerate(spans):
        if anchor < b:
            idx = i
            break
    lo = max(0, idx - window_sentences)
    hi = min(len(spans) - 1, idx + window_sentences)
    return paragraph_text[spans[lo][0]:spans[hi][1]]


def truncate_absolute(paragraph_text: str, anchor: int, before: int = 200, after: int = 200) -> str:
    if before < 0 or after < 0:
        raise ContractViolation("character windows must be non-negative")
    start = max(0, anchor - before)
    end = min(len(paragraph_text), anchor + after)
    for m in re.finditer(re.escape(TARGET), paragraph_text):
        s, e = m.span()
        if s <= anchor < e:
            start, end = min(start, s), max(end, e)
        if s < start < e:
            start = s
        if s < end < e:
            end = e
    return paragraph_text[start:end]


_SECTION_NUMBER = re.compile(r"^(?:\d+(?:\.\d+)*\.?|[IVX]+\.)\s+")


def section_prompt(heading: str) -> str:
    """``"1. INTRODUCTION"`` -> ``"[Introduction]"``; blank headings map to ``"[Body]"``."""
    text = _SECTION_NUMBER.sub("", clean_text(heading))
    text = text.strip(" .:;-[]")
    if not text:
        text = "Body"
    elif text.isupper():
        text = text.title()
    return f"[{text}]"


def _label(entry: DatasetEntry, ref_id: str) -> str:
    if not entry.labels_present:
        return "unknown"
    return "source" if ref_id in entry.source_labels else "non-source"


def assemble_context(
    doc: TeiDocument,
    link: Mapping[str, str],
    entry: DatasetEntry,
    target: str,
    mode: Mode = "semantic",
    params: ContextParams | None = None,
) -> ContextRecord:
    params = params or ContextParams()
    if mode not in MODES:
        raise ContractViolation(f"unknown truncation mode {mode!r}")
    segmenter = SentenceSegmenter(params.abbreviations)
    instances = find_instances(doc, link, target)

    fragments = []
    for inst in instances:
        para = doc.sections[inst.section_index].paragraphs[inst.paragraph_index]
        masked = mask_other_refs(para.text, inst.marker_span)
        anchor = masked.index(TARGET)
        if mode == "semantic":
            frag = truncate_semantic(masked, anchor, params.window_sentences, segmenter)
        else:
            frag = truncate_absolute(masked, anchor, params.before, params.after)
        fragments.append(clean_text(frag))

    ref_title = next((r.title for r in entry.references if r.ref_id == target), "")
    prompt = section_prompt(instances[0].section_heading) if instances else ""
    return ContextRecord(
        paper_id=entry.paper_id,
        ref_id=target,
        paper_title=clean_text(entry.title or doc.title),
        ref_title=clean_text(ref_title),
        section_prompt=prompt,
        context=" ".join(fragments),
        truncation_mode=mode,
        label=_label(entry, target),
        instance_count=len(instances),
    )


def paper_records(
    doc: TeiDocument,
    link: Mapping[str, str],
    entry: DatasetEntry,
    mode: Mode,
    params: ContextParams | None = None,
) -> list[ContextRecord]:
    return [assemble_context(doc, link, entry, r.ref_id, mode, params) for r in entry.references]


def format_sequence_records(records: Iterable[ContextRecord]) -> str:
    lines = []
    for rec in sorted(records, key=lambda r: (r.paper_id, r.ref_id)):
        fields = (rec.paper_id, rec.ref_id, rec.label_field, rec.input_text)
        lines.append("\t".join(f.replace("\t", " ").replace("\n", " ") for f in fields))
    return "".join(line + "\n" for line in lines)


def emit_sequence_records(records: Iterable[ContextRecord], out: str | Path) -> int:
    """Write one tab-separated line per record (paper_id, ref_id, label, input_text)."""
    records = list(records)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_sequence_records(records))
    return len(records)


def read_sequence_records(path: str | Path) -> list[tuple[str, str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                rows.append(tuple(line.split("\t", 3)))
    return rows
