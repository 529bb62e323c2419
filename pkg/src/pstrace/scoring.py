"""Score tables, ensembling, train/val splitting and average precision."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Literal, Mapping, Sequence

from .corpus import DatasetEntry


class ScoreTableError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreTable:
    tag: str
    scores: Mapping[str, Mapping[str, float]]

    def __post_init__(self) -> None:
        for pid, refs in self.scores.items():
            for rid, s in refs.items():
                if not isinstance(s, (int, float)) or not math.isfinite(s) or not 0.0 <= s <= 1.0:
                    raise ScoreTableError(f"{pid}/{rid}: score {s!r} is not a finite value in [0, 1]")

    def keys(self) -> set[tuple[str, str]]:
        return {(p, r) for p, refs in self.scores.items() for r in refs}

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "scores": {p: {r: float(self.scores[p][r]) for r in sorted(self.scores[p])} for p in sorted(self.scores)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    def restrict(self, paper_ids) -> "ScoreTable":
        keep = set(paper_ids)
        return ScoreTable(self.tag, {p: dict(r) for p, r in self.scores.items() if p in keep})


def write_score_table(table: ScoreTable, path: str | Path) -> None:
    Path(path).write_text(table.dumps() + "\n", encoding="utf-8")


def import_score_table(path: str | Path, tag: str | None = None) -> ScoreTable:
    """Load ``{"tag": ..., "scores": {paper: {ref: score}}}``; duplicate keys are rejected."""

    def no_duplicates(pairs):
        seen = {}
        for k, v in pairs:
            if k in seen:
                raise ScoreTableError(f"{path}: duplicate key {k!r}")
            seen[k] = v
        return seen

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"), object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as exc:
        raise ScoreTableError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("scores"), dict):
        raise ScoreTableError(f"{path}: expected an object with a 'scores' mapping")
    scores = {}
    for pid, refs in data["scores"].items():
        if not isinstance(refs, dict):
            raise ScoreTableError(f"{path}: scores[{pid!r}] must map ref_id to score")
        for rid, s in refs.items():
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not math.isfinite(s) or not 0 <= s <= 1:
                raise ScoreTableError(f"{path}: scores[{pid!r}][{rid!r}] = {s!r} outside [0, 1]")
        scores[pid] = {rid: float(s) for rid, s in refs.items()}
    return ScoreTable(tag or data.get("tag") or Path(path).stem, scores)


def check_coverage(table: ScoreTable, entries: Sequence[DatasetEntry]) -> None:
    """Covered papers must score exactly their manifest references."""
    by_id = {e.paper_id: e for e in entries}
    for pid, refs in table.scores.items():
        if pid not in by_id:
            raise ScoreTableError(f"table {table.tag!r}: unknown paper {pid!r}")
        expected = set(by_id[pid].ref_ids)
        if set(refs) != expected:
            raise ScoreTableError(
                f"table {table.tag!r}: paper {pid!r} refs differ from manifest: {sorted(set(refs) ^ expected)}"
            )


# --- metrics --------------------------------------------------------------------


def rank_refs(scores: Sequence[tuple[str, float]]) -> list[str]:
    """Descending score, ties by ascending ref_id."""
    return [rid for rid, _ in sorted(scores, key=lambda x: (-x[1], x[0]))]


def average_precision(scores: Sequence[tuple[str, float]], positives) -> float:
    """Mean over positives of precision at the positive's rank.

    Accumulated as an exact rational so the result is the correctly rounded value.
    """
    positives = set(positives)
    if not positives:
        raise MetricError("average precision is undefined without positives")
    ranked = rank_refs(scores)
    missing = positives - set(ranked)
    if missing:
        raise MetricError(f"positives not scored: {sorted(missing)}")
    hits = 0
    total = Fraction(0)
    for k, rid in enumerate(ranked, start=1):
        if rid in positives:
            hits += 1
            total += Fraction(hits, k)
    return float(total / len(positives))


def per_paper_ap(table: ScoreTable, labels: Mapping[str, set]) -> dict[str, float]:
    out = {}
    for pid in sorted(labels):
        pos = labels[pid]
        if not pos:
            continue
        if pid not in table.scores:
            raise MetricError(f"table {table.tag!r} does not cover labeled paper {pid!r}")
        out[pid] = average_precision(list(table.scores[pid].items()), pos)
    return out


def map_metric(table: ScoreTable, labels: Mapping[str, set]) -> float:
    """Mean AP over labeled papers with at least one positive."""
    aps = per_paper_ap(table, labels)
    if not aps:
        raise MetricError("no labeled paper has a positive reference")
    return math.fsum(aps.values()) / len(aps)


def labels_of(entries: Sequence[DatasetEntry], paper_ids=None) -> dict[str, set]:
    keep = None if paper_ids is None else set(paper_ids)
    return {
        e.paper_id: set(e.source_labels)
        for e in entries
        if e.labels_present and (keep is None or e.paper_id in keep)
    }


# --- ensembling -----------------------------------------------------------------


def _rank_normalize(refs: Mapping[str, float]) -> dict[str, float]:
    """Average-rank transform to [0, 1]; highest score -> 1."""
    items = sorted(refs.items(), key=lambda x: x[1])
    n = len(items)
    out: dict[str, float] = {}
    i = 0
    while i < n:
        j = i
        while j + 1 < n and items[j + 1][1] == items[i][1]:
            j += 1
        rank = (i + j) / 2
        for k in range(i, j + 1):
            out[items[k][0]] = rank / (n - 1) if n > 1 else 0.5
        i = j + 1
    return out


def ensemble(
    tables: Sequence[ScoreTable],
    weights: Sequence[float] | None = None,
    method: Literal["mean", "rank"] = "mean",
) -> ScoreTable:
    """Weighted arithmetic mean of aligned tables (optionally of per-paper ranks)."""
    if not tables:
        raise ScoreTableError("ensemble needs at least one table")
    weights = [1.0] * len(tables) if weights is None else [float(w) for w in weights]
    if len(weights) != len(tables):
        raise ScoreTableError("one weight per table is required")
    if any(w < 0 or not math.isfinite(w) for w in weights) or sum(weights) <= 0:
        raise ScoreTableError("weights must be non-negative with a positive sum")
    keys = tables[0].keys()
    for t in tables[1:]:
        diff = keys ^ t.keys()
        if diff:
            raise ScoreTableError(
                f"tables {tables[0].tag!r} and {t.tag!r} cover different keys: {sorted(diff)[:20]}"
            )
    if method == "rank":
        sources = [{p: _rank_normalize(r) for p, r in t.scores.items()} for t in tables]
    elif method == "mean":
        sources = [t.scores for t in tables]
    else:
        raise ScoreTableError(f"unknown ensemble method {method!r}")

    wsum = math.fsum(weights)
    out: dict[str, dict[str, float]] = {}
    for pid in sorted(tables[0].scores):
        out[pid] = {}
        for rid in sorted(tables[0].scores[pid]):
            s = math.fsum(w * src[pid][rid] for w, src in zip(weights, sources)) / wsum
            out[pid][rid] = min(1.0, max(0.0, s))
    return ScoreTable("+".join(t.tag for t in tables), out)


# --- splitting ------------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset[str]
    val: frozenset[str]
    seed: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": sorted(self.train), "val": sorted(self.val)}


def split_train_val(entries: Sequence[DatasetEntry], ratio: float = 2 / 3, seed: int = 0) -> SplitAssignment:
    """Seeded shuffle of labeled papers, then a prefix of ``round(ratio * N)`` for training."""
    ids = [e.paper_id for e in entries if e.labels_present]
    if len(ids) < 2:
        raise ValueError(f"need at least 2 labeled papers to split, got {len(ids)}")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    random.Random(seed).shuffle(ids)
    k = math.floor(ratio * len(ids) + 0.5)
    return SplitAssignment(frozenset(ids[:k]), frozenset(ids[k:]), seed)
