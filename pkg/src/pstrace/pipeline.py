"""Run configuration and the batch stages behind the CLI subcommands.

Work directory layout (all paths relative to ``work_dir``)::

    records.semantic.tsv  records.absolute.tsv  extract_report.json
    graphs/<paper>.json   graph_report.json
    split.json  checkpoint.json  loss_trace.csv  loss_curve.png  train_report.json
    scores.gcn.val.json   scores.gcn.<split>.json
    eval/report.tsv  eval/report.json  eval/map.png  eval/per_paper_ap.png
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

from . import plots
from .context import MODES, ContextParams, emit_sequence_records, paper_records
from .corpus import DatasetEntry, Linkage, TeiDocument, link_bibliography, load_manifest, parse_tei
from .embed import EmbeddingTable, embed_hashed_tfidf, load_external_embeddings
from .errors import ConfigError
from .gcn import (
    GraphBatch,
    ModelConfig,
    load_checkpoint,
    normalize_adjacency,
    predict_scores,
    save_checkpoint,
    train_graphs,
    write_loss_trace,
)
from .graph import ChunkingConfig, GraphConfig, PaperGraph, build_graph, chunk_body, load_graph, save_graph, to_adjacency
from .scoring import (
    ScoreTable,
    SplitAssignment,
    check_coverage,
    ensemble,
    import_score_table,
    labels_of,
    map_metric,
    per_paper_ap,
    split_train_val,
    write_score_table,
)

log = logging.getLogger(__name__)
T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "builtin"  # or "external"
    dim: int = 256
    seed: int = 0
    path: str | None = None


@dataclass(frozen=True)
class GcnSettings:
    hidden: int = 64
    num_layers: int = 2
    epochs: int = 100
    learning_rate: float = 0.1
    seed: int = 0
    self_loops: bool = True


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    xml_dir: Path
    work_dir: Path
    context: ContextParams = field(default_factory=ContextParams)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    gcn: GcnSettings = field(default_factory=GcnSettings)
    split_ratio: float = 2 / 3
    split_seed: int = 0
    ensemble_weights: tuple[float, ...] | None = None
    ensemble_method: str = "mean"
    workers: int = 1

    def model_config(self, input_dim: int) -> ModelConfig:
        g = self.gcn
        return ModelConfig.build(
            input_dim, g.hidden, g.num_layers,
            epochs=g.epochs, learning_rate=g.learning_rate, seed=g.seed, self_loops=g.self_loops,
        )


_SECTIONS: dict[str, type] = {
    "context": ContextParams,
    "chunking": ChunkingConfig,
    "graph": GraphConfig,
    "embedder": EmbedderConfig,
    "gcn": GcnSettings,
}


def _section(cls: type, raw: Any, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    kw = dict(raw)
    if "abbreviations" in kw:
        kw["abbreviations"] = tuple(kw["abbreviations"])
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


def config_from_dict(data: dict, base: Path = Path(".")) -> RunConfig:
    data = dict(data)
    paths = data.pop("paths", {})
    missing = {"manifest", "xml_dir", "work_dir"} - set(paths)
    if missing:
        raise ConfigError(f"config 'paths' lacks {sorted(missing)}")
    resolve = lambda p: (base / p) if not Path(p).is_absolute() else Path(p)
    kw: dict[str, Any] = {k: resolve(paths[k]) for k in ("manifest", "xml_dir", "work_dir")}
    for name, cls in _SECTIONS.items():
        if name in data:
            kw[name] = _section(cls, data.pop(name), name)
    split = data.pop("split", {})
    kw["split_ratio"] = float(split.get("ratio", 2 / 3))
    kw["split_seed"] = int(split.get("seed", 0))
    ens = data.pop("ensemble", {})
    if ens.get("weights") is not None:
        kw["ensemble_weights"] = tuple(float(w) for w in ens["weights"])
    kw["ensemble_method"] = ens.get("method", "mean")
    kw["workers"] = int(data.pop("workers", 1))
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    cfg = RunConfig(**kw)
    if cfg.embedder.kind == "external" and cfg.embedder.path:
        cfg = replace(cfg, embedder=replace(cfg.embedder, path=str(resolve(cfg.embedder.path))))
    if cfg.embedder.kind not in ("builtin", "external"):
        raise ConfigError(f"embedder.kind must be 'builtin' or 'external', got {cfg.embedder.kind!r}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a JSON run config; ``overrides`` maps dotted keys (``gcn.epochs``) to values."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: RunConfig) -> dict:
    d = {
        "paths": {"manifest": str(cfg.manifest), "xml_dir": str(cfg.xml_dir), "work_dir": str(cfg.work_dir)},
        "split": {"ratio": cfg.split_ratio, "seed": cfg.split_seed},
        "ensemble": {"weights": list(cfg.ensemble_weights) if cfg.ensemble_weights else None, "method": cfg.ensemble_method},
        "workers": cfg.workers,
    }
    for name in _SECTIONS:
        section = asdict(getattr(cfg, name))
        if "abbreviations" in section:
            section["abbreviations"] = list(section["abbreviations"])
        d[name] = section
    return d


# --- shared helpers -----------------------------------------------------------------


def _fan_out(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def safe_name(paper_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", paper_id)


def find_xml(xml_dir: Path, paper_id: str) -> Path | None:
    for name in (paper_id, safe_name(paper_id)):
        for suffix in (".xml", ".tei.xml", ".grobid.tei.xml"):
            p = xml_dir / f"{name}{suffix}"
            if p.is_file():
                return p
    return None


def _require_inputs(cfg: RunConfig) -> None:
    if not cfg.manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {cfg.manifest}")
    if not cfg.xml_dir.is_dir():
        raise FileNotFoundError(f"xml_dir not found: {cfg.xml_dir}")
    cfg.work_dir.mkdir(parents=True, exist_ok=True)


@dataclass
class ParsedPaper:
    entry: DatasetEntry
    doc: TeiDocument | None
    linkage: Linkage | None
    warning: str | None = None


def _parse_one(cfg: RunConfig, entry: DatasetEntry) -> ParsedPaper:
    path = find_xml(cfg.xml_dir, entry.paper_id)
    if path is None:
        return ParsedPaper(entry, None, None, f"no XML file for paper {entry.paper_id!r}; skipped")
    doc = parse_tei(path.read_bytes())
    return ParsedPaper(entry, doc, link_bibliography(doc, entry))


def parse_corpus(cfg: RunConfig, entries: Sequence[DatasetEntry]) -> list[ParsedPaper]:
    parsed = _fan_out(lambda e: _parse_one(cfg, e), list(entries), cfg.workers)
    for p in parsed:
        if p.warning:
            log.warning(p.warning)
    return parsed


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


# --- stages -----------------------------------------------------------------------


def run_extract(cfg: RunConfig) -> dict:
    """Write one sequence-record file per truncation mode plus an extraction report."""
    _require_inputs(cfg)
    entries = load_manifest(cfg.manifest)
    parsed = parse_corpus(cfg, entries)

    report: dict[str, Any] = {"papers": [], "skipped": [], "totals": {}}
    records = {mode: [] for mode in MODES}
    for p in parsed:
        if p.doc is None:
            report["skipped"].append({"paper_id": p.entry.paper_id, "reason": p.warning})
            continue
        for mode in MODES:
            records[mode].extend(paper_records(p.doc, p.linkage.mapping, p.entry, mode, cfg.context))
        sem = [r for r in records["semantic"] if r.paper_id == p.entry.paper_id]
        report["papers"].append({
            "paper_id": p.entry.paper_id,
            "markers": p.doc.marker_count,
            "unresolved_markers": p.doc.unresolved_markers,
            "bibliography": len(p.doc.bibliography),
            "linked": len(p.linkage.mapping),
            "unmatched_bib_keys": list(p.linkage.unmatched),
            "ties": [list(t) for t in p.linkage.ties],
            "instances": sum(r.instance_count for r in sem),
            "empty_records": sum(r.empty for r in sem),
        })

    outputs = {}
    for mode in MODES:
        out = cfg.work_dir / f"records.{mode}.tsv"
        outputs[mode] = emit_sequence_records(records[mode], out)
    papers = report["papers"]
    report["totals"] = {
        "papers": len(papers),
        "skipped": len(report["skipped"]),
        "markers": sum(x["markers"] for x in papers),
        "unresolved_markers": sum(x["unresolved_markers"] for x in papers),
        "instances": sum(x["instances"] for x in papers),
        "unmatched_bib_keys": sum(len(x["unmatched_bib_keys"]) for x in papers),
        "records": outputs,
    }
    _write_json(cfg.work_dir / "extract_report.json", report)
    return report


def build_graphs(cfg: RunConfig, parsed: Iterable[ParsedPaper]) -> list[PaperGraph]:
    def one(p: ParsedPaper) -> PaperGraph:
        chunks = chunk_body(p.doc, cfg.chunking)
        return build_graph(p.doc, p.linkage.mapping, p.entry, chunks, cfg.graph)

    return _fan_out(one, [p for p in parsed if p.doc is not None], cfg.workers)


def run_build_graph(cfg: RunConfig) -> list[PaperGraph]:
    _require_inputs(cfg)
    entries = load_manifest(cfg.manifest)
    parsed = parse_corpus(cfg, entries)
    graphs = build_graphs(cfg, parsed)
    gdir = cfg.work_dir / "graphs"
    gdir.mkdir(exist_ok=True)
    for g in graphs:
        save_graph(g, gdir / f"{safe_name(g.paper_id)}.json")
    _write_json(cfg.work_dir / "graph_report.json", {
        "papers": [
            {
                "paper_id": g.paper_id,
                "nodes": g.n,
                "edges": len(g.edges),
                "chunks": sum(n.kind == "chunk" for n in g.nodes),
                "references": len(g.reference_mask),
            }
            for g in graphs
        ],
        "skipped": [p.entry.paper_id for p in parsed if p.doc is None],
    })
    return graphs


def load_graphs(cfg: RunConfig, entries: Sequence[DatasetEntry]) -> list[PaperGraph]:
    """Graphs from ``work_dir/graphs`` in manifest order, building them first if absent."""
    gdir = cfg.work_dir / "graphs"
    if not gdir.is_dir():
        return run_build_graph(cfg)
    graphs = []
    for e in entries:
        p = gdir / f"{safe_name(e.paper_id)}.json"
        if p.is_file():
            graphs.append(load_graph(p))
    return graphs


def embed_graphs(cfg: RunConfig, graphs: Sequence[PaperGraph]) -> EmbeddingTable:
    e = cfg.embedder
    if e.kind == "external":
        if not e.path:
            raise ConfigError("embedder.kind 'external' needs embedder.path")
        return load_external_embeddings(e.path, e.dim)
    texts = [n.text for g in graphs for n in g.nodes]
    vectors = embed_hashed_tfidf(texts, e.dim, e.seed)
    table = EmbeddingTable(e.dim)
    row = 0
    for g in graphs:
        for n in g.nodes:
            table.vectors[(g.paper_id, n.index)] = vectors[row]
            row += 1
    return table


def graph_batch(graph: PaperGraph, features: np.ndarray, entry: DatasetEntry, self_loops: bool) -> GraphBatch:
    labels = np.zeros(graph.n)
    for i in graph.reference_mask:
        labels[i] = 1.0 if graph.nodes[i].ref_id in entry.source_labels else 0.0
    return GraphBatch(
        normalize_adjacency(to_adjacency(graph), self_loops),
        features,
        labels,
        np.asarray(graph.reference_mask, dtype=np.int64),
    )


def run_train_gcn(cfg: RunConfig) -> dict:
    """Build/load graphs, embed, split, train, and score the validation papers."""
    _require_inputs(cfg)
    entries = load_manifest(cfg.manifest)
    by_id = {e.paper_id: e for e in entries}
    graphs = load_graphs(cfg, entries)
    table = embed_graphs(cfg, graphs)
    split = split_train_val(entries, cfg.split_ratio, cfg.split_seed)
    _write_json(cfg.work_dir / "split.json", split.to_dict())

    model_cfg = cfg.model_config(table.dim)
    batches = [
        graph_batch(g, table.matrix(g.paper_id, g.n), by_id[g.paper_id], model_cfg.self_loops)
        for g in graphs
        if g.paper_id in split.train
    ]
    result = train_graphs(model_cfg, batches)
    save_checkpoint(result.model, cfg.work_dir / "checkpoint.json")
    write_loss_trace(result.loss_trace, cfg.work_dir / "loss_trace.csv")
    if result.loss_trace:
        plots.plot_loss_curve(result.loss_trace, cfg.work_dir / "loss_curve.png")

    val_graphs = [(g, table.matrix(g.paper_id, g.n)) for g in graphs if g.paper_id in split.val]
    val_scores = predict_scores(result.model, val_graphs, tag="gcn")
    write_score_table(val_scores, cfg.work_dir / "scores.gcn.val.json")

    val_labels = {p: s for p, s in labels_of(entries, split.val).items() if p in val_scores.scores}
    val_map = map_metric(val_scores, val_labels) if any(val_labels.values()) else None
    report = {
        "train_papers": len(split.train),
        "val_papers": len(split.val),
        "epochs": model_cfg.epochs,
        "final_loss": result.loss_trace[-1] if result.loss_trace else None,
        "val_map": val_map,
        "layer_dims": list(model_cfg.layer_dims),
        "embedder": asdict(cfg.embedder),
    }
    _write_json(cfg.work_dir / "train_report.json", report)
    return report


def _split_papers(cfg: RunConfig, entries: Sequence[DatasetEntry], split: str) -> set[str]:
    if split == "all":
        return {e.paper_id for e in entries}
    path = cfg.work_dir / "split.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} missing; run train-gcn first or use --split all")
    data = json.loads(path.read_text(encoding="utf-8"))
    if split not in ("train", "val"):
        raise ConfigError(f"unknown split {split!r}")
    return set(data[split])


def run_score(cfg: RunConfig, split: str = "all", out: Path | None = None) -> ScoreTable:
    _require_inputs(cfg)
    entries = load_manifest(cfg.manifest)
    keep = _split_papers(cfg, entries, split)
    model = load_checkpoint(cfg.work_dir / "checkpoint.json")
    graphs = load_graphs(cfg, entries)
    table = embed_graphs(cfg, graphs)
    scores = predict_scores(model, [(g, table.matrix(g.paper_id, g.n)) for g in graphs if g.paper_id in keep])
    write_score_table(scores, out or cfg.work_dir / f"scores.gcn.{split}.json")
    return scores


def run_ensemble(paths: Sequence[Path], out: Path, weights=None, method: str = "mean") -> ScoreTable:
    tables = [import_score_table(p) for p in paths]
    result = ensemble(tables, weights, method)
    write_score_table(result, out)
    return result


def random_table(like: ScoreTable, seed: int) -> ScoreTable:
    rng = random.Random(seed)
    return ScoreTable(
        "random",
        {p: {r: rng.random() for r in sorted(refs)} for p, refs in sorted(like.scores.items())},
    )


def evaluate(
    tables: Sequence[ScoreTable],
    entries: Sequence[DatasetEntry],
    papers: set[str] | None = None,
    with_ensemble: bool = False,
    weights=None,
    method: str = "mean",
    random_baseline: int = 0,
) -> dict:
    """MAP per table (and the ensemble), restricted to ``papers`` when given."""
    labels = labels_of(entries, papers)
    for t in tables:
        check_coverage(t, entries)
    rows: list[tuple[str, ScoreTable]] = [(t.tag, t) for t in tables]
    if with_ensemble and len(tables) > 1:
        ens = ensemble(tables, weights, method)
        rows.append((ens.tag, ens))
    result: dict[str, Any] = {"papers": sum(1 for v in labels.values() if v), "rows": []}
    for name, t in rows:
        aps = per_paper_ap(t, labels)
        result["rows"].append({"name": name, "map": map_metric(t, labels), "per_paper": aps})
    if random_baseline:
        maps = [map_metric(random_table(tables[0], s), labels) for s in range(random_baseline)]
        result["rows"].append({"name": f"random(n={random_baseline})", "map": float(np.mean(maps)), "per_paper": {}})
    return result


def run_eval(
    cfg: RunConfig,
    table_paths: Sequence[Path],
    split: str = "all",
    with_ensemble: bool = False,
    random_baseline: int = 0,
    out_dir: Path | None = None,
) -> dict:
    entries = load_manifest(cfg.manifest)
    papers = _split_papers(cfg, entries, split)
    tables = [import_score_table(p) for p in table_paths]
    result = evaluate(
        tables, entries, papers, with_ensemble, cfg.ensemble_weights, cfg.ensemble_method, random_baseline
    )
    out_dir = out_dir or cfg.work_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", result)
    lines = ["name\tmap\tpapers"] + [f"{r['name']}\t{r['map']:.6f}\t{result['papers']}" for r in result["rows"]]
    (out_dir / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    plots.plot_map_bars({r["name"]: r["map"] for r in result["rows"]}, out_dir / "map.png")
    plots.plot_per_paper_ap({r["name"]: r["per_paper"] for r in result["rows"] if r["per_paper"]}, out_dir / "per_paper_ap.png")
    return result


def run_all(cfg: RunConfig, random_baseline: int = 20) -> dict:
    """extract -> build-graph -> train-gcn -> score (val) -> eval (val)."""
    run_extract(cfg)
    run_build_graph(cfg)
    run_train_gcn(cfg)
    run_score(cfg, split="val")
    return run_eval(cfg, [cfg.work_dir / "scores.gcn.val.json"], split="val", random_baseline=random_baseline)
