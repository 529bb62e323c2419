"""Synthetic Grobid-style corpora with a planted source signal.

Source references are cited in the method section, in sentences that reuse
their title words and a small set of "builds on" cue phrases. Other references
are cited once in introduction or related-work sentences built from filler
vocabulary. Used by the demo command and the end-to-end tests.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from xml.sax.saxutils import escape

from .corpus import DatasetEntry, Reference, dump_manifest

TOPIC_WORDS = (
    "graph neural network attention transformer embedding retrieval citation ranking "
    "contrastive sparse kernel bayesian variational diffusion segmentation parsing "
    "reinforcement policy gradient clustering spectral tensor hashing recurrent memory "
    "adversarial robust federated privacy compression pruning distillation quantized "
    "multilingual summarization translation dialogue knowledge reasoning causal "
    "temporal spatial hierarchical probabilistic generative discriminative metric"
).split()

FILLER = (
    "prior studies have examined related settings in several domains. "
    "other authors report results on different benchmarks. "
    "this line of work has a long history in the community. "
    "several surveys discuss alternative evaluation protocols. "
    "earlier systems relied on manual features and heuristics. "
    "some approaches consider broader application scenarios."
).split(". ")

CUES = (
    "Our method directly extends the {t} framework introduced by",
    "We build directly on the {t} approach of",
    "Our core model adopts and extends the {t} technique proposed by",
    "The key idea of this work is inspired by the {t} design of",
)

WEAK = (
    "Related efforts include",
    "See also",
    "Other work on this topic includes",
    "A different perspective appears in",
)


def _title(rng: random.Random, k: int) -> str:
    return " ".join(rng.sample(TOPIC_WORDS, k))


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def _ref(key: str, n: int) -> str:
    return f'<ref type="bibr" target="#{key}">[{n}]</ref>'


def make_paper(rng: random.Random, paper_id: str, n_refs: int, n_sources: int) -> tuple[DatasetEntry, bytes]:
    title = _cap(_title(rng, 5))
    refs = [Reference(f"{paper_id}-r{i}", _cap(_title(rng, 4))) for i in range(n_refs)]
    sources = set(rng.sample([r.ref_id for r in refs], n_sources))
    bib_order = list(range(n_refs))
    rng.shuffle(bib_order)
    key_of = {refs[j].ref_id: f"b{pos}" for pos, j in enumerate(bib_order)}
    num_of = {rid: int(k[1:]) + 1 for rid, k in key_of.items()}

    intro, method = [], []
    for r in refs:
        tag = _ref(key_of[r.ref_id], num_of[r.ref_id])
        if r.ref_id in sources:
            words = r.title.lower().split()
            for _ in range(2):
                cue = rng.choice(CUES).format(t=" ".join(rng.sample(words, 3)))
                method.append(f"{cue} {tag}.")
        else:
            if rng.random() < 0.8:
                filler = _cap(rng.choice(FILLER).strip().rstrip("."))
                intro.append(f"{filler}, for example in {escape(' '.join(rng.sample(TOPIC_WORDS, 2)))} {tag}.")
            if rng.random() < 0.2:
                method.append(f"{rng.choice(WEAK)} {tag}.")
    rng.shuffle(intro)
    rng.shuffle(method)
    intro.insert(0, f"We study {escape(title.lower())} in this paper.")
    intro.append('As shown in <ref type="figure" target="#fig_0">Figure 1</ref>, the setting is broad.')
    method.append(f"Some claims remain unreferenced <ref type=\"bibr\">[?]</ref>.")

    def paras(sentences: list[str]) -> str:
        out = []
        for i in range(0, len(sentences), 3):
            out.append("<p>" + "\n".join(sentences[i:i + 3]) + "</p>")
        return "\n".join(out)

    bib = []
    for pos, j in enumerate(bib_order):
        t = refs[j].title
        raw = t.upper() if pos % 3 == 0 else t + "."
        bib.append(
            f'<biblStruct xml:id="b{pos}"><analytic><title level="a" type="main">{escape(raw)}</title>'
            f"</analytic><monogr><title level=\"j\">Journal of Things</title></monogr></biblStruct>"
        )

    xml = f"""<?xml version="1.0" encoding="UTF-8"?>
<TEI xmlns="http://www.tei-c.org/ns/1.0">
<teiHeader><fileDesc><titleStmt><title level="a" type="main">{escape(title)}</title></titleStmt></fileDesc>
<profileDesc><abstract><div><p>This paper studies {escape(title.lower())}. We report experiments.</p></div></abstract></profileDesc>
</teiHeader>
<text><body>
<div><head n="1">Introduction</head>
{paras(intro)}
</div>
<div><head n="2">Method</head>
{paras(method)}
</div>
</body>
<back><div type="references"><listBibl>
{chr(10).join(bib)}
</listBibl></div></back>
</text></TEI>
"""
    entry = DatasetEntry(paper_id, title, tuple(refs), frozenset(sources), True)
    return entry, xml.encode("utf-8")


def make_corpus(n_papers: int = 10, n_refs: int = 8, n_sources: int = 2, seed: int = 0):
    rng = random.Random(seed)
    entries, xmls = [], {}
    for i in range(n_papers):
        entry, xml = make_paper(rng, f"p{i:03d}", n_refs, n_sources)
        entries.append(entry)
        xmls[entry.paper_id] = xml
    return entries, xmls


def write_corpus(root: str | Path, n_papers: int = 10, n_refs: int = 8, n_sources: int = 2, seed: int = 0) -> Path:
    """Write ``manifest.json``, ``xml/<paper_id>.xml`` and a ready-to-run ``config.json``."""
    root = Path(root)
    (root / "xml").mkdir(parents=True, exist_ok=True)
    entries, xmls = make_corpus(n_papers, n_refs, n_sources, seed)
    (root / "manifest.json").write_text(dump_manifest(entries), encoding="utf-8")
    for pid, xml in xmls.items():
        (root / "xml" / f"{pid}.xml").write_bytes(xml)
    config = {"paths": {"manifest": "manifest.json", "xml_dir": "xml", "work_dir": "work"}}
    (root / "config.json").write_text(json.dumps(config, indent=1), encoding="utf-8")
    return root / "config.json"
