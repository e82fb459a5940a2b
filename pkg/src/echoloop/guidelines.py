"""Guideline passage store: chunking, lexical index, search, persistence.

Scoring is BM25 (k1=1.2, b=0.75) over lowercase word tokens with one
addition: a passage containing the whole normalized query verbatim receives
a bonus larger than any achievable term-sum, so exact quotes always win.
An optional extra scorer can be registered for hybrid ranking, but the
shipped build is lexical-only and fully offline.
"""
from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .domain import KIND_LABELS, MeasurementKind
from .errors import ConfigError, EmptyCorpus, EmptyQuery, InvalidChunking

K1 = 1.2
B = 0.75
DEFAULT_CHUNK_SIZE = 512
DEFAULT_CHUNK_OVERLAP = 128
DEFAULT_TOP_K = 5
INDEX_MAGIC = b"ECHOGLX1\n"

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def normalize_phrase(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class GuidelineDoc:
    doc_id: str
    title: str
    body: str


@dataclass(frozen=True)
class Passage:
    passage_id: str
    doc_id: str
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class SearchHit:
    passage: Passage
    score: float
    rank: int


def chunk_document(doc: GuidelineDoc, size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_CHUNK_OVERLAP) -> list[Passage]:
    """Slice a document body into covering windows.

    Consecutive passages share exactly `overlap` characters except possibly
    the last, and every character of the body lands in some passage.
    """
    if size <= 0 or overlap < 0 or overlap >= size:
        raise InvalidChunking(f"need 0 <= overlap < size, got size={size} overlap={overlap}")
    body = doc.body
    if not body:
        return []
    passages: list[Passage] = []
    pos = 0
    while True:
        end = min(pos + size, len(body))
        passages.append(Passage(f"{doc.doc_id}:{pos}", doc.doc_id, pos, end, body[pos:end]))
        if end == len(body):
            return passages
        pos += size - overlap


ExtraScorer = Callable[[str, Sequence[Passage]], Sequence[float]]


class GuidelineIndex:
    """Immutable after build; share freely across sessions."""

    def __init__(self, passages: Sequence[Passage], chunk_size: int, chunk_overlap: int) -> None:
        if not passages:
            raise EmptyCorpus("index needs at least one passage")
        self.passages = tuple(passages)
        self.chunk_size = chunk_size
        self.chunk_overlap = chunk_overlap
        self._extra_scorer: ExtraScorer | None = None

        self._tokens: list[list[str]] = [tokenize(p.text) for p in self.passages]
        self._lengths = [len(toks) for toks in self._tokens]
        self._avg_len = max(sum(self._lengths) / len(self._lengths), 1e-9)
        self._normalized = [normalize_phrase(p.text) for p in self.passages]
        self._postings: dict[str, dict[int, int]] = {}
        for idx, toks in enumerate(self._tokens):
            for tok in toks:
                self._postings.setdefault(tok, {})
                self._postings[tok][idx] = self._postings[tok].get(idx, 0) + 1

    # -- scoring ------------------------------------------------------------

    def _idf(self, term: str) -> float:
        import math

        df = len(self._postings.get(term, {}))
        n = len(self.passages)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def _bm25(self, terms: Sequence[str], idx: int) -> float:
        score = 0.0
        length_norm = K1 * (1.0 - B + B * self._lengths[idx] / self._avg_len)
        for term in terms:
            tf = self._postings.get(term, {}).get(idx, 0)
            if tf:
                score += self._idf(term) * tf * (K1 + 1.0) / (tf + length_norm)
        return score

    def _phrase_bonus(self, terms: Sequence[str]) -> float:
        # strictly exceeds the largest possible BM25 term-sum for the query
        return 1.0 + sum(self._idf(t) * (K1 + 1.0) for t in set(terms))

    def set_extra_scorer(self, scorer: ExtraScorer | None) -> None:
        """Register a hybrid scorer whose output is added to lexical scores."""
        self._extra_scorer = scorer

    def search(self, query: str, k: int = DEFAULT_TOP_K) -> list[SearchHit]:
        """Top-k passages by score, ties broken by (doc_id, start)."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        terms = tokenize(query)
        if not terms:
            raise EmptyQuery("query has no word tokens")

        phrase = normalize_phrase(query)
        bonus = self._phrase_bonus(terms)
        scores: dict[int, float] = {}
        for term in set(terms):
            for idx in self._postings.get(term, {}):
                scores.setdefault(idx, 0.0)
        for idx in range(len(self.passages)):
            if phrase and phrase in self._normalized[idx]:
                scores[idx] = scores.get(idx, 0.0) + bonus
        for idx in list(scores):
            scores[idx] += self._bm25(terms, idx)

        if self._extra_scorer is not None:
            extra = self._extra_scorer(query, self.passages)
            if len(extra) != len(self.passages):
                raise ConfigError("extra scorer must return one score per passage")
            for idx, value in enumerate(extra):
                if value:
                    scores[idx] = scores.get(idx, 0.0) + max(float(value), 0.0)

        ranked = sorted(
            ((idx, score) for idx, score in scores.items() if score > 0.0),
            key=lambda item: (-item[1], self.passages[item[0]].doc_id, self.passages[item[0]].start),
        )
        return [SearchHit(self.passages[idx], score, rank) for rank, (idx, score) in enumerate(ranked[:k], start=1)]

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        doc = {
            "version": 1,
            "chunk_size": self.chunk_size,
            "chunk_overlap": self.chunk_overlap,
            "passages": [
                {"passage_id": p.passage_id, "doc_id": p.doc_id, "start": p.start, "end": p.end, "text": p.text}
                for p in self.passages
            ],
        }
        blob = INDEX_MAGIC + zlib.compress(json.dumps(doc, sort_keys=True).encode("utf-8"))
        Path(path).write_bytes(blob)

    @classmethod
    def load(cls, path: str | Path) -> "GuidelineIndex":
        blob = Path(path).read_bytes()
        if not blob.startswith(INDEX_MAGIC):
            raise ConfigError(f"{path}: not a guideline index file")
        doc = json.loads(zlib.decompress(blob[len(INDEX_MAGIC):]))
        passages = [
            Passage(p["passage_id"], p["doc_id"], p["start"], p["end"], p["text"])
            for p in doc["passages"]
        ]
        return cls(passages, doc["chunk_size"], doc["chunk_overlap"])


def build_index(
    docs: Iterable[GuidelineDoc],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP,
) -> GuidelineIndex:
    docs = list(docs)
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise ConfigError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    passages: list[Passage] = []
    for doc in docs:
        passages.extend(chunk_document(doc, chunk_size, chunk_overlap))
    if not passages:
        raise EmptyCorpus("no passages produced from corpus")
    return GuidelineIndex(passages, chunk_size, chunk_overlap)


# ---------------------------------------------------------------------------
# shipped reference corpus


@dataclass(frozen=True)
class ReferenceRange:
    kind: MeasurementKind
    lower_cm: float
    upper_cm: float
    abnormal_term: str  # adjective used when the value exceeds upper_cm


REFERENCE_RANGES: dict[MeasurementKind, ReferenceRange] = {
    MeasurementKind.IVS: ReferenceRange(MeasurementKind.IVS, 0.6, 1.1, "thickened"),
    MeasurementKind.LVPW: ReferenceRange(MeasurementKind.LVPW, 0.6, 1.1, "thickened"),
    MeasurementKind.LVID: ReferenceRange(MeasurementKind.LVID, 3.5, 5.6, "dilated"),
    MeasurementKind.LA: ReferenceRange(MeasurementKind.LA, 1.9, 4.0, "dilated"),
    MeasurementKind.AORTA: ReferenceRange(MeasurementKind.AORTA, 2.0, 3.7, "dilated"),
    MeasurementKind.AORTIC_ROOT: ReferenceRange(MeasurementKind.AORTIC_ROOT, 2.0, 3.9, "dilated"),
    MeasurementKind.RV_BASE: ReferenceRange(MeasurementKind.RV_BASE, 2.5, 4.1, "dilated"),
}

RWT_CUTOFF = 0.42
LA_AO_CUTOFF = 1.5


def _range_paragraph(ref: ReferenceRange) -> str:
    label = KIND_LABELS[ref.kind]
    # keep the kind code and the numbers inside one chunk-overlap span so a
    # retrieved passage always identifies which structure its range belongs to
    return (
        f"{label.capitalize()} ({ref.kind.value}) is reported from a standard linear caliper placement. "
        f"For {ref.kind.value} the normal adult range is {ref.lower_cm:.1f} to {ref.upper_cm:.1f} cm; "
        f"values above {ref.upper_cm:.1f} cm indicate a {ref.abnormal_term} {_structure_noun(ref.kind)}."
    )


def _structure_noun(kind: MeasurementKind) -> str:
    return {
        MeasurementKind.IVS: "septum",
        MeasurementKind.LVPW: "posterior wall",
        MeasurementKind.LVID: "left ventricle",
        MeasurementKind.LA: "left atrium",
        MeasurementKind.AORTA: "aorta",
        MeasurementKind.AORTIC_ROOT: "aortic root",
        MeasurementKind.RV_BASE: "right ventricle",
    }[kind]


def reference_corpus() -> list[GuidelineDoc]:
    """Built-in guideline pack; the same table also feeds benchmark gold."""
    ranges_body = "\n\n".join(_range_paragraph(ref) for ref in REFERENCE_RANGES.values())
    technique_body = (
        "Linear measurements are taken on still frames at a stated cardiac phase. "
        "End-diastole is identified at mitral valve closure, when ventricular cavities are largest; "
        "end-systole at the smallest ventricular cavity. Wall thicknesses peak at end-systole, so the "
        "phase must always be stated alongside the value.\n\n"
        "Interventricular septal thickness, left ventricular internal diameter and posterior wall "
        "thickness are measured perpendicular to the long axis at the mitral leaflet tips. Aortic root "
        "and left atrial diameters are taken from the parasternal long-axis window. The right "
        "ventricular basal diameter is taken in the apical four-chamber view at end-diastole.\n\n"
        "A measurement should only be reported when the relevant structure is adequately visualized on "
        "the chosen frame; otherwise the study should state that the measurement is not reliably "
        "measurable rather than report a guess."
    )
    derived_body = (
        f"Relative wall thickness (RWT) is computed as 2 times the posterior wall thickness divided by "
        f"the left ventricular internal diameter, both measured at end-diastole. RWT above {RWT_CUTOFF:.2f} "
        f"indicates concentric remodelling or concentric hypertrophy; at or below {RWT_CUTOFF:.2f} the "
        f"geometry is normal or eccentric.\n\n"
        f"The left atrium to aortic root ratio (LA/Ao) compares the left atrial diameter with the aortic "
        f"root diameter on the same frame. A ratio at or below {LA_AO_CUTOFF:.1f} is normal; a ratio above "
        f"{LA_AO_CUTOFF:.1f} indicates left atrial enlargement."
    )
    return [
        GuidelineDoc("reference-ranges", "Normal adult reference ranges", ranges_body),
        GuidelineDoc("measurement-technique", "Measurement technique", technique_body),
        GuidelineDoc("derived-indices", "Derived indices", derived_body),
    ]


def build_reference_index() -> GuidelineIndex:
    return build_index(reference_corpus())


def ingest_paths(paths: Sequence[str | Path]) -> list[GuidelineDoc]:
    """Read extra guideline documents from text/markdown files."""
    docs: list[GuidelineDoc] = []
    for raw in paths:
        path = Path(raw)
        if not path.is_file():
            raise ConfigError(f"guideline source {path} is not a readable file")
        docs.append(GuidelineDoc(path.stem, path.stem.replace("-", " "), path.read_text(encoding="utf-8")))
    return docs


# threshold sentences follow a fixed grammar so downstream code can read the
# numbers straight out of a retrieved passage
RANGE_PATTERN = re.compile(r"normal adult range is (\d+(?:\.\d+)?) to (\d+(?:\.\d+)?) cm")


def parse_range_from_text(text: str) -> tuple[float, float] | None:
    match = RANGE_PATTERN.search(text.lower())
    if not match:
        return None
    return float(match.group(1)), float(match.group(2))


def range_query(kind: MeasurementKind) -> str:
    """Query whose exact-phrase hit pins down the kind's range passage."""
    return f"For {kind.value} the normal adult range"
