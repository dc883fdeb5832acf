"""Section-labeled sentence extraction from JATS-style article XML.

Pipeline: parse_article -> clean_text -> split_sentences, assembled by
build_corpus; then dedup_conflicting and stratified_split.
"""

from __future__ import annotations

import json
import logging
import math
import re
import xml.etree.ElementTree as ET
import xml.parsers.expat
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .fileio import atomic_write_text

log = logging.getLogger(__name__)


class Label(str, Enum):
    BACKGROUND = "background"
    OBJECTIVE = "objective"
    METHODS = "methods"
    RESULTS = "results"
    CONCLUSION = "conclusion"
    OTHER = "other"

    @classmethod
    def parse(cls, value: str | Label) -> Label:
        if isinstance(value, Label):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown label {value!r}") from None

    def __str__(self) -> str:
        return self.value


TARGET_LABELS = (Label.BACKGROUND, Label.OBJECTIVE, Label.METHODS, Label.RESULTS)


class CorpusError(Exception):
    pass


class XMLParseError(CorpusError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class StructureError(CorpusError):
    pass


@dataclass(frozen=True)
class LabeledSentence:
    id: str
    article_id: str
    label: Label
    text: str
    section_title: str
    sent_index: int

    def to_record(self) -> dict:
        d = asdict(self)
        d["label"] = self.label.value
        return d

    @classmethod
    def from_record(cls, d: dict) -> LabeledSentence:
        return cls(
            id=str(d["id"]),
            article_id=str(d["article_id"]),
            label=Label.parse(d["label"]),
            text=str(d["text"]),
            section_title=str(d.get("section_title", "")),
            sent_index=int(d.get("sent_index", 0)),
        )


# ---------------------------------------------------------------------------
# keyword map

_TRAILING_PUNCT = re.compile(r"[\s.:;,!?\-]+$")
_WS = re.compile(r"\s+")


def normalize_title(title: str) -> str:
    """Lowercase, trim, collapse inner whitespace, strip trailing punctuation."""
    t = _WS.sub(" ", title).strip().lower()
    return _TRAILING_PUNCT.sub("", t)


@dataclass
class KeywordMap:
    keywords: dict[Label, frozenset[str]]

    def __post_init__(self):
        norm = {}
        for label in TARGET_LABELS:
            words = frozenset(normalize_title(w) for w in self.keywords.get(label, ()))
            words = frozenset(w for w in words if w)
            if not words:
                raise ValueError(f"keyword set for {label} is empty")
            norm[label] = words
        extra = set(self.keywords) - set(TARGET_LABELS)
        if extra:
            raise ValueError(f"keyword map only covers target labels, got {sorted(map(str, extra))}")
        seen: dict[str, Label] = {}
        for label, words in norm.items():
            for w in words:
                if w in seen:
                    raise ValueError(f"keyword {w!r} maps to both {seen[w]} and {label}")
                seen[w] = label
        self.keywords = norm
        self._lookup = seen

    def match(self, title: str) -> Label | None:
        return self._lookup.get(normalize_title(title))

    @classmethod
    def default(cls) -> KeywordMap:
        return cls({
            Label.BACKGROUND: frozenset({"background", "introduction"}),
            Label.OBJECTIVE: frozenset({"objective", "objectives", "aim", "aims", "purpose"}),
            Label.METHODS: frozenset({"methods", "method", "materials and methods"}),
            Label.RESULTS: frozenset({"results", "result", "findings"}),
        })

    @classmethod
    def load(cls, path: str | Path) -> KeywordMap:
        """Read ``label<TAB>keyword`` lines; blank lines and ``#`` comments are skipped."""
        kw: dict[Label, set[str]] = defaultdict(set)
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'label<TAB>keyword'")
            kw[Label.parse(parts[0])].add(parts[1])
        return cls({k: frozenset(v) for k, v in kw.items()})

    def dump(self) -> str:
        lines = []
        for label in TARGET_LABELS:
            lines.extend(f"{label.value}\t{w}" for w in sorted(self.keywords[label]))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# XML parsing

@dataclass(frozen=True)
class Section:
    title: str
    label: Label
    raw_text: str


@dataclass(frozen=True)
class Rejected:
    """Article lacking at least one of the four target labels."""

    article_id: str
    missing: tuple[Label, ...]


# Float elements inside paragraphs carry captions, not running text.
_SKIP_INLINE = {"fig", "table-wrap", "fig-group", "table-wrap-group", "supplementary-material"}


def _local(tag) -> str:
    if not isinstance(tag, str):
        return ""
    return tag.rsplit("}", 1)[-1]


def _inline_markup(elem: ET.Element) -> str:
    """Text content of ``elem`` with ``xref`` elements kept as minimal markup."""
    out = [elem.text or ""]
    for child in elem:
        name = _local(child.tag)
        if name == "xref":
            rt = child.get("ref-type", "")
            inner = "".join(child.itertext())
            out.append(f'<xref ref-type="{rt}">{inner}</xref>')
        elif name in _SKIP_INLINE:
            pass
        elif name:
            out.append(_inline_markup(child))
        out.append(child.tail or "")
    return "".join(out)


def _check_well_formed(data: bytes) -> None:
    p = xml.parsers.expat.ParserCreate()
    try:
        p.Parse(data, True)
    except xml.parsers.expat.ExpatError as e:
        raise XMLParseError(xml.parsers.expat.ErrorString(e.code), p.ErrorByteIndex) from None


def _article_id(root: ET.Element, fallback: str) -> str:
    ids = {}
    for el in root.iter():
        if _local(el.tag) == "article-id" and el.text:
            ids.setdefault(el.get("pub-id-type", ""), el.text.strip())
    for kind in ("pmc", "pmcid", "pmid", "doi"):
        if ids.get(kind):
            return ids[kind]
    return fallback


def _walk_sections(sec: ET.Element, inherited: Label | None, keywords: KeywordMap,
                   out: list[Section], matched: set[Label]) -> None:
    title_el = next((c for c in sec if _local(c.tag) == "title"), None)
    title = _WS.sub(" ", "".join(title_el.itertext())).strip() if title_el is not None else ""
    own = keywords.match(title)
    if own is not None:
        matched.add(own)
    label = own or inherited or Label.OTHER
    paras = [_inline_markup(c) for c in sec if _local(c.tag) == "p"]
    if paras:
        out.append(Section(title, label, " ".join(paras)))
    for child in sec:
        if _local(child.tag) == "sec":
            # unmatched subsections inherit the enclosing label
            _walk_sections(child, own or inherited, keywords, out, matched)


def parse_article(xml_document: bytes, keywords: KeywordMap | None = None,
                  article_id: str = "") -> list[Section] | Rejected:
    """Parse one article into labeled sections, or reject it.

    Articles are rejected unless their section titles cover all four target
    labels. Raises XMLParseError on malformed input and StructureError when
    there is no ``body``.
    """
    return _parse(xml_document, keywords or KeywordMap.default(), article_id)[1]


def _parse(xml_document: bytes, keywords: KeywordMap, article_id: str):
    _check_well_formed(xml_document)
    root = ET.fromstring(xml_document)
    article_id = _article_id(root, article_id)
    body = root if _local(root.tag) == "body" else next(
        (el for el in root.iter() if _local(el.tag) == "body"), None)
    if body is None:
        raise StructureError(f"article {article_id!r} has no body element")

    sections: list[Section] = []
    matched: set[Label] = set()
    for child in body:
        if _local(child.tag) == "sec":
            _walk_sections(child, None, keywords, sections, matched)
    missing = tuple(lab for lab in TARGET_LABELS if lab not in matched)
    if missing:
        return article_id, Rejected(article_id, missing)
    return article_id, sections


# ---------------------------------------------------------------------------
# text cleaning and sentence splitting

_XREF = re.compile(
    r"""<xref\b[^>]*?\bref-type\s*=\s*["'](table|fig)["'][^>]*?(?:/>|>.*?</xref\s*>)""",
    re.DOTALL,
)
_TAG = re.compile(r"""</?[A-Za-z][\w:.-]*(?:\s+[\w:.-]+\s*=\s*(?:"[^"]*"|'[^']*'))*\s*/?>""")


def _collapse(s: str) -> str:
    return _WS.sub(" ", s).strip()


def clean_text(raw: str) -> str:
    """Replace table/figure cross-references with ``@table``/``@fig``, drop other
    markup and collapse whitespace.

    >>> clean_text('shown in <xref ref-type="fig">Fig. 1</xref>.')
    'shown in @fig .'
    """
    cur = _collapse(raw)
    while True:
        nxt = _XREF.sub(lambda m: f" @{m.group(1)} ", cur)
        nxt = _collapse(_TAG.sub("", nxt))
        if nxt == cur:
            return cur
        cur = nxt


ABBREVIATIONS = ("e.g.", "i.e.", "et al.", "vs.", "Fig.", "Tab.", "Dr.", "No.", "cf.", "approx.")

_BOUNDARY = re.compile(r"[.!?](?=\s+[A-Z0-9@])")


def _is_abbreviation(text: str, end: int) -> bool:
    head = text[:end]
    for abbr in ABBREVIATIONS:
        if head.endswith(abbr):
            start = end - len(abbr)
            if start == 0 or not (text[start - 1].isalnum() or text[start - 1] == "@"):
                return True
    return False


def split_sentences(section_text: str) -> list[str]:
    """Rule-based splitter.

    Breaks after ``. ! ?`` when followed by whitespace and an uppercase letter,
    digit or ``@`` marker, except after a known abbreviation.
    """
    out = []
    start = 0
    for m in _BOUNDARY.finditer(section_text):
        end = m.end()
        if m.group() == "." and _is_abbreviation(section_text, end):
            continue
        piece = section_text[start:end].strip()
        if piece:
            out.append(piece)
        start = end
    tail = section_text[start:].strip()
    if tail:
        out.append(tail)
    return [_collapse(s) for s in out]


Splitter = Callable[[str], list]


# ---------------------------------------------------------------------------
# corpus assembly

@dataclass
class BuildReport:
    accepted: int = 0
    rejected: int = 0
    sentences: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)
    rejections: list[tuple[str, list[str]]] = field(default_factory=list)

    def summary(self) -> str:
        return (f"articles accepted={self.accepted} rejected={self.rejected} "
                f"errors={len(self.errors)} sentences={self.sentences}")


def sentences_from_sections(article_id: str, sections: Sequence[Section],
                            splitter: Splitter = split_sentences) -> list[LabeledSentence]:
    out = []
    counters: Counter = Counter()
    for sec in sections:
        for sent in splitter(clean_text(sec.raw_text)):
            # same-titled sections share one ordinal sequence
            idx = counters[sec.title]
            counters[sec.title] += 1
            out.append(LabeledSentence(
                id=f"{article_id}:{len(out)}",
                article_id=article_id,
                label=sec.label,
                text=sent,
                section_title=sec.title,
                sent_index=idx,
            ))
    return out


def _process_file(path: str, keywords: KeywordMap, splitter: Splitter):
    try:
        aid, parsed = _parse(Path(path).read_bytes(), keywords, Path(path).stem)
    except (OSError, CorpusError, ET.ParseError) as e:
        return ("error", f"{type(e).__name__}: {e}")
    if isinstance(parsed, Rejected):
        return ("rejected", parsed)
    return ("ok", sentences_from_sections(aid, parsed, splitter))


def build_corpus(article_paths: Iterable[str | Path], keywords: KeywordMap | None = None,
                 splitter: Splitter = split_sentences,
                 workers: int = 1) -> tuple[list[LabeledSentence], BuildReport]:
    """Extract labeled sentences from every accepted article.

    Files are processed independently; failures are collected in the report
    and do not stop the run. Output follows input path order.
    """
    keywords = keywords or KeywordMap.default()
    paths = [str(p) for p in article_paths]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_process_file, paths, [keywords] * len(paths),
                                  [splitter] * len(paths)))
    else:
        results = [_process_file(p, keywords, splitter) for p in paths]

    corpus: list[LabeledSentence] = []
    report = BuildReport()
    for path, (status, payload) in zip(paths, results):
        if status == "error":
            log.warning("%s: %s", path, payload)
            report.errors.append((path, payload))
        elif status == "rejected":
            report.rejected += 1
            report.rejections.append((path, [m.value for m in payload.missing]))
        else:
            report.accepted += 1
            corpus.extend(payload)
    report.sentences = len(corpus)
    return corpus, report


def article_paths(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix == ".xml" and p.is_file())


# ---------------------------------------------------------------------------
# dedup, split, stats

def dedup_conflicting(corpus: Sequence[LabeledSentence], full: bool = False
                      ) -> tuple[list[LabeledSentence], list[LabeledSentence]]:
    """Remove every occurrence of a text that appears under two or more labels.

    Texts are compared exactly after whitespace collapse (no case folding).
    With ``full=True`` repeated same-label texts are also reduced to their
    first occurrence.
    """
    labels_by_text: dict[str, set[Label]] = defaultdict(set)
    for s in corpus:
        labels_by_text[_collapse(s.text)].add(s.label)
    kept, removed = [], []
    seen: set[str] = set()
    for s in corpus:
        key = _collapse(s.text)
        if len(labels_by_text[key]) > 1 or (full and key in seen):
            removed.append(s)
        else:
            kept.append(s)
            seen.add(key)
    return kept, removed


@dataclass
class CorpusSplit:
    train: list[LabeledSentence]
    validation: list[LabeledSentence]
    test: list[LabeledSentence]
    ratios: tuple[float, float, float]
    seed: int

    @property
    def parts(self) -> dict[str, list[LabeledSentence]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def largest_remainder(count: int, ratios: Sequence[float]) -> list[int]:
    """Apportion ``count`` items by ``ratios``; ties go to the earlier part."""
    quotas = [count * r for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    rest = count - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def stratified_split(corpus: Sequence[LabeledSentence],
                     ratios: Sequence[float] = (0.8, 0.1, 0.1),
                     seed: int = 0) -> CorpusSplit:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n_parts = sum(r > 0 for r in ratios)

    strata: dict[Label, list[int]] = defaultdict(list)
    for i, s in enumerate(corpus):
        strata[s.label].append(i)

    rng = np.random.default_rng(seed)
    assign = [[], [], []]
    for label in sorted(strata, key=lambda lab: lab.value):
        members = strata[label]
        if len(members) < n_parts:
            raise ValueError(f"label {label} has {len(members)} samples, "
                             f"fewer than the {n_parts} non-empty parts")
        perm = rng.permutation(len(members))
        sizes = largest_remainder(len(members), ratios)
        pos = 0
        for part, size in enumerate(sizes):
            assign[part].extend(members[j] for j in perm[pos:pos + size])
            pos += size
    parts = [[corpus[i] for i in sorted(idx)] for idx in assign]
    return CorpusSplit(parts[0], parts[1], parts[2], ratios, seed)


def corpus_stats(corpus: Sequence[LabeledSentence], decimals: int = 2
                 ) -> list[tuple[Label, int, float]]:
    """Per-label (label, count, percent), largest first."""
    counts = Counter(s.label for s in corpus)
    total = sum(counts.values())
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].value))
    return [(lab, n, round(100.0 * n / total, decimals)) for lab, n in rows]


def format_stats(rows, decimals: int = 2) -> str:
    return "".join(f"{lab.value}\t{n}\t{pct:.{decimals}f}\n" for lab, n, pct in rows)


# ---------------------------------------------------------------------------
# record I/O

def dumps_records(corpus: Iterable[LabeledSentence]) -> str:
    return "".join(json.dumps(s.to_record(), ensure_ascii=False) + "\n" for s in corpus)


def write_records(corpus: Iterable[LabeledSentence], path: str | Path) -> None:
    atomic_write_text(path, dumps_records(corpus))


def read_records(path: str | Path) -> list[LabeledSentence]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(LabeledSentence.from_record(json.loads(line)))
            except (ValueError, KeyError) as e:
                raise CorpusError(f"{path}:{lineno}: bad record: {e}") from None
    return out
