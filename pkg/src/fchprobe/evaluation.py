"""Response parsing, semantic graphs and the two Jaccard oracles."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
import shlex
import subprocess
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .knowledge import TIME_PREDICATES, Fact, RelationCategory, normalize_name

log = logging.getLogger(__name__)

YES, NO, REFUSAL = "Yes", "No", "Refusal"
CATEGORIES = ("CO", "EI", "EK", "OL")
HALLUCINATIONS = ("EI", "EK", "OL")
DEFAULT_THRESHOLD = 0.8
ANSWER_WINDOW = 200

DEFAULT_REFUSALS = ("i don't know", "i do not know", "i cannot answer", "i can't answer", "i am not sure")


class EvaluationError(ValueError):
    pass


class UnknownCaseError(EvaluationError):
    pass


# --- answers ------------------------------------------------------------------


def extract_answer(raw_text: str, refusal_patterns: Sequence[str] = DEFAULT_REFUSALS) -> str:
    """Yes, No or Refusal, whichever appears first near the start of the reply."""
    head = raw_text[:ANSWER_WINDOW].lower().replace("’", "'")
    hits = []
    for label, pattern in ((YES, r"\byes\b"), (NO, r"\bno\b")):
        m = re.search(pattern, head)
        if m:
            hits.append((m.start(), label))
    for phrase in refusal_patterns:
        pos = head.find(phrase.lower())
        if pos >= 0:
            hits.append((pos, REFUSAL))
    if not hits:
        return REFUSAL
    # a refusal phrase starting at the same spot outranks a bare yes/no
    hits.sort(key=lambda h: (h[0], h[1] != REFUSAL))
    return hits[0][1]


@dataclass(frozen=True)
class LlmResponse:
    case_id: str
    raw_text: str
    answer: str
    reasoning_text: str

    @classmethod
    def parse(cls, case_id: str, raw_text: str, refusal_patterns: Sequence[str] = DEFAULT_REFUSALS) -> "LlmResponse":
        """Split a reply into its answer and the reasoning that follows the first line."""
        text = raw_text.strip()
        first, _, rest = text.partition("\n")
        if not rest:
            # single line: everything after the first sentence
            parts = re.split(r"(?<=[.!?])\s+", text, maxsplit=1)
            rest = parts[1] if len(parts) > 1 else ""
        return cls(case_id, raw_text, extract_answer(raw_text, refusal_patterns), rest.strip())


# --- triples ------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            value = normalize_name(getattr(self, name))
            if not value:
                raise EvaluationError(f"empty {name} in triple")
            object.__setattr__(self, name, value)

    @classmethod
    def from_fact(cls, fact: Fact) -> "Triple":
        return cls(fact.subject, fact.nm, fact.object)


_MARKER = re.compile(r"^\s*(?:\(?\d+[.)]|[-*•])\s*")
_SENTENCE = re.compile(r"(?<=[.!?;])\s+")
_STOP = {"the", "a", "an", "it", "this", "that", "these", "those", "there", "however", "therefore", "so", "thus", "and"}
_COPULA = r"(?:is|was|are|were|has been|had been)"

_PATTERNS = [
    re.compile(r"^(?:the )?(?P<rel>[a-z][\w' -]*?) of @(?P<s>\d+)@ " + _COPULA + r" (?P<neg>not )?@(?P<o>\d+)@$"),
    re.compile(r"^@(?P<s>\d+)@ and @(?P<o>\d+)@ (?:share|shared|have|had|has) (?P<neg>not )?(?P<rel>[a-z][\w' -]*)$"),
    re.compile(r"^@(?P<s>\d+)@ " + _COPULA + r" (?P<neg>not )?(?P<rel>[a-z][\w' -]*?) @(?P<o>\d+)@$"),
    re.compile(r"^@(?P<s>\d+)@ (?P<neg>(?:did not|does not|do not|never) )?(?P<rel>[a-z][\w' -]*?) @(?P<o>\d+)@$"),
]


def _entityish(token: str, first: bool) -> bool:
    if not token:
        return False
    if token.isdigit() or "_" in token or any(c.isdigit() for c in token):
        return True
    if token[0].isupper():
        return not (first and token.lower() in _STOP)
    return False


class PatternExtractor:
    """Rule-based subject/relation/object extraction.

    Handles the declarative shapes the prompts ask for: "The R of S is O",
    "S and O share R", "S was R O" and "S R O". Entities are found through
    ``lexicon`` (surface -> canonical name) first, then as runs of
    capitalised, numeric or snake_case tokens.
    """

    def __init__(self, lexicon: Optional[Mapping[str, str]] = None):
        self.lexicon = {k.lower(): v for k, v in (lexicon or {}).items() if k}
        keys = sorted(self.lexicon, key=len, reverse=True)
        self._lex_re = (
            re.compile(r"(?<![\w'])(" + "|".join(re.escape(k) for k in keys) + r")(?![\w'])", re.IGNORECASE)
            if keys else None
        )

    def __call__(self, text: str) -> list:
        out = []
        for line in text.splitlines():
            line = _MARKER.sub("", line).strip()
            for sentence in _SENTENCE.split(line):
                t = self.sentence(sentence)
                if t is not None:
                    out.append(t)
        return out

    def _chunk(self, sentence: str):
        entities: list = []

        def placeholder(name: str) -> str:
            entities.append(name)
            return f" @{len(entities) - 1}@ "

        if self._lex_re is not None:
            sentence = self._lex_re.sub(lambda m: placeholder(self.lexicon[m.group(1).lower()]), sentence)
        words = []
        run: list = []
        tokens = sentence.split()
        for i, tok in enumerate(tokens):
            if re.fullmatch(r"@\d+@", tok):
                if run:
                    words.append(placeholder(normalize_name(" ".join(run))).strip())
                    run = []
                words.append(tok)
                continue
            clean = tok.strip(",:\"()[]")
            if _entityish(clean, i == 0 and not words and not run):
                run.append(clean)
            else:
                if run:
                    words.append(placeholder(normalize_name(" ".join(run))).strip())
                    run = []
                words.append(clean.lower())
        if run:
            words.append(placeholder(normalize_name(" ".join(run))).strip())
        return " ".join(w for w in words if w), entities

    def sentence(self, sentence: str) -> Optional[Triple]:
        sentence = sentence.strip().rstrip(".!?;")
        if not sentence:
            return None
        shape, entities = self._chunk(sentence)
        for pattern in _PATTERNS:
            m = pattern.match(shape)
            if m:
                rel = normalize_name(m.group("rel").strip().replace(" ", "_").replace("-", "_"))
                if m.group("neg"):
                    rel = "not_" + rel
                return Triple(entities[int(m.group("s"))], rel, entities[int(m.group("o"))])
        return None


class CommandExtractor:
    """External extractor: reasoning text on stdin, one JSON triple per stdout line.

    On any failure the ``fallback`` extractor is used and a warning logged.
    """

    def __init__(self, command, fallback: Optional[Callable] = None, timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.fallback = fallback or PatternExtractor()
        self.timeout = timeout

    def __call__(self, text: str) -> list:
        try:
            proc = subprocess.run(
                self.command, input=text, capture_output=True, text=True, timeout=self.timeout, check=True
            )
            triples = []
            for line in proc.stdout.splitlines():
                if line.strip():
                    rec = json.loads(line)
                    triples.append(Triple(rec["subject"], rec["relation"], rec["object"]))
            return triples
        except (OSError, subprocess.SubprocessError, ValueError, KeyError, TypeError) as exc:
            log.warning("extractor %s failed (%s); using the built-in patterns", self.command[0], exc)
            return self.fallback(text)


def extract_triples(reasoning_text: str, extractor: Optional[Callable] = None) -> list:
    """Triples from reasoning text, duplicates dropped, first occurrence order kept."""
    if not reasoning_text.strip():
        return []
    extractor = extractor or PatternExtractor()
    seen = set()
    out = []
    for t in extractor(reasoning_text):
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def verbalize(fact: Fact, category: Optional[RelationCategory], surface: Callable[[str], str] = lambda s: s) -> str:
    """A declarative sentence that ``PatternExtractor`` maps back to ``fact``."""
    rel = fact.nm.replace("_", " ")
    s, o = surface(fact.subject), surface(fact.object)
    if fact.nm in TIME_PREDICATES or category in (None, RelationCategory.NOUN):
        return f"The {rel} of {s} is {o}."
    if category is RelationCategory.VERB_PASSIVE:
        return f"{s} was {rel} {o}."
    return f"{s} {rel} {o}."


# --- graphs ------------------------------------------------------------------------


@dataclass(frozen=True)
class SemGraph:
    nodes: frozenset = frozenset()
    edges: frozenset = frozenset()

    def __post_init__(self):
        missing = {x for s, _, o in self.edges for x in (s, o)} - self.nodes
        if missing:
            raise EvaluationError(f"edge endpoints missing from nodes: {sorted(missing)}")


def build_graph(triples: Iterable[Triple]) -> SemGraph:
    edges = frozenset((t.subject, t.relation, t.object) for t in triples)
    nodes = frozenset(x for s, _, o in edges for x in (s, o))
    return SemGraph(nodes, edges)


def graph_from_facts(facts: Iterable[Fact]) -> SemGraph:
    return build_graph(Triple.from_fact(f) for f in facts)


# --- equivalence ----------------------------------------------------------------------


class EquivProvider:
    """Decides whether two labels name the same thing (reflexive and symmetric)."""

    mode = "exact"
    threshold = DEFAULT_THRESHOLD

    def equivalent(self, a: str, b: str) -> bool:
        return normalize_name(a) == normalize_name(b)

    def prepare(self, labels: Sequence[str]) -> None:
        """Hook for batch lookups before pairwise comparison."""


class SynonymEquiv(EquivProvider):
    mode = "synonym-table"

    def __init__(self, pairs: Iterable[tuple]):
        self.pairs = set()
        for a, b in pairs:
            a, b = normalize_name(a), normalize_name(b)
            self.pairs.add((a, b))
            self.pairs.add((b, a))

    @classmethod
    def load(cls, path) -> "SynonymEquiv":
        from ._io import read_jsonl

        return cls((rec["a"], rec["b"]) for _, rec in read_jsonl(path))

    def equivalent(self, a: str, b: str) -> bool:
        a, b = normalize_name(a), normalize_name(b)
        return a == b or (a, b) in self.pairs


def _post_json(url: str, payload: dict, timeout: float):
    import requests

    resp = requests.post(url, json=payload, timeout=timeout)
    return resp.status_code, resp.text


class EmbeddingEquiv(EquivProvider):
    """Cosine similarity of vectors from an HTTP endpoint.

    The endpoint takes ``{"texts": [...]}`` and answers ``{"vectors": [...]}``.
    Vectors are memoised; reads are lock-free, inserts take a lock. If the
    endpoint fails and ``fallback`` is ``"exact"`` comparisons degrade to
    exact matching, otherwise the error propagates.
    """

    mode = "embedding-endpoint"

    def __init__(self, endpoint: str, threshold: float = DEFAULT_THRESHOLD, transport=None,
                 fallback: str = "exact", timeout: float = 30.0):
        self.endpoint = endpoint
        self.threshold = threshold
        self.transport = transport or _post_json
        self.fallback = fallback
        self.timeout = timeout
        self._vectors: dict = {}
        self._lock = threading.Lock()
        self.degraded = False

    def prepare(self, labels: Sequence[str]) -> None:
        todo = sorted({normalize_name(x) for x in labels} - set(self._vectors))
        if not todo or self.degraded:
            return
        try:
            status, body = self.transport(self.endpoint, {"texts": [t.replace("_", " ") for t in todo]}, self.timeout)
            if status != 200:
                raise EvaluationError(f"embedding endpoint returned HTTP {status}")
            vectors = json.loads(body)["vectors"]
            if len(vectors) != len(todo):
                raise EvaluationError("embedding endpoint returned the wrong number of vectors")
        except (OSError, ValueError, KeyError, TypeError) as exc:
            if self.fallback != "exact":
                raise
            log.warning("embedding endpoint unavailable (%s); falling back to exact matching", exc)
            self.degraded = True
            return
        with self._lock:
            for text, vec in zip(todo, vectors):
                self._vectors.setdefault(text, tuple(float(x) for x in vec))

    def equivalent(self, a: str, b: str) -> bool:
        a, b = normalize_name(a), normalize_name(b)
        if a == b:
            return True
        if a not in self._vectors or b not in self._vectors:
            self.prepare([a, b])
        va, vb = self._vectors.get(a), self._vectors.get(b)
        if va is None or vb is None:
            return False
        na = math.sqrt(sum(x * x for x in va))
        nb = math.sqrt(sum(x * x for x in vb))
        if na == 0 or nb == 0:
            return False
        return sum(x * y for x, y in zip(va, vb)) / (na * nb) >= self.threshold


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller label becomes the representative, keeping results order-independent
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _classes(labels: Iterable[str], equiv: EquivProvider) -> _UnionFind:
    items = sorted(set(labels))
    uf = _UnionFind(items)
    if type(equiv) is EquivProvider:
        return uf  # labels are already normalised, exact classes are singletons
    equiv.prepare(items)
    for i, a in enumerate(items):
        for b in items[i + 1:]:
            if equiv.equivalent(a, b):
                uf.union(a, b)
    return uf


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def similarity(a: SemGraph, b: SemGraph, equiv: Optional[EquivProvider] = None) -> tuple:
    """``(s_e, s_n)``: Jaccard similarity of edges and of nodes up to equivalence."""
    equiv = equiv or EquivProvider()
    nodes = _classes(a.nodes | b.nodes, equiv)
    rels = _classes({r for _, r, _ in a.edges | b.edges}, equiv)

    def edge_reps(g):
        return {(nodes.find(s), rels.find(r), nodes.find(o)) for s, r, o in g.edges}

    s_e = jaccard(edge_reps(a), edge_reps(b))
    s_n = jaccard({nodes.find(x) for x in a.nodes}, {nodes.find(x) for x in b.nodes})
    return s_e, s_n


# --- verdicts ------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    case_id: str
    category: str
    s_e: float
    s_n: float
    answer: Optional[str] = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise EvaluationError(f"unknown category {self.category!r}")

    def to_json(self) -> dict:
        rec = {"case_id": self.case_id, "category": self.category, "s_e": self.s_e, "s_n": self.s_n}
        if self.answer is not None:
            rec["answer"] = self.answer
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "Verdict":
        return cls(rec["case_id"], rec["category"], float(rec["s_e"]), float(rec["s_n"]), rec.get("answer"))


def categorize(s_e: float, s_n: float, theta_e: float = DEFAULT_THRESHOLD, theta_n: float = DEFAULT_THRESHOLD) -> str:
    if s_e < theta_e and s_n < theta_n:
        return "OL"
    if s_e < theta_e:
        return "EI"
    if s_n < theta_n:
        return "EK"
    return "CO"


def classify(
    resp: LlmResponse,
    ground: SemGraph,
    theta_e: float = DEFAULT_THRESHOLD,
    theta_n: float = DEFAULT_THRESHOLD,
    equiv: Optional[EquivProvider] = None,
    extractor: Optional[Callable] = None,
) -> Verdict:
    """Refusals count as correct; otherwise compare the reasoning graph with ``ground``."""
    if resp.answer == REFUSAL:
        return Verdict(resp.case_id, "CO", 1.0, 1.0, resp.answer)
    graph = build_graph(extract_triples(resp.reasoning_text, extractor))
    s_e, s_n = similarity(graph, ground, equiv)
    return Verdict(resp.case_id, categorize(s_e, s_n, theta_e, theta_n), s_e, s_n, resp.answer)


# --- reports ----------------------------------------------------------------------------


def join_verdicts(cases: Iterable, verdicts: Iterable[Verdict]) -> list:
    by_id = {c.id: c for c in cases}
    pairs = []
    for v in verdicts:
        if v.case_id not in by_id:
            raise UnknownCaseError(f"verdict for unknown case {v.case_id!r}")
        pairs.append((by_id[v.case_id], v))
    return pairs


def _bucket(items: list) -> dict:
    counts = Counter(v.category for _, v in items)
    total = len(items)
    bad = sum(counts[c] for c in HALLUCINATIONS)
    answered = [(c, v) for c, v in items if v.answer in (YES, NO)]
    out = {
        "total": total,
        "counts": {c: counts[c] for c in CATEGORIES},
        "hallucination_rate": round(bad / total, 6) if total else 0.0,
    }
    if answered:
        right = sum(1 for c, v in answered if v.answer == c.answer)
        out["answer_accuracy"] = round(right / len(answered), 6)
    return out


@dataclass
class Report:
    overall: dict
    groups: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def hallucination_rate(self) -> float:
        return self.overall["hallucination_rate"]

    def to_json(self) -> str:
        payload = dict(self.meta)
        payload["overall"] = self.overall
        payload.update(self.groups)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        extra = sorted(self.meta)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["group", "key", "total", *CATEGORIES, "hallucination_rate", *extra])
        rows = [("overall", "all", self.overall)]
        for group in sorted(self.groups):
            for key in sorted(self.groups[group]):
                rows.append((group, key, self.groups[group][key]))
        for group, key, b in rows:
            writer.writerow([group, key, b["total"], *(b["counts"][c] for c in CATEGORIES),
                             f"{b['hallucination_rate']:.6f}", *(self.meta[k] for k in extra)])
        return buf.getvalue()


def report(verdicts: Sequence[tuple], meta: Optional[dict] = None) -> Report:
    """Aggregate ``(case, verdict)`` pairs overall and by kind, domain, rule and operator."""
    for case, v in verdicts:
        if case.id != v.case_id:
            raise UnknownCaseError(f"verdict {v.case_id!r} paired with case {case.id!r}")
    items = list(verdicts)
    groups: dict = {"by_kind": {}, "by_domain": {}, "by_rule": {}, "by_operator": {}}
    keyed: dict = {g: {} for g in groups}
    for case, v in items:
        keyed["by_kind"].setdefault(case.kind, []).append((case, v))
        keyed["by_domain"].setdefault(case.domain or "unknown", []).append((case, v))
        if case.kind == "relational" and case.rule:
            keyed["by_rule"].setdefault(case.rule, []).append((case, v))
        if case.kind == "temporal" and case.formula:
            keyed["by_operator"].setdefault(case.operator, []).append((case, v))
    for g, buckets in keyed.items():
        groups[g] = {k: _bucket(vs) for k, vs in sorted(buckets.items())}
    return Report(_bucket(items), groups, dict(meta or {}))
