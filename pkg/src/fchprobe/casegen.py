"""Question/answer test cases from derived facts and sampled MTL formulas."""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from . import mtl
from .derivation import DerivedFact, Rule, inverse_relation, positive_name
from .intervals import CompileMode, IntervalSet, compile_mtl, complement
from .knowledge import Fact, FactStore, RelationCategory, default_surface

YES, NO = "Yes", "No"
RESAMPLE_BUDGET = 20

_AP_NAME = re.compile(r"[a-z][a-z0-9_]*\Z")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QaCase:
    id: str
    kind: str  # "relational" | "temporal"
    question: str
    answer: str
    domain: str
    formula: Optional[str] = None
    t: Optional[int] = None
    ground_set: Optional[IntervalSet] = None
    rule: Optional[str] = None
    fact: Optional[Fact] = None
    parents: tuple = ()
    context_docs: tuple = ()
    ground_facts: tuple = ()
    mutation_of: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("relational", "temporal"):
            raise ValueError(f"unknown case kind {self.kind!r}")
        if self.answer not in (YES, NO):
            raise ValueError(f"answer must be Yes or No, got {self.answer!r}")
        if not self.question:
            raise ValueError("question must be non-empty")

    def to_json(self) -> dict:
        rec = {"id": self.id, "kind": self.kind, "question": self.question, "answer": self.answer, "domain": self.domain}
        if self.kind == "temporal":
            rec["formula"] = self.formula
            rec["t"] = self.t
            rec["ground_set"] = self.ground_set.to_json()
        else:
            rec["rule"] = self.rule
            if self.fact is not None:
                rec["fact"] = self.fact.to_json()
            rec["parents"] = [p.to_json() for p in self.parents]
        if self.context_docs:
            rec["context_docs"] = list(self.context_docs)
        rec["ground_facts"] = [f.to_json() for f in self.ground_facts]
        if self.mutation_of:
            rec["mutation_of"] = self.mutation_of
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "QaCase":
        gs = rec.get("ground_set")
        return cls(
            id=rec["id"],
            kind=rec["kind"],
            question=rec["question"],
            answer=rec["answer"],
            domain=rec.get("domain", ""),
            formula=rec.get("formula"),
            t=rec.get("t"),
            ground_set=IntervalSet.from_json(gs) if gs is not None else None,
            rule=rec.get("rule"),
            fact=Fact.from_json(rec["fact"]) if rec.get("fact") else None,
            parents=tuple(Fact.from_json(p) for p in rec.get("parents", ())),
            context_docs=tuple(rec.get("context_docs", ())),
            ground_facts=tuple(Fact.from_json(p) for p in rec.get("ground_facts", ())),
            mutation_of=rec.get("mutation_of"),
        )

    @property
    def operator(self) -> Optional[str]:
        return mtl.operator_name(mtl.parse_mtl(self.formula)) if self.formula else None


@dataclass(frozen=True)
class RelTemplate:
    text: str
    polarity: str = "positive"


@dataclass
class TemplateSet:
    relational: dict
    temporal: dict
    antonyms: dict
    prompt: dict

    def __post_init__(self):
        for cat in RelationCategory:
            if not self.relational.get(cat.value):
                raise ValueError(f"no relational template for {cat.value}")
        for op in mtl.OPERATORS:
            if not self.temporal.get(op):
                raise ValueError(f"no temporal template for {op}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "TemplateSet":
        rel = {k: [RelTemplate(**t) if isinstance(t, dict) else RelTemplate(t) for t in v]
               for k, v in data["relational"].items()}
        return cls(rel, dict(data["temporal"]), dict(data.get("antonyms", {})), dict(data["prompt"]))

    @classmethod
    def load(cls, path=None) -> "TemplateSet":
        if path is None:
            text = resources.files("fchprobe").joinpath("data/templates.json").read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def default_templates() -> TemplateSet:
    return TemplateSet.load()


# --- relational cases ------------------------------------------------------------


def _relation_category(d: DerivedFact, store: FactStore) -> RelationCategory:
    meta = store.relations.get(d.fact.nm) or store.relations.get(d.source_nm)
    if meta is None:
        raise GenerationError(f"no relation category for {d.fact.nm!r}")
    if d.rule is Rule.INVERSE and d.fact.nm not in store.relations:
        return inverse_relation(store.relations[d.source_nm])[1]
    return meta.category


def _phrase(nm: str) -> str:
    return positive_name(nm).replace("_", " ")


def _spans_of(text: str, needles: Iterable[str]) -> list:
    spans = []
    for needle in needles:
        for m in re.finditer(re.escape(needle), text):
            spans.append((m.start(), m.end()))
    return spans


def mutate_question(question: str, antonyms: Mapping[str, str], protected: Sequence[str] = ()) -> Optional[str]:
    """Swap the first antonym-table phrase found outside the protected spans.

    Longer table keys are tried first. Returns None when nothing applies.
    """
    blocked = _spans_of(question, protected)
    for key in sorted(antonyms, key=lambda k: (-len(k), k)):
        for m in re.finditer(r"(?<!\w)" + re.escape(key) + r"(?!\w)", question):
            if any(m.start() < e and s < m.end() for s, e in blocked):
                continue
            return question[: m.start()] + antonyms[key] + question[m.end():]
    return None


def _flip(answer: str) -> str:
    return NO if answer == YES else YES


def gen_relational_cases(
    derived: Sequence[DerivedFact],
    templates: TemplateSet,
    mutate: bool = False,
    seed: int = 0,
    store: Optional[FactStore] = None,
    sample_size: Optional[int] = None,
) -> list:
    """One case per derived fact, plus an antonym twin per case when ``mutate``.

    Negated facts are asked in their positive form with answer No.
    Reflexive facts (subject equals object) make no sensible question and
    are skipped.
    """
    if store is None:
        raise GenerationError("a FactStore is needed for relation categories and surface forms")
    items = sorted(d for d in derived if d.fact.subject != d.fact.object)
    if sample_size is not None and sample_size < len(items):
        items = sorted(random.Random(f"sample:{seed}").sample(items, sample_size))
    cases = []
    for i, d in enumerate(items):
        rng = random.Random(f"{seed}:rel:{i}")
        cat = _relation_category(d, store)
        options = templates.relational.get(cat.value)
        if not options:
            raise GenerationError(f"missing template for {cat.value}")
        tpl = options[rng.randrange(len(options))]
        subj, obj = store.surface(d.fact.subject), store.surface(d.fact.object)
        question = tpl.text.format(subject=subj, object=obj, relation=_phrase(d.fact.nm))
        truth = d.rule is not Rule.NEG
        if tpl.polarity == "negative":
            truth = not truth
        answer = YES if truth else NO
        domain = store.category_of(d.fact.subject) or store.category_of(d.fact.object)
        case = QaCase(
            id=f"r{i:05d}",
            kind="relational",
            question=question,
            answer=answer,
            domain=domain.value if domain else "unknown",
            rule=d.rule.value,
            fact=d.fact,
            parents=tuple(d.parents),
            ground_facts=tuple(d.parents),
        )
        cases.append(case)
        if mutate:
            twin = mutate_question(question, templates.antonyms, (subj, obj))
            if twin is not None:
                cases.append(replace(case, id=case.id + "m", question=twin, answer=_flip(answer), mutation_of=case.id))
    return cases


# --- temporal cases -------------------------------------------------------------------


def _nested(template: str) -> str:
    return (
        template.replace("after the year {t}", "after that time")
        .replace("at year {t}", "at that time")
        .replace("the next year of {t}", "the next year")
    )


def mtl2nl(phi: mtl.Formula, t: Optional[int], templates: TemplateSet, _nested_call: bool = False) -> str:
    """Render ``phi`` queried at year ``t`` as an English question.

    Sub-formulas are rendered recursively as clauses relative to the
    enclosing operator's time ("that time").
    """
    op = mtl.operator_name(phi)
    tpl = templates.temporal[op]
    if _nested_call:
        tpl = _nested(tpl)

    def sub(p):
        text = mtl2nl(p, t, templates, True)
        return text[:1].lower() + text[1:]

    values = {"t": t}
    if isinstance(phi, mtl.AP):
        values["nm"] = phi.name
    elif isinstance(phi, (mtl.Finally, mtl.Globally)):
        values.update(interval=str(phi.bound), event=sub(phi.child))
    elif isinstance(phi, (mtl.Next, mtl.Not)):
        values["event"] = sub(phi.child)
    elif isinstance(phi, mtl.Until):
        values.update(interval=str(phi.bound), event1=sub(phi.left), event2=sub(phi.right))
    else:
        values.update(event1=sub(phi.left), event2=sub(phi.right))
    text = tpl.format(**values)
    if _nested_call:
        text = text.rstrip("?")
    return text


@dataclass(frozen=True)
class SamplerConfig:
    max_depth: int = 2
    max_bound: int = 50
    weights: Optional[Mapping[str, float]] = None


def temporal_ground_facts(h: mtl.History, phi: mtl.Formula) -> tuple:
    facts = []
    for name in sorted(mtl.atoms(phi)):
        for a, b in h.events[name]:
            facts.append(Fact("start", name, str(a)))
            facts.append(Fact("end", name, str(b)))
    return tuple(sorted(set(facts)))


def _nth_point(s: IntervalSet, k: int) -> int:
    for a, b in s:
        if k < b - a + 1:
            return a + k
        k -= b - a + 1
    raise IndexError(k)


def make_temporal_case(
    case_id: str,
    h: mtl.History,
    phi: mtl.Formula,
    t: int,
    templates: TemplateSet,
    domain: str = "History/Events",
    until_mode: str = "exact",
) -> QaCase:
    ground = compile_mtl(h, phi, CompileMode(until_mode))
    return QaCase(
        id=case_id,
        kind="temporal",
        question=mtl2nl(phi, t, templates),
        answer=YES if t in ground else NO,
        domain=domain,
        formula=mtl.format_mtl(phi),
        t=t,
        ground_set=ground,
        ground_facts=temporal_ground_facts(h, phi),
    )


def gen_temporal_cases(
    h: mtl.History,
    n: int,
    seed: int = 0,
    sampler_config: Optional[SamplerConfig] = None,
    balance: float = 0.5,
    templates: Optional[TemplateSet] = None,
    store: Optional[FactStore] = None,
    until_mode: str = "exact",
) -> list:
    """``n`` temporal cases; exactly ``round(n * balance)`` of them answer Yes.

    Case ``i`` draws from its own stream seeded by ``(seed, i)``. A formula
    whose ground set is empty or the whole universe has no contrast point
    and is resampled, at most ``RESAMPLE_BUDGET`` times per case.
    """
    if n <= 0:
        return []
    if not 0.0 <= balance <= 1.0:
        raise GenerationError(f"balance must be within [0, 1], got {balance}")
    events = sorted(name for name, spans in h.events.items() if spans and _AP_NAME.match(name))
    if not events:
        raise GenerationError("history has no usable events")
    cfg = sampler_config or SamplerConfig()
    templates = templates or default_templates()
    u = h.universe
    width = u.hi - u.lo + 1
    n_yes = round(n * balance)
    labels = [True] * n_yes + [False] * (n - n_yes)
    random.Random(f"{seed}:labels").shuffle(labels)
    cases = []
    for i, want_yes in enumerate(labels):
        rng = random.Random(f"{seed}:temporal:{i}")
        for _ in range(RESAMPLE_BUDGET):
            phi = mtl.sample_formula(rng, events, cfg.max_depth, cfg.weights, cfg.max_bound)
            ground = compile_mtl(h, phi, CompileMode(until_mode))
            if 0 < ground.size() < width:
                break
        else:
            raise GenerationError(f"case {i}: no formula with a contrast point after {RESAMPLE_BUDGET} draws")
        pool = ground if want_yes else complement(ground, u)
        t = _nth_point(pool, rng.randrange(pool.size()))
        domain = "History/Events"
        if store is not None:
            cat = store.category_of(sorted(mtl.atoms(phi))[0])
            domain = cat.value if cat else domain
        cases.append(make_temporal_case(f"t{i:05d}", h, phi, t, templates, domain, until_mode))
    return cases


# --- prompts -------------------------------------------------------------------------


def render_prompt(case: QaCase, templates: Optional[TemplateSet] = None) -> str:
    templates = templates or default_templates()
    query = templates.prompt[case.kind].format(question=case.question)
    parts = []
    if case.context_docs:
        parts.append("Context:\n" + "\n".join(f"- {doc}" for doc in case.context_docs))
    parts.append(templates.prompt["instruction"])
    parts.append(query)
    return "\n\n".join(parts) + "\n"


def attach_context(case: QaCase, docs: Sequence[str]) -> QaCase:
    if not docs:
        raise ValueError("attach_context needs at least one document")
    return replace(case, context_docs=tuple(docs))


def surface_lexicon(store: Optional[FactStore] = None, names: Iterable[str] = ()) -> dict:
    """Surface string -> canonical entity name, for triple extraction."""
    lex = {}
    pool = set(names)
    if store is not None:
        pool |= set(store.entities)
        for f in store.facts:
            pool.add(f.subject)
    for name in pool:
        lex[name] = name
        lex[default_surface(name)] = name
        if store is not None:
            lex[store.surface(name)] = name
    return lex
