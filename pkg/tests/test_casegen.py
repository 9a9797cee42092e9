from __future__ import annotations

import dataclasses
import json
import os

import pytest

from fchprobe import casegen as C
from fchprobe import derivation as D
from fchprobe import knowledge as K
from fchprobe import mtl
from fchprobe.intervals import IntervalSet
from fchprobe.knowledge import Entity, Fact, RelationMeta
from fchprobe.selftest import BEN10


def first_templates_only(templates):
    rel = {k: v[:1] for k, v in templates.relational.items()}
    return dataclasses.replace(templates, relational=rel)


@pytest.fixture(scope="module")
def sample_cases(sample_store, templates):
    derived = [d for rc in K.RelationCategory for d in D.derive_all(sample_store, rc)]
    return C.gen_relational_cases(derived, templates, mutate=True, seed=0, store=sample_store)


@pytest.fixture(scope="module")
def sample_history(sample_store):
    return mtl.History.from_events(K.timestamp_events(sample_store))


def test_crohns_question_and_mutation(templates):
    nm = "similar_symptoms_and_signs"
    store = K.build_store(
        [Fact(nm, "huntington's_disease", "crohn's_disease")],
        [Entity("crohn's_disease", "Health/Fitness", "Crohn's disease"),
         Entity("huntington's_disease", "Health/Fitness", "Huntington's disease")],
        [RelationMeta(nm, "noun", frozenset({"sym", "trans", "neg"}))],
    )
    d = D.DerivedFact(Fact(nm, "crohn's_disease", "huntington's_disease"), D.Rule.SYM,
                      (Fact(nm, "huntington's_disease", "crohn's_disease"),))
    orig, twin = C.gen_relational_cases([d], first_templates_only(templates), mutate=True, store=store)
    assert orig.question == "Is it true that Crohn's disease and Huntington's disease share similar symptoms and signs?"
    assert orig.answer == "Yes" and orig.domain == "Health/Fitness"
    assert twin.question == "Is it true that Crohn's disease and Huntington's disease have different symptoms and signs?"
    assert twin.answer == "No" and twin.mutation_of == orig.id


def test_kuratowski_negation_question(templates):
    store = K.build_store(
        [Fact("proved_by", "kuratowski's_theorem", "kazimierz_kuratowski"), Fact("proved_by", "gödel's_theorem", "kurt_gödel")],
        [Entity("kuratowski's_theorem", "Mathematics/Logic", "Kuratowski's theorem")],
        [RelationMeta("proved_by", "verb_passive", frozenset({"neg", "inverse"}))],
    )
    neg = [d for d in D.derive_negation(store, "proved_by") if d.fact.object == "kurt_gödel"]
    (case,) = C.gen_relational_cases(neg, first_templates_only(templates), store=store)
    assert case.question == "Is it true that Kuratowski's theorem was proved by Kurt Gödel?"
    assert case.answer == "No" and case.rule == "Neg"


def test_empty_derived_list(templates, sample_store):
    assert C.gen_relational_cases([], templates, store=sample_store) == []


def test_negative_polarity_template_flips_answer(templates):
    nm = "similar_genre"
    store = K.build_store([Fact(nm, "emma", "jane_eyre")], relations=[RelationMeta(nm, "noun", frozenset({"sym"}))])
    d = D.saturate_symmetric(store, nm)[0]
    neg_only = dataclasses.replace(templates, relational={**templates.relational, "noun": templates.relational["noun"][1:]})
    (case,) = C.gen_relational_cases([d], neg_only, store=store)
    assert "have totally different" in case.question and case.answer == "No"


def test_mutation_flip_law(sample_cases):
    by_id = {c.id: c for c in sample_cases}
    twins = [c for c in sample_cases if c.mutation_of]
    assert twins
    for twin in twins:
        orig = by_id[twin.mutation_of]
        assert twin.answer != orig.answer
        a, b = orig.question, twin.question
        p = 0
        while p < min(len(a), len(b)) and a[p] == b[p]:
            p += 1
        s = 0
        while s < min(len(a), len(b)) - p and a[-1 - s] == b[-1 - s]:
            s += 1
        removed, added = a[p:len(a) - s], b[p:len(b) - s]
        # the edit lies inside one antonym swap
        assert any(removed in k and added in v for k, v in C.default_templates().antonyms.items()), (a, b)


def test_questions_mention_their_entities(sample_cases, sample_store):
    for case in sample_cases:
        for name in (case.fact.subject, case.fact.object):
            assert sample_store.surface(name) in case.question


def test_relational_generation_is_deterministic(sample_store, templates):
    derived = D.derive_all(sample_store, "noun")
    a = C.gen_relational_cases(derived, templates, mutate=True, seed=5, store=sample_store, sample_size=40)
    b = C.gen_relational_cases(derived, templates, mutate=True, seed=5, store=sample_store, sample_size=40)
    assert [json.dumps(c.to_json(), sort_keys=True) for c in a] == [json.dumps(c.to_json(), sort_keys=True) for c in b]
    assert len([c for c in a if not c.mutation_of]) == 40


def test_reflexive_facts_skipped(templates):
    store = K.build_store([Fact("r", "a", "b"), Fact("r", "b", "a")], relations=[RelationMeta("r", "noun", frozenset({"trans"}))])
    derived = D.saturate_transitive(store, "r")
    assert {d.fact.subject == d.fact.object for d in derived} == {True}
    assert C.gen_relational_cases(derived, templates, store=store) == []


# --- temporal -------------------------------------------------------------------------


def test_mtl2nl_examples(templates):
    text = C.mtl2nl(mtl.parse_mtl("F[1,3](ben_10)"), 2000, templates)
    assert text.startswith('Did "Event" finally happen within the time frame of [1,3] after the year 2000, '
                           'where "Event" is defined as: did ben_10 happen')
    assert C.mtl2nl(mtl.AP("x"), 1900, templates) == "Did x happen at year 1900?"
    nested = C.mtl2nl(mtl.parse_mtl("N(F[0,1](x))"), 1900, templates)
    assert nested.startswith('Did "Event" happen in the next year of 1900')
    assert 'finally happen within the time frame of [0,1]' in nested and "did x happen" in nested


def test_ben10_case(templates):
    case = C.make_temporal_case("t0", BEN10, mtl.parse_mtl("F[1,3](ben_10)"), 2000, templates)
    assert case.answer == "No"
    assert str(case.ground_set) == "[2002,2007]"
    inside = C.make_temporal_case("t1", BEN10, mtl.parse_mtl("F[1,3](ben_10)"), 2004, templates)
    assert inside.answer == "Yes"


def test_temporal_answer_law_and_balance(sample_history, sample_store):
    cases = C.gen_temporal_cases(sample_history, 200, seed=0, store=sample_store)
    assert len(cases) == 200
    for c in cases:
        assert (c.answer == "Yes") == (c.t in c.ground_set)
        assert sample_history.universe.lo <= c.t <= sample_history.universe.hi
    assert sum(c.answer == "Yes" for c in cases) == 100


def test_balance_parameter(sample_history):
    cases = C.gen_temporal_cases(sample_history, 40, seed=2, balance=0.25)
    assert sum(c.answer == "Yes" for c in cases) == 10


def test_temporal_generation_is_deterministic(sample_history):
    a = [c.to_json() for c in C.gen_temporal_cases(sample_history, 30, seed=9)]
    b = [c.to_json() for c in C.gen_temporal_cases(sample_history, 30, seed=9)]
    assert a == b
    c = [c.to_json() for c in C.gen_temporal_cases(sample_history, 30, seed=10)]
    assert a != c


def test_temporal_zero_cases(sample_history):
    assert C.gen_temporal_cases(sample_history, 0) == []


def test_resample_budget_exhausted():
    h = mtl.History({"x": [(1, 1)]}, mtl.TimeBound(1, 1))
    with pytest.raises(C.GenerationError, match="contrast"):
        C.gen_temporal_cases(h, 1)


def test_paper_until_mode_ground_truth(sample_history):
    cases = C.gen_temporal_cases(sample_history, 60, seed=1, until_mode="paper")
    assert all((c.answer == "Yes") == (c.t in c.ground_set) for c in cases)


# --- prompts ---------------------------------------------------------------------------


def _case(kind="relational", **kw):
    base = dict(id="c1", kind=kind, question="Is it true that A was written by B?", answer="Yes", domain="Culture/Arts")
    if kind == "temporal":
        base.update(formula="x", t=5, ground_set=IntervalSet.from_spans([(1, 9)]))
    base.update(kw)
    return C.QaCase(**base)


def test_render_prompt_relational(templates):
    prompt = C.render_prompt(_case(), templates)
    assert prompt.startswith("Answer the question with your knowledge and reasoning power.")
    assert "list the knowledge used in your reasoning process" in prompt
    assert "Is it true that A was written by B?" in prompt
    assert "must contain 'Yes', 'No' or 'I don't know'" in prompt


def test_render_prompt_temporal(templates):
    assert "your knowledge and reasoning power upon metric temporal logic" in C.render_prompt(_case("temporal"), templates)


def test_attach_context():
    case = C.attach_context(_case("temporal"), ["Doc one.", "Doc two."])
    assert len(case.context_docs) == 2 and case.kind == "temporal" and case.answer == "Yes"
    prompt = C.render_prompt(case)
    assert prompt.startswith("Context:")
    assert prompt.index("Doc two.") < prompt.index(case.question)
    with pytest.raises(ValueError):
        C.attach_context(case, [])


def test_case_json_round_trip(sample_cases, sample_history):
    for case in sample_cases[:20] + C.gen_temporal_cases(sample_history, 10):
        assert C.QaCase.from_json(json.loads(json.dumps(case.to_json()))) == case


def test_template_set_requires_every_key(templates, tmp_path):
    data = json.loads((C.resources.files("fchprobe") / "data/templates.json").read_text(encoding="utf-8"))
    del data["temporal"]["U"]
    path = tmp_path / "t.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="U"):
        C.TemplateSet.load(os.fspath(path))


def test_invalid_case_rejected():
    with pytest.raises(ValueError):
        _case(answer="Maybe")
    with pytest.raises(ValueError):
        _case(question="")
