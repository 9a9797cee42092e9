from __future__ import annotations

import json
import logging

import pytest

from fchprobe import knowledge as K
from fchprobe.knowledge import Entity, Fact, RelationMeta


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def tiny(tmp_path):
    facts = _write(tmp_path / "facts.jsonl", [
        {"nm": "place_of_birth", "subject": "barack_obama", "object": "honolulu"},
        {"nm": "place_of_birth", "subject": "barack_obama", "object": "honolulu"},
        {"nm": "start", "subject": "charles_dickens", "object": "1812"},
        {"nm": "end", "subject": "charles_dickens", "object": "1870"},
    ])
    ents = _write(tmp_path / "entities.jsonl", [
        {"name": "barack_obama", "category": "People/Self"},
        {"name": "honolulu", "category": "Geography/Places"},
        {"name": "Charles Dickens", "category": "People and Self"},
    ])
    rels = _write(tmp_path / "relations.jsonl", [{"nm": "place_of_birth", "category": "noun", "props": ["neg"]}])
    return facts, ents, rels


def test_load_store_examples(tiny):
    store = K.load_store(*tiny)
    assert Fact("place_of_birth", "barack_obama", "honolulu") in store
    assert len(store) == 3  # duplicate line collapsed
    assert "charles_dickens" in store.entities  # names normalised
    assert K.query(store, "barack_obama", "place_of_birth") == [Fact("place_of_birth", "barack_obama", "honolulu")]
    assert K.query(store, "nonexistent") == []
    assert K.query(store) == list(store.facts)


def test_empty_files_give_empty_store(tmp_path):
    paths = [_write(tmp_path / n, []) for n in ("f.jsonl", "e.jsonl", "r.jsonl")]
    store = K.load_store(*paths)
    assert len(store) == 0 and not store.entities


def test_unknown_category_rejected_with_line_number(tiny, tmp_path):
    facts, _, rels = tiny
    ents = _write(tmp_path / "bad_entities.jsonl", [{"name": "x", "category": "People/Self"}, {"name": "y", "category": "Astrology"}])
    with pytest.raises(K.StoreError, match=r"bad_entities.jsonl:2"):
        K.load_store(facts, ents, rels)


def test_non_integer_year_rejected(tiny, tmp_path):
    _, ents, rels = tiny
    facts = _write(tmp_path / "bad_facts.jsonl", [{"nm": "start", "subject": "x", "object": "soon"}])
    with pytest.raises(K.StoreError, match=r"bad_facts.jsonl:1"):
        K.load_store(facts, ents, rels)


def test_invalid_json_reports_line(tiny, tmp_path):
    _, ents, rels = tiny
    facts = tmp_path / "broken.jsonl"
    facts.write_text('{"nm": "start", "subject": "x", "object": "1"}\n{oops\n')
    with pytest.raises(K.StoreError, match=r"broken.jsonl:2"):
        K.load_store(facts, ents, rels)


def test_undeclared_relation_rejected():
    store = K.FactStore()
    with pytest.raises(K.StoreError):
        store.add_fact(Fact("married_to", "a", "b"))


def test_frozen_store_is_immutable():
    store = K.build_store([Fact("start", "x", "5")])
    with pytest.raises(K.StoreError):
        store.add_fact(Fact("end", "x", "6"))


def test_relation_props_follow_category():
    with pytest.raises(K.StoreError):
        RelationMeta("written_by", "verb_passive", frozenset({"sym"}))
    with pytest.raises(K.StoreError):
        RelationMeta("genre", "noun", frozenset({"inverse"}))


def test_year_must_be_positive():
    with pytest.raises(K.StoreError):
        Fact("start", "x", "0")


def test_nine_categories_and_aliases():
    assert len(K.EntityCategory) == 9
    assert K.EntityCategory.parse("Natural and Physical Sciences") is K.EntityCategory.SCIENCE
    assert K.EntityCategory.parse("technology/applied sciences") is K.EntityCategory.TECHNOLOGY


def _two_fact_store():
    return K.build_store(
        [Fact("place_of_birth", "barack_obama", "honolulu"), Fact("written_by", "oliver_twist", "charles_dickens")],
        [Entity("barack_obama", "People/Self"), Entity("honolulu", "Geography/Places"),
         Entity("oliver_twist", "Culture/Arts"), Entity("charles_dickens", "People/Self")],
        [RelationMeta("place_of_birth", "noun"), RelationMeta("written_by", "verb_passive")],
    )


def test_extract_ground_facts_hand_enumerated():
    store = _two_fact_store()
    assert K.extract_ground_facts(store, "People/Self", "noun") == [Fact("place_of_birth", "barack_obama", "honolulu")]
    assert K.extract_ground_facts(store, "Health/Fitness", "noun") == []


def test_extract_ground_facts_equals_brute_force(sample_store):
    for ec in K.EntityCategory:
        for rc in K.RelationCategory:
            expected = {
                f for f in sample_store.facts
                if f.nm in sample_store.relations and sample_store.relations[f.nm].category is rc
                and any(sample_store.category_of(x) is ec for x in (f.subject, f.object))
            }
            assert set(K.extract_ground_facts(sample_store, ec, rc)) == expected


def test_query_results_match_filter(sample_store):
    for entity in list(sample_store.entities)[:20]:
        for nm in list(sample_store.relations) + ["start", None]:
            for f in K.query(sample_store, entity, nm):
                assert f in sample_store
                assert entity in (f.subject, f.object)
                assert nm is None or f.nm == nm


def test_timestamp_events_examples(caplog):
    store = K.build_store([
        Fact("begin", "ben_10", "2005"), Fact("end", "ben_10", "2008"),
        Fact("start", "charles_dickens", "1812"), Fact("end", "charles_dickens", "1870"),
        Fact("start", "oddity", "1900"), Fact("end", "oddity", "1800"),
        Fact("start", "half_open", "1900"),
    ])
    with caplog.at_level(logging.WARNING):
        events = K.timestamp_events(store)
    assert events == [K.TimestampedEvent("ben_10", 2005, 2008), K.TimestampedEvent("charles_dickens", 1812, 1870)]
    assert any("oddity" in r.message for r in caplog.records)


def test_conflicting_years_first_wins(caplog):
    store = K.build_store([Fact("start", "reign", "1830"), Fact("start", "reign", "1850"), Fact("end", "reign", "1860")])
    with caplog.at_level(logging.WARNING):
        assert K.timestamp_events(store) == [K.TimestampedEvent("reign", 1830, 1860)]
    assert any("conflicting" in r.message for r in caplog.records)


def test_timestamp_event_count_law(sample_store):
    starts = {f.subject: int(f.object) for f in sample_store.facts if f.nm in K.START_PREDICATES}
    ends = {f.subject: int(f.object) for f in sample_store.facts if f.nm in K.END_PREDICATES}
    expected = sum(1 for e in starts if e in ends and starts[e] <= ends[e])
    assert len(K.timestamp_events(sample_store)) == expected == 20


def test_save_load_round_trip(sample_store, tmp_path):
    K.save_store(sample_store, tmp_path)
    again = K.load_store_dir(tmp_path)
    assert again.facts == sample_store.facts
    assert {n: (e.category, e.label) for n, e in again.entities.items()} == {
        n: (e.category, e.label) for n, e in sample_store.entities.items()
    }
    assert again.relations == sample_store.relations


# --- SPARQL ----------------------------------------------------------------------


def _canned(fixtures_dir, status=200):
    body = (fixtures_dir / "sparql_influenced.json").read_text(encoding="utf-8")

    def transport(url, params, headers, timeout):
        assert "query" in params
        return status, body

    return transport


MAPPING = {"nm": "=influenced_by", "subject": "s", "object": "o"}


def test_sparql_canned_response(fixtures_dir):
    facts = K.fetch_sparql("http://example.invalid/sparql", "SELECT ?s ?o WHERE {}", MAPPING, True, _canned(fixtures_dir))
    assert facts == [
        Fact("influenced_by", "charles_dickens", "william_shakespeare"),
        Fact("influenced_by", "albert_einstein", "isaac_newton"),
        Fact("influenced_by", "alan_turing", "kurt_gödel"),
    ]


def test_sparql_zero_rows():
    empty = json.dumps({"head": {"vars": []}, "results": {"bindings": []}})
    assert K.fetch_sparql("http://x", "q", MAPPING, True, lambda *a: (200, empty)) == []


def test_sparql_http_error(fixtures_dir):
    with pytest.raises(K.SparqlError, match="500"):
        K.fetch_sparql("http://x", "q", MAPPING, True, _canned(fixtures_dir, 500))


def test_sparql_needs_network_flag():
    with pytest.raises(K.NetworkDisabledError):
        K.fetch_sparql("http://x", "q", MAPPING)


def test_sparql_malformed_and_mapping_errors():
    with pytest.raises(K.SparqlError, match="malformed"):
        K.fetch_sparql("http://x", "q", MAPPING, True, lambda *a: (200, "<html>"))
    rows = json.dumps({"results": {"bindings": [{"s": {"type": "literal", "value": "a"}}]}})
    with pytest.raises(K.SparqlError, match="missing"):
        K.fetch_sparql("http://x", "q", MAPPING, True, lambda *a: (200, rows))


def test_sparql_network_failure_surfaces():
    def boom(*args):
        raise ConnectionError("refused")

    with pytest.raises(K.SparqlError, match="network"):
        K.fetch_sparql("http://x", "q", MAPPING, True, boom)
