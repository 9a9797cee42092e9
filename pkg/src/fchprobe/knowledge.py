"""Ground facts, entities and relation metadata.

A ``FactStore`` is filled during loading and then frozen; after that it is a
read-only index safe to share between threads.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from ._io import read_jsonl, write_jsonl

log = logging.getLogger(__name__)

SPARQL_ENDPOINT_ENV = "FCHPROBE_SPARQL_ENDPOINT"

START_PREDICATES = ("start", "begin")
END_PREDICATES = ("end",)
TIME_PREDICATES = START_PREDICATES + END_PREDICATES


class StoreError(ValueError):
    pass


class NetworkDisabledError(RuntimeError):
    pass


class SparqlError(RuntimeError):
    pass


class EntityCategory(str, Enum):
    CULTURE = "Culture/Arts"
    GEOGRAPHY = "Geography/Places"
    HEALTH = "Health/Fitness"
    HISTORY = "History/Events"
    PEOPLE = "People/Self"
    MATHEMATICS = "Mathematics/Logic"
    SCIENCE = "Natural/Physical Sciences"
    SOCIETY = "Society/Social Sciences"
    TECHNOLOGY = "Technology/Applied Sciences"

    @classmethod
    def parse(cls, value: str) -> "EntityCategory":
        key = _category_key(value)
        try:
            return _CATEGORY_ALIASES[key]
        except KeyError:
            raise StoreError(f"unknown entity category {value!r}") from None


def _category_key(value: str) -> str:
    return re.sub(r"[^a-z]+", " ", value.lower().replace(" and the ", " ").replace(" and ", " ")).strip()


_CATEGORY_ALIASES = {}
for _c in EntityCategory:
    _CATEGORY_ALIASES[_category_key(_c.value)] = _c
    _CATEGORY_ALIASES[_category_key(_c.name)] = _c
# long names as used by Wikipedia's portal categories
for _long, _c in [
    ("Culture and the Arts", EntityCategory.CULTURE),
    ("Geography and Places", EntityCategory.GEOGRAPHY),
    ("Health and Fitness", EntityCategory.HEALTH),
    ("History and Events", EntityCategory.HISTORY),
    ("People and Self", EntityCategory.PEOPLE),
    ("Mathematics and Logic", EntityCategory.MATHEMATICS),
    ("Natural and Physical Sciences", EntityCategory.SCIENCE),
    ("Society and Social Sciences", EntityCategory.SOCIETY),
    ("Technology and Applied Sciences", EntityCategory.TECHNOLOGY),
]:
    _CATEGORY_ALIASES[_category_key(_long)] = _c


class RelationCategory(str, Enum):
    NOUN = "noun"
    VERB_PASSIVE = "verb_passive"
    VERB_ACTIVE = "verb_active"


class RelationProp(str, Enum):
    NEG = "neg"
    SYM = "sym"
    TRANS = "trans"
    INVERSE = "inverse"


ALLOWED_PROPS = {
    RelationCategory.NOUN: frozenset({RelationProp.NEG, RelationProp.SYM, RelationProp.TRANS}),
    RelationCategory.VERB_PASSIVE: frozenset({RelationProp.NEG, RelationProp.INVERSE}),
    RelationCategory.VERB_ACTIVE: frozenset({RelationProp.NEG, RelationProp.INVERSE}),
}


def normalize_name(text: str) -> str:
    """Lowercase snake-case constant form: ``"Barack Obama"`` -> ``"barack_obama"``."""
    return re.sub(r"\s+", "_", str(text).strip().lower())


def default_surface(name: str) -> str:
    """Readable form of a constant, first letter of each word upper-cased."""
    return " ".join(w[:1].upper() + w[1:] for w in name.split("_") if w)


@dataclass(frozen=True, order=True)
class Entity:
    name: str
    category: EntityCategory = field(compare=False)
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.name:
            raise StoreError("entity name must be non-empty")
        if not isinstance(self.category, EntityCategory):
            object.__setattr__(self, "category", EntityCategory.parse(self.category))

    @property
    def surface(self) -> str:
        return self.label or default_surface(self.name)


@dataclass(frozen=True, order=True)
class Fact:
    nm: str
    subject: str
    object: str

    def __post_init__(self):
        if not self.nm or not self.subject or self.object in (None, ""):
            raise StoreError(f"fact fields must be non-empty: {self.nm}({self.subject}, {self.object})")
        if not self.nm[0].islower():
            raise StoreError(f"predicate name must start with a lowercase letter: {self.nm!r}")
        if self.nm in TIME_PREDICATES:
            try:
                year = int(self.object)
            except ValueError:
                raise StoreError(f"{self.nm}({self.subject}, {self.object}): year is not an integer") from None
            if year < 1:
                raise StoreError(f"{self.nm}({self.subject}, {self.object}): year must be >= 1")

    def __str__(self):
        return f"{self.nm}({self.subject}, {self.object})"

    def to_json(self) -> dict:
        return {"nm": self.nm, "subject": self.subject, "object": self.object}

    @classmethod
    def from_json(cls, rec: dict) -> "Fact":
        return cls(str(rec["nm"]), str(rec["subject"]), str(rec["object"]))


@dataclass(frozen=True)
class RelationMeta:
    nm: str
    category: RelationCategory
    props: frozenset = frozenset()
    inverse: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "category", RelationCategory(self.category))
        props = frozenset(RelationProp(p) for p in self.props)
        bad = props - ALLOWED_PROPS[self.category]
        if bad:
            names = ", ".join(sorted(p.value for p in bad))
            raise StoreError(f"relation {self.nm!r} ({self.category.value}) cannot carry {names}")
        object.__setattr__(self, "props", props)

    def to_json(self) -> dict:
        rec = {"nm": self.nm, "category": self.category.value, "props": sorted(p.value for p in self.props)}
        if self.inverse:
            rec["inverse"] = self.inverse
        return rec


@dataclass(frozen=True, order=True)
class TimestampedEvent:
    name: str
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise StoreError(f"event {self.name}: start {self.start} after end {self.end}")


class FactStore:
    def __init__(self):
        self._facts: list[Fact] = []
        self._fact_set: set[Fact] = set()
        self.entities: dict[str, Entity] = {}
        self.relations: dict[str, RelationMeta] = {}
        self._by_nm: dict[str, list[Fact]] = {}
        self._by_nm_subject: dict[tuple, list[Fact]] = {}
        self._by_nm_object: dict[tuple, list[Fact]] = {}
        self._by_entity: dict[str, list[Fact]] = {}
        self.frozen = False

    def _check_mutable(self):
        if self.frozen:
            raise StoreError("store is frozen")

    def add_entity(self, entity: Entity) -> None:
        self._check_mutable()
        old = self.entities.get(entity.name)
        if old is not None and old.category != entity.category:
            raise StoreError(f"entity {entity.name!r} listed under two categories")
        if old is None or (entity.label and not old.label):
            self.entities[entity.name] = entity

    def add_relation(self, meta: RelationMeta) -> None:
        self._check_mutable()
        old = self.relations.get(meta.nm)
        if old is not None and old != meta:
            raise StoreError(f"relation {meta.nm!r} declared twice with different metadata")
        self.relations[meta.nm] = meta

    def add_fact(self, fact: Fact) -> bool:
        """Insert ``fact``; returns False for a duplicate."""
        self._check_mutable()
        if fact.nm not in self.relations and fact.nm not in TIME_PREDICATES:
            raise StoreError(f"fact {fact} uses undeclared relation {fact.nm!r}")
        if fact in self._fact_set:
            return False
        self._fact_set.add(fact)
        self._facts.append(fact)
        return True

    def freeze(self) -> "FactStore":
        for f in self._facts:
            self._by_nm.setdefault(f.nm, []).append(f)
            self._by_nm_subject.setdefault((f.nm, f.subject), []).append(f)
            self._by_nm_object.setdefault((f.nm, f.object), []).append(f)
            self._by_entity.setdefault(f.subject, []).append(f)
            if f.object != f.subject:
                self._by_entity.setdefault(f.object, []).append(f)
        self.frozen = True
        return self

    @property
    def facts(self) -> tuple:
        return tuple(sorted(self._facts))

    def facts_in_load_order(self) -> tuple:
        return tuple(self._facts)

    def __contains__(self, fact: Fact) -> bool:
        return fact in self._fact_set

    def __len__(self):
        return len(self._facts)

    def pairs(self, nm: str) -> set:
        return {(f.subject, f.object) for f in self._by_nm.get(nm, ())}

    def by_subject(self, nm: str, subject: str) -> list:
        return list(self._by_nm_subject.get((nm, subject), ()))

    def by_object(self, nm: str, obj: str) -> list:
        return list(self._by_nm_object.get((nm, obj), ()))

    def surface(self, name: str) -> str:
        ent = self.entities.get(name)
        return ent.surface if ent else default_surface(name)

    def category_of(self, name: str) -> Optional[EntityCategory]:
        ent = self.entities.get(name)
        return ent.category if ent else None

    def extended(self, facts: Iterable[Fact], relations: Iterable[RelationMeta] = ()) -> "FactStore":
        """New frozen store holding this store's contents plus ``facts``."""
        out = FactStore()
        for e in self.entities.values():
            out.add_entity(e)
        for m in list(self.relations.values()) + list(relations):
            out.add_relation(m)
        for f in list(self._facts) + list(facts):
            out.add_fact(f)
        return out.freeze()


def build_store(
    facts: Iterable[Fact] = (),
    entities: Iterable[Entity] = (),
    relations: Iterable[RelationMeta] = (),
) -> FactStore:
    store = FactStore()
    for e in entities:
        store.add_entity(e)
    for m in relations:
        store.add_relation(m)
    for f in facts:
        store.add_fact(f)
    return store.freeze()


def _require(rec: dict, key: str, where: str):
    if key not in rec:
        raise StoreError(f"{where}: missing field {key!r}")
    return rec[key]


def load_store(facts_path, entities_path, relations_path) -> FactStore:
    """Read the three JSONL files into a frozen store."""
    store = FactStore()
    for path in (facts_path, entities_path, relations_path):
        if not Path(path).exists():
            raise FileNotFoundError(path)

    def rows(path):
        try:
            return read_jsonl(path)
        except ValueError as exc:
            raise StoreError(str(exc)) from None

    for lineno, rec in rows(entities_path):
        where = f"{entities_path}:{lineno}"
        try:
            store.add_entity(Entity(
                normalize_name(_require(rec, "name", where)),
                EntityCategory.parse(str(_require(rec, "category", where))),
                rec.get("label"),
            ))
        except StoreError as exc:
            raise StoreError(f"{where}: {exc}") from None
    for lineno, rec in rows(relations_path):
        where = f"{relations_path}:{lineno}"
        try:
            store.add_relation(RelationMeta(
                normalize_name(_require(rec, "nm", where)),
                _require(rec, "category", where),
                frozenset(rec.get("props", ())),
                rec.get("inverse"),
            ))
        except (StoreError, ValueError) as exc:
            raise StoreError(f"{where}: {exc}") from None
    for lineno, rec in rows(facts_path):
        where = f"{facts_path}:{lineno}"
        try:
            fact = Fact(
                normalize_name(_require(rec, "nm", where)),
                normalize_name(_require(rec, "subject", where)),
                normalize_name(_require(rec, "object", where)),
            )
            store.add_fact(fact)
        except StoreError as exc:
            raise StoreError(f"{where}: {exc}") from None
    return store.freeze()


def load_store_dir(directory) -> FactStore:
    d = Path(directory)
    return load_store(d / "facts.jsonl", d / "entities.jsonl", d / "relations.jsonl")


def save_store(store: FactStore, directory) -> None:
    """Write the canonical (sorted) JSONL form of ``store`` into ``directory``."""
    d = Path(directory)
    write_jsonl(d / "facts.jsonl", (f.to_json() for f in store.facts))
    ents = []
    for name in sorted(store.entities):
        e = store.entities[name]
        rec = {"name": e.name, "category": e.category.value}
        if e.label:
            rec["label"] = e.label
        ents.append(rec)
    write_jsonl(d / "entities.jsonl", ents)
    write_jsonl(d / "relations.jsonl", (store.relations[nm].to_json() for nm in sorted(store.relations)))


def query(store: FactStore, entity: Optional[str] = None, nm: Optional[str] = None) -> list:
    """Facts with predicate ``nm`` and ``entity`` as subject or object; ``None`` matches anything."""
    if entity is None and nm is None:
        return list(store.facts)
    if entity is None:
        found = store._by_nm.get(nm, ())
    elif nm is None:
        found = store._by_entity.get(entity, ())
    else:
        found = store._by_nm_subject.get((nm, entity), []) + store._by_nm_object.get((nm, entity), [])
    return sorted(set(found))


def extract_ground_facts(store: FactStore, entity_category, relation_category) -> list:
    """All facts linking an entity of one category through a relation of another."""
    ec = entity_category if isinstance(entity_category, EntityCategory) else EntityCategory.parse(entity_category)
    rc = RelationCategory(relation_category)
    ground: list = []
    for entity in sorted(n for n, e in store.entities.items() if e.category is ec):
        for nm in sorted(n for n, m in store.relations.items() if m.category is rc):
            ground.extend(query(store, entity, nm))
    return sorted(set(ground))


def timestamp_events(store: FactStore) -> list:
    """One event per entity that has both a start and an end year.

    When an entity has several start (or end) facts the first one loaded
    wins. Entities whose start comes after their end are skipped.
    """
    starts: dict = {}
    ends: dict = {}
    for f in store.facts_in_load_order():
        if f.nm in START_PREDICATES:
            table = starts
        elif f.nm in END_PREDICATES:
            table = ends
        else:
            continue
        year = int(f.object)
        if f.subject in table and table[f.subject] != year:
            log.warning("conflicting %s years for %s: keeping %d, ignoring %d", f.nm, f.subject, table[f.subject], year)
            continue
        table.setdefault(f.subject, year)
    events = []
    for name in sorted(set(starts) & set(ends)):
        lo, hi = starts[name], ends[name]
        if lo > hi:
            log.warning("skipping %s: start %d after end %d", name, lo, hi)
            continue
        events.append(TimestampedEvent(name, lo, hi))
    return events


# --- SPARQL -------------------------------------------------------------------


def _http_get(url: str, params: dict, headers: dict, timeout: float):
    import requests

    resp = requests.get(url, params=params, headers=headers, timeout=timeout)
    return resp.status_code, resp.text


def _binding_value(binding: dict) -> str:
    value = binding["value"]
    if binding.get("type") == "uri":
        value = re.split(r"[/#]", value.rstrip("/"))[-1]
    return normalize_name(value)


def fetch_sparql(
    endpoint: Optional[str],
    query_text: str,
    mapping: Optional[dict] = None,
    allow_network: bool = False,
    transport: Optional[Callable] = None,
    timeout: float = 30.0,
) -> list:
    """Run ``query_text`` and map each result row to a Fact.

    ``mapping`` names the result variables holding ``nm``, ``subject`` and
    ``object``; a value of the form ``"=name"`` is a constant. The rows are
    returned, never merged into a store.
    """
    if not allow_network:
        raise NetworkDisabledError("SPARQL access requires --allow-network")
    import json
    import os

    endpoint = endpoint or os.environ.get(SPARQL_ENDPOINT_ENV)
    if not endpoint:
        raise SparqlError(f"no endpoint given and {SPARQL_ENDPOINT_ENV} is unset")
    mapping = mapping or {"nm": "nm", "subject": "subject", "object": "object"}
    get = transport or _http_get
    try:
        status, body = get(
            endpoint,
            {"query": query_text, "format": "json"},
            {"Accept": "application/sparql-results+json"},
            timeout,
        )
    except OSError as exc:  # includes requests.RequestException
        raise SparqlError(f"network error: {exc}") from exc
    if status != 200:
        raise SparqlError(f"SPARQL endpoint returned HTTP {status}")
    try:
        bindings = json.loads(body)["results"]["bindings"]
    except (ValueError, KeyError, TypeError) as exc:
        raise SparqlError(f"malformed SPARQL response: {exc}") from None
    facts = []
    for i, row in enumerate(bindings):
        values = {}
        for key in ("nm", "subject", "object"):
            source = mapping[key]
            if source.startswith("="):
                values[key] = normalize_name(source[1:])
            elif source in row:
                values[key] = _binding_value(row[source])
            else:
                raise SparqlError(f"row {i}: variable {source!r} missing for {key}")
        try:
            facts.append(Fact(values["nm"], values["subject"], values["object"]))
        except StoreError as exc:
            raise SparqlError(f"row {i}: {exc}") from None
    return facts
