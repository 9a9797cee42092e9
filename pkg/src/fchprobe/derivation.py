"""Derived facts from the four rule schemata: negation, inverse, symmetry, transitivity."""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Iterable, Optional

from .knowledge import (
    Fact,
    FactStore,
    RelationCategory,
    RelationMeta,
    RelationProp,
)


class DerivationError(ValueError):
    pass


class Rule(str, Enum):
    NEG = "Neg"
    INVERSE = "Inverse"
    SYM = "Sym"
    TRANS = "Trans"
    COMPOSITE = "Composite"


@dataclass(frozen=True, order=True)
class DerivedFact:
    fact: Fact
    rule: Rule
    parents: tuple

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        if not self.parents:
            raise DerivationError(f"derived fact {self.fact} has no parents")

    def to_json(self) -> dict:
        rec = self.fact.to_json()
        rec["rule"] = self.rule.value
        rec["parents"] = [p.to_json() for p in self.parents]
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "DerivedFact":
        return cls(Fact.from_json(rec), Rule(rec["rule"]), tuple(Fact.from_json(p) for p in rec["parents"]))

    @property
    def source_nm(self) -> str:
        return self.parents[0].nm


@dataclass(frozen=True)
class NegDomainPolicy:
    """Which (subject, object) pairs negation-as-failure may assert.

    With ``entities`` unset the domain is every known subject of the relation
    paired with every known object. Otherwise it is ``entities`` squared.
    At most ``cap`` pairs are kept, sampled with ``seed``.
    """

    entities: Optional[tuple] = None
    exclude_identity: bool = True
    cap: Optional[int] = 1000
    seed: int = 0


NEG_PREFIX = "not_"
INVERSE_SUFFIX = "_inv"

# natural inverse names for active-voice verbs
INVERSE_OVERRIDES = {
    "influence_by": ("influence", RelationCategory.VERB_ACTIVE),
    "follows": ("followed_by", RelationCategory.VERB_PASSIVE),
    "replaces": ("replaced_by", RelationCategory.VERB_PASSIVE),
    "precedes": ("preceded_by", RelationCategory.VERB_PASSIVE),
    "influences": ("influenced_by", RelationCategory.VERB_PASSIVE),
    "succeeds": ("succeeded_by", RelationCategory.VERB_PASSIVE),
}


_VOICE_FLIP = {
    RelationCategory.VERB_PASSIVE: RelationCategory.VERB_ACTIVE,
    RelationCategory.VERB_ACTIVE: RelationCategory.VERB_PASSIVE,
}


def negated_name(nm: str) -> str:
    return NEG_PREFIX + nm


def positive_name(nm: str) -> str:
    return nm[len(NEG_PREFIX):] if nm.startswith(NEG_PREFIX) else nm


def inverse_relation(meta: RelationMeta) -> tuple:
    """Name and category of the inverse predicate of ``meta``."""
    if meta.inverse:
        return meta.inverse, _VOICE_FLIP.get(meta.category, meta.category)
    if meta.nm in INVERSE_OVERRIDES:
        return INVERSE_OVERRIDES[meta.nm]
    if meta.category is RelationCategory.VERB_PASSIVE and meta.nm.endswith("_by"):
        return meta.nm[: -len("_by")], RelationCategory.VERB_ACTIVE
    return meta.nm + INVERSE_SUFFIX, meta.category


def _meta(store: FactStore, nm: str, prop: RelationProp) -> RelationMeta:
    meta = store.relations.get(nm)
    if meta is None:
        raise DerivationError(f"unknown relation {nm!r}")
    if prop not in meta.props:
        raise DerivationError(f"rule {prop.value} is not allowed for {nm!r}")
    return meta


def derive_negation(
    store: FactStore,
    nm: str,
    policy: Optional[NegDomainPolicy] = None,
    positive: Iterable[tuple] = (),
) -> list:
    """``not_nm(S, O)`` for domain pairs where ``nm(S, O)`` is not known.

    ``positive`` adds pairs that count as known besides the stored ones (for
    negating against a closure). Each result's parents are the stored
    ``nm`` facts mentioning S or O; pairs with no such fact are skipped.
    """
    _meta(store, nm, RelationProp.NEG)
    policy = policy or NegDomainPolicy()
    known = store.pairs(nm) | set(positive)
    if policy.entities is None:
        subjects = sorted({s for s, _ in known})
        objects = sorted({o for _, o in known})
    else:
        subjects = objects = sorted(set(policy.entities))
    candidates = [
        (s, o)
        for s, o in product(subjects, objects)
        if (s, o) not in known and not (policy.exclude_identity and s == o)
    ]
    if policy.cap is not None and len(candidates) > policy.cap:
        candidates = sorted(random.Random(policy.seed).sample(candidates, policy.cap))
    out = []
    new_nm = negated_name(nm)
    for s, o in candidates:
        parents = sorted(set(
            store.by_subject(nm, s) + store.by_object(nm, s) + store.by_subject(nm, o) + store.by_object(nm, o)
        ))
        if parents:
            out.append(DerivedFact(Fact(new_nm, s, o), Rule.NEG, tuple(parents)))
    return out


def derive_inverse(store: FactStore, nm: str, nm_new: Optional[str] = None) -> list:
    """``nm_new(O, S)`` for every ``nm(S, O)``."""
    meta = _meta(store, nm, RelationProp.INVERSE)
    if nm_new is None:
        nm_new = inverse_relation(meta)[0]
    if nm_new == nm or nm_new in store.relations or store.pairs(nm_new):
        raise DerivationError(f"inverse name {nm_new!r} collides with an existing predicate")
    facts = sorted(Fact(nm, s, o) for s, o in store.pairs(nm))
    return [DerivedFact(Fact(nm_new, f.object, f.subject), Rule.INVERSE, (f,)) for f in facts]


def _step_rule(base: Rule, parents: Iterable[Fact], known: dict) -> Rule:
    return Rule.COMPOSITE if any(known.get(p) is not None for p in parents) else base


def _symmetric_step(nm: str, known: dict) -> list:
    """Symmetric completion of ``known`` (fact -> DerivedFact, None when ground)."""
    out = []
    for f in sorted(known):
        if f.nm != nm:
            continue
        mirror = Fact(nm, f.object, f.subject)
        if mirror not in known:
            out.append(DerivedFact(mirror, _step_rule(Rule.SYM, (f,), known), (f,)))
    for d in out:
        known[d.fact] = d
    return out


def _transitive_step(nm: str, known: dict) -> list:
    """Semi-naive transitive closure of ``known``; returns the new facts in discovery order."""
    pairs = {(f.subject, f.object) for f in known if f.nm == nm}
    succ: dict = {}
    pred: dict = {}
    for s, o in pairs:
        succ.setdefault(s, set()).add(o)
        pred.setdefault(o, set()).add(s)
    out = []
    delta = sorted(pairs)
    while delta:
        fresh = []
        for a, b in delta:
            # (a,b) as the first hop, then as the second hop
            joins = [(a, c, b) for c in sorted(succ.get(b, ()))]
            joins += [(z, b, a) for z in sorted(pred.get(a, ()))]
            for s, o, mid in joins:
                if (s, o) in pairs:
                    continue
                first, second = Fact(nm, s, mid), Fact(nm, mid, o)
                parents = (first, second)
                d = DerivedFact(Fact(nm, s, o), _step_rule(Rule.TRANS, parents, known), parents)
                pairs.add((s, o))
                succ.setdefault(s, set()).add(o)
                pred.setdefault(o, set()).add(s)
                known[d.fact] = d
                out.append(d)
                fresh.append((s, o))
        delta = sorted(fresh)
    return out


def _ground(store: FactStore, nm: str) -> dict:
    return {Fact(nm, s, o): None for s, o in store.pairs(nm)}


def saturate_symmetric(store: FactStore, nm: str) -> list:
    _meta(store, nm, RelationProp.SYM)
    return sorted(_symmetric_step(nm, _ground(store, nm)))


def saturate_transitive(store: FactStore, nm: str) -> list:
    """Facts added by closing ``nm`` under transitivity (to a fixpoint)."""
    _meta(store, nm, RelationProp.TRANS)
    return sorted(_transitive_step(nm, _ground(store, nm)))


def derive_all(
    store: FactStore,
    relation_category,
    neg_policy: Optional[NegDomainPolicy] = None,
    composite_order: str = "sym-trans",
) -> list:
    """Apply every rule allowed for each predicate of ``relation_category``.

    Symmetric and transitive closure run in ``composite_order``; negation is
    taken against the ground facts plus everything those closures added.
    """
    rc = RelationCategory(relation_category)
    if composite_order not in ("sym-trans", "trans-sym"):
        raise DerivationError(f"unknown composite order {composite_order!r}")
    order = [RelationProp.SYM, RelationProp.TRANS]
    if composite_order == "trans-sym":
        order.reverse()
    out: list = []
    for nm in sorted(n for n, m in store.relations.items() if m.category is rc):
        props = store.relations[nm].props
        known = _ground(store, nm)
        for prop in order:
            if prop not in props:
                continue
            step = _symmetric_step if prop is RelationProp.SYM else _transitive_step
            out.extend(step(nm, known))
        if RelationProp.INVERSE in props:
            out.extend(derive_inverse(store, nm))
        if RelationProp.NEG in props:
            positive = {(f.subject, f.object) for f in known}
            out.extend(derive_negation(store, nm, neg_policy, positive))
    return sorted(out, key=lambda d: (d.fact, d.rule.value))


def check_provenance(d: DerivedFact, store: FactStore, derived: Iterable[DerivedFact] = ()) -> bool:
    """Replay ``d``'s rule on its parents and confirm it yields ``d.fact``.

    Parents must be stored facts or facts in ``derived``.
    """
    available = set(store.facts) | {x.fact for x in derived}
    if not all(p in available for p in d.parents):
        return False
    f, ps = d.fact, d.parents
    sym_ok = len(ps) == 1 and ps[0].nm == f.nm and (ps[0].subject, ps[0].object) == (f.object, f.subject)
    trans_ok = (
        len(ps) == 2
        and ps[0].nm == ps[1].nm == f.nm
        and ps[0].subject == f.subject
        and ps[0].object == ps[1].subject
        and ps[1].object == f.object
    )
    if d.rule is Rule.SYM:
        return sym_ok
    if d.rule is Rule.TRANS:
        return trans_ok
    if d.rule is Rule.COMPOSITE:
        return sym_ok or trans_ok
    if d.rule is Rule.INVERSE:
        p = ps[0]
        return len(ps) == 1 and (p.subject, p.object) == (f.object, f.subject) and f.nm != p.nm
    # negation: every parent is a positive fact touching S or O, and nm(S, O) is absent
    nm = positive_name(f.nm)
    return (
        f.nm == negated_name(nm)
        and Fact(nm, f.subject, f.object) not in available
        and all(p.nm == nm and {f.subject, f.object} & {p.subject, p.object} for p in ps)
    )
