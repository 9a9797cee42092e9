"""Command-line pipeline: ingest, derive, gen, ask, eval, report and selftest."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import casegen, derivation, evaluation, knowledge, llmclient, mtl, selftest
from ._io import atomic_write_text, dumps, read_jsonl, write_jsonl
from .intervals import IntervalSet, MtlCompiler

log = logging.getLogger("fchprobe")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every setting that can change an output byte. Paths are deliberately excluded."""

    seed: int = 0
    universe: tuple = mtl.DEFAULT_UNIVERSE
    until_mode: str = "exact"
    theta_e: float = evaluation.DEFAULT_THRESHOLD
    theta_n: float = evaluation.DEFAULT_THRESHOLD
    # derivation
    neg_cap: Optional[int] = 1000
    composite_order: str = "sym-trans"
    # generation
    n: int = 100
    balance: float = 0.5
    max_depth: int = 2
    max_bound: int = 50
    mutate: bool = False
    sample_size: Optional[int] = None
    # evaluation
    equiv: str = "exact"
    refusal_patterns: tuple = evaluation.DEFAULT_REFUSALS
    # endpoint
    model: str = "mock"
    temperature: float = 0.0
    timeout: float = 60.0
    parallel: int = 4
    requests_per_minute: Optional[float] = 60.0
    allow_network: bool = False

    def validate(self) -> "RunConfig":
        try:
            mtl.TimeBound(*self.universe)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid universe {self.universe!r}: {exc}") from None
        if self.until_mode not in ("paper", "exact"):
            raise ConfigError(f"until_mode must be paper or exact, got {self.until_mode!r}")
        for name in ("theta_e", "theta_n", "balance"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be within [0, 1]")
        if self.composite_order not in ("sym-trans", "trans-sym"):
            raise ConfigError(f"composite_order must be sym-trans or trans-sym, got {self.composite_order!r}")
        if self.equiv not in ("exact", "synonym-table", "embedding-endpoint"):
            raise ConfigError(f"unknown equivalence mode {self.equiv!r}")
        if self.n < 0 or self.max_depth < 0 or self.max_bound < 0:
            raise ConfigError("n, max_depth and max_bound must be non-negative")
        if self.parallel < 1:
            raise ConfigError("parallel must be at least 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        return self

    def to_json(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["universe"] = list(self.universe)
        rec["refusal_patterns"] = list(self.refusal_patterns)
        return rec

    @property
    def hash(self) -> str:
        return hashlib.sha256(dumps(self.to_json()).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_json(cls, rec: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(rec) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        rec = dict(rec)
        if "universe" in rec:
            rec["universe"] = tuple(rec["universe"])
        if "refusal_patterns" in rec:
            rec["refusal_patterns"] = tuple(rec["refusal_patterns"])
        return cls(**rec)


# --- config plumbing ------------------------------------------------------------------


def parse_universe(text: str) -> tuple:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return lo, hi


def _override_keys() -> list:
    return [f.name for f in dataclasses.fields(RunConfig)]


def build_config(args: argparse.Namespace) -> RunConfig:
    rec: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                rec = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(rec, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = RunConfig.from_json(rec)
    for key in _override_keys():
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, tuple(value) if key == "universe" else value)
    return cfg.validate()


def snapshot(cfg: RunConfig, command: str, out_dir) -> None:
    """Write the config an output was produced under next to that output."""
    payload = {"command": command, "config": cfg.to_json(), "config_hash": cfg.hash}
    atomic_write_text(Path(out_dir) / f"run-config.{command}.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stamp(records, cfg: RunConfig):
    for rec in records:
        rec = dict(rec)
        rec["config_hash"] = cfg.hash
        yield rec


def _load_store(path) -> knowledge.FactStore:
    return knowledge.load_store_dir(path)


def _load_cases(path) -> list:
    return [casegen.QaCase.from_json(rec) for _, rec in read_jsonl(path)]


def _sample_dir() -> Path:
    return Path(str(resources.files("fchprobe").joinpath("data/sample")))


# --- subcommands -------------------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    if args.sparql:
        mapping = json.loads(args.mapping) if args.mapping else None
        query_text = Path(args.sparql).read_text(encoding="utf-8")
        facts = knowledge.fetch_sparql(args.endpoint, query_text, mapping, allow_network=cfg.allow_network)
        write_jsonl(out / "sparql_facts.jsonl", _stamp((f.to_json() for f in facts), cfg))
        print(f"fetched {len(facts)} facts (not merged) into {out / 'sparql_facts.jsonl'}")
    src = Path(args.source) if args.source else _sample_dir()
    store = knowledge.load_store(
        args.facts or src / "facts.jsonl",
        args.entities or src / "entities.jsonl",
        args.relations or src / "relations.jsonl",
    )
    knowledge.save_store(store, out)
    # rewrite with the config hash; loaders ignore the extra field
    for name in ("facts.jsonl", "entities.jsonl", "relations.jsonl"):
        write_jsonl(out / name, _stamp((r for _, r in read_jsonl(out / name)), cfg))
    events = knowledge.timestamp_events(store)
    write_jsonl(out / "events.jsonl", _stamp(({"name": e.name, "start": e.start, "end": e.end} for e in events), cfg))
    snapshot(cfg, "ingest", out)
    print(f"stored {len(store)} facts, {len(store.entities)} entities, {len(events)} events in {out}")
    return EXIT_OK


def cmd_derive(args, cfg: RunConfig) -> int:
    store = _load_store(args.store)
    policy = derivation.NegDomainPolicy(cap=cfg.neg_cap, seed=cfg.seed)
    cats = list(knowledge.RelationCategory) if args.category == "all" else [knowledge.RelationCategory(args.category)]
    derived = []
    for rc in cats:
        derived.extend(derivation.derive_all(store, rc, policy, cfg.composite_order))
    derived.sort(key=lambda d: (d.fact, d.rule.value))
    out = Path(args.out)
    write_jsonl(out, _stamp((d.to_json() for d in derived), cfg))
    snapshot(cfg, "derive", out.parent)
    print(f"derived {len(derived)} facts into {out}")
    return EXIT_OK


def cmd_gen(args, cfg: RunConfig) -> int:
    both = not (args.relational or args.temporal)
    store = _load_store(args.store) if args.store else None
    templates = casegen.TemplateSet.load(args.templates) if args.templates else casegen.default_templates()
    cases: list = []
    if args.relational or both:
        if args.derived is None or store is None:
            raise ConfigError("relational cases need --derived and --store")
        derived = [derivation.DerivedFact.from_json(rec) for _, rec in read_jsonl(args.derived)]
        cases.extend(casegen.gen_relational_cases(
            derived, templates, mutate=cfg.mutate, seed=cfg.seed, store=store, sample_size=cfg.sample_size
        ))
    if (args.temporal or both) and cfg.n > 0:
        if store is None:
            raise ConfigError("temporal cases need --store")
        h = mtl.History.from_events(knowledge.timestamp_events(store), cfg.universe)
        sampler = casegen.SamplerConfig(cfg.max_depth, cfg.max_bound)
        cases.extend(casegen.gen_temporal_cases(
            h, cfg.n, cfg.seed, sampler, cfg.balance, templates, store, cfg.until_mode
        ))
    if args.context:
        docs = [line.strip() for line in Path(args.context).read_text(encoding="utf-8").splitlines() if line.strip()]
        cases = [casegen.attach_context(c, docs) for c in cases]
    out = Path(args.out)
    write_jsonl(out, _stamp((c.to_json() for c in cases), cfg))
    snapshot(cfg, "gen", out.parent)
    print(f"generated {len(cases)} cases into {out}")
    return EXIT_OK


def cmd_ask(args, cfg: RunConfig) -> int:
    cases = _load_cases(args.cases)
    templates = casegen.TemplateSet.load(args.templates) if args.templates else casegen.default_templates()
    prompts = [casegen.render_prompt(c, templates) for c in cases]
    if args.mock is not None:
        store = _load_store(args.store) if args.store else None
        backend = llmclient.MockBackend(args.mock or None, {c.id: c for c in cases}, store, cfg.seed)
        endpoint = llmclient.EndpointConfig(model="mock", max_parallel=cfg.parallel, requests_per_minute=None)
        client = llmclient.ChatClient(endpoint, backend=backend)
    else:
        if not cfg.allow_network:
            raise ConfigError("live endpoints need --allow-network (or use --mock)")
        endpoint = llmclient.EndpointConfig(
            base_url=args.endpoint, model=cfg.model, temperature=cfg.temperature, timeout=cfg.timeout,
            max_parallel=cfg.parallel, requests_per_minute=cfg.requests_per_minute, cache_dir=args.cache,
        )
        client = llmclient.ChatClient(endpoint)
    results = client.chat_batch(prompts, [c.id for c in cases])
    records = [{"case_id": c.id, "raw_text": r.text} for c, r in zip(cases, results) if r.ok]
    failures = [(c.id, r.error) for c, r in zip(cases, results) if not r.ok]
    out = Path(args.out)
    write_jsonl(out, _stamp(records, cfg))
    snapshot(cfg, "ask", out.parent)
    print(f"wrote {len(records)} responses into {out}")
    for case_id, err in failures:
        print(f"error: {case_id}: {err}", file=sys.stderr)
    return EXIT_ERROR if failures else EXIT_OK


def _equiv(args, cfg: RunConfig) -> evaluation.EquivProvider:
    if cfg.equiv == "synonym-table":
        if not args.synonyms:
            raise ConfigError("--equiv synonym-table needs --synonyms")
        return evaluation.SynonymEquiv.load(args.synonyms)
    if cfg.equiv == "embedding-endpoint":
        if not args.embedding_endpoint:
            raise ConfigError("--equiv embedding-endpoint needs --embedding-endpoint")
        if not cfg.allow_network:
            raise ConfigError("the embedding endpoint needs --allow-network")
        return evaluation.EmbeddingEquiv(args.embedding_endpoint)
    return evaluation.EquivProvider()


def cmd_eval(args, cfg: RunConfig) -> int:
    cases = {c.id: c for c in _load_cases(args.cases)}
    responses = []
    for lineno, rec in read_jsonl(args.responses):
        case_id = rec.get("case_id")
        if case_id not in cases:
            raise evaluation.UnknownCaseError(f"{args.responses}:{lineno}: unknown case_id {case_id!r}")
        responses.append(evaluation.LlmResponse.parse(case_id, rec["raw_text"], cfg.refusal_patterns))
    store = _load_store(args.store) if args.store else None
    names = {x for c in cases.values() for f in c.ground_facts for x in (f.subject, f.object)}
    lexicon = casegen.surface_lexicon(store, names)
    default = evaluation.PatternExtractor(lexicon)
    extractor = evaluation.CommandExtractor(args.extractor, fallback=default) if args.extractor else default
    equiv = _equiv(args, cfg)

    def judge(resp):
        ground = evaluation.graph_from_facts(cases[resp.case_id].ground_facts)
        return evaluation.classify(resp, ground, cfg.theta_e, cfg.theta_n, equiv, extractor)

    with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
        verdicts = list(pool.map(judge, responses))
    out = Path(args.out)
    write_jsonl(out, _stamp((v.to_json() for v in verdicts), cfg))
    snapshot(cfg, "eval", out.parent)
    print(f"classified {len(verdicts)} responses into {out}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    cases = _load_cases(args.cases)
    verdicts = [evaluation.Verdict.from_json(rec) for _, rec in read_jsonl(args.verdicts)]
    rep = evaluation.report(evaluation.join_verdicts(cases, verdicts), {"config_hash": cfg.hash})
    out = Path(args.out)
    atomic_write_text(out / "report.json", rep.to_json())
    atomic_write_text(out / "report.csv", rep.to_csv())
    snapshot(cfg, "report", out)
    o = rep.overall
    print(f"{o['total']} verdicts, hallucination rate {o['hallucination_rate']:.4f} "
          + " ".join(f"{k}={v}" for k, v in o["counts"].items()))
    return EXIT_OK


class _ShiftedFinally(MtlCompiler):
    """Finally rule off by one year; used to check that the self-test catches it."""

    def finally_(self, b, child: IntervalSet) -> IntervalSet:
        return IntervalSet.from_spans((n1 - b.hi + 1, n2 - b.lo + 1) for n1, n2 in child)


FAULTS = {"finally-offset": _ShiftedFinally}


def cmd_selftest(args, cfg: RunConfig) -> int:
    factory = None
    if args.inject_fault:
        broken = FAULTS[args.inject_fault]
        factory = lambda mode: broken(mode, track_divergence=False)  # noqa: E731
    rep = selftest.run_selftest(args.n, cfg.seed, factory)
    print(rep.summary())
    if args.n > 0:
        selftest.write_gap_report(rep, args.gap_report)
        print(f"gap report written to {args.gap_report}")
    if not rep.ok:
        first = (rep.fixtures_failed or rep.exact_failures or rep.soundness_violations)[0]
        print(f"FAILED: {first}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=default, help="RNG seed (default 0)")
    g.add_argument("--config", default=default, help="JSON config file; flags override its values")
    g.add_argument("--universe", type=parse_universe, default=default, metavar="LO:HI", help="year universe (default 1:2024)")
    g.add_argument("--until-mode", dest="until_mode", choices=("paper", "exact"), default=default,
                   help="Until encoding used for temporal ground truth (default exact)")
    g.add_argument("--allow-network", dest="allow_network", action="store_const", const=True, default=default,
                   help="permit SPARQL, LLM and embedding HTTP calls")
    g.add_argument("-v", "--verbose", action="store_const", const=True, default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fchprobe", description="Probe chat models for factual errors with rule-derived questions.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("ingest", "load JSONL facts (bundled sample by default) into a store directory", cmd_ingest)
    p.add_argument("--source", help="directory holding facts/entities/relations.jsonl")
    p.add_argument("--facts")
    p.add_argument("--entities")
    p.add_argument("--relations")
    p.add_argument("--sparql", help="file with a SPARQL query whose rows are fetched alongside")
    p.add_argument("--endpoint", help=f"SPARQL endpoint (default ${knowledge.SPARQL_ENDPOINT_ENV})")
    p.add_argument("--mapping", help='JSON column mapping, e.g. {"nm":"=influenced_by","subject":"s","object":"o"}')
    p.add_argument("--out", required=True, help="store directory")

    p = add("derive", "apply the derivation rules to a store", cmd_derive)
    p.add_argument("--store", required=True)
    p.add_argument("--category", default="all", choices=["all"] + [c.value for c in knowledge.RelationCategory])
    p.add_argument("--neg-cap", dest="neg_cap", type=int, help="max negated pairs per predicate (default 1000)")
    p.add_argument("--composite-order", dest="composite_order", choices=("sym-trans", "trans-sym"))
    p.add_argument("--out", required=True, help="derived.jsonl path")

    p = add("gen", "generate Q&A cases", cmd_gen)
    p.add_argument("--store")
    p.add_argument("--derived")
    p.add_argument("--relational", action="store_true")
    p.add_argument("--temporal", action="store_true")
    p.add_argument("--n", type=int, help="number of temporal cases (default 100)")
    p.add_argument("--balance", type=float, help="share of Yes answers among temporal cases (default 0.5)")
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--max-bound", dest="max_bound", type=int)
    p.add_argument("--mutate", action="store_const", const=True, help="add antonym-mutated relational twins")
    p.add_argument("--sample-size", dest="sample_size", type=int, help="relational facts sampled before templating")
    p.add_argument("--templates", help="template JSON replacing the bundled one")
    p.add_argument("--context", help="text file, one context document per line, attached to every case")
    p.add_argument("--out", required=True, help="cases.jsonl path")

    p = add("ask", "query an LLM (or the mock) with every case", cmd_ask)
    p.add_argument("--cases", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mock", nargs="?", const="", metavar="DIR", help="offline mock; DIR holds <case_id>.txt fixtures")
    src.add_argument("--endpoint", help=f"chat-completions base URL (default ${llmclient.BASE_URL_ENV})")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--timeout", type=float)
    p.add_argument("--parallel", type=int)
    p.add_argument("--requests-per-minute", dest="requests_per_minute", type=float)
    p.add_argument("--cache", help="response cache directory")
    p.add_argument("--store", help="store directory (surface forms for the mock)")
    p.add_argument("--templates")
    p.add_argument("--out", required=True, help="responses.jsonl path")

    p = add("eval", "classify responses against the ground facts", cmd_eval)
    p.add_argument("--cases", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--store", help="store directory (surface forms for triple extraction)")
    p.add_argument("--theta-e", dest="theta_e", type=float)
    p.add_argument("--theta-n", dest="theta_n", type=float)
    p.add_argument("--equiv", choices=("exact", "synonym-table", "embedding-endpoint"))
    p.add_argument("--synonyms", help='JSONL of {"a","b"} pairs')
    p.add_argument("--embedding-endpoint", dest="embedding_endpoint")
    p.add_argument("--extractor", help="external triple extractor command (stdin text, JSONL triples out)")
    p.add_argument("--parallel", type=int)
    p.add_argument("--out", required=True, help="verdicts.jsonl path")

    p = add("report", "aggregate verdicts into report.json and report.csv", cmd_report)
    p.add_argument("--cases", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = add("selftest", "fixtures plus differential and Until soundness trials", cmd_selftest)
    p.add_argument("--n", type=int, default=1000, help="random trials per suite (default 1000)")
    p.add_argument("--gap-report", dest="gap_report", default="gap-report.json")
    p.add_argument("--inject-fault", dest="inject_fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # selftest's --n is a trial count, not the generation count
    n_trials = args.n if args.command == "selftest" else None
    if args.command == "selftest":
        args.n = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if n_trials is not None:
        args.n = n_trials
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
