"""Hard-negative construction for contrastive training.

Two kinds of near-miss steps are built from each gold step:

* vanilla: same premises, conclusion replaced by the text of a randomly
  chosen premise (the repetition error).
* enhanced: one premise swapped for an unused context fact, a reasoner
  generates a fresh conclusion, and a checker score gates the result
  (the invalid-entailment error).
"""

from __future__ import annotations

import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field

from .dataset import TreeInstance
from .prooftree import Fact, NodeId, NodeKind, ProofStep, serialize_step


class MissingText(Exception):
    """A premise has no known sentence text."""


class EmptyCandidates(Exception):
    """BM25 ranking needs at least one candidate."""


class NoCandidates(Exception):
    """No context fact is available for premise substitution."""


@dataclass(frozen=True)
class HardNegative:
    instance_id: str
    base_step: ProofStep
    negative_step: ProofStep
    kind: str  # vanilla | enhanced
    checker_score: float | None = None  # enhanced only
    selector: str | None = None  # enhanced only: random | bm25

    def to_record(self) -> dict:
        record = {
            "instance_id": self.instance_id,
            "kind": self.kind,
            "base_step": serialize_step(self.base_step),
            "negative_step": serialize_step(self.negative_step),
            "negative_conclusion": self.negative_step.conclusion_text,
        }
        if self.kind == "enhanced":
            record["checker_score"] = self.checker_score
            record["selector"] = self.selector
        return record


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def bm25_rank(query: str, candidates, params: Bm25Params = Bm25Params()):
    """Okapi BM25 scores for candidates against the query, descending.

    idf = ln((N - df + 0.5) / (df + 0.5) + 1); ties break by ascending
    node index so ranking is deterministic.
    """
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidates("bm25_rank requires at least one candidate")
    docs = [tokenize(f.text) for f in candidates]
    n_docs = len(docs)
    avgdl = sum(len(d) for d in docs) / n_docs
    df = Counter(t for d in docs for t in set(d))
    query_terms = tokenize(query)
    scored = []
    for fact, doc in zip(candidates, docs):
        tf = Counter(doc)
        norm = params.k1 * (1 - params.b + params.b * len(doc) / avgdl) if avgdl else params.k1
        score = 0.0
        for term in query_terms:
            f = tf.get(term, 0)
            if not f:
                continue
            idf = math.log((n_docs - df[term] + 0.5) / (df[term] + 0.5) + 1)
            score += idf * f * (params.k1 + 1) / (f + norm)
        scored.append((fact.id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def make_vanilla_negative(step: ProofStep, texts: dict, rng: random.Random,
                          instance_id: str = "") -> HardNegative:
    """Repetition negative: conclusion text becomes a random premise's text."""
    for p in step.premises:
        if p not in texts:
            raise MissingText(f"no text for premise {p}")
    chosen = step.premises[rng.randrange(len(step.premises))]
    negative = ProofStep(step.premises, step.conclusion, texts[chosen])
    return HardNegative(instance_id, step, negative, kind="vanilla")


def sample_premise_substitution(step: ProofStep, context, selector: str,
                                rng: random.Random, texts: dict | None = None):
    """Replace exactly one premise (chosen uniformly) with an unused context
    fact; the replacement is uniform for ``random`` and the top BM25 hit
    against the replaced premise's text for ``bm25``."""
    pool = [f for f in context if f.id not in step.premises]
    if not pool:
        raise NoCandidates("no context fact outside the step's premises")
    slot = rng.randrange(len(step.premises))
    if selector == "random":
        replacement = pool[rng.randrange(len(pool))].id
    elif selector == "bm25":
        replaced = step.premises[slot]
        query = (texts or {}).get(replaced)
        if query is None:
            query = next((f.text for f in context if f.id == replaced), None)
        if query is None:
            raise MissingText(f"no text for replaced premise {replaced}")
        replacement = bm25_rank(query, pool)[0][0]
    else:
        raise ValueError(f"selector must be random or bm25, got {selector!r}")
    premises = list(step.premises)
    premises[slot] = replacement
    return premises


def format_reasoner_io(premises, conclusion: str | None = None):
    """Natural-language reasoner formatting: premises joined with "and"
    behind "Because"; the training target starts with "Therefore"."""
    premises = list(premises)
    if not premises:
        raise ValueError("premises must be non-empty")
    source = "Because " + " and ".join(premises) + "."
    target = f"Therefore, {conclusion}." if conclusion is not None else None
    return source, target


_THEREFORE_RE = re.compile(r"^\s*therefore\s*,?\s*", re.IGNORECASE)


def parse_reasoner_output(text: str) -> str:
    """Strip the "Therefore," frame from a reasoner generation."""
    text = _THEREFORE_RE.sub("", text.strip())
    return text.rstrip(".").strip() or text.strip()


def make_enhanced_negative(step: ProofStep, context, reasoner, checker,
                           threshold: float = 0.9, selector: str = "random",
                           rng: random.Random | None = None,
                           texts: dict | None = None,
                           gold_premise_sets=(), instance_id: str = "",
                           max_attempts: int = 10,
                           max_tokens: int = 64) -> HardNegative | None:
    """Invalid-entailment negative, or None when the checker filters it.

    Premise recombinations colliding with any gold premise set are
    re-sampled up to ``max_attempts`` times, then skipped (None).
    """
    rng = rng if rng is not None else random.Random(0)
    texts = dict(texts or {})
    for fact in context:
        texts.setdefault(fact.id, fact.text)
    gold_sets = {frozenset(s) for s in gold_premise_sets}
    gold_sets.add(step.premise_set)

    premises = None
    for _ in range(max_attempts):
        candidate = sample_premise_substitution(step, context, selector, rng, texts)
        if frozenset(candidate) not in gold_sets:
            premises = candidate
            break
    if premises is None:
        return None

    premise_texts = []
    for p in premises:
        if p not in texts:
            raise MissingText(f"no text for premise {p}")
        premise_texts.append(texts[p])
    prompt, _ = format_reasoner_io(premise_texts)
    conclusion = parse_reasoner_output(reasoner.generate(prompt, max_tokens))
    score = checker.check(premise_texts, conclusion)
    if score < threshold:
        return None
    negative = ProofStep(premises, step.conclusion, conclusion)
    return HardNegative(instance_id, step, negative, kind="enhanced",
                        checker_score=score, selector=selector)


def instance_texts(instance: TreeInstance) -> dict:
    """Node id -> sentence text for every node of an instance."""
    texts: dict[NodeId, str] = {f.id: f.text for f in instance.context}
    texts.update(instance.gold_tree.intermediates)
    texts[NodeId.hypothesis()] = instance.hypothesis
    return texts


@dataclass
class NegativesConfig:
    kinds: tuple[str, ...] = ("vanilla",)
    selector: str = "random"
    threshold: float = 0.9
    seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        for kind in self.kinds:
            if kind not in ("vanilla", "enhanced"):
                raise ValueError(f"unknown negative kind {kind!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")


@dataclass
class CorpusStats:
    candidates: Counter = field(default_factory=Counter)
    retained: Counter = field(default_factory=Counter)
    errors: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "_stats": True,
            "candidates": {f"task{t}/{k}": v for (t, k), v in sorted(self.candidates.items())},
            "retained": {f"task{t}/{k}": v for (t, k), v in sorted(self.retained.items())},
            "errors": self.errors,
        }


def _step_rng(seed: int, instance_id: str, step_index: int, kind: str) -> random.Random:
    return random.Random(f"{seed}/{instance_id}/{step_index}/{kind}")


def build_negative_corpus(instances, config: NegativesConfig,
                          reasoner=None, checker=None):
    """Build negatives over gold steps of all instances.

    Deterministic given (inputs, seed, client behavior): each step gets its
    own seeded RNG, so results are independent of execution interleaving.
    Client failures are recorded in stats.errors, never silently dropped.
    """
    if "enhanced" in config.kinds and (reasoner is None or checker is None):
        raise ValueError("enhanced negatives require reasoner and checker clients")

    negatives: list[HardNegative] = []
    stats = CorpusStats()

    def one_step(instance, texts, gold_sets, idx, step):
        # returns (kind, negative-or-None, error-or-None) triples; counting
        # happens in the main thread so stats stay race-free under
        # parallelism, and a failing kind never drops the other kind
        out = []
        for kind in config.kinds:
            rng = _step_rng(config.seed, instance.id, idx, kind)
            try:
                if kind == "vanilla":
                    neg = make_vanilla_negative(step, texts, rng, instance.id)
                else:
                    neg = make_enhanced_negative(
                        step, instance.context, reasoner, checker,
                        threshold=config.threshold, selector=config.selector,
                        rng=rng, texts=texts, gold_premise_sets=gold_sets,
                        instance_id=instance.id)
                out.append((kind, neg, None))
            except Exception as exc:
                out.append((kind, None, f"{instance.id}/step{idx + 1}/{kind}: {exc}"))
        return out

    jobs = []
    for instance in instances:
        texts = instance_texts(instance)
        gold_sets = [s.premise_set for s in instance.gold_tree.steps]
        for idx, step in enumerate(instance.gold_tree.steps):
            jobs.append((instance, texts, gold_sets, idx, step))

    if config.parallelism > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(lambda job: one_step(*job), jobs))
    else:
        results = [one_step(*job) for job in jobs]

    for job, chunk in zip(jobs, results):
        instance = job[0]
        for kind, neg, error in chunk:
            if error is not None:
                stats.errors.append(error)
                continue
            stats.candidates[(instance.task, kind)] += 1
            if neg is not None:
                stats.retained[(instance.task, kind)] += 1
                negatives.append(neg)
    return negatives, stats


def export_reasoner_pairs(instances) -> list[tuple[str, str]]:
    """(input, target) training pairs for the reasoner, one per gold step."""
    pairs = []
    for instance in instances:
        texts = instance_texts(instance)
        for step in instance.gold_tree.steps:
            premise_texts = [texts[p] for p in step.premises]
            conclusion = (step.conclusion_text
                          if step.conclusion.kind is NodeKind.INT
                          else instance.hypothesis)
            source, target = format_reasoner_io(premise_texts, conclusion)
            pairs.append((source, target))
    return pairs
