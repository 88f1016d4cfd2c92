"""EntailmentBank ingestion and stepwise training-sample extraction.

Input files are line-delimited JSON, one tree per line, with fields
``id``, ``hypothesis``, ``context`` (either a ``sent1: ... sent2: ...``
block or an id->text map), and ``proof`` (a DSL string). Lines starting
with an underscore-keyed header record (``{"_config": ...}``) are skipped.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .prooftree import (
    EntailmentTree,
    Fact,
    NodeId,
    NodeKind,
    ProofError,
    ProofStep,
    build_tree,
    parse_proof,
    serialize_proof,
)


class RecordError(Exception):
    """A dataset line could not be turned into a valid TreeInstance."""

    def __init__(self, line_no: int, cause: Exception | str):
        self.line_no = line_no
        self.cause = cause
        super().__init__(f"line {line_no}: {cause}")


@dataclass(frozen=True)
class TreeInstance:
    """One benchmark tree: hypothesis, context (with distractors), gold tree."""

    id: str
    task: int
    hypothesis: str
    context: tuple[Fact, ...]
    gold_tree: EntailmentTree


@dataclass(frozen=True)
class StepwiseSample:
    """One training instance: context plus prior steps -> next step(s).

    ``target_steps`` has length 1 for the per-step strategy and holds the
    whole proof for the full-tree strategy.
    """

    instance_id: str
    hypothesis: str
    context: tuple[Fact, ...]
    prior_steps: tuple[ProofStep, ...]
    target_steps: tuple[ProofStep, ...]

    @property
    def target_step(self) -> ProofStep:
        return self.target_steps[0]


@dataclass
class LoadResult:
    instances: list[TreeInstance] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.instances)

    def __len__(self):
        return len(self.instances)


_SENT_BLOCK_RE = re.compile(r"\b(sent[0-9]+):", re.IGNORECASE)


def parse_context_block(block: str) -> list[Fact]:
    """Split a ``sent1: text sent2: text`` block into facts."""
    marks = list(_SENT_BLOCK_RE.finditer(block))
    facts = []
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(block)
        text = block[m.end():end].strip()
        facts.append(Fact(NodeId.parse(m.group(1)), text))
    return facts


def _context_from_record(raw) -> list[Fact]:
    if isinstance(raw, str):
        return parse_context_block(raw)
    if isinstance(raw, dict):
        return [Fact(NodeId.parse(k), v) for k, v in raw.items()]
    raise ValueError(f"context must be a string block or an id->text map, got {type(raw).__name__}")


def instance_from_record(record: dict, task: int) -> TreeInstance:
    hypothesis = record["hypothesis"].strip()
    context = _context_from_record(record["context"])
    steps = parse_proof(record["proof"])
    tree = build_tree(hypothesis, context, steps, mode="strict")
    return TreeInstance(
        id=str(record["id"]),
        task=task,
        hypothesis=hypothesis,
        context=tuple(context),
        gold_tree=tree,
    )


def load_entailmentbank(path, task: int, tolerant: bool = False) -> LoadResult:
    """Load one split file; strict ingestion aborts on the first bad line,
    tolerant ingestion skips it with a diagnostic."""
    if task not in (1, 2, 3):
        raise ValueError(f"task must be 1, 2, or 3, got {task}")
    result = LoadResult()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                if any(k.startswith("_") for k in record):
                    continue
                result.instances.append(instance_from_record(record, task))
            except (ProofError, ValueError, KeyError) as exc:
                err = RecordError(line_no, exc)
                if not tolerant:
                    raise err from exc
                result.diagnostics.append(str(err))
    return result


def extract_stepwise_samples(instance: TreeInstance, strategy: str = "per-step") -> list[StepwiseSample]:
    """Turn a gold tree into training samples.

    per-step: one sample per gold step, priors = the steps before it in
    gold order. full-tree: a single sample targeting the whole proof.
    """
    steps = instance.gold_tree.steps
    base = dict(
        instance_id=instance.id,
        hypothesis=instance.hypothesis,
        context=instance.context,
    )
    if strategy == "per-step":
        return [
            StepwiseSample(**base, prior_steps=steps[:j], target_steps=(step,))
            for j, step in enumerate(steps)
        ]
    if strategy == "full-tree":
        return [StepwiseSample(**base, prior_steps=(), target_steps=steps)]
    raise ValueError(f"unknown strategy {strategy!r}")


def format_model_input(sample: StepwiseSample) -> str:
    """Deterministic single-line generator input.

    Prior intermediate conclusions are injected into the context block as
    intN pseudo-facts, in prior-step order.
    """
    parts = []
    for fact in sample.context:
        parts.append(f"{fact.id}: {fact.text}")
    for step in sample.prior_steps:
        if step.conclusion.kind is NodeKind.INT:
            parts.append(f"{step.conclusion}: {step.conclusion_text}")
    context_block = " ".join(parts)
    proof_block = serialize_proof(sample.prior_steps)
    return (
        f"$hypothesis$ = {sample.hypothesis} ; "
        f"$context$ = {context_block} ; "
        f"$proof$ = {proof_block}"
    )


def sample_to_record(sample: StepwiseSample) -> dict:
    """External line-delimited representation of a stepwise sample."""
    return {
        "instance_id": sample.instance_id,
        "input": format_model_input(sample),
        "target": serialize_proof(sample.target_steps),
    }
