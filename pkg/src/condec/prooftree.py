"""Entailment-tree data model: node identifiers, facts, proof steps, and
the proof DSL parser/serializer with structural validation.

The DSL is a `;`-separated list of clauses like::

    sent14 & sent5 -> int1: new york state is located in the northern hemisphere;
    int1 & sent23 -> int2: december is during the winter for new york state;
    int2 & sent15 -> hypothesis;

Identifiers are case-insensitive on input and canonical lowercase on output.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field


class ProofError(Exception):
    """Base class for all proof-tree errors."""


class BadIdentifier(ProofError):
    """Token does not match the sent/int/hypothesis grammar."""


class MalformedStep(ProofError):
    """A DSL clause violates the step grammar."""


class ForwardReference(ProofError):
    """A premise refers to an intermediate not yet concluded."""


class DuplicateConclusion(ProofError):
    """Two steps conclude the same intermediate node."""


class MissingHypothesisStep(ProofError):
    """Strict tree has no (or a misplaced) hypothesis-concluding step."""


class UnknownPremise(ProofError):
    """A sent premise is absent from the context."""


class UnknownNode(ProofError):
    """Node does not exist in the tree."""


class NodeKind(enum.Enum):
    SENT = "sent"
    INT = "int"
    HYPOTHESIS = "hypothesis"


_ID_RE = re.compile(r"^(?:(sent|int)([0-9]+)|(hypothesis))$", re.IGNORECASE)


@dataclass(frozen=True, order=True)
class NodeId:
    """Identifier of a tree node: ``sent<k>``, ``int<k>``, or ``hypothesis``."""

    kind: NodeKind = field(compare=False)
    index: int | None = field(default=None, compare=False)

    # sort key: sents before ints before hypothesis, then by index
    sort_index: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind is NodeKind.HYPOTHESIS:
            if self.index is not None:
                raise BadIdentifier("hypothesis takes no index")
        else:
            if not isinstance(self.index, int) or self.index < 1:
                raise BadIdentifier(f"{self.kind.value} index must be a positive integer")
        kind_rank = {NodeKind.SENT: 0, NodeKind.INT: 1, NodeKind.HYPOTHESIS: 2}[self.kind]
        object.__setattr__(self, "sort_index", (kind_rank, self.index or 0))

    @classmethod
    def parse(cls, token: str) -> "NodeId":
        m = _ID_RE.match(token.strip())
        if not m:
            raise BadIdentifier(f"not a valid node id: {token!r}")
        if m.group(3):
            return cls(NodeKind.HYPOTHESIS)
        kind = NodeKind(m.group(1).lower())
        return cls(kind, int(m.group(2)))

    @classmethod
    def sent(cls, index: int) -> "NodeId":
        return cls(NodeKind.SENT, index)

    @classmethod
    def int_(cls, index: int) -> "NodeId":
        return cls(NodeKind.INT, index)

    @classmethod
    def hypothesis(cls) -> "NodeId":
        return cls(NodeKind.HYPOTHESIS)

    def __str__(self) -> str:
        if self.kind is NodeKind.HYPOTHESIS:
            return "hypothesis"
        return f"{self.kind.value}{self.index}"


HYPOTHESIS = NodeId.hypothesis()

_FORBIDDEN_TEXT = (";", "->")


def _check_text(text: str, what: str) -> str:
    text = text.strip()
    if not text:
        raise MalformedStep(f"{what} must be non-empty")
    for delim in _FORBIDDEN_TEXT:
        if delim in text:
            raise MalformedStep(f"{what} may not contain {delim!r}: {text!r}")
    return text


@dataclass(frozen=True)
class Fact:
    """A context sentence or intermediate conclusion keyed by its node id."""

    id: NodeId
    text: str

    def __post_init__(self):
        if self.id.kind is NodeKind.HYPOTHESIS:
            raise BadIdentifier("facts must be sent or int nodes")
        object.__setattr__(self, "text", _check_text(self.text, f"text of {self.id}"))


class ProofStep:
    """One entailment step: premises -> conclusion.

    Premise order is kept as written, but equality treats premises as an
    unordered conjunction. ``conclusion_text`` is required for int
    conclusions and absent in the DSL for hypothesis conclusions (the
    negatives pipeline may attach one out-of-band).
    """

    __slots__ = ("premises", "conclusion", "conclusion_text")

    def __init__(self, premises, conclusion: NodeId, conclusion_text: str | None = None):
        premises = tuple(premises)
        if not premises:
            raise MalformedStep("step needs at least one premise")
        if len(set(premises)) != len(premises):
            raise MalformedStep(f"duplicate premises in {premises}")
        if conclusion.kind is NodeKind.SENT:
            raise MalformedStep(f"step may not conclude a sent node: {conclusion}")
        if conclusion.kind is NodeKind.INT and conclusion_text is None:
            raise MalformedStep(f"int conclusion {conclusion} requires text")
        if conclusion_text is not None:
            conclusion_text = _check_text(conclusion_text, f"conclusion of {conclusion}")
        self.premises = premises
        self.conclusion = conclusion
        self.conclusion_text = conclusion_text

    @property
    def premise_set(self) -> frozenset:
        return frozenset(self.premises)

    def __eq__(self, other):
        if not isinstance(other, ProofStep):
            return NotImplemented
        return (
            self.premise_set == other.premise_set
            and self.conclusion == other.conclusion
            and self.conclusion_text == other.conclusion_text
        )

    def __hash__(self):
        return hash((self.premise_set, self.conclusion, self.conclusion_text))

    def __repr__(self):
        return f"ProofStep({serialize_step(self)!r})"


def parse_proof(text: str) -> list[ProofStep]:
    """Parse a proof DSL string into steps, in textual order."""
    steps = []
    for clause in text.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        parts = clause.split("->")
        if len(parts) != 2:
            raise MalformedStep(f"expected exactly one '->' in {clause!r}")
        lhs, rhs = parts
        premise_tokens = [tok.strip() for tok in lhs.split("&")]
        if any(not tok for tok in premise_tokens):
            raise MalformedStep(f"empty premise in {clause!r}")
        premises = [NodeId.parse(tok) for tok in premise_tokens]

        rhs = rhs.strip()
        if ":" in rhs:
            conclusion_token, conclusion_text = rhs.split(":", 1)
            conclusion = NodeId.parse(conclusion_token)
            if conclusion.kind is NodeKind.HYPOTHESIS:
                raise MalformedStep(f"hypothesis conclusion takes no text: {clause!r}")
        else:
            conclusion = NodeId.parse(rhs)
            conclusion_text = None
            if conclusion.kind is NodeKind.INT:
                raise MalformedStep(f"int conclusion requires ': <text>' in {clause!r}")
        steps.append(ProofStep(premises, conclusion, conclusion_text))
    return steps


def serialize_step(step: ProofStep) -> str:
    lhs = " & ".join(str(p) for p in step.premises)
    if step.conclusion.kind is NodeKind.INT:
        return f"{lhs} -> {step.conclusion}: {step.conclusion_text}"
    return f"{lhs} -> {step.conclusion}"


def serialize_proof(steps) -> str:
    """Canonical DSL form; inverse of parse_proof up to whitespace."""
    return " ".join(serialize_step(s) + ";" for s in steps)


@dataclass(frozen=True)
class Diagnostic:
    """A recoverable structural violation found in lenient validation."""

    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


class EntailmentTree:
    """A validated entailment tree: hypothesis, context facts, and steps.

    Built through :func:`build_tree`; in lenient mode structural violations
    are collected in ``diagnostics`` instead of raising.
    """

    __slots__ = ("hypothesis_text", "context", "steps", "diagnostics", "_signatures")

    def __init__(self, hypothesis_text, context, steps, diagnostics=()):
        self.hypothesis_text = hypothesis_text.strip()
        self.context = dict(context)
        self.steps = tuple(steps)
        self.diagnostics = tuple(diagnostics)
        self._signatures: dict[NodeId, frozenset] = {}

    @property
    def leaves(self) -> frozenset:
        """Sent ids actually used as premises."""
        return frozenset(
            p for s in self.steps for p in s.premises if p.kind is NodeKind.SENT
        )

    @property
    def intermediates(self) -> dict[NodeId, str]:
        """Int id -> concluded text, in step order (first concluder wins)."""
        out: dict[NodeId, str] = {}
        for s in self.steps:
            if s.conclusion.kind is NodeKind.INT and s.conclusion not in out:
                out[s.conclusion] = s.conclusion_text
        return out

    def concluding_step(self, node: NodeId) -> ProofStep | None:
        for s in self.steps:
            if s.conclusion == node:
                return s
        return None

    def __eq__(self, other):
        if not isinstance(other, EntailmentTree):
            return NotImplemented
        return (
            self.hypothesis_text == other.hypothesis_text
            and self.context == other.context
            and self.steps == other.steps
        )

    def __repr__(self):
        return (
            f"EntailmentTree(h={self.hypothesis_text!r}, "
            f"|context|={len(self.context)}, |steps|={len(self.steps)})"
        )


def build_tree(hypothesis, context, steps, mode: str = "strict") -> EntailmentTree:
    """Validate steps against a context and assemble an EntailmentTree.

    Strict mode raises on forward references, duplicate conclusions, unknown
    sent premises, and a missing/misplaced hypothesis step. Lenient mode
    (for model predictions) records those as diagnostics instead.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be strict or lenient, got {mode!r}")
    strict = mode == "strict"
    context_map: dict[NodeId, Fact] = {}
    for fact in context:
        if fact.id.kind is not NodeKind.SENT:
            raise BadIdentifier(f"context facts must be sent nodes, got {fact.id}")
        if fact.id in context_map:
            raise DuplicateConclusion(f"duplicate context id {fact.id}")
        context_map[fact.id] = fact

    diagnostics: list[Diagnostic] = []

    def violation(exc_type, code, message):
        if strict:
            raise exc_type(message)
        diagnostics.append(Diagnostic(code, message))

    concluded: set[NodeId] = set()
    for i, step in enumerate(steps):
        for p in step.premises:
            if p.kind is NodeKind.SENT:
                if p not in context_map:
                    violation(UnknownPremise, "unknown-premise",
                              f"step {i + 1} premise {p} not in context")
            elif p.kind is NodeKind.INT:
                if p not in concluded:
                    violation(ForwardReference, "forward-reference",
                              f"step {i + 1} uses {p} before it is concluded")
            else:
                violation(MalformedStep, "hypothesis-premise",
                          f"step {i + 1} uses the hypothesis as a premise")
        if step.conclusion in concluded:
            violation(DuplicateConclusion, "duplicate-conclusion",
                      f"step {i + 1} re-concludes {step.conclusion}")
        concluded.add(step.conclusion)

    hyp_positions = [i for i, s in enumerate(steps) if s.conclusion.kind is NodeKind.HYPOTHESIS]
    if not hyp_positions:
        violation(MissingHypothesisStep, "missing-hypothesis",
                  "no step concludes the hypothesis")
    elif hyp_positions[-1] != len(tuple(steps)) - 1 or len(hyp_positions) > 1:
        violation(MissingHypothesisStep, "misplaced-hypothesis",
                  "exactly one step must conclude the hypothesis, last")

    return EntailmentTree(hypothesis, context_map, steps, diagnostics)


def leaf_signature(tree: EntailmentTree, node: NodeId) -> frozenset:
    """Set of sent ids reachable beneath a node; the key used for alignment.

    Sent nodes map to themselves. For lenient trees an int with no
    concluding step (or on a premise cycle) contributes an empty set.
    """
    if node.kind is NodeKind.SENT:
        if node not in tree.context and node not in tree.leaves:
            raise UnknownNode(f"{node} not in tree")
        return frozenset([node])
    if tree.concluding_step(node) is None:
        raise UnknownNode(f"{node} not concluded in tree")
    return _signature(tree, node, set())


def _signature(tree, node, visiting) -> frozenset:
    if node.kind is NodeKind.SENT:
        return frozenset([node])
    cached = tree._signatures.get(node)
    if cached is not None:
        return cached
    step = tree.concluding_step(node)
    if step is None or node in visiting:
        return frozenset()
    visiting.add(node)
    sig = frozenset().union(*(_signature(tree, p, visiting) for p in step.premises))
    visiting.discard(node)
    tree._signatures[node] = sig
    return sig
