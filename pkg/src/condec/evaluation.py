"""Tree-level evaluation: leaves, steps, intermediates, and overall scores
for a predicted tree against a gold tree, with structural alignment.

Alignment pairs predicted internal nodes with gold internal nodes by the
Jaccard overlap of their leaf signatures (greedy, descending, deterministic
tie-breaks); a predicted root always maps to the gold root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .prooftree import EntailmentTree, NodeId, NodeKind, leaf_signature


@dataclass
class Alignment:
    pairs: dict  # predicted NodeId -> gold NodeId, injective
    jaccard: dict  # predicted NodeId -> overlap of the matched pair


@dataclass(frozen=True)
class EvalReport:
    leaves_f1: float
    leaves_all: float
    steps_f1: float
    steps_all: float
    interm_f1: float
    interm_all: float
    overall_all: float

    FIELDS = ("leaves_f1", "leaves_all", "steps_f1", "steps_all",
              "interm_f1", "interm_all", "overall_all")

    def to_record(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def as_percentages(self) -> dict:
        return {name: round(100 * getattr(self, name), 1) for name in self.FIELDS}


def _f1(n_correct: int, n_pred: int, n_gold: int) -> float:
    if n_pred == 0 and n_gold == 0:
        return 1.0
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _internal_nodes(tree: EntailmentTree) -> list[NodeId]:
    # conclusions, in step order; hypothesis last if present
    return [s.conclusion for s in tree.steps]


def align_trees(pred: EntailmentTree, gold: EntailmentTree) -> Alignment:
    """Greedy max-Jaccard matching of internal nodes over leaf signatures."""
    pred_nodes = _internal_nodes(pred)
    gold_nodes = _internal_nodes(gold)
    pred_sigs = {v: leaf_signature(pred, v) for v in pred_nodes}
    gold_sigs = {u: leaf_signature(gold, u) for u in gold_nodes}

    pairs: dict[NodeId, NodeId] = {}
    jaccard: dict[NodeId, float] = {}

    def overlap(a, b) -> float:
        union = a | b
        return len(a & b) / len(union) if union else 0.0

    pred_root = next((v for v in pred_nodes if v.kind is NodeKind.HYPOTHESIS), None)
    gold_root = next((u for u in gold_nodes if u.kind is NodeKind.HYPOTHESIS), None)
    if pred_root is not None and gold_root is not None:
        pairs[pred_root] = gold_root
        jaccard[pred_root] = overlap(pred_sigs[pred_root], gold_sigs[gold_root])

    candidates = []
    for gi, u in enumerate(gold_nodes):
        if u == gold_root:
            continue
        for pi, v in enumerate(pred_nodes):
            if v == pred_root:
                continue
            j = overlap(pred_sigs[v], gold_sigs[u])
            if j > 0:
                candidates.append((-j, gi, pi, u, v))
    candidates.sort()
    matched_gold = set(pairs.values())
    for neg_j, _, _, u, v in candidates:
        if u in matched_gold or v in pairs:
            continue
        pairs[v] = u
        jaccard[v] = -neg_j
        matched_gold.add(u)
    return Alignment(pairs, jaccard)


def score_leaves(pred: EntailmentTree, gold: EntailmentTree):
    """P/R/F1 over the sent ids used as leaves."""
    pred_leaves, gold_leaves = pred.leaves, gold.leaves
    f1 = _f1(len(pred_leaves & gold_leaves), len(pred_leaves), len(gold_leaves))
    return f1, float(f1 == 1.0)


def score_steps(pred: EntailmentTree, gold: EntailmentTree, alignment: Alignment):
    """Structural step correctness: premise sets must match through the
    alignment, with the conclusion aligned."""
    gold_by_conclusion = {s.conclusion: s for s in gold.steps}
    correct = 0
    for step in pred.steps:
        target = alignment.pairs.get(step.conclusion)
        if target is None or target not in gold_by_conclusion:
            continue
        mapped = set()
        ok = True
        for p in step.premises:
            if p.kind is NodeKind.SENT:
                mapped.add(p)
            else:
                image = alignment.pairs.get(p)
                if image is None:
                    ok = False
                    break
                mapped.add(image)
        if ok and mapped == set(gold_by_conclusion[target].premises):
            correct += 1
    f1 = _f1(correct, len(pred.steps), len(gold.steps))
    return f1, float(f1 == 1.0)


def score_intermediates(pred: EntailmentTree, gold: EntailmentTree,
                        alignment: Alignment, scorer, threshold: float = 0.28):
    """Aligned intermediate conclusions whose similarity beats the threshold."""
    pred_ints = pred.intermediates
    gold_ints = gold.intermediates
    correct = 0
    for node, text in pred_ints.items():
        target = alignment.pairs.get(node)
        if target is None or target not in gold_ints:
            continue
        if scorer(text, gold_ints[target]) > threshold:
            correct += 1
    f1 = _f1(correct, len(pred_ints), len(gold_ints))
    return f1, float(f1 == 1.0)


def evaluate_tree(pred: EntailmentTree, gold: EntailmentTree,
                  scorer, threshold: float = 0.28) -> EvalReport:
    alignment = align_trees(pred, gold)
    leaves_f1, leaves_all = score_leaves(pred, gold)
    steps_f1, steps_all = score_steps(pred, gold, alignment)
    interm_f1, interm_all = score_intermediates(pred, gold, alignment, scorer, threshold)
    overall_all = min(leaves_all, steps_all, interm_all)
    return EvalReport(leaves_f1, leaves_all, steps_f1, steps_all,
                      interm_f1, interm_all, overall_all)


def aggregate(reports) -> EvalReport:
    """Field-wise arithmetic mean over per-tree reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    means = {name: sum(getattr(r, name) for r in reports) / len(reports)
             for name in EvalReport.FIELDS}
    return EvalReport(**means)
