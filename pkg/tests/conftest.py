import random
from pathlib import Path

import pytest

from condec.dataset import TreeInstance, load_entailmentbank
from condec.prooftree import Fact, NodeId, ProofStep, build_tree

FIXTURES = Path(__file__).parent / "fixtures"

_VOCAB = (
    "star light heat planet water ice winter summer cloud rain seed tree "
    "animal bird rock soil sun moon orbit energy north south state season "
    "day night cold warm grow melt reflect produce cause kind"
).split()


def random_sentence(rng: random.Random, n_words=4) -> str:
    return " ".join(rng.choice(_VOCAB) for _ in range(rng.randint(2, n_words + 2)))


def random_steps(rng: random.Random, n_sents: int):
    """A random strict-valid step list over sent1..sentN."""
    available = [NodeId.sent(i) for i in range(1, n_sents + 1)]
    n_steps = rng.randint(1, min(4, n_sents))
    steps = []
    for j in range(1, n_steps + 1):
        k = rng.randint(1, min(3, len(available)))
        premises = rng.sample(available, k)
        if j == n_steps:
            steps.append(ProofStep(premises, NodeId.hypothesis()))
        else:
            conclusion = NodeId.int_(j)
            steps.append(ProofStep(premises, conclusion, random_sentence(rng)))
            available.append(conclusion)
    return steps


def random_instance(rng: random.Random, idx: int = 0) -> TreeInstance:
    n_sents = rng.randint(2, 8)
    context = [Fact(NodeId.sent(i), random_sentence(rng)) for i in range(1, n_sents + 1)]
    steps = random_steps(rng, n_sents)
    hypothesis = random_sentence(rng)
    tree = build_tree(hypothesis, context, steps, mode="strict")
    return TreeInstance(id=f"rand-{idx}", task=1, hypothesis=hypothesis,
                        context=tuple(context), gold_tree=tree)


@pytest.fixture
def case_instance():
    return load_entailmentbank(FIXTURES / "case_study.jsonl", task=2).instances[0]


@pytest.fixture
def five_instances():
    return load_entailmentbank(FIXTURES / "five_trees.jsonl", task=1).instances
