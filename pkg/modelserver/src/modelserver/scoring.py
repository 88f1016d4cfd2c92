"""Checker and similarity-scorer stand-ins.

Both are deterministic featurized models with the same score shapes as the
neural originals: the checker pushes a weighted feature vector through a
sigmoid (so scores always land in [0, 1] and premise repetition scores
low), the scorer returns token-level F1 (so self-similarity is 1.0).

Pass ``builtin`` as the model name to use the bundled weights, or a path to
a JSON file with the same keys to override them.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass

_WORD_RE = re.compile(r"[a-z0-9]+")
_STOP = {"a", "an", "the", "is", "are", "was", "were", "of", "in", "on",
         "for", "and", "or", "to", "be", "by", "at", "with", "kind"}

DEFAULT_CHECKER_WEIGHTS = {
    "bias": -1.0,
    "repetition": -7.0,      # conclusion equals one premise verbatim
    "coverage": 5.0,         # share of conclusion content found in premises
    "multi_premise": 2.0,    # content drawn from more than one premise
    "novel_ratio": -3.0,     # conclusion content absent from every premise
}


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _content(text: str) -> set[str]:
    return {t for t in _tokens(text) if t not in _STOP}


@dataclass(frozen=True)
class CheckerModel:
    weights: dict

    @classmethod
    def load(cls, name: str) -> "CheckerModel":
        if name == "builtin":
            return cls(dict(DEFAULT_CHECKER_WEIGHTS))
        with open(name, encoding="utf-8") as fh:
            return cls({**DEFAULT_CHECKER_WEIGHTS, **json.load(fh)})

    def check(self, premises, conclusion: str) -> float:
        norm = lambda s: " ".join(_tokens(s))
        repetition = float(any(norm(p) == norm(conclusion) for p in premises))
        concl = _content(conclusion)
        premise_sets = [_content(p) for p in premises]
        union = set().union(*premise_sets) if premise_sets else set()
        covered = concl & union
        coverage = len(covered) / len(concl) if concl else 0.0
        touched = sum(1 for s in premise_sets if s & concl)
        multi = float(touched >= min(2, len(premise_sets)) and touched > 0)
        novel = 1.0 - coverage
        w = self.weights
        logit = (w["bias"] + w["repetition"] * repetition
                 + w["coverage"] * coverage + w["multi_premise"] * multi
                 + w["novel_ratio"] * novel)
        return 1.0 / (1.0 + math.exp(-logit))


@dataclass(frozen=True)
class ScorerModel:
    @classmethod
    def load(cls, name: str) -> "ScorerModel":
        if name != "builtin":
            raise ValueError(f"unknown scorer model {name!r}; use 'builtin'")
        return cls()

    def similarity(self, candidate: str, reference: str) -> float:
        a, b = Counter(_tokens(candidate)), Counter(_tokens(reference))
        overlap = sum((a & b).values())
        total = sum(a.values()) + sum(b.values())
        if not total:
            return 1.0 if a == b else 0.0
        return 2.0 * overlap / total
