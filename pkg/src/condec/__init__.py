"""Toolkit for stepwise entailment-tree proof generation: DSL parsing,
dataset extraction, hard-negative construction, a contrastive loss kernel,
and tree evaluation metrics."""

from .prooftree import (
    EntailmentTree,
    Fact,
    NodeId,
    NodeKind,
    ProofStep,
    build_tree,
    leaf_signature,
    parse_proof,
    serialize_proof,
)

__all__ = [
    "EntailmentTree",
    "Fact",
    "NodeId",
    "NodeKind",
    "ProofStep",
    "build_tree",
    "leaf_signature",
    "parse_proof",
    "serialize_proof",
]

__version__ = "0.1.0"
