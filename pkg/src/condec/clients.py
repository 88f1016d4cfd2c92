"""Clients for the external neural roles (generator, reasoner, checker,
similarity scorer) over a small JSON-over-HTTP protocol, plus deterministic
in-process mocks and the stepwise inference driver.

Wire protocol (POST, JSON, UTF-8):
    /v1/generate   {"prompt": str, "max_tokens": int} -> {"text": str}
    /v1/check      {"premises": [str], "conclusion": str} -> {"score": float}
    /v1/similarity {"candidate": str, "reference": str} -> {"score": float}
"""

from __future__ import annotations

import os
import re
import time
from collections import Counter
from dataclasses import dataclass, field

import requests

from .dataset import TreeInstance, StepwiseSample, format_model_input
from .prooftree import EntailmentTree, NodeKind, ProofError, build_tree, parse_proof


class ClientError(Exception):
    """Base class for model-service failures; carries retry metadata."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class Timeout(ClientError):
    pass


class BadStatus(ClientError):
    def __init__(self, status: int, message: str, attempts: int = 1):
        super().__init__(f"HTTP {status}: {message}", attempts)
        self.status = status


class ProtocolError(ClientError):
    """Response did not match the wire schema."""


class MockExhausted(Exception):
    """A scripted mock ran out of canned responses."""


ENV_GENERATOR_URL = "CONDEC_GENERATOR_URL"
ENV_CHECKER_URL = "CONDEC_CHECKER_URL"
ENV_SCORER_URL = "CONDEC_SCORER_URL"


@dataclass(frozen=True)
class ServiceEndpoint:
    base_url: str
    role: str  # generator | reasoner | checker | scorer
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    token: str | None = None

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def from_env(cls, role: str, **kwargs) -> "ServiceEndpoint | None":
        env = {"generator": ENV_GENERATOR_URL, "reasoner": ENV_GENERATOR_URL,
               "checker": ENV_CHECKER_URL, "scorer": ENV_SCORER_URL}[role]
        url = os.environ.get(env)
        return cls(url, role, **kwargs) if url else None


def _post(endpoint: ServiceEndpoint, route: str, payload: dict) -> dict:
    url = endpoint.base_url.rstrip("/") + route
    headers = {}
    if endpoint.token:
        headers["Authorization"] = f"Bearer {endpoint.token}"
    last_exc = None
    for attempt in range(endpoint.retries + 1):
        if attempt:
            time.sleep(endpoint.backoff * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=payload, timeout=endpoint.timeout,
                                 headers=headers)
        except requests.Timeout:
            last_exc = Timeout(f"timeout after {endpoint.timeout}s at {url}", attempt + 1)
            continue
        except requests.RequestException as exc:
            last_exc = Timeout(f"connection failed at {url}: {exc}", attempt + 1)
            continue
        if resp.status_code != 200:
            try:
                message = resp.json().get("error", resp.text)
            except ValueError:
                message = resp.text
            last_exc = BadStatus(resp.status_code, message, attempt + 1)
            if 400 <= resp.status_code < 500:
                raise last_exc  # client-side errors will not heal on retry
            continue
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {url}: {exc}", attempt + 1)
    raise last_exc


def generate(endpoint: ServiceEndpoint, prompt: str, max_tokens: int = 256) -> str:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    body = _post(endpoint, "/v1/generate", {"prompt": prompt, "max_tokens": max_tokens})
    if not isinstance(body.get("text"), str):
        raise ProtocolError(f"generate response missing 'text': {body!r}")
    return body["text"].rstrip()


def check(endpoint: ServiceEndpoint, premises, conclusion: str) -> float:
    premises = list(premises)
    if not premises:
        raise ValueError("premises must be non-empty")
    body = _post(endpoint, "/v1/check", {"premises": premises, "conclusion": conclusion})
    score = body.get("score")
    if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
        raise ProtocolError(f"check score out of [0, 1]: {body!r}")
    return float(score)


def text_similarity(endpoint, candidate: str, reference: str) -> float:
    """Remote similarity score (passed through raw), or the builtin token-F1
    when endpoint is None."""
    if endpoint is None:
        return builtin_similarity(candidate, reference)
    body = _post(endpoint, "/v1/similarity",
                 {"candidate": candidate, "reference": reference})
    score = body.get("score")
    if not isinstance(score, (int, float)):
        raise ProtocolError(f"similarity response missing numeric 'score': {body!r}")
    return float(score)


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def builtin_similarity(candidate: str, reference: str) -> float:
    """Token-level F1 on lowercase alphanumeric tokens (multiset overlap)."""
    cand, ref = Counter(_tokens(candidate)), Counter(_tokens(reference))
    total = sum(cand.values()) + sum(ref.values())
    if total == 0:
        return 1.0 if candidate.strip() == reference.strip() else 0.0
    overlap = sum((cand & ref).values())
    return 2 * overlap / total


# --- client handles -----------------------------------------------------


class HttpGenerator:
    def __init__(self, endpoint: ServiceEndpoint):
        self.endpoint = endpoint

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        return generate(self.endpoint, prompt, max_tokens)


class HttpChecker:
    def __init__(self, endpoint: ServiceEndpoint):
        self.endpoint = endpoint

    def check(self, premises, conclusion: str) -> float:
        return check(self.endpoint, premises, conclusion)


class HttpScorer:
    def __init__(self, endpoint: ServiceEndpoint):
        self.endpoint = endpoint

    def similarity(self, candidate: str, reference: str) -> float:
        return text_similarity(self.endpoint, candidate, reference)


class BuiltinScorer:
    def similarity(self, candidate: str, reference: str) -> float:
        return builtin_similarity(candidate, reference)


class ScriptedGenerator:
    """Replays canned generations in order; exhaustion is an error.

    Entries may be plain strings or (matcher, response) pairs, where the
    matcher is a substring required in the prompt.
    """

    def __init__(self, script):
        self.script = list(script)
        self.requests: list[tuple[str, int]] = []
        self._cursor = 0

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        self.requests.append((prompt, max_tokens))
        if self._cursor >= len(self.script):
            raise MockExhausted(f"scripted generator exhausted after {self._cursor} calls")
        entry = self.script[self._cursor]
        self._cursor += 1
        if isinstance(entry, tuple):
            matcher, response = entry
            if matcher not in prompt:
                raise AssertionError(f"prompt does not contain {matcher!r}")
            return response
        return entry


class FunctionGenerator:
    def __init__(self, fn):
        self.fn = fn
        self.requests: list[tuple[str, int]] = []

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        self.requests.append((prompt, max_tokens))
        return self.fn(prompt)


class FunctionChecker:
    def __init__(self, fn):
        self.fn = fn
        self.requests: list[tuple[tuple, str]] = []

    def check(self, premises, conclusion: str) -> float:
        self.requests.append((tuple(premises), conclusion))
        return self.fn(list(premises), conclusion)


class ConstantChecker(FunctionChecker):
    def __init__(self, score: float):
        super().__init__(lambda premises, conclusion: score)


def overlap_checker(premises, conclusion: str) -> float:
    """Deterministic checker mock: 1.0 iff the conclusion token-overlaps
    every premise, else 0.2."""
    ctoks = set(_tokens(conclusion))
    return 1.0 if all(ctoks & set(_tokens(p)) for p in premises) else 0.2


# --- stepwise inference -------------------------------------------------


@dataclass
class InferenceTrace:
    generations: list[str] = field(default_factory=list)


def run_stepwise_inference(instance: TreeInstance, generator,
                           max_steps: int = 20):
    """Drive the generator one step at a time until it concludes the
    hypothesis, emits something unparseable, or hits max_steps.

    Returns a lenient EntailmentTree (with diagnostics) and the raw
    generation trace.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    steps = []
    trace = InferenceTrace()
    diagnostics = []
    done = False
    for _ in range(max_steps):
        sample = StepwiseSample(
            instance_id=instance.id,
            hypothesis=instance.hypothesis,
            context=instance.context,
            prior_steps=tuple(steps),
            target_steps=(None,),  # prompt construction only
        )
        raw = generator.generate(format_model_input(sample))
        trace.generations.append(raw)
        parsed = _parse_prefix(raw)
        if not parsed:
            diagnostics.append("UnparseableGeneration: " + raw[:120])
            break
        steps.extend(parsed)
        if any(s.conclusion.kind is NodeKind.HYPOTHESIS for s in parsed):
            done = True
            break
    tree = build_tree(instance.hypothesis, instance.context, steps, mode="lenient")
    if not done and not diagnostics:
        diagnostics.append("incomplete: max_steps reached without hypothesis")
    if diagnostics:
        tree = EntailmentTree(instance.hypothesis, tree.context, tree.steps,
                              tuple(tree.diagnostics) + tuple(diagnostics))
    return tree, trace


def _parse_prefix(text: str):
    """All leading parseable clauses of a generation, stopping at the first
    malformed one."""
    steps = []
    for clause in text.split(";"):
        if not clause.strip():
            continue
        try:
            steps.extend(parse_proof(clause + ";"))
        except ProofError:
            break
    return steps
