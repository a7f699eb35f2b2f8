"""Generator backends: a hermetic mock oracle and an HTTP completions client."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, runtime_checkable

import httpx

from ..corpus import Query, normalize_text, tokenize
from .prompts import split_sections

__all__ = [
    "BackendError",
    "BackendUnavailable",
    "BackendFatal",
    "UnsupportedCapability",
    "MultiTokenLabel",
    "GenerationResult",
    "GeneratorBackend",
    "MockOracleBackend",
    "HttpCompletionsBackend",
    "CountingBackend",
    "MOCK_POSITIVE_P",
    "MOCK_NEGATIVE_P",
]

MOCK_POSITIVE_P = 0.9
MOCK_NEGATIVE_P = 0.1


class BackendError(RuntimeError):
    pass


class BackendUnavailable(BackendError):
    """Transport failure that survived every retry."""


class BackendFatal(BackendError):
    """Non-retryable failure (e.g. a 4xx response)."""


class UnsupportedCapability(BackendError):
    pass


class MultiTokenLabel(ValueError):
    pass


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str
    token_count: int


@runtime_checkable
class GeneratorBackend(Protocol):
    fingerprint: str
    max_in_flight: int

    def continuation_logprob(self, prompt: str, continuation: str) -> float: ...

    def generate(self, prompt: str, max_tokens: int) -> GenerationResult: ...

    def choice_logprobs(self, prompt: str, labels: list[str]) -> dict[str, float]: ...


class CountingBackend:
    """Wraps a backend and counts calls per capability (thread-safe)."""

    def __init__(self, inner: GeneratorBackend):
        self.inner = inner
        self.fingerprint = inner.fingerprint
        self.max_in_flight = inner.max_in_flight
        self._lock = threading.Lock()
        self.counts = {"logprob": 0, "generate": 0, "choice": 0}

    @property
    def calls(self) -> int:
        return sum(self.counts.values())

    def reset(self) -> None:
        with self._lock:
            for k in self.counts:
                self.counts[k] = 0

    def _bump(self, key):
        with self._lock:
            self.counts[key] += 1

    def continuation_logprob(self, prompt, continuation):
        self._bump("logprob")
        return self.inner.continuation_logprob(prompt, continuation)

    def generate(self, prompt, max_tokens):
        self._bump("generate")
        return self.inner.generate(prompt, max_tokens)

    def choice_logprobs(self, prompt, labels):
        self._bump("choice")
        return self.inner.choice_logprobs(prompt, labels)


_NUMBERING = re.compile(r"^\[\d+\] ", re.MULTILINE)


def paragraph_text(prompt: str) -> str:
    """Normalized text of the paragraph block, without the ``[i]`` markers."""
    block = split_sections(prompt).get("paragraph", "")
    return normalize_text(_NUMBERING.sub("", block))


class MockOracleBackend:
    """Deterministic stand-in generator that reads its answer key.

    Free-form: a continuation scores ln(0.9) when any answer of the
    prompted query occurs in the paragraph text, ln(0.1) otherwise, spread
    evenly over the continuation's whitespace tokens. Generation returns the
    first contained answer, else ``UNKNOWN``.

    Closed-set: the first correct label gets probability 0.9 (the rest share
    0.1) when the paragraph contains one of the query's evidence keywords;
    otherwise all labels are equally likely. Generation emits the label with
    the strictly highest probability, else ``UNKNOWN``.
    """

    max_in_flight = 1

    def __init__(self, queries: Iterable[Query]):
        self._by_question: dict[str, Query] = {}
        key = []
        for q in queries:
            self._by_question[normalize_text(q.question)] = q
            key.append([q.query_id, list(q.answers), list(q.correct), list(q.evidence)])
        key.sort()
        digest = hashlib.sha256(json.dumps(key).encode()).hexdigest()[:12]
        self.fingerprint = f"mock-oracle/v1:{digest}"

    def _query_for(self, prompt: str) -> Query | None:
        sec = split_sections(prompt)
        instr = normalize_text(sec.get("instruction", ""))
        if instr in self._by_question:
            return self._by_question[instr]
        inp = normalize_text(sec.get("input", ""))
        for qtext, q in self._by_question.items():
            if inp == qtext or inp.startswith(qtext + " "):
                return q
        return None

    def _contains_answer(self, q: Query, para: str) -> str | None:
        for a in q.answers:
            if normalize_text(a) and normalize_text(a) in para:
                return a
        return None

    def _choice_probs(self, q: Query, para: str) -> dict[str, float]:
        labels = list(q.labels)
        evident = any(normalize_text(e) in para for e in q.evidence if normalize_text(e))
        if not evident:
            return {lab: 1.0 / len(labels) for lab in labels}
        top = q.correct[0]
        rest = MOCK_NEGATIVE_P / (len(labels) - 1)
        return {lab: (MOCK_POSITIVE_P if lab == top else rest) for lab in labels}

    def continuation_logprob(self, prompt: str, continuation: str) -> float:
        n_tok = len(continuation.split())
        if n_tok == 0:
            return 0.0
        q = self._query_for(prompt)
        para = paragraph_text(prompt)
        if q is not None and q.task_kind == "closedset":
            probs = self._choice_probs(q, para)
            match = [lab for lab in probs if lab.lower() == continuation.strip().lower()]
            total = math.log(probs[match[0]]) if match else math.log(MOCK_NEGATIVE_P)
        else:
            hit = (
                self._contains_answer(q, para) is not None
                if q is not None
                else normalize_text(continuation) in para
            )
            total = math.log(MOCK_POSITIVE_P if hit else MOCK_NEGATIVE_P)
        # each of the n_tok tokens carries total / n_tok; the sum is reported
        # as the exact total so scores stay strictly two-valued
        return total

    def generate(self, prompt: str, max_tokens: int) -> GenerationResult:
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        q = self._query_for(prompt)
        para = paragraph_text(prompt)
        text = "UNKNOWN"
        if q is not None and q.task_kind == "freeform":
            text = self._contains_answer(q, para) or "UNKNOWN"
        elif q is not None:
            probs = self._choice_probs(q, para)
            best = max(probs.values())
            winners = [lab for lab, p in probs.items() if p == best]
            if len(winners) == 1:
                text = winners[0]
        words = text.split()
        if len(words) > max_tokens:
            return GenerationResult(" ".join(words[:max_tokens]), "length", max_tokens)
        return GenerationResult(text, "stop", len(words))

    def choice_logprobs(self, prompt: str, labels: list[str]) -> dict[str, float]:
        q = self._query_for(prompt)
        if q is None or q.task_kind != "closedset":
            p = 1.0 / len(labels)
            return {lab: math.log(p) for lab in labels}
        probs = self._choice_probs(q, paragraph_text(prompt))
        return {lab: math.log(probs.get(lab, 1e-12)) for lab in labels}


class HttpCompletionsBackend:
    """OpenAI-compatible ``/completions`` client.

    Scoring echoes ``prompt + continuation`` with zero new tokens and sums
    the logprobs of tokens past the prompt boundary. Generation is greedy.
    Timeouts, connection errors and 5xx responses are retried with
    exponential backoff; any 4xx is fatal.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.fingerprint = f"http:{self.endpoint}|{self.model}"

    @classmethod
    def from_env(cls, **overrides) -> "HttpCompletionsBackend":
        env = os.environ
        kwargs = {
            "endpoint": env.get("RAGTUNE_ENDPOINT", "http://localhost:8000/v1"),
            "model": env.get("RAGTUNE_MODEL", ""),
            "api_key": env.get("RAGTUNE_API_KEY"),
            "timeout": float(env.get("RAGTUNE_TIMEOUT", "60")),
            "max_in_flight": int(env.get("RAGTUNE_MAX_IN_FLIGHT", "4")),
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        url = f"{self.endpoint}/completions"
        body = {"model": self.model, **payload}
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, json=body)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = exc
            else:
                if 400 <= resp.status_code < 500:
                    raise BackendFatal(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code >= 500:
                    last = BackendError(f"{url}: HTTP {resp.status_code}")
                else:
                    try:
                        return resp.json()
                    except json.JSONDecodeError as exc:
                        raise BackendFatal(f"{url}: response is not JSON") from exc
            if attempt < self.max_retries:
                self._sleep(self.backoff * (2**attempt))
        raise BackendUnavailable(f"{url}: giving up after {self.max_retries + 1} attempts ({last})")

    def _continuation_tokens(self, prompt: str, continuation: str) -> list[float]:
        data = self._post(
            {"prompt": prompt + continuation, "max_tokens": 0, "echo": True, "logprobs": 0, "temperature": 0}
        )
        try:
            lp = data["choices"][0]["logprobs"]
            tokens, token_lps, offsets = lp["tokens"], lp["token_logprobs"], lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnsupportedCapability("endpoint did not return echoed token logprobs") from exc
        cut = len(prompt)
        out = []
        for tok, lpv, off in zip(tokens, token_lps, offsets):
            if off + len(tok) > cut:
                out.append(float("-inf") if lpv is None else float(lpv))
        return out

    def continuation_logprob(self, prompt: str, continuation: str) -> float:
        if not continuation:
            return 0.0
        return float(sum(self._continuation_tokens(prompt, continuation)))

    def generate(self, prompt: str, max_tokens: int) -> GenerationResult:
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        data = self._post({"prompt": prompt, "max_tokens": max_tokens, "temperature": 0})
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError) as exc:
            raise BackendFatal("malformed completion response") from exc
        usage = data.get("usage") or {}
        n = usage.get("completion_tokens")
        if n is None:
            n = len(tokenize(choice.get("text", "")))
        return GenerationResult(choice.get("text", ""), choice.get("finish_reason") or "stop", min(int(n), max_tokens))

    def choice_logprobs(self, prompt: str, labels: list[str]) -> dict[str, float]:
        out = {}
        for lab in labels:
            toks = self._continuation_tokens(prompt, lab)
            if len(toks) != 1:
                raise MultiTokenLabel(f"choice label {lab!r} spans {len(toks)} tokens; single-token labels only")
            out[lab] = toks[0]
        return out
