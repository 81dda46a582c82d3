"""Client for a hosted chat-completion LM service.

Request body: ``{"model": ..., "messages": [{"role": "user", "content": ...}],
"max_tokens": ...}`` plus ``"thinking_budget"`` when given.  The first text
block of the first choice is returned; both plain-string and block-list
``message.content`` shapes are accepted.

For next-word distributions the client relies on a provider extension:
sending ``"top_logprobs": k`` makes the provider attach, per generated token,
``choices[0].logprobs.content[*].top_logprobs = [{"token": ..., "logprob":
...}, ...]``.  Words are resolved from those token-level outputs either by a
single-token shortcut (each top token read as a whole word, the default) or by
a token-level beam search whose hypotheses are complete words: a hypothesis
closes when its best continuation starts a new word or the depth cap is hit.

Configuration defaults come from the environment: ``B2T_LLM_ENDPOINT``,
``B2T_LLM_API_KEY``, ``B2T_LLM_MODEL``.

Transient failures (transport errors, HTTP 429 and 5xx) are retried with
exponential backoff up to ``retry_limit`` extra attempts; at most
``max_concurrent_requests`` calls are in flight per client.
"""

from __future__ import annotations

import math
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import httpx

from .errors import RemoteServiceError
from .lattice import normalize_word

__all__ = [
    "RemoteLmConfig",
    "RemoteLm",
    "RemoteLmScorer",
    "complete_chat",
    "ENV_ENDPOINT",
    "ENV_API_KEY",
    "ENV_MODEL",
]

ENV_ENDPOINT = "B2T_LLM_ENDPOINT"
ENV_API_KEY = "B2T_LLM_API_KEY"
ENV_MODEL = "B2T_LLM_MODEL"

_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class RemoteLmConfig:
    endpoint_url: str
    api_key: str = ""
    model_name: str = ""
    max_concurrent_requests: int = 4
    retry_limit: int = 2
    timeout_seconds: float = 60.0
    max_tokens: int = 1024
    backoff_base_seconds: float = 0.5

    def __post_init__(self):
        if not self.endpoint_url:
            raise ValueError("endpoint_url must be non-empty")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        if self.backoff_base_seconds < 0:
            raise ValueError("backoff_base_seconds must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "RemoteLmConfig":
        """Build a config from B2T_LLM_* variables; overrides win."""
        values = {
            "endpoint_url": os.environ.get(ENV_ENDPOINT, ""),
            "api_key": os.environ.get(ENV_API_KEY, ""),
            "model_name": os.environ.get(ENV_MODEL, ""),
        }
        values.update(overrides)
        return cls(**values)


def _first_text_block(payload: dict) -> str:
    try:
        choices = payload["choices"]
        message = choices[0]["message"]
        content = message["content"]
    except (KeyError, IndexError, TypeError):
        raise RemoteServiceError("response is missing choices[0].message.content")
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        for block in content:
            if isinstance(block, dict) and block.get("type") == "text":
                return str(block.get("text", ""))
        raise RemoteServiceError("response content has no text block")
    raise RemoteServiceError(f"unsupported content shape {type(content).__name__}")


class RemoteLm:
    """Thread-safe client over one endpoint with bounded concurrency."""

    def __init__(self, config: RemoteLmConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._semaphore = threading.BoundedSemaphore(config.max_concurrent_requests)
        self._client = httpx.Client(
            transport=transport,
            timeout=config.timeout_seconds,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteLm":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _post(self, body: dict) -> dict:
        headers = {}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        attempts = 0
        last_error: str = "request never attempted"
        last_status: int | None = None
        while attempts <= self.config.retry_limit:
            attempts += 1
            try:
                with self._semaphore:
                    response = self._client.post(
                        self.config.endpoint_url, json=body, headers=headers
                    )
            except httpx.HTTPError as exc:
                last_error, last_status = f"transport failure: {exc}", None
            else:
                if response.status_code == 200:
                    try:
                        return response.json()
                    except ValueError:
                        raise RemoteServiceError(
                            "response body is not valid JSON",
                            status_code=200,
                            attempts=attempts,
                        )
                last_error = f"HTTP {response.status_code}"
                last_status = response.status_code
                if response.status_code not in _RETRYABLE_STATUS:
                    raise RemoteServiceError(last_error, status_code=last_status, attempts=attempts)
            if attempts <= self.config.retry_limit and self.config.backoff_base_seconds > 0:
                time.sleep(self.config.backoff_base_seconds * 2 ** (attempts - 1))
        raise RemoteServiceError(
            f"{last_error} after {attempts} attempts",
            status_code=last_status,
            attempts=attempts,
        )

    def complete_chat(self, prompt: str, thinking_budget: int | None = None) -> str:
        body: dict = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.config.max_tokens,
        }
        if thinking_budget is not None:
            body["thinking_budget"] = thinking_budget
        return _first_text_block(self._post(body))

    def token_candidates(self, text: str, top_logprobs: int) -> list[tuple[str, float]]:
        """Top next-token candidates (raw token string, logprob) after ``text``."""
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": text}],
            "max_tokens": 1,
            "top_logprobs": top_logprobs,
        }
        payload = self._post(body)
        try:
            entries = payload["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
            return [(str(e["token"]), float(e["logprob"])) for e in entries]
        except (KeyError, IndexError, TypeError, ValueError):
            raise RemoteServiceError("response is missing token-level logprobs")


def complete_chat(
    config: RemoteLmConfig,
    prompt: str,
    thinking_budget: int | None = None,
    transport: httpx.BaseTransport | None = None,
) -> str:
    """One-shot chat completion against ``config``'s endpoint."""
    with RemoteLm(config, transport=transport) as client:
        return client.complete_chat(prompt, thinking_budget=thinking_budget)


@dataclass
class _WordHypothesis:
    pieces: str
    logprob: float
    closed: bool


class RemoteLmScorer:
    """LmScorer over a remote service's token-level outputs.

    ``use_token_beam=False`` (the default) is the single-token shortcut: the
    top next-token candidates are read directly as word candidates.  With
    ``use_token_beam=True`` a beam of ``token_beam_width`` partial words is
    extended token by token (up to ``max_token_depth`` tokens per word); a
    hypothesis is complete once its best continuation opens a new word.
    """

    def __init__(
        self,
        client: RemoteLm,
        use_token_beam: bool = False,
        token_beam_width: int = 4,
        max_token_depth: int = 4,
        top_logprobs: int = 8,
        floor_log_prob: float = math.log(1e-8),
    ):
        if token_beam_width < 1:
            raise ValueError("token_beam_width must be >= 1")
        if max_token_depth < 1:
            raise ValueError("max_token_depth must be >= 1")
        self.client = client
        self.use_token_beam = use_token_beam
        self.token_beam_width = token_beam_width
        self.max_token_depth = max_token_depth
        self.top_logprobs = top_logprobs
        self.floor_log_prob = floor_log_prob

    @staticmethod
    def _context_text(context: Sequence[str]) -> str:
        return " ".join(context)

    def _shortcut_candidates(self, context: Sequence[str]) -> dict[str, float]:
        raw = self.client.token_candidates(self._context_text(context), self.top_logprobs)
        merged: dict[str, float] = defaultdict(float)
        for token, logprob in raw:
            word = normalize_word(token)
            if word:
                merged[word] += math.exp(logprob)
        return dict(merged)

    def _beam_candidates(self, context: Sequence[str]) -> dict[str, float]:
        base = self._context_text(context)
        first = self.client.token_candidates(base, self.top_logprobs)
        beams = [
            _WordHypothesis(pieces=token, logprob=logprob, closed=False)
            for token, logprob in first[: self.token_beam_width]
        ]
        for _ in range(self.max_token_depth - 1):
            if all(b.closed for b in beams):
                break
            grown: list[_WordHypothesis] = []
            for beam in beams:
                if beam.closed:
                    grown.append(beam)
                    continue
                prefix = base + beam.pieces if base else beam.pieces.lstrip()
                continuations = self.client.token_candidates(prefix, self.top_logprobs)
                if not continuations:
                    grown.append(_WordHypothesis(beam.pieces, beam.logprob, True))
                    continue
                best_token, _ = continuations[0]
                if best_token[:1].isspace():
                    # The word boundary is reached: the model wants to start
                    # the next word, so this hypothesis is a complete word.
                    grown.append(_WordHypothesis(beam.pieces, beam.logprob, True))
                    continue
                for token, logprob in continuations[: self.token_beam_width]:
                    if token[:1].isspace():
                        grown.append(_WordHypothesis(beam.pieces, beam.logprob, True))
                    else:
                        grown.append(
                            _WordHypothesis(beam.pieces + token, beam.logprob + logprob, False)
                        )
            grown.sort(key=lambda b: (-b.logprob, b.pieces))
            deduped: list[_WordHypothesis] = []
            seen: set[tuple[str, bool]] = set()
            for beam in grown:
                key = (beam.pieces, beam.closed)
                if key not in seen:
                    seen.add(key)
                    deduped.append(beam)
            beams = deduped[: self.token_beam_width]
        merged: dict[str, float] = defaultdict(float)
        for beam in beams:
            word = normalize_word(beam.pieces)
            if word:
                merged[word] += math.exp(beam.logprob)
        return dict(merged)

    def _candidates(self, context: Sequence[str]) -> dict[str, float]:
        if self.use_token_beam:
            return self._beam_candidates(context)
        return self._shortcut_candidates(context)

    def score_continuation(self, context: Sequence[str], word: str) -> float:
        candidates = self._candidates(context)
        prob = candidates.get(normalize_word(word), 0.0)
        if prob <= 0.0:
            return self.floor_log_prob
        return min(math.log(prob), 0.0)

    def next_word_distribution(self, context: Sequence[str], top_k: int) -> list[tuple[str, float]]:
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        candidates = self._candidates(context)
        ranked = sorted(candidates.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:top_k]
