"""Chat-completion backends for summary generation.

The HTTP client speaks the common chat wire format: POST
``{"model": str, "messages": [{"role": "user", "content": str}],
"temperature": float}`` returning
``{"choices": [{"message": {"content": str}}]}``. Offline mocks (echo,
constant, recorded replay) are selectable through configuration so the
whole pipeline runs deterministically without a model server.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .errors import HiroError, TransportError
from .util import sha256_text

LLM_API_KEY_ENV = "HIRO_LLM_API_KEY"
DEFAULT_TEMPERATURE = 0.7


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    max_words_hint: int
    temperature: float = DEFAULT_TEMPERATURE


class LlmClient(Protocol):
    name: str

    def complete(self, request: LlmRequest, sample_index: int = 0) -> str: ...


class HttpLlmClient:
    """Chat-completion client with bounded retries and exponential backoff."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 0.5,
    ):
        self.endpoint = endpoint
        self.model = model
        self.name = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(LLM_API_KEY_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: LlmRequest, sample_index: int = 0) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout
                )
                resp.raise_for_status()
                return str(resp.json()["choices"][0]["message"]["content"])
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(
            f"chat completion failed after {self.max_retries + 1} attempts: {last_error}"
        )


class EchoLlmBackend:
    """Returns the first sentence of the prompt's input block.

    Relies on the prompt templates separating header, input sentences and
    instruction with blank lines.
    """

    name = "mock-echo"

    def complete(self, request: LlmRequest, sample_index: int = 0) -> str:
        blocks = [b for b in request.prompt.split("\n\n") if b.strip()]
        if len(blocks) >= 3:
            return blocks[1].splitlines()[0].strip()
        for line in request.prompt.splitlines():
            if line.strip():
                return line.strip()
        return ""


class ConstantLlmBackend:
    """Always returns the same fixed text."""

    name = "mock-constant"

    def __init__(self, text: str):
        self.text = text

    def complete(self, request: LlmRequest, sample_index: int = 0) -> str:
        return self.text


class ReplayLlmBackend:
    """Replays recorded responses keyed by the sha256 of the prompt.

    The fixture maps each prompt hash to a list of responses indexed by
    sample number, so repeated sampling replays deterministically.
    """

    name = "mock-replay"

    def __init__(self, fixture: dict[str, list[str]] | str | Path):
        if isinstance(fixture, (str, Path)):
            try:
                fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise HiroError(f"replay fixture not found: {fixture}") from None
        self.responses: dict[str, list[str]] = dict(fixture)

    def complete(self, request: LlmRequest, sample_index: int = 0) -> str:
        key = sha256_text(request.prompt)
        try:
            return self.responses[key][sample_index]
        except (KeyError, IndexError):
            raise HiroError(
                f"replay fixture has no response for prompt hash {key} sample {sample_index}"
            ) from None


class RecordingLlmClient:
    """Wraps a real client and captures a replay fixture as it runs."""

    def __init__(self, inner: LlmClient):
        self.inner = inner
        self.name = inner.name
        self.recorded: dict[str, list[str]] = {}

    def complete(self, request: LlmRequest, sample_index: int = 0) -> str:
        text = self.inner.complete(request, sample_index)
        bucket = self.recorded.setdefault(sha256_text(request.prompt), [])
        while len(bucket) <= sample_index:
            bucket.append("")
        bucket[sample_index] = text
        return text
