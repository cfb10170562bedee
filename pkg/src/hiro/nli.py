"""Entailment backends: an HTTP client and a deterministic offline mock.

The wire protocol is ``POST {"premise": str, "hypothesis": str}`` returning
``{"p_entail": float}``. A premise entails a hypothesis when p_entail is
strictly above the decision threshold (0.5 by default, shared by pair
mining and all entailment-based metrics).
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Protocol

import requests

from .corpus import tokenize
from .errors import TransportError

DEFAULT_ENTAIL_THRESHOLD = 0.5
NLI_API_KEY_ENV = "HIRO_NLI_API_KEY"


class EntailmentClient(Protocol):
    def p_entail(self, premise: str, hypothesis: str) -> float: ...


@dataclass(frozen=True)
class EntailmentVerdict:
    premise_id: str
    hypothesis_id: str
    p_entail: float
    entailed: bool


def is_entailed(p_entail: float, threshold: float = DEFAULT_ENTAIL_THRESHOLD) -> bool:
    return p_entail > threshold


class JaccardEntailmentMock:
    """Offline stand-in: entailed iff token-set Jaccard overlap >= threshold.

    Returns a hard 0.0 / 1.0 probability so the downstream strict-threshold
    rule reproduces the Jaccard decision exactly. Stateless and safe for
    concurrent use.
    """

    name = "mock-jaccard"

    def __init__(self, jaccard_threshold: float = 0.5):
        self.jaccard_threshold = jaccard_threshold

    def p_entail(self, premise: str, hypothesis: str) -> float:
        a, b = set(tokenize(premise)), set(tokenize(hypothesis))
        if not a or not b:
            return 0.0
        jaccard = len(a & b) / len(a | b)
        return 1.0 if jaccard >= self.jaccard_threshold else 0.0


class HttpEntailmentClient:
    """Entailment over HTTP with bounded retries and exponential backoff.

    Each call issues an independent request, so instances are safe for
    concurrent use. The bearer token is read from ``HIRO_NLI_API_KEY``.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
    ):
        self.name = f"http:{endpoint}"
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(NLI_API_KEY_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def p_entail(self, premise: str, hypothesis: str) -> float:
        payload = {"premise": premise, "hypothesis": hypothesis}
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout
                )
                resp.raise_for_status()
                return float(resp.json()["p_entail"])
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(
            f"entailment request failed after {self.max_retries + 1} attempts: {last_error}"
        )
