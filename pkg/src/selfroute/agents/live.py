"""Live agents behind a chat-completions style HTTP endpoint.

A live agent is sent the scenario instruction followed by the query text
and its reply is classified as a rejection when, after trimming, it starts
with the rejection sentinel. Answer correctness is never scored here.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import httpx

from ..core import Query, Scenario

logger = logging.getLogger(__name__)

TOKEN_ENV = "SELFROUTE_API_TOKEN"
DEFAULT_REJECT_PREFIX = "I don't know"


class LiveBackendError(RuntimeError):
    """Transport failure, timeout, non-2xx status or unparseable body."""


@dataclass(frozen=True)
class LiveAgentSpec:
    endpoint_url: str
    model_name: str
    timeout_ms: int = 30_000
    reject_prefix: str = DEFAULT_REJECT_PREFIX
    max_in_flight: int = 4


@dataclass(frozen=True)
class LiveResponse:
    decision: str  # "answer" | "reject"
    response_text: str
    latency_ms: float


def is_rejection(text: str, prefix: str = DEFAULT_REJECT_PREFIX) -> bool:
    return text.strip().startswith(prefix)


def build_request(spec: LiveAgentSpec, query: Query, scenario: Scenario) -> dict:
    if query.payload is None:
        raise ValueError(f"query {query.id!r} has no payload for a live agent")
    content = f"{scenario.instruction_text}\n{query.payload}"
    return {
        "model": spec.model_name,
        "messages": [{"role": "user", "content": content}],
        "temperature": 0,
    }


def _headers() -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def live_query(
    spec: LiveAgentSpec,
    query: Query,
    scenario: Scenario,
    client: httpx.Client | None = None,
) -> LiveResponse:
    body = build_request(spec, query, scenario)
    timeout = spec.timeout_ms / 1000.0
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=timeout)
    start = time.perf_counter()
    try:
        resp = client.post(spec.endpoint_url, json=body, headers=_headers(), timeout=timeout)
    except httpx.TimeoutException as exc:
        raise LiveBackendError(f"{spec.model_name}: timed out after {spec.timeout_ms} ms") from exc
    except httpx.HTTPError as exc:
        raise LiveBackendError(f"{spec.model_name}: transport error: {exc}") from exc
    finally:
        if own_client:
            client.close()
    latency_ms = (time.perf_counter() - start) * 1000.0
    if not 200 <= resp.status_code < 300:
        raise LiveBackendError(f"{spec.model_name}: HTTP {resp.status_code}")
    try:
        text = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise LiveBackendError(f"{spec.model_name}: unparseable response body") from exc
    if not isinstance(text, str):
        raise LiveBackendError(f"{spec.model_name}: message content is not text")
    decision = "reject" if is_rejection(text, spec.reject_prefix) else "answer"
    return LiveResponse(decision=decision, response_text=text, latency_ms=latency_ms)


def live_batch(
    spec: LiveAgentSpec,
    queries: Sequence[Query],
    scenario: Scenario,
) -> list[LiveResponse | LiveBackendError]:
    """Query one live agent for many queries, at most ``max_in_flight`` at once.

    Results come back in input order; per-query failures are returned in
    place rather than raised.
    """

    def one(q: Query):
        try:
            return live_query(spec, q, scenario, client)
        except LiveBackendError as exc:
            return exc

    limits = httpx.Limits(max_connections=spec.max_in_flight)
    with httpx.Client(timeout=spec.timeout_ms / 1000.0, limits=limits) as client:
        with ThreadPoolExecutor(max_workers=max(1, spec.max_in_flight)) as pool:
            return list(pool.map(one, queries))
