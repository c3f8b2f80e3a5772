"""Chat-completions client used as a remote edge discriminator."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass

import httpx

from hetg.discriminator.oracle import OracleVerdict, parse_verdict
from hetg.discriminator.prompt import PromptInstance, PromptTemplate, render_prompt
from hetg.errors import ProtocolError, TransportError, ValidationError

logger = logging.getLogger(__name__)

API_KEY_ENV = "HETG_API_KEY"
RETRY_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class OracleEndpointConfig:
    base_url: str
    model: str
    max_retries: int = 5
    backoff: float = 1.0
    timeout: float = 60.0
    max_concurrency: int = 4
    temperature: float = 0
    max_tokens: int = 8

    def url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"


_semaphores = {}
_sem_lock = threading.Lock()


def _semaphore(endpoint: OracleEndpointConfig):
    key = (endpoint.url(), endpoint.max_concurrency)
    with _sem_lock:
        if key not in _semaphores:
            _semaphores[key] = threading.BoundedSemaphore(endpoint.max_concurrency)
        return _semaphores[key]


def request_body(endpoint: OracleEndpointConfig, prompt: PromptInstance) -> dict:
    return {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt.rendered}],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }


def query_remote(endpoint: OracleEndpointConfig, prompt: PromptInstance, client=None, sleep=time.sleep):
    """POST one chat-completion request and parse the reply into a verdict.

    429, 5xx and timeouts are retried with exponential backoff (``backoff``,
    ``2*backoff``, ...) up to ``max_retries`` times.
    """
    key = os.environ.get(API_KEY_ENV)
    if not key:
        raise ValidationError(f"environment variable {API_KEY_ENV} is not set")
    headers = {"Authorization": f"Bearer {key}"}
    body = request_body(endpoint, prompt)
    own_client = client is None
    client = client or httpx.Client(timeout=endpoint.timeout)
    last_status = None
    try:
        for attempt in range(endpoint.max_retries + 1):
            if attempt:
                delay = endpoint.backoff * 2 ** (attempt - 1)
                logger.warning("retry %d after status %s, sleeping %.2fs", attempt, last_status, delay)
                sleep(delay)
            try:
                with _semaphore(endpoint):
                    resp = client.post(endpoint.url(), json=body, headers=headers)
            except httpx.TimeoutException:
                last_status = "timeout"
                continue
            except httpx.TransportError as exc:
                last_status = type(exc).__name__
                continue
            if resp.status_code in RETRY_STATUS:
                last_status = resp.status_code
                continue
            if resp.status_code != 200:
                raise TransportError(f"oracle returned HTTP {resp.status_code}", status=resp.status_code)
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProtocolError(f"malformed chat-completion response: {exc!r}") from None
            return parse_verdict(content)
    finally:
        if own_client:
            client.close()
    raise TransportError(
        f"oracle unreachable after {endpoint.max_retries} retries (last status {last_status})",
        status=last_status,
    )


class RemoteOracle:
    """Verdict function ``(u, v) -> OracleVerdict`` backed by a remote model."""

    def __init__(self, graph, endpoint: OracleEndpointConfig, template: PromptTemplate = PromptTemplate()):
        self.graph = graph
        self.endpoint = endpoint
        self.template = template
        self.key = template.hash
        self._client = httpx.Client(timeout=endpoint.timeout)

    def __call__(self, u, v) -> OracleVerdict:
        prompt = render_prompt(self.graph, u, v, self.template)
        return query_remote(self.endpoint, prompt, client=self._client)

    def close(self):
        self._client.close()
