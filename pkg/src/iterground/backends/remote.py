"""OpenAI-compatible chat-completions client for vision models."""

from __future__ import annotations

import base64
import io
import logging
import os
import threading
import time
from dataclasses import dataclass, field

import httpx
import numpy as np
from PIL import Image

from ..errors import BackendTimeout, BackendUnavailable, UnparseableReply
from ..geometry import ImageDims
from .base import BackendReply, IterationContext
from .cache import ResponseCache, cache_key
from .parsing import CoordinateScale, parse_point

log = logging.getLogger(__name__)

API_KEY_ENV = "ITERGROUND_API_KEY"

DEFAULT_PROMPT = (
    "Query: {query}. Output the coordinate of the described element as (x, y) "
    "normalized to [0,1] relative to THIS image. Output only the coordinate."
)


@dataclass
class RemoteBackendConfig:
    endpoint_url: str
    model_name: str
    api_key: str | None = field(default=None, repr=False)
    prompt_template: str = DEFAULT_PROMPT
    coordinate_scale: CoordinateScale = CoordinateScale.UNIT
    max_retries: int = 2
    request_timeout_ms: int = 60_000
    temperature: float = 0.0
    max_in_flight: int = 4
    retry_backoff_s: float = 0.5

    def __post_init__(self):
        self.coordinate_scale = CoordinateScale(self.coordinate_scale)
        if self.prompt_template.count("{query}") != 1:
            raise ValueError("prompt_template must contain {query} exactly once")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout_ms <= 0:
            raise ValueError("request_timeout_ms must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)

    def render_prompt(self, query: str) -> str:
        return self.prompt_template.replace("{query}", query)


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image)).save(buf, format="PNG")
    return buf.getvalue()


def build_request(cfg: RemoteBackendConfig, image: np.ndarray, query: str) -> dict:
    b64 = base64.b64encode(encode_png(image)).decode("ascii")
    return {
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}},
                {"type": "text", "text": cfg.render_prompt(query)},
            ],
        }],
    }


def _reply_text(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise UnparseableReply(f"malformed chat-completions response: {payload!r}") from exc
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise UnparseableReply(f"non-text message content: {content!r}")
    return content


class RemoteBackend:
    """Grounding backend that talks to a hosted VLM.

    Only the crop handed to :meth:`predict` is sent. Replies are cached by
    crop content when a :class:`ResponseCache` is supplied.
    ``request_count`` counts HTTP requests actually issued.
    """

    def __init__(self, cfg: RemoteBackendConfig, cache: ResponseCache | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self.cache = cache
        self._client = httpx.Client(transport=transport,
                                    timeout=cfg.request_timeout_ms / 1000.0)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._count_lock = threading.Lock()
        self.request_count = 0

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def url(self) -> str:
        return self.cfg.endpoint_url.rstrip("/") + "/chat/completions"

    def _post(self, body: dict) -> str:
        headers = {}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        with self._slots:
            with self._count_lock:
                self.request_count += 1
            resp = self._client.post(self.url, json=body, headers=headers)
        if resp.status_code == 429 or resp.status_code >= 500:
            raise httpx.HTTPStatusError(f"server returned {resp.status_code}",
                                        request=resp.request, response=resp)
        if resp.status_code >= 400:
            raise BackendUnavailable(f"{self.url} returned {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise UnparseableReply(f"response is not JSON: {resp.text[:200]!r}") from exc
        return _reply_text(payload)

    def predict(self, image: np.ndarray, query: str, ctx: IterationContext) -> BackendReply:
        return remote_predict(self, image, query, ctx)


def remote_predict(backend: RemoteBackend, image: np.ndarray, query: str,
                   ctx: IterationContext) -> BackendReply:
    cfg = backend.cfg
    sent = ImageDims.of(image)
    key = None
    if backend.cache is not None:
        key = cache_key(image, query, cfg.model_name)
        hit = backend.cache.get(key)
        if hit is not None:
            return BackendReply(hit["raw_text"],
                                parse_point(hit["raw_text"], cfg.coordinate_scale, sent), 0.0)

    body = build_request(cfg, image, query)
    last: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt and cfg.retry_backoff_s:
            time.sleep(cfg.retry_backoff_s * attempt)
        start = time.perf_counter()
        try:
            raw = backend._post(body)
            point = parse_point(raw, cfg.coordinate_scale, sent)
        except (httpx.TransportError, httpx.HTTPStatusError, UnparseableReply) as exc:
            log.debug("attempt %d/%d failed: %r", attempt + 1, cfg.max_retries + 1, exc)
            last = exc
            continue
        latency = (time.perf_counter() - start) * 1000.0
        if key is not None:
            backend.cache.put(key, raw, (point.x, point.y), cfg.model_name)
        return BackendReply(raw, point, latency)

    if isinstance(last, UnparseableReply):
        raise last
    if isinstance(last, httpx.TimeoutException):
        raise BackendTimeout(f"{backend.url} timed out after {cfg.max_retries + 1} attempts") from last
    raise BackendUnavailable(
        f"{backend.url} failed after {cfg.max_retries + 1} attempts: {last}") from last
