"""Model clients: an abstract interface, a deterministic mock and an HTTP backend."""

from __future__ import annotations

import abc
import base64
import hashlib
import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import yaml

from ..errors import BadConfig, TransportError
from ..labels import REGIONS
from .prompt import ANSWER_MARKER, PromptBundle

logger = logging.getLogger(__name__)


class ModelClient(abc.ABC):
    @abc.abstractmethod
    def send(self, bundle: PromptBundle) -> str:
        """Return the model's raw text answer for ``bundle``."""


def fingerprint(bundle: PromptBundle) -> str:
    h = hashlib.sha256()
    h.update(bundle.system_text.encode())
    h.update(b"\0")
    h.update(bundle.user_text.encode())
    if bundle.image is not None:
        h.update(bundle.image.pixels.tobytes())
        h.update(str(bundle.image.pixels.shape).encode())
    return h.hexdigest()


def evidence_top_region(bundle: PromptBundle) -> str:
    """Mock rule: answer the region with the largest segmented extent."""
    ev = bundle.evidence
    if ev is None or not ev.region_extents_cm:
        return "I cannot determine the region."
    best = max(ev.region_extents_cm.values())
    region = next(r for r in REGIONS if ev.region_extents_cm.get(r) == best)
    return f"The segmentation evidence points to one dominant region.\n{ANSWER_MARKER} {region}"


class MockClient(ModelClient):
    """Deterministic stand-in for a model.

    ``responder`` is a fixed string, a mapping from bundle fingerprint to
    answer, or a callable on the bundle. ``max_delay`` adds a sleep derived
    from the bundle hash, which shuffles completion order under concurrency
    without affecting answers.
    """

    def __init__(self, responder: str | Mapping[str, str] | Callable[[PromptBundle], str],
                 max_delay: float = 0.0, default: str | None = None):
        self.responder = responder
        self.max_delay = max_delay
        self.default = default
        self.calls = 0

    def send(self, bundle: PromptBundle) -> str:
        self.calls += 1
        key = fingerprint(bundle)
        if self.max_delay:
            time.sleep(self.max_delay * int(key[:4], 16) / 0xFFFF)
        if callable(self.responder):
            return self.responder(bundle)
        if isinstance(self.responder, str):
            return self.responder
        if key in self.responder:
            return self.responder[key]
        if self.default is not None:
            return self.default
        raise TransportError(f"mock has no fixture for prompt {key[:12]}")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    model: str
    token_env: str = "BODYREGION_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    max_backoff: float = 30.0

    @classmethod
    def load(cls, path) -> "BackendConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        try:
            return cls(**data)
        except TypeError as exc:
            raise BadConfig(f"{path}: {exc}") from None


class HttpClient(ModelClient):
    """OpenAI-compatible chat-completions endpoint; the image goes as a PNG data URL."""

    def __init__(self, config: BackendConfig):
        self.config = config

    def payload(self, bundle: PromptBundle) -> dict:
        content = [{"type": "text", "text": bundle.user_text}]
        if bundle.image is not None:
            b64 = base64.b64encode(bundle.image.to_png_bytes()).decode()
            content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
        return {
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": content},
            ],
        }

    def send(self, bundle: PromptBundle) -> str:
        cfg = self.config
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = json.dumps(self.payload(bundle)).encode()
        delay = cfg.backoff
        last = None
        for attempt in range(cfg.retries + 1):
            req = urllib.request.Request(cfg.endpoint, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
                    data = json.loads(resp.read())
                return data["choices"][0]["message"]["content"]
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code not in (408, 429) and exc.code < 500:
                    break
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            except (KeyError, IndexError, ValueError) as exc:
                raise TransportError(f"malformed response from {cfg.endpoint}: {exc}") from exc
            if attempt < cfg.retries:
                logger.warning("request failed (%s); retry %d/%d in %.1fs", last, attempt + 1, cfg.retries, delay)
                time.sleep(delay)
                delay = min(delay * 2, cfg.max_backoff)
        raise TransportError(f"request to {cfg.endpoint} failed: {last}")
