"""Agent clients: an HTTP client for a hosted model and a table-driven mock.

Both expose ``request(prompt, scene_hint=None) -> str``. The mock needs
``scene_hint`` only for annotation prompts, which carry no scene text (a
real deployment sends an image alongside).
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

from ..exceptions import TransportError, ValidationError
from .parsing import normalize_scene
from .prompts import OBJECT_SEPARATOR, Variant, template_text

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "EDGEVFM_AGENT_API_KEY"


class AgentClient(Protocol):
    def request(self, prompt: str, scene_hint: str | None = None) -> str: ...


@dataclass(frozen=True)
class RemoteConfig:
    endpoint_url: str
    model_name: str
    timeout_ms: int = 30_000
    max_retries: int = 2
    api_key_env: str = DEFAULT_API_KEY_ENV
    backoff_s: float = 0.5

    @classmethod
    def from_dict(cls, doc: Mapping) -> RemoteConfig:
        try:
            return cls(
                endpoint_url=str(doc["endpoint_url"]),
                model_name=str(doc["model_name"]),
                timeout_ms=int(doc.get("timeout_ms", 30_000)),
                max_retries=int(doc.get("max_retries", 2)),
                api_key_env=str(doc.get("api_key_env", DEFAULT_API_KEY_ENV)),
                backoff_s=float(doc.get("backoff_s", 0.5)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed remote client config: {exc}") from exc


class RemoteAgentClient:
    """POSTs ``{"model", "prompt"}`` as JSON and returns the response's ``text`` field."""

    def __init__(self, config: RemoteConfig, sleep=time.sleep):
        self.config = config
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json", "Accept": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _once(self, body: bytes) -> str:
        req = urllib.request.Request(
            self.config.endpoint_url, data=body, headers=self._headers(), method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout_ms / 1000) as resp:
                status = resp.status
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"endpoint answered HTTP {exc.code}") from None
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"request failed: {exc}") from None
        if not 200 <= status < 300:
            raise TransportError(f"endpoint answered HTTP {status}")
        try:
            doc = json.loads(payload.decode("utf-8"))
            text = doc["text"]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise TransportError(f"malformed transport JSON: {exc}") from None
        if not isinstance(text, str):
            raise TransportError("transport field 'text' is not a string")
        return text

    def request(self, prompt: str, scene_hint: str | None = None) -> str:
        body = json.dumps({"model": self.config.model_name, "prompt": prompt}).encode("utf-8")
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            try:
                return self._once(body)
            except TransportError as exc:
                if attempt == attempts - 1:
                    raise
                delay = self.config.backoff_s * 2**attempt
                log.warning("agent request failed (%s); retrying in %.2fs", exc, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class MockScene:
    annotation: str
    kept: frozenset[str]


_SCENE_RE = re.compile(r"in a scene of (.*?)\. Given a scene description")
_OBJECTS_RE = re.compile(r"^Object names: (.*)\.$", re.MULTILINE)
_TOPK_RE = re.compile(r"output only the top (\d+) most relevant objects")


@dataclass
class MockAgentClient:
    """Deterministic offline agent driven by a scene table.

    Filtering prompts keep exactly the table's classes that appear in the
    request (the first ``k`` of them, in request order, for top-k prompts);
    annotation prompts answer with the table's phrase for ``scene_hint``.
    """

    scenes: Mapping[str, MockScene] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping) -> MockAgentClient:
        try:
            scenes = {
                normalize_scene(name): MockScene(
                    annotation=str(entry.get("annotation", name)),
                    kept=frozenset(entry.get("kept", ())),
                )
                for name, entry in doc["scenes"].items()
            }
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed mock table: {exc}") from exc
        return cls(scenes)

    def _scene(self, name: str) -> MockScene:
        key = normalize_scene(name)
        if key not in self.scenes:
            raise ValidationError(f"mock agent has no entry for scene {name!r}")
        return self.scenes[key]

    def request(self, prompt: str, scene_hint: str | None = None) -> str:
        if prompt == template_text(Variant.SCENE_ANNOTATION):
            if scene_hint is None:
                raise ValidationError("mock annotation requests need a scene hint")
            return self._scene(scene_hint).annotation
        scene_m = _SCENE_RE.search(prompt)
        objects_m = _OBJECTS_RE.search(prompt)
        if not scene_m or not objects_m:
            raise ValidationError("mock agent cannot interpret this prompt")
        names = objects_m.group(1).split(OBJECT_SEPARATOR)
        kept_table = self._scene(scene_m.group(1)).kept
        kept = [n for n in names if n in kept_table]
        topk = _TOPK_RE.search(prompt)
        if topk:
            kept = kept[: int(topk.group(1))]
        kept_set = set(kept)
        return json.dumps({n: int(n in kept_set) for n in names}, ensure_ascii=False)


def load_client(path: str | Path) -> AgentClient:
    """Build a client from a config file: a mock table or a remote config."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "scenes" in doc:
        return MockAgentClient.from_dict(doc)
    return RemoteAgentClient(RemoteConfig.from_dict(doc))
