"""Chat-completions transport for the endpoint judge and synthesizer.

Requests follow the widely used ``/chat/completions`` JSON shape with text
and base64 PNG image parts. Every request is validated against
``schemas/chat_request.schema.json`` before it leaves the process.

Transports:

* ``HttpTransport`` posts to a live endpoint.
* ``RecordingTransport`` wraps another transport and writes each exchange to
  ``<root>/<scope>.<seq>.json``.
* ``ReplayTransport`` answers from such files and fails if a request differs
  from the recorded one, which makes endpoint runs reproducible offline.
"""
from __future__ import annotations

import base64
import json
import os
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import httpx
import jsonschema

ENV_URL = "MUSCLEREWARD_ENDPOINT_URL"
ENV_MODEL = "MUSCLEREWARD_MODEL"
ENV_ROLE_MODEL = {"judge": "MUSCLEREWARD_JUDGE_MODEL", "synth": "MUSCLEREWARD_SYNTH_MODEL"}
ENV_KEY = "MUSCLEREWARD_API_KEY"
ENV_TIMEOUT = "MUSCLEREWARD_TIMEOUT"
DEFAULT_TIMEOUT = 120.0


class TransportError(RuntimeError):
    pass


@lru_cache(maxsize=1)
def request_schema() -> dict:
    text = resources.files("musclereward").joinpath("schemas/chat_request.schema.json").read_text()
    return json.loads(text)


def validate_request(body: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``body`` breaks the request schema."""
    jsonschema.validate(body, request_schema())


def png_part(png: bytes) -> dict:
    data = base64.b64encode(png).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def chat_request(model: str, parts: list[dict], max_tokens: int = 1024, temperature: float = 0.0) -> dict:
    return {
        "model": model,
        "messages": [{"role": "user", "content": parts}],
        "max_tokens": max_tokens,
        "temperature": temperature,
    }


def response_text(response: dict) -> str:
    """Text of the first choice; content may be a string or a list of text parts."""
    try:
        content = response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise TransportError("response has no choices[0].message.content") from None
    if isinstance(content, list):
        return "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return content or ""


def canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str
    api_key: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = 2

    @classmethod
    def from_env(cls, role: str | None = None, env=None) -> "EndpointConfig":
        env = os.environ if env is None else env
        url = env.get(ENV_URL)
        model = env.get(ENV_ROLE_MODEL.get(role, ""), "") or env.get(ENV_MODEL)
        if not url or not model:
            raise TransportError(f"endpoint mode needs {ENV_URL} and {ENV_MODEL} to be set")
        timeout = float(env.get(ENV_TIMEOUT, DEFAULT_TIMEOUT))
        return cls(url, model, env.get(ENV_KEY) or None, timeout)

    @property
    def completions_url(self) -> str:
        url = self.url.rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"


class Transport:
    def send(self, body: dict, scope: str) -> dict:
        validate_request(body)
        return self._send(body, scope)

    def _send(self, body: dict, scope: str) -> dict:
        raise NotImplementedError


class HttpTransport(Transport):
    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)

    def _send(self, body: dict, scope: str) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last = None
        for attempt in range(self.config.max_retries + 1):
            try:
                r = self.client.post(self.config.completions_url, content=canonical(body), headers=headers)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if r.status_code == 200:
                    try:
                        return r.json()
                    except ValueError:
                        raise TransportError("endpoint returned invalid JSON") from None
                last = f"HTTP {r.status_code}: {r.text[:200]}"
                if r.status_code < 500 and r.status_code != 429:
                    break
            if attempt < self.config.max_retries:
                time.sleep(min(4.0, 0.5 * 2**attempt))
        raise TransportError(f"request for {scope} failed: {last}")


class RecordingTransport(Transport):
    def __init__(self, inner: Transport, root):
        self.inner = inner
        self.root = Path(root)
        self.counts: dict[str, int] = {}

    def _send(self, body: dict, scope: str) -> dict:
        seq = self.counts.get(scope, 0)
        self.counts[scope] = seq + 1
        response = self.inner.send(body, scope)
        path = self.root / f"{scope}.{seq:03d}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {"scope": scope, "seq": seq, "request": body, "response": response}
        path.write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        return response


class ReplayTransport(Transport):
    def __init__(self, root):
        self.root = Path(root)
        self.counts: dict[str, int] = {}

    def _send(self, body: dict, scope: str) -> dict:
        seq = self.counts.get(scope, 0)
        self.counts[scope] = seq + 1
        path = self.root / f"{scope}.{seq:03d}.json"
        if not path.exists():
            raise TransportError(f"no recorded exchange {path}")
        record = json.loads(path.read_text())
        if canonical(record["request"]) != canonical(body):
            raise TransportError(f"request for {scope} #{seq} differs from the recording")
        return record["response"]
