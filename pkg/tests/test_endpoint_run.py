from __future__ import annotations

import hashlib
import json
import re

import httpx
import pytest

from musclereward import loop
from musclereward.loop import RunConfig, incumbent_scores, run
from musclereward.transport import HttpTransport, TransportError

CRITIQUE = """NO
The walker barely moves forward.
```json
{"suggestions": [{"term_name": "forward_velocity", "action": "increase"},
                 {"term_name": "effort", "action": "add", "proposed_weight": 0.3, "definition_hint": "-effort"}]}
```"""


def fake_endpoint(log):
    """Deterministic stand-in for a chat-completions server that plays judge and coder."""

    def handler(request):
        body = json.loads(request.content)
        log.append(body["model"])
        text = body["messages"][0]["content"][0]["text"]
        variant = re.search(r"variant (\d+) of", text)
        if variant:
            k = int(variant.group(1))
            reply = (f"```\nterm forward_velocity {{ forward_velocity }} @ {k + 1}\n"
                     f"term height {{ min(height, 1.0) }} @ 1\nterm effort {{ -effort }} @ 0.{k}\n```")
        elif "YES" in text:
            reply = CRITIQUE
        else:
            digest = hashlib.sha256(request.content).digest()
            reply = "first" if digest[0] % 2 else "second, it looks steadier"
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": reply}}]})

    return handler


@pytest.fixture
def endpoint(monkeypatch):
    log = []
    client = httpx.Client(transport=httpx.MockTransport(fake_endpoint(log)))

    class Mocked(HttpTransport):
        def __init__(self, config, client_=None):
            super().__init__(config, client)

    monkeypatch.setattr(loop, "HttpTransport", Mocked)
    monkeypatch.setenv("MUSCLEREWARD_ENDPOINT_URL", "http://vlm.local/v1")
    monkeypatch.setenv("MUSCLEREWARD_MODEL", "coder-test")
    monkeypatch.setenv("MUSCLEREWARD_JUDGE_MODEL", "vision-test")
    return log


def config(path, **kw):
    return RunConfig(task_id="walker_flat", iters=2, samples=2, duration_s=0.3, planner={"n_samples": 8},
                     judge="endpoint", synth="endpoint", out_dir=str(path), **kw)


def test_recorded_run_replays_byte_for_byte(endpoint, tmp_path, monkeypatch):
    live = run(config(tmp_path / "live"))
    assert live["status"] == "complete"
    assert set(endpoint) == {"vision-test", "coder-test"}
    assert live["config"]["judge_model"] == "vision-test" and live["config"]["synth_model"] == "coder-test"
    rec = live["iterations"][0]
    assert rec["transcripts"] and all(p.startswith("iter_000/transcripts/") for p in rec["transcripts"])
    assert rec["feedback"]["task_success"] == "no"
    assert len(rec["proposals"]) == 2 and rec["proposals"][1]["provenance"] == "endpoint"
    n_calls = len(endpoint)

    # no endpoint configured for the replay: every answer must come from the recording
    for var in ("MUSCLEREWARD_ENDPOINT_URL", "MUSCLEREWARD_MODEL", "MUSCLEREWARD_JUDGE_MODEL"):
        monkeypatch.delenv(var)
    replay = run(config(tmp_path / "replay", replay_dir=str(tmp_path / "live")))
    assert len(endpoint) == n_calls
    assert (tmp_path / "replay" / "history.json").read_bytes() == (tmp_path / "live" / "history.json").read_bytes()
    assert incumbent_scores(replay) == incumbent_scores(live)


def test_replay_of_a_different_run_fails(endpoint, tmp_path, monkeypatch):
    run(config(tmp_path / "live"))
    with pytest.raises(TransportError):
        run(config(tmp_path / "other", replay_dir=str(tmp_path / "live"), seed=1))
    assert json.loads((tmp_path / "other" / "history.json").read_text())["status"] == "failed"


def test_endpoint_mode_without_environment_fails(tmp_path, monkeypatch):
    for var in ("MUSCLEREWARD_ENDPOINT_URL", "MUSCLEREWARD_MODEL", "MUSCLEREWARD_JUDGE_MODEL",
                "MUSCLEREWARD_SYNTH_MODEL"):
        monkeypatch.delenv(var, raising=False)
    with pytest.raises(TransportError, match="MUSCLEREWARD_ENDPOINT_URL"):
        run(config(tmp_path / "x"))
