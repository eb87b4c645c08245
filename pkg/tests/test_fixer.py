from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from fixerbench.errors import (
    ConfigurationError,
    EmptyCandidateError,
    FixerUnavailableError,
)
from fixerbench.fixer import (
    FixerClient,
    FixerConfig,
    PromptBundle,
    build_bundle,
    extract_code,
    request_candidate,
)


# -- extract_code -----------------------------------------------------------


def test_single_fenced_block():
    response = "Sure.\n\n```cuda\n__global__ void k() {}\n```\n"
    assert extract_code(response) == "__global__ void k() {}"


def test_last_of_two_blocks_wins():
    response = (
        "The old code:\n```cuda\nold();\n```\n"
        "The fix:\n```cuda\nnew_code();\n```\nDone."
    )
    assert extract_code(response) == "new_code();"


def test_no_fence_takes_whole_response():
    response = "__global__ void k() { /* no fences */ }"
    assert extract_code(response) == response


def test_empty_response_raises():
    with pytest.raises(EmptyCandidateError):
        extract_code("   \n  ")


# -- bundle assembly --------------------------------------------------------


def test_bundle_messages_order_and_count():
    bundle = PromptBundle(
        prompt="task",
        broken_kernel="broken",
        error_log="log",
        history=[("c1", "f1"), ("c2", "f2"), ("c3", "f3"), ("c4", "f4")],
    )
    messages = bundle.messages()
    assert len(messages) == 1 + 2 * 4
    assert messages[0]["role"] == "user"
    assert "task" in messages[0]["content"]
    assert "[broken kernel]" in messages[0]["content"]
    assert "[original error log]" in messages[0]["content"]
    assert [m["role"] for m in messages[1:]] == ["assistant", "user"] * 4
    assert messages[1]["content"] == "c1"  # oldest first
    assert messages[-1]["content"] == "f4"  # latest feedback last


def test_history_truncation_keeps_most_recent():
    history = [(f"c{i}", f"f{i}") for i in range(6)]
    bundle = build_bundle("p", "b", "e", history, depth=4)
    assert len(bundle.history) == 4
    assert bundle.history[0] == ("c2", "f2")
    assert bundle.history[-1] == ("c5", "f5")


# -- scripted fixer ---------------------------------------------------------


def scripted(tmp_path, files: dict[str, str]) -> FixerConfig:
    for rel, text in files.items():
        path = tmp_path / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return FixerConfig(name="scripted-x", kind="scripted", endpoint=str(tmp_path))


def test_scripted_replays_iteration_file(tmp_path):
    cfg = scripted(tmp_path, {"t_1/iter_2.txt": "second answer"})
    bundle = PromptBundle(prompt="p", broken_kernel="b", error_log="e")
    assert (
        request_candidate(cfg, bundle, task_stem="t_1", iteration=2) == "second answer"
    )


def test_scripted_fallbacks(tmp_path):
    cfg = scripted(
        tmp_path, {"t_1/default.txt": "task default", "default.txt": "global default"}
    )
    bundle = PromptBundle(prompt="p", broken_kernel="b", error_log="e")
    assert request_candidate(cfg, bundle, task_stem="t_1", iteration=9) == "task default"
    assert (
        request_candidate(cfg, bundle, task_stem="t_other", iteration=1)
        == "global default"
    )


def test_scripted_exhausted_raises(tmp_path):
    cfg = scripted(tmp_path, {})
    bundle = PromptBundle(prompt="p", broken_kernel="b", error_log="e")
    with pytest.raises(FixerUnavailableError):
        request_candidate(cfg, bundle, task_stem="t_1", iteration=1)


def test_client_counts_calls(tmp_path):
    cfg = scripted(tmp_path, {"default.txt": "x"})
    client = FixerClient(cfg)
    bundle = PromptBundle(prompt="p", broken_kernel="b", error_log="e")
    for i in range(3):
        client.request(bundle, task_stem="t", iteration=i + 1)
    assert client.calls == 3


# -- remote fixer -----------------------------------------------------------


class _ChatHandler(BaseHTTPRequestHandler):
    seen: list[dict] = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        type(self).seen.append(payload)
        body = json.dumps(
            {"choices": [{"message": {"content": "```c\nfixed();\n```"}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):  # silence test output
        pass


@pytest.fixture()
def chat_server():
    _ChatHandler.seen = []
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_fixer_roundtrip(chat_server, monkeypatch):
    monkeypatch.setenv("TEST_FIXER_KEY", "secret")
    cfg = FixerConfig(
        name="remote-m",
        kind="http",
        endpoint=chat_server,
        api_key_env="TEST_FIXER_KEY",
        max_retries=1,
    )
    history = [(f"c{i}", f"f{i}") for i in range(4)]
    bundle = build_bundle("p", "b", "e", history, depth=4)
    raw = request_candidate(cfg, bundle, task_stem="t", iteration=5, temperature=0.7)
    assert extract_code(raw) == "fixed();"
    payload = _ChatHandler.seen[-1]
    assert payload["temperature"] == 0.7
    assert payload["model"] == "remote-m"
    # exactly H=4 prior exchanges plus the initial turn
    assert len(payload["messages"]) == 1 + 2 * 4


def test_http_fixer_missing_key_is_config_error():
    cfg = FixerConfig(
        name="remote-m",
        kind="http",
        endpoint="http://127.0.0.1:1/",
        api_key_env="NO_SUCH_ENV_VAR_SET",
        max_retries=1,
    )
    bundle = PromptBundle(prompt="p", broken_kernel="b", error_log="e")
    with pytest.raises(ConfigurationError):
        request_candidate(cfg, bundle, task_stem="t", iteration=1)


def test_http_fixer_unreachable_raises_after_retries():
    cfg = FixerConfig(
        name="remote-m", kind="http", endpoint="http://127.0.0.1:9/", max_retries=1
    )
    bundle = PromptBundle(prompt="p", broken_kernel="b", error_log="e")
    with pytest.raises(FixerUnavailableError):
        request_candidate(cfg, bundle, task_stem="t", iteration=1)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigurationError):
        FixerConfig(name="x", kind="telepathy")


def test_negative_temperature_rejected():
    with pytest.raises(ConfigurationError):
        FixerConfig(name="x", temperature=-0.1)
