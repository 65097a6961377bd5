from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from selfroute.core import CapabilityTrace, Pool, TraceSet

REFERENCE_COSTS = [0.1, 0.2, 0.4, 0.7, 0.9]

ANSWER_TEXT = "Let's think step by step: 6 times 7 is 42. The final answer is: 42."


def make_trace(qid, aid, k, n=10, greedy=None):
    samples = tuple([True] * k + [False] * (n - k))
    if greedy is None:
        greedy = 2 * k > n
    return CapabilityTrace(qid, aid, samples, bool(greedy))


def binary_traces(capabilities: dict[str, list[int]], ids: list[str], n: int = 10) -> TraceSet:
    """query id -> per-agent 0/1 capability; samples all agree with the greedy bit."""
    return TraceSet(
        make_trace(q, a, n * bit, n, bool(bit))
        for q, bits in capabilities.items()
        for a, bit in zip(ids, bits)
    )


@pytest.fixture
def reference_pool() -> Pool:
    return Pool.from_costs(REFERENCE_COSTS)


class _MockState:
    def __init__(self):
        self.lock = threading.Lock()
        self.requests: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self.delay = 0.0


def _handler(state: _MockState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            with state.lock:
                state.requests.append({"body": body, "headers": dict(self.headers)})
                state.in_flight += 1
                state.max_in_flight = max(state.max_in_flight, state.in_flight)
            try:
                payload = body["messages"][0]["content"].split("\n")[-1]
                if state.delay:
                    time.sleep(state.delay)
                if payload.startswith("sleep"):
                    time.sleep(1.0)
                if payload.startswith("status500"):
                    self.send_response(500)
                    self.end_headers()
                    return
                if payload.startswith("garbage"):
                    data = b"not json"
                else:
                    if payload.startswith("reject-space"):
                        text = " I don't know!"
                    elif payload.startswith("reject"):
                        text = "I don't know!"
                    else:
                        text = ANSWER_TEXT
                    data = json.dumps(
                        {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}
                    ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
            except BrokenPipeError:
                pass  # client gave up after its timeout
            finally:
                with state.lock:
                    state.in_flight -= 1

    return Handler


@pytest.fixture
def mock_server():
    """Local chat-completions server; behaviour keyed on the query payload prefix."""
    state = _MockState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _handler(state))
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    yield state
    server.shutdown()
    server.server_close()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
