"""Shared test helpers: independent metric oracles, random-call generation,
and a small mock chat-completions endpoint.

The metric oracles are written as naive loops on purpose: they are the
independent side of the dual-route checks and must not share code with
the library implementation.
"""

from __future__ import annotations

import json
import random
import string
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from toolstream.calls import ApiCall, FailureReason

# Fixed malformed-completion corpus with the reason each case must produce.
MALFORMED_CASES = [
    ("", FailureReason.EMPTY_OUTPUT),
    ("   \n ", FailureReason.EMPTY_OUTPUT),
    ("no call here", FailureReason.NO_BRACKET),
    ("I will check the weather.", FailureReason.NO_BRACKET),
    ("[]", FailureReason.BAD_NAME),
    ("[123(x='1')]", FailureReason.BAD_NAME),
    ("[ GetWeather(city='P')]", FailureReason.BAD_NAME),
    ("[GetWeather]", FailureReason.BAD_NAME),
    ("[GetWeather city='P']", FailureReason.BAD_NAME),
    ("[", FailureReason.BAD_NAME),
    ("x[", FailureReason.BAD_NAME),
    ("[GetWeather(city]", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city=']", FailureReason.UNTERMINATED_STRING),
    ("[GetWeather(city='Paris']", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city='Paris)]", FailureReason.UNTERMINATED_STRING),
    ("[GetWeather(city='Paris'", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city='Paris')", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city='Paris') extra", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(='x')]", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city='a', city='b')]", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city=)]", FailureReason.BAD_PARAM_SYNTAX),
    ("[GetWeather(city=,x='1')]", FailureReason.BAD_PARAM_SYNTAX),
    ("[F(x='a'y='b')]", FailureReason.BAD_PARAM_SYNTAX),
    ("[F(x='1'))]", FailureReason.BAD_PARAM_SYNTAX),
    ("[F(x=  )]", FailureReason.BAD_PARAM_SYNTAX),
]

# ---------------------------------------------------------------------------
# Brute-force continual-learning oracles (pure loops, no numpy)


def oracle_average_accuracy(R):
    T = len(R)
    return sum(R[T - 1]) / T


def oracle_bwt(R):
    T = len(R)
    return sum(R[T - 1][j] - R[j][j] for j in range(T - 1)) / (T - 1)


def oracle_fwt(R, b):
    T = len(R)
    return sum(R[j - 1][j] - b[j] for j in range(1, T)) / (T - 1)


def oracle_forgetting(R):
    T = len(R)
    total = 0.0
    for j in range(T - 1):
        peak = max(R[i][j] for i in range(j, T - 1))
        total += peak - R[T - 1][j]
    return total / (T - 1)


def oracle_aulc(R):
    T = len(R)
    return sum(sum(R[i][: i + 1]) / (i + 1) for i in range(T)) / T


def random_matrix(rng: random.Random, T: int = 4) -> list[list[float]]:
    return [[rng.random() for _ in range(T)] for _ in range(T)]


# ---------------------------------------------------------------------------
# Random API calls for parser round-trip testing

_IDENT_START = string.ascii_letters + "_"
_IDENT_CHARS = _IDENT_START + string.digits
_VALUE_ALPHABET = (
    string.ascii_letters + string.digits + " \t'\"\\,()[]{}=:;.!?-_/éß例"
)


def random_identifier(rng: random.Random, max_len: int = 10) -> str:
    length = rng.randrange(1, max_len + 1)
    return rng.choice(_IDENT_START) + "".join(
        rng.choice(_IDENT_CHARS) for _ in range(length - 1)
    )


def random_value(rng: random.Random, max_len: int = 14) -> str:
    return "".join(rng.choice(_VALUE_ALPHABET) for _ in range(rng.randrange(0, max_len)))


def random_call(rng: random.Random) -> ApiCall:
    n_params = rng.randrange(0, 5)
    keys: list[str] = []
    while len(keys) < n_params:
        key = random_identifier(rng)
        if key not in keys:
            keys.append(key)
    return ApiCall(
        random_identifier(rng),
        tuple((key, random_value(rng)) for key in keys),
    )


_FUZZ_ALPHABET = (
    "".join(chr(i) for i in range(32, 127)) + "[](),='\"\\\n\t" * 3 + "émoji漢字λ"
)


def random_text(rng: random.Random, max_len: int = 80) -> str:
    return "".join(rng.choice(_FUZZ_ALPHABET) for _ in range(rng.randrange(0, max_len)))


# ---------------------------------------------------------------------------
# Mock OpenAI-compatible endpoint


class MockEndpoint:
    """Threaded chat-completions stub with failure injection and an
    in-flight gauge for concurrency assertions."""

    def __init__(self, reply=None, delay: float = 0.0):
        self.reply = reply or (lambda prompt: "[Ping()]")
        self.delay = delay
        self.requests = 0
        self.inflight = 0
        self.max_inflight = 0
        self.fail_once: set[str] = set()   # prompt substrings that 500 on first sight
        self.fail_always: set[str] = set() # prompt substrings that always 400
        self.last_headers: dict[str, str] = {}
        self.last_payload: dict = {}
        self._tripped: set[str] = set()
        self._lock = threading.Lock()
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                prompt = body["messages"][0]["content"]
                with endpoint._lock:
                    endpoint.last_headers = dict(self.headers)
                    endpoint.last_payload = body
                    endpoint.requests += 1
                    endpoint.inflight += 1
                    endpoint.max_inflight = max(endpoint.max_inflight, endpoint.inflight)
                try:
                    if endpoint.delay:
                        time.sleep(endpoint.delay)
                    status, payload = endpoint._respond(prompt)
                finally:
                    with endpoint._lock:
                        endpoint.inflight -= 1
                raw = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def _respond(self, prompt: str):
        for marker in self.fail_always:
            if marker in prompt:
                return 400, {"error": "permanently rejected"}
        for marker in self.fail_once:
            if marker in prompt:
                with self._lock:
                    if marker not in self._tripped:
                        self._tripped.add(marker)
                        return 500, {"error": "transient failure"}
        return 200, {"choices": [{"message": {"content": self.reply(prompt)}}]}

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_port}/v1"

    def __enter__(self) -> "MockEndpoint":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
