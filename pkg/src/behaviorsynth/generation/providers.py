"""Chat-completion providers: an HTTP adapter and a scripted mock."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from ..core import DeviceDictionary, render_dataset_text
from ..errors import MissingCredential, ProviderError, RateLimited, Timeout
from .parsing import parse_response
from .prompt import DATA_MARKER, PromptBundle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "mock"  # "mock" | "http"
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    temperature: float = 0.7
    max_tokens: int = 4096
    timeout: float = 120.0
    retry_budget: int = 3
    credential_env: str = "OPENAI_API_KEY"
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    concurrency: int = 1
    # mock-only settings
    mock_mode: str = "echo"  # "echo" | "script"
    mock_script: tuple[str, ...] = ()
    mock_corrupt_first: bool = False
    mock_perturb: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        object.__setattr__(self, "mock_script", tuple(self.mock_script))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mock_script"] = list(self.mock_script)
        return d


@dataclass
class Completion:
    text: str
    latency_s: float = 0.0
    usage: dict | None = None


class Transcript:
    """Append-only JSON Lines log of every provider attempt."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


class ChatProvider:
    """One attempt per ``complete`` call; retries live in :func:`generate`."""

    name = "base"

    def complete(self, bundle: PromptBundle) -> Completion:  # pragma: no cover - interface
        raise NotImplementedError


class HttpChatProvider(ChatProvider):
    """POSTs an OpenAI-style ``/chat/completions`` request."""

    name = "http"

    def __init__(self, cfg: ProviderConfig, api_key: str | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self.api_key = api_key if api_key is not None else resolve_credential(cfg)
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)

    def complete(self, bundle: PromptBundle) -> Completion:
        url = self.cfg.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.cfg.model,
            "messages": bundle.messages(),
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        t0 = time.perf_counter()
        try:
            resp = self._client.post(url, json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise Timeout(f"request to {url} timed out: {exc}") from None
        except httpx.HTTPError as exc:
            raise ProviderError(None, f"could not reach {url}: {exc}") from None
        latency = time.perf_counter() - t0
        if resp.status_code == 429:
            err = RateLimited(resp.text or "rate limited")
            err.retry_after = _retry_after(resp)
            raise err
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderError(resp.status_code, f"unexpected response body: {resp.text[:500]}") from None
        return Completion(text or "", latency, data.get("usage"))


def _retry_after(resp: httpx.Response) -> float | None:
    try:
        return float(resp.headers.get("retry-after", ""))
    except ValueError:
        return None


class MockProvider(ChatProvider):
    """Deterministic offline provider.

    ``script`` mode returns the scripted responses in order (the last one
    repeats).  ``echo`` mode answers with the sequences found in the prompt's
    data section; with ``perturb`` each is changed in one behavior, and with
    ``corrupt_first`` the first reply carries one device/control mismatch.
    """

    name = "mock"

    def __init__(self, cfg: ProviderConfig, dictionary: DeviceDictionary | None = None,
                 failures: Sequence[Exception] = ()):
        self.cfg = cfg
        self.dictionary = dictionary
        self.failures = list(failures)  # raised (in order) before any response
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, bundle: PromptBundle) -> Completion:
        with self._lock:
            self.calls += 1
            call = self.calls
            failure = self.failures.pop(0) if self.failures else None
        if failure is not None:
            raise failure
        if self.cfg.mock_mode == "script":
            if not self.cfg.mock_script:
                raise ProviderError(None, "mock script is empty")
            i = min(call - 1, len(self.cfg.mock_script) - 1)
            return Completion(self.cfg.mock_script[i], 0.0, None)
        return Completion(self._echo(bundle, call), 0.0, None)

    def _echo(self, bundle: PromptBundle, call: int) -> str:
        data = bundle.user_message.split(DATA_MARKER, 1)[-1]
        cands, _ = parse_response(data)
        rng = np.random.default_rng([self.cfg.seed, len(cands)])
        out = []
        for i, elements in enumerate(cands):
            elements = list(elements)
            if self.cfg.mock_perturb and self.dictionary is not None and len(elements) >= 4:
                self._perturb(elements, rng)
            if self.cfg.mock_corrupt_first and call == 1 and i == 0 and self.dictionary is not None:
                self._corrupt(elements)
            out.append(elements)
        body = "[" + ", ".join("[" + ", ".join(e) + "]" for e in out) + "]"
        return f"Here are the adapted behavior sequences:\n{body}\nEach sequence was adjusted for the new scene."

    def _perturb(self, elements: list[str], rng: np.random.Generator) -> None:
        pairs = self.dictionary.pairs()
        b = int(rng.integers(len(elements) // 4))
        d, c = pairs[int(rng.integers(len(pairs)))]
        elements[4 * b + 2], elements[4 * b + 3] = d, c

    def _corrupt(self, elements: list[str]) -> None:
        # give the first behavior a control that exists only under other devices
        device = elements[2]
        own = set(self.dictionary.controls.get(device, ()))
        for d, c in self.dictionary.pairs():
            if d != device and c not in own:
                elements[3] = c
                return


def resolve_credential(cfg: ProviderConfig) -> str:
    key = os.environ.get(cfg.credential_env, "")
    if not key:
        raise MissingCredential(f"environment variable {cfg.credential_env} is not set")
    return key


def make_provider(cfg: ProviderConfig, dictionary: DeviceDictionary | None = None) -> ChatProvider:
    if cfg.kind == "http":
        return HttpChatProvider(cfg)
    return MockProvider(cfg, dictionary)


def generate(bundle: PromptBundle, provider: ChatProvider, cfg: ProviderConfig,
             transcript: Transcript | None = None, call_index: int = 0,
             sleep: Callable[[float], None] = time.sleep) -> str:
    """Full text completion with retries on rate limits, timeouts and
    transient (network / 5xx) failures, using exponential backoff."""
    transcript = transcript or Transcript()
    attempt = 0
    while True:
        attempt += 1
        record = {"call": call_index, "attempt": attempt, "provider": provider.name,
                  "system": bundle.system_message, "user": bundle.user_message}
        try:
            result = provider.complete(bundle)
        except ProviderError as exc:
            record.update(error=type(exc).__name__, status=exc.status, detail=str(exc.body)[:2000])
            transcript.append(record)
            retryable = isinstance(exc, (RateLimited, Timeout)) or exc.status is None or exc.status >= 500
            if not retryable or attempt > cfg.retry_budget:
                exc.attempts = attempt
                raise
            delay = min(cfg.backoff_cap, cfg.backoff_base * 2 ** (attempt - 1))
            delay = max(delay, getattr(exc, "retry_after", None) or 0.0)
            log.warning("provider attempt %d failed (%s); retrying in %.1fs", attempt, exc, delay)
            if delay > 0:
                sleep(delay)
            continue
        record.update(response=result.text, latency_s=round(result.latency_s, 6), usage=result.usage)
        transcript.append(record)
        return result.text


def mock_script_from(path_or_texts) -> tuple[str, ...]:
    """Load a mock script: a JSON list of response strings."""
    if isinstance(path_or_texts, (list, tuple)):
        return tuple(path_or_texts)
    doc = json.loads(Path(path_or_texts).read_text(encoding="utf-8"))
    if not isinstance(doc, list) or not all(isinstance(x, str) for x in doc):
        raise ValueError("mock script must be a JSON list of strings")
    return tuple(doc)


def render_mock_reply(sequences, explanation: str = "") -> str:
    """A well-formed mock reply for the given sequences."""
    body = render_dataset_text(sequences)
    return f"{body}\n{explanation}".strip()
