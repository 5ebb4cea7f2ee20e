"""Backend clients: LLM completion, web search, page fetch, text embedding.

Every remote call flows through a cassette so that runs are reproducible:
``record`` stores live responses keyed by a content hash of the request,
``replay`` serves only stored responses and treats a miss as fatal, and
``live`` bypasses the cassette entirely. Providers are plain callables, so
tests swap in fakes without touching the client layer.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, ReplayMissError, TransportError

log = logging.getLogger(__name__)

REQUEST_KINDS = ("llm", "search", "fetch", "embed")
CASSETTE_MODES = ("record", "replay", "live")

DEFAULT_PAGE_BYTE_CAP = 200 * 1024
DEFAULT_EMBED_DIM = 256


def canonical_json(payload: Any) -> str:
    """Serialize ``payload`` with sorted keys and no incidental whitespace."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_key(kind: str, payload: Any) -> str:
    """Content hash identifying one backend request.

    A pure function of ``kind`` plus the canonicalized payload, so the same
    logical request always maps to the same cassette entry.
    """
    if kind not in REQUEST_KINDS:
        raise ValueError(f"unknown request kind {kind!r}")
    body = kind + "\n" + canonical_json(payload)
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass
class LlmConfig:
    """Decoding parameters sent with every completion request."""

    model: str = "default"
    temperature: float = 0.2
    top_p: float = 0.95
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature out of range: {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p out of range: {self.top_p}")
        if self.max_tokens <= 0:
            raise ConfigError(f"max_tokens must be positive: {self.max_tokens}")

    def payload(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }


@dataclass
class SearchHit:
    title: str
    url: str
    snippet: str

    def to_dict(self) -> dict[str, str]:
        return {"title": self.title, "url": self.url, "snippet": self.snippet}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SearchHit":
        return cls(
            title=str(data.get("title", "")),
            url=str(data.get("url", "")),
            snippet=str(data.get("snippet", "")),
        )


@dataclass
class FetchResult:
    status: int
    text: str


class Cassette:
    """Record-replay store for one namespace, persisted as a JSON map.

    Entries map a request hash to ``{"kind": ..., "response": ...}``. Writes
    happen under a lock and go through an atomic rename so a crash never
    leaves a torn file behind.
    """

    def __init__(self, path: Path, mode: str) -> None:
        if mode not in CASSETTE_MODES:
            raise ConfigError(f"unknown cassette mode {mode!r}")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, str]] = {}
        if self.path.exists():
            try:
                self._entries = json.loads(self.path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"unreadable cassette {self.path}: {exc}") from exc

    def lookup(self, key: str) -> str | None:
        with self._lock:
            entry = self._entries.get(key)
        return None if entry is None else entry["response"]

    def store(self, key: str, kind: str, response: str) -> None:
        with self._lock:
            self._entries[key] = {"kind": kind, "response": response}
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            tmp.write_text(
                json.dumps(self._entries, sort_keys=True, indent=1, ensure_ascii=False),
                encoding="utf-8",
            )
            tmp.replace(self.path)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class CassetteLibrary:
    """Hands out per-namespace cassettes under one root directory.

    Namespaces may contain ``/`` and map to subdirectories, e.g.
    ``concept/axl/hop1`` -> ``<root>/concept/axl/hop1.json``. The same
    namespace always yields the same cassette object.
    """

    def __init__(self, root: Path | str, mode: str) -> None:
        if mode not in CASSETTE_MODES:
            raise ConfigError(f"unknown cassette mode {mode!r}")
        self.root = Path(root)
        self.mode = mode
        self._lock = threading.Lock()
        self._open: dict[str, Cassette] = {}

    def cassette(self, namespace: str) -> Cassette:
        clean = _clean_namespace(namespace)
        with self._lock:
            found = self._open.get(clean)
            if found is None:
                found = Cassette(self.root / (clean + ".json"), self.mode)
                self._open[clean] = found
        return found


def _clean_namespace(namespace: str) -> str:
    parts = [p for p in namespace.split("/") if p]
    if not parts:
        raise ValueError("empty cassette namespace")
    cleaned = []
    for part in parts:
        slug = re.sub(r"[^A-Za-z0-9._-]+", "-", part).strip("-.")
        cleaned.append(slug or "x")
    return "/".join(cleaned)


def _with_retries(
    call: Callable[[], str],
    *,
    attempts: int,
    base_delay_s: float,
    label: str,
) -> str:
    """Run ``call``, retrying transport failures with exponential backoff."""
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return call()
        except TransportError as exc:
            last = exc
            if attempt + 1 < attempts:
                delay = base_delay_s * (2**attempt)
                log.warning("%s transport failure (attempt %d/%d): %s", label, attempt + 1, attempts, exc)
                if delay > 0:
                    time.sleep(delay)
    raise TransportError(f"{label} failed after {attempts} attempts: {last}")


@dataclass
class Backends:
    """One bundle of clients bound to a single cassette namespace.

    ``for_namespace`` derives a sibling bundle over the same providers but a
    fresh cassette namespace; the pipelines use that to give every seed, hop,
    and stage its own recording scope.
    """

    library: CassetteLibrary
    namespace: str
    llm_provider: Callable[[str, LlmConfig], str]
    search_provider: Callable[[str, int], list[SearchHit]]
    fetch_provider: Callable[[str], FetchResult]
    embed_provider: Callable[[Sequence[str]], np.ndarray] | None = None
    llm_config: LlmConfig = field(default_factory=LlmConfig)
    page_byte_cap: int = DEFAULT_PAGE_BYTE_CAP
    retry_attempts: int = 3
    retry_base_delay_s: float = 0.5

    def __post_init__(self) -> None:
        if self.embed_provider is None:
            self.embed_provider = hashed_embedding_provider()
        self._cassette = self.library.cassette(self.namespace)

    @property
    def mode(self) -> str:
        return self.library.mode

    def for_namespace(self, namespace: str) -> "Backends":
        return Backends(
            library=self.library,
            namespace=namespace,
            llm_provider=self.llm_provider,
            search_provider=self.search_provider,
            fetch_provider=self.fetch_provider,
            embed_provider=self.embed_provider,
            llm_config=self.llm_config,
            page_byte_cap=self.page_byte_cap,
            retry_attempts=self.retry_attempts,
            retry_base_delay_s=self.retry_base_delay_s,
        )

    def _roundtrip(self, kind: str, payload: Any, live: Callable[[], str]) -> str:
        key = request_key(kind, payload)
        mode = self.library.mode
        if mode == "live":
            return _with_retries(
                live, attempts=self.retry_attempts, base_delay_s=self.retry_base_delay_s, label=kind
            )
        cached = self._cassette.lookup(key)
        if cached is not None:
            return cached
        if mode == "replay":
            raise ReplayMissError(kind, key)
        response = _with_retries(
            live, attempts=self.retry_attempts, base_delay_s=self.retry_base_delay_s, label=kind
        )
        self._cassette.store(key, kind, response)
        return response

    def llm_complete(self, prompt: str, config: LlmConfig | None = None) -> str:
        """Return the completion text for ``prompt`` under the decoding config."""
        cfg = config or self.llm_config
        payload = {"prompt": prompt, **cfg.payload()}
        return self._roundtrip("llm", payload, lambda: self.llm_provider(prompt, cfg))

    def web_search(self, query: str, top_k: int = 5) -> list[SearchHit]:
        """Search the web, deduplicate by URL, and keep the first ``top_k`` hits."""
        if not query.strip():
            raise ValueError("empty search query")
        if top_k <= 0:
            raise ValueError(f"top_k must be positive: {top_k}")
        payload = {"query": query, "top_k": top_k}

        def live() -> str:
            hits = self.search_provider(query, top_k)
            return json.dumps([h.to_dict() for h in hits], ensure_ascii=False)

        raw = self._roundtrip("search", payload, live)
        hits = [SearchHit.from_dict(item) for item in json.loads(raw)]
        seen: set[str] = set()
        unique: list[SearchHit] = []
        for hit in hits:
            if hit.url and hit.url not in seen:
                seen.add(hit.url)
                unique.append(hit)
        return unique[:top_k]

    def fetch_page(self, url: str) -> FetchResult:
        """Fetch ``url`` and return its status plus markup-stripped text.

        Text is whitespace-collapsed and capped at ``page_byte_cap`` bytes of
        UTF-8. Non-success statuses come back with empty text rather than
        raising; transport failures and invalid URLs raise. Pages are taken
        as served: no script execution or rendering happens here (a provider
        wrapping a headless browser can be plugged in where that matters).
        """
        if not re.match(r"^https?://", url):
            raise ValueError(f"invalid url {url!r}")
        payload = {"url": url}

        def live() -> str:
            result = self.fetch_provider(url)
            return json.dumps({"status": result.status, "body": result.text}, ensure_ascii=False)

        raw = self._roundtrip("fetch", payload, live)
        data = json.loads(raw)
        status = int(data["status"])
        if not 200 <= status < 300:
            return FetchResult(status=status, text="")
        text = extract_text(data.get("body", ""), byte_cap=self.page_byte_cap)
        return FetchResult(status=status, text=text)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        """Embed ``texts`` into unit-norm rows, one per input, order preserved."""
        if len(texts) == 0:
            return np.zeros((0, DEFAULT_EMBED_DIM))
        payload = {"texts": list(texts)}

        def live() -> str:
            matrix = self.embed_provider(texts)
            return json.dumps([[float(x) for x in row] for row in matrix])

        raw = self._roundtrip("embed", payload, live)
        matrix = np.asarray(json.loads(raw), dtype=float)
        if matrix.shape[0] != len(texts):
            raise TransportError(
                f"embedding provider returned {matrix.shape[0]} rows for {len(texts)} texts"
            )
        return matrix


class _TextExtractor(HTMLParser):
    """Collects visible text, skipping script/style subtrees."""

    _SKIP = {"script", "style", "noscript", "template"}

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if tag in self._SKIP:
            self._skip_depth += 1

    def handle_endtag(self, tag: str) -> None:
        if tag in self._SKIP and self._skip_depth > 0:
            self._skip_depth -= 1

    def handle_data(self, data: str) -> None:
        if self._skip_depth == 0 and data.strip():
            self.chunks.append(data)


def extract_text(markup: str, byte_cap: int = DEFAULT_PAGE_BYTE_CAP) -> str:
    """Strip markup from ``markup``, collapse whitespace, cap the byte length."""
    parser = _TextExtractor()
    try:
        parser.feed(markup)
        parser.close()
    except Exception:  # malformed markup: keep whatever was collected
        pass
    text = re.sub(r"\s+", " ", " ".join(parser.chunks)).strip()
    encoded = text.encode("utf-8")
    if len(encoded) > byte_cap:
        text = encoded[:byte_cap].decode("utf-8", errors="ignore").rstrip()
    return text


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokenization shared by the embedding and audit paths."""
    return _TOKEN_RE.findall(text.lower())


def hashed_embedding_provider(dim: int = DEFAULT_EMBED_DIM) -> Callable[[Sequence[str]], np.ndarray]:
    """Deterministic feature-hashing sentence embedder.

    Each token hashes (blake2b, fixed digest) to a signed slot; token counts
    accumulate and each row is L2-normalized. Texts with no tokens get a fixed
    basis vector so every row has unit norm. No model weights, no network: the
    default provider for tests and offline audits. A learned sentence encoder
    can be swapped in through the same callable signature.
    """
    if dim < 2:
        raise ValueError(f"embedding dim too small: {dim}")

    def embed(texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), dim), dtype=float)
        for row, text in enumerate(texts):
            tokens = tokenize(text)
            if not tokens:
                out[row, 0] = 1.0
                continue
            for token in tokens:
                digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
                value = int.from_bytes(digest, "big")
                slot = value % dim
                sign = 1.0 if (value >> 63) & 1 else -1.0
                out[row, slot] += sign
            norm = float(np.linalg.norm(out[row]))
            if norm == 0.0:
                out[row, 0] = 1.0
            else:
                out[row] /= norm
        return out

    return embed


def live_llm_provider(endpoint: str, api_key_var: str = "SCIFORGE_API_KEY") -> Callable[[str, LlmConfig], str]:
    """Chat-completions transport against an OpenAI-compatible endpoint.

    Credentials come from the environment only; configuration files never
    carry keys.
    """
    import os

    import requests

    def call(prompt: str, cfg: LlmConfig) -> str:
        key = os.environ.get(api_key_var)
        if not key:
            raise ConfigError(f"environment variable {api_key_var} not set for live LLM calls")
        try:
            resp = requests.post(
                endpoint,
                headers={"Authorization": f"Bearer {key}"},
                json={
                    "model": cfg.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": cfg.temperature,
                    "top_p": cfg.top_p,
                    "max_tokens": cfg.max_tokens,
                },
                timeout=120,
            )
        except requests.RequestException as exc:
            raise TransportError(f"llm endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"llm endpoint returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed llm endpoint response: {exc}") from exc

    return call


def live_search_provider(endpoint: str, api_key_var: str = "SCIFORGE_SEARCH_KEY") -> Callable[[str, int], list[SearchHit]]:
    """JSON search API transport returning ``{"results": [{title,url,snippet}]}``."""
    import os

    import requests

    def call(query: str, top_k: int) -> list[SearchHit]:
        key = os.environ.get(api_key_var)
        if not key:
            raise ConfigError(f"environment variable {api_key_var} not set for live search calls")
        try:
            resp = requests.get(
                endpoint, params={"q": query, "count": top_k}, headers={"X-Api-Key": key}, timeout=30
            )
        except requests.RequestException as exc:
            raise TransportError(f"search endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"search endpoint returned {resp.status_code}")
        items = resp.json().get("results", [])
        return [SearchHit.from_dict(item) for item in items]

    return call


def live_fetch_provider(timeout_s: float = 30.0) -> Callable[[str], FetchResult]:
    """Plain HTTP GET transport for page fetches."""
    import requests

    def call(url: str) -> FetchResult:
        try:
            resp = requests.get(url, timeout=timeout_s, headers={"User-Agent": "sciforge/0.1"})
        except requests.RequestException as exc:
            raise TransportError(f"fetch failed for {url}: {exc}") from exc
        return FetchResult(status=resp.status_code, text=resp.text)

    return call
