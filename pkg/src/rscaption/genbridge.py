"""Chat-completion client for generative backends, a deterministic mock, and text filters."""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import mimetypes
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

log = logging.getLogger(__name__)

TRANSIENT_STATUSES = {408, 425, 429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    def __init__(self, message: str, last_status: Any = None):
        super().__init__(message)
        self.last_status = last_status


class BackendExhausted(BackendError):
    """Retries ran out."""


class ProtocolError(BackendError):
    """Response body did not match the chat-completion shape."""


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    image_refs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role {self.role!r}")
        object.__setattr__(self, "image_refs", tuple(self.image_refs))


@dataclass
class GenRequest:
    backend_profile: str
    messages: list[Message]
    n_samples: int = 1
    temperature: float = 0.0
    seed: int = 0
    tag: str = ""
    # local bookkeeping (flags, provenance); never sent and never hashed
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if sum(m.role == "system" for m in self.messages) > 1:
            raise ValueError("at most one system message")
        if not self.messages:
            raise ValueError("request has no messages")

    @property
    def text(self) -> str:
        return "\n".join(m.text for m in self.messages)

    @property
    def image_refs(self) -> list[str]:
        return [ref for m in self.messages for ref in m.image_refs]

    def content_dict(self) -> dict[str, Any]:
        return {
            "backend_profile": self.backend_profile,
            "messages": [{"role": m.role, "text": m.text, "image_refs": list(m.image_refs)} for m in self.messages],
            "n_samples": self.n_samples,
            "temperature": self.temperature,
            "seed": self.seed,
            "tag": self.tag,
        }

    def key(self) -> str:
        blob = json.dumps(self.content_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class GenResponse:
    texts: list[str]
    backend_id: str
    latency: float = 0.0
    raw_status: Any = 200

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class BackendProfile:
    name: str
    kind: str = "http"  # "http" | "mock"
    endpoint: str = ""
    model: str = ""
    token_env: str | None = None
    temperature: float = 0.7
    max_retries: int = 4
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    timeout: float = 120.0
    max_in_flight: int = 4
    image_mode: str = "data_url"  # "data_url" | "path"
    box_format: str = "<box>{x0},{y0},{x1},{y1}</box>"
    templates: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BackendProfile":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        extra = set(d) - set(known)
        if extra:
            raise ValueError(f"unknown backend profile field(s): {sorted(extra)}")
        prof = cls(**known)
        if prof.kind not in ("http", "mock"):
            raise ValueError(f"backend kind must be http or mock, got {prof.kind!r}")
        if prof.kind == "http" and not prof.endpoint:
            raise ValueError(f"backend {prof.name!r} has no endpoint")
        return prof

    @classmethod
    def load(cls, path: str | Path) -> "BackendProfile":
        import yaml

        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# wire format


def _image_url(ref: str, mode: str) -> str:
    if mode == "path":
        return ref
    path, crop = ref, None
    if "#crop=" in ref:
        path, spec = ref.split("#crop=", 1)
        crop = tuple(int(v) for v in spec.split(","))
    mime = mimetypes.guess_type(path)[0] or "image/png"
    if crop is None:
        data = Path(path).read_bytes()
    else:
        from PIL import Image

        buf = io.BytesIO()
        with Image.open(path) as im:
            im.crop(crop).save(buf, format="PNG")
        data, mime = buf.getvalue(), "image/png"
    return f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"


def to_wire(request: GenRequest, profile: BackendProfile) -> dict[str, Any]:
    messages = []
    for m in request.messages:
        content: list[dict[str, Any]] = [{"type": "text", "text": m.text}]
        for ref in m.image_refs:
            content.append({"type": "image_url", "image_url": {"url": _image_url(ref, profile.image_mode)}})
        messages.append({"role": m.role, "content": content})
    return {
        "model": profile.model,
        "messages": messages,
        "n": request.n_samples,
        "temperature": request.temperature,
        "seed": request.seed,
    }


def parse_wire_response(body: Any, n_samples: int) -> list[str]:
    try:
        choices = body["choices"]
        texts = [c["message"]["content"] for c in choices]
    except (KeyError, TypeError, IndexError) as exc:
        raise ProtocolError(f"malformed response body: {exc!r}") from exc
    if not all(isinstance(t, str) for t in texts):
        raise ProtocolError("non-string message content")
    if len(texts) != n_samples:
        raise ProtocolError(f"expected {n_samples} choices, got {len(texts)}")
    return texts


Transport = Callable[[str, dict[str, str], dict[str, Any], float], tuple[int, Any]]


def httpx_transport(url: str, headers: dict[str, str], body: dict[str, Any], timeout: float) -> tuple[int, Any]:
    import httpx

    resp = httpx.post(url, headers=headers, json=body, timeout=timeout)
    try:
        payload = resp.json()
    except ValueError:
        payload = None
    return resp.status_code, payload


# --------------------------------------------------------------------------
# call log


class CallLog:
    """Append-only JSONL of completed calls keyed by request hash."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, Any]] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        row = json.loads(line)
                    except json.JSONDecodeError:
                        # torn final line from an interrupted append
                        continue
                    self._entries[row["key"]] = row["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> GenResponse | None:
        row = self._entries.get(key)
        return GenResponse(**row) if row is not None else None

    def append(self, request: GenRequest, response: GenResponse) -> None:
        key = request.key()
        row = {"key": key, "tag": request.tag, "request": request.content_dict(), "response": response.to_dict()}
        with self._lock:
            if key in self._entries:
                return
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")
                    fh.flush()
            self._entries[key] = row["response"]


# --------------------------------------------------------------------------
# backend client


class Backend:
    def __init__(
        self,
        profile: BackendProfile,
        call_log: CallLog | None = None,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.profile = profile
        self.call_log = call_log if call_log is not None else CallLog(None)
        self.transport = transport or httpx_transport
        self.sleep = sleep
        self.calls = 0
        self._sem = threading.BoundedSemaphore(max(1, profile.max_in_flight))
        self._count_lock = threading.Lock()

    def generate(self, request: GenRequest) -> GenResponse:
        cached = self.call_log.get(request.key())
        if cached is not None:
            return cached
        with self._sem:
            with self._count_lock:
                self.calls += 1
            if self.profile.kind == "mock":
                resp = mock_generate(request)
            else:
                resp = self._post(request)
        # persist before handing back so a crash after this point loses nothing
        self.call_log.append(request, resp)
        return resp

    def generate_many(self, requests: Sequence[GenRequest]) -> list[GenResponse]:
        if len(requests) <= 1 or self.profile.max_in_flight <= 1:
            return [self.generate(r) for r in requests]
        with ThreadPoolExecutor(max_workers=self.profile.max_in_flight) as pool:
            return list(pool.map(self.generate, requests))

    def _post(self, request: GenRequest) -> GenResponse:
        p = self.profile
        url = p.endpoint.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if p.token_env:
            token = os.environ.get(p.token_env)
            if not token:
                raise BackendError(f"auth token env var {p.token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        body = to_wire(request, p)
        last_status: Any = None
        for attempt in range(p.max_retries + 1):
            t0 = time.monotonic()
            try:
                status, payload = self.transport(url, headers, body, p.timeout)
            except Exception as exc:  # connection errors and timeouts are transient
                status, payload = f"{type(exc).__name__}: {exc}", None
            last_status = status
            if status == 200:
                texts = parse_wire_response(payload, request.n_samples)
                return GenResponse(texts, p.name, time.monotonic() - t0, status)
            if isinstance(status, int) and status not in TRANSIENT_STATUSES:
                raise BackendError(f"{p.name}: HTTP {status}", status)
            if attempt < p.max_retries:
                delay = min(p.backoff_cap, p.backoff_base * 2**attempt)
                log.warning("%s: transient failure %s, retry %d in %.1fs", p.name, status, attempt + 1, delay)
                self.sleep(delay)
        raise BackendExhausted(f"{p.name}: retries exhausted, last status {last_status}", last_status)


def generate(request: GenRequest, backend: Backend) -> GenResponse:
    return backend.generate(request)


# --------------------------------------------------------------------------
# mock backend

_ANCHORS = [
    re.compile(r"a photo of ([^.,;:\n\"]+)"),
    re.compile(r"with (.+?) in detail"),
    re.compile(r"Where (?:is|are) the (.+?)\? Answer"),
    re.compile(r"depicting (.+?)(?:[,.;\n]|$)"),
]
_BOX_TAG = re.compile(r"<box>.*?</box>")

_OPENERS = [
    "A high-resolution aerial image depicting",
    "An overhead remote sensing view depicting",
    "A detailed satellite scene depicting",
    "A top-down aerial photograph depicting",
    "A clear remote sensing image depicting",
]
_ADJ = ["gray", "green", "dense", "sparse", "rectangular", "curved", "bright", "dark", "narrow",
        "wide", "white", "brown", "regular", "scattered", "parallel", "large", "small", "paved"]
_NOUN = ["roads", "buildings", "trees", "rooftops", "parking lots", "fields", "shadows", "lanes",
         "vegetation", "structures", "paths", "blocks", "patches", "markings", "fences", "lawns"]
_PREP = ["next to", "around", "along", "near", "beside", "behind", "across", "between"]
_DEFAULT_SUBJECT = "the scene"
_REF = ["the center", "the edge", "the upper left", "the lower right", "the main road",
        "the open area", "the surrounding land", "the northern side"]


def find_class_names(text: str) -> list[str]:
    names: list[str] = []
    for pat in _ANCHORS:
        for m in pat.finditer(text):
            chunk = _BOX_TAG.sub("", m.group(1))
            for part in re.split(r",| and ", chunk):
                part = " ".join(part.split())
                if part and part != _DEFAULT_SUBJECT and part not in names:
                    names.append(part)
    return names


def mock_generate(request: GenRequest) -> GenResponse:
    """Deterministic pseudo-captions keyed on request content, seed and sample index."""
    body = json.dumps([m.text for m in request.messages] + [list(m.image_refs) for m in request.messages])
    names = find_class_names(request.text) or [_DEFAULT_SUBJECT]
    subject = " and ".join(names)
    texts = []
    for i in range(request.n_samples):
        digest = hashlib.sha256(f"{body}|{request.seed}|{i}".encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        clauses = []
        for _ in range(rng.randint(3, 6)):
            clauses.append(f"{rng.choice(_ADJ)} {rng.choice(_NOUN)} {rng.choice(_PREP)} {rng.choice(_REF)}")
        texts.append(f"{rng.choice(_OPENERS)} {subject}, with " + ", ".join(clauses[:-1]) + f", and {clauses[-1]}.")
    return GenResponse(texts=texts, backend_id="mock", latency=0.0, raw_status=200)


# --------------------------------------------------------------------------
# filters

DEFAULT_REFUSALS = (
    "does not comply with regulations",
    "i cannot describe",
    "i can't describe",
    "i'm sorry",
    "i am sorry",
    "as an ai",
    "i am unable to",
    "i'm unable to",
)


@dataclass
class FilterPolicy:
    refusal_phrases: tuple[str, ...] = DEFAULT_REFUSALS
    banned_keywords: tuple[str, ...] = ()
    min_words: int = 5
    max_words: int = 400
    max_char_run: int = 8
    max_nonalnum_ratio: float = 0.3

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "FilterPolicy":
        d = dict(d or {})
        for k in ("refusal_phrases", "banned_keywords"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    reason: str | None = None
    matched_span: str | None = None

    def __post_init__(self):
        if not self.accepted and self.reason is None:
            raise ValueError("a rejection needs a reason")

    @property
    def decision(self) -> str:
        return "Accept" if self.accepted else "Reject"


ACCEPT = FilterVerdict(True)


def filter_caption(text: str, policy: FilterPolicy | None = None) -> FilterVerdict:
    """Accept unless a rule fires; rules run refusal, garbled, banned keyword, length."""
    policy = policy or FilterPolicy()
    low = text.lower()
    for phrase in policy.refusal_phrases:
        if phrase.lower() in low:
            return FilterVerdict(False, "refusal", phrase)
    run = re.search(r"(.)\1{%d,}" % policy.max_char_run, text, flags=re.DOTALL)
    if run and not run.group(0).isspace():
        return FilterVerdict(False, "garbled", run.group(0))
    if "�" in text:
        return FilterVerdict(False, "garbled", "�")
    chars = [c for c in text if not c.isspace()]
    if chars:
        odd = sum(not c.isalnum() for c in chars)
        if odd / len(chars) > policy.max_nonalnum_ratio:
            return FilterVerdict(False, "garbled", None)
    for kw in policy.banned_keywords:
        m = re.search(r"\b%s\b" % re.escape(kw), text, flags=re.IGNORECASE)
        if m:
            return FilterVerdict(False, "banned_keyword", m.group(0))
    n = len(text.split())
    if n < policy.min_words:
        return FilterVerdict(False, "too_short", None)
    if n > policy.max_words:
        return FilterVerdict(False, "too_long", None)
    return ACCEPT
