"""Attribute-base providers: a bundled fixture table and a remote LLM pipeline.

Two ways to obtain the base words that span an attribute search pool. The
fixture provider returns recorded per-dataset base lists offline. The LLM
pipeline runs the two-step query protocol (describe every category, then
summarize shared attribute bases) against a chat-completion style HTTP
endpoint; a pluggable transport keeps the whole thing testable without a
network. Credentials are referenced by environment variable name only and
are read at request time; they are never stored, logged, or written to any
cache or result file.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import (
    ConfigError,
    DataError,
    ExtractionError,
    FixtureLookupError,
    ParameterError,
    RemoteError,
)
from .search import SearchResult, parse_result
from .serialize import dumps_json

PROVENANCES = ("fixture", "llm", "manual")

FIXTURE_KIND = "attribute_bases"
FIXTURE_VERSION = 1

DESCRIBE_TEMPLATE = (
    "Describe the visual characteristics of the category {name!r} in one "
    "sentence, focusing on properties shared by all instances."
)
SUMMARIZE_TEMPLATE = (
    "These sentences describe every category of one image classification "
    "task:\n{descriptions}\n"
    "Reply with exactly {n} lowercase single-word attribute names, separated "
    "by commas, that are common to all categories and could each take a "
    "different value per category. Reply with the attribute names only."
)
REPROMPT_SUFFIX = (
    "\nYour previous reply {reply!r} was not {n} distinct single words. "
    "Reply again with exactly {n} distinct lowercase single-word attribute "
    "names separated by commas and nothing else."
)


@dataclass(frozen=True)
class AttributeBases:
    dataset_name: str
    bases: tuple
    provenance: str = "manual"
    searched: tuple = None  # fixture rows carry the recorded search outcome

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        if self.searched is not None:
            object.__setattr__(self, "searched", tuple(self.searched))

    def validate(self) -> "AttributeBases":
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        if not self.bases:
            raise DataError(f"dataset {self.dataset_name!r} has an empty base list")
        if len(set(self.bases)) != len(self.bases):
            raise DataError(f"duplicate bases for {self.dataset_name!r}: {self.bases}")
        return self


# -- bundled fixtures ----------------------------------------------------------


def _fixture_payload() -> dict:
    text = resources.files("promptlab.fixtures").joinpath("attribute_bases.json").read_text()
    payload = json.loads(text)
    if payload.get("kind") != FIXTURE_KIND or payload.get("format_version") != FIXTURE_VERSION:
        raise DataError("bundled attribute fixture has an unexpected header")
    return payload["datasets"]


def fixture_datasets() -> tuple:
    return tuple(sorted(_fixture_payload()))


def fixture_bases(dataset_name: str) -> AttributeBases:
    """The recorded base list for one of the eleven bundled datasets."""
    table = _fixture_payload()
    key = dataset_name.strip().lower()
    if key not in table:
        raise FixtureLookupError(
            f"no attribute fixture for {dataset_name!r}; available: "
            + ", ".join(sorted(table))
        )
    row = table[key]
    return AttributeBases(
        dataset_name=key,
        bases=tuple(row["bases"]),
        provenance="fixture",
        searched=tuple(row["searched"]),
    ).validate()


def fixture_search_result() -> SearchResult:
    """The recorded 31-candidate weight table (5 bases, one dataset)."""
    text = resources.files("promptlab.fixtures").joinpath("caltech101_search.txt").read_text()
    return parse_result(text, path="caltech101_search.txt")


# -- remote client --------------------------------------------------------------

_ENV_NAME_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    credential_env: str = "PROMPTLAB_API_KEY"  # variable NAME; value is read per request
    timeout: float = 30.0
    max_retries: int = 2

    def validate(self) -> "LlmClientConfig":
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if not _ENV_NAME_RE.match(self.credential_env):
            raise ConfigError(
                "credential_env must name an environment variable "
                f"(letters, digits, underscores), got {self.credential_env!r}"
            )
        return self


class HttpTransport:
    """POSTs a single-message chat request; the reply text is the completion.

    The request body is ``{"model": ..., "messages": [{"role": "user",
    "content": prompt}]}`` and the reply is read from
    ``choices[0].message.content``, the least common denominator of
    chat-completion providers.
    """

    def __init__(self, config: LlmClientConfig):
        self.config = config.validate()

    def __call__(self, prompt: str) -> str:
        import requests

        token = os.environ.get(self.config.credential_env)
        if not token:
            raise RemoteError(
                f"environment variable {self.config.credential_env} is not set"
            )
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error = None
        for _ in range(self.config.max_retries + 1):
            try:
                reply = requests.post(
                    self.config.endpoint,
                    json=body,
                    headers={"Authorization": f"Bearer {token}"},
                    timeout=self.config.timeout,
                )
                reply.raise_for_status()
                return reply.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                # the exception text may embed the URL but never the token
                last_error = f"{type(exc).__name__}: {exc}"
        raise RemoteError(
            f"request to {self.config.endpoint} failed after "
            f"{self.config.max_retries + 1} attempts ({last_error})"
        )


class MockTransport:
    """Canned replies for offline tests; records every prompt it sees."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def __call__(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self.replies:
            raise RemoteError("mock transport ran out of replies")
        return self.replies.pop(0)


class ResponseCache:
    """Append-only directory of raw reply files keyed by (model, class name).

    Entries are one structured-text file each, so a cache directory can be
    inspected or committed as a recorded transcript. Writing an existing key
    overwrites it (last write wins); nothing is ever deleted.
    """

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    @staticmethod
    def _slug(part: str) -> str:
        return re.sub(r"[^a-z0-9]+", "-", part.lower()).strip("-") or "blank"

    def _path(self, model: str, key: str) -> str:
        return os.path.join(self.directory, f"{self._slug(model)}__{self._slug(key)}.json")

    def get(self, model: str, key: str):
        path = self._path(model, key)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("model") != model or payload.get("key") != key:
            raise DataError(f"cache file {path} does not match its key")
        return payload["reply"]

    def put(self, model: str, key: str, reply: str) -> None:
        path = self._path(model, key)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(dumps_json({"model": model, "key": key, "reply": reply}))
        os.replace(tmp, path)


class LlmClient:
    """Transport plus model name; the pipeline functions below do the talking."""

    def __init__(self, config: LlmClientConfig = None, transport=None, cache: ResponseCache = None):
        self.config = (config or LlmClientConfig()).validate()
        self.transport = transport if transport is not None else HttpTransport(self.config)
        self.cache = cache

    def ask(self, prompt: str, cache_key: str = None) -> str:
        if self.cache is not None and cache_key is not None:
            hit = self.cache.get(self.config.model, cache_key)
            if hit is not None:
                return hit
        reply = self.transport(prompt)
        if not isinstance(reply, str):
            raise RemoteError(f"transport returned {type(reply).__name__}, expected text")
        if self.cache is not None and cache_key is not None:
            self.cache.put(self.config.model, cache_key, reply)
        return reply


# -- two-step pipeline -------------------------------------------------------------


def describe_categories(class_names, client: LlmClient) -> dict:
    """One description per class; repeat queries for a class hit the cache."""
    out = {}
    for name in class_names:
        out[name] = client.ask(DESCRIBE_TEMPLATE.format(name=name), cache_key=name)
    return out


def _parse_bases(reply: str, n: int):
    tokens = [t.strip().lower() for t in reply.split(",")]
    tokens = [t for t in tokens if t]
    if len(tokens) != n or len(set(tokens)) != n:
        return None
    if any(not t.isalpha() for t in tokens):
        return None
    return tuple(tokens)


def summarize_bases(descriptions, n: int, client: LlmClient,
                    dataset_name: str = "llm_task") -> AttributeBases:
    """Distill N shared attribute bases out of the per-class descriptions.

    A malformed reply (wrong count, repeats, multi-word items) earns one
    corrective reprompt; a second failure raises with the raw reply attached.
    """
    if n < 1:
        raise ParameterError(f"need n >= 1 bases, got {n}")
    descriptions = dict(descriptions)
    if not descriptions:
        raise ParameterError("no descriptions to summarize")
    joined = "\n".join(f"- {name}: {text}" for name, text in sorted(descriptions.items()))
    prompt = SUMMARIZE_TEMPLATE.format(descriptions=joined, n=n)
    reply = client.ask(prompt)
    bases = _parse_bases(reply, n)
    if bases is None:
        retry = prompt + REPROMPT_SUFFIX.format(reply=reply, n=n)
        reply = client.ask(retry)
        bases = _parse_bases(reply, n)
        if bases is None:
            raise ExtractionError(
                f"could not extract {n} attribute bases after one reprompt; "
                f"last reply: {reply!r}"
            )
    return AttributeBases(
        dataset_name=dataset_name, bases=bases, provenance="llm"
    ).validate()
