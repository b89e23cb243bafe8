"""Embedding and text-generation provider clients, plus offline stubs.

Both provider kinds are plain request/response services configured by
endpoint URL and model name. The HTTP wire protocol is a single JSON POST:

    embedding:  {"model": ..., "input": ...}            -> {"embedding": [...]}
    generation: {"model": ..., "prompt": ..., "max_tokens": ..., "temperature": ...}
                                                         -> {"text": ...}

The stubs are deterministic and dependency-free so every pipeline runs
offline: the embedding stub feature-hashes a bag of tokens, the generation
stubs answer extractively or emit template questions.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import httpx
import numpy as np

from .errors import ProviderError, TransportError
from .retrieval import normalize_tokens

STUB_DIMENSION = 64


@dataclass(frozen=True)
class GenerationRequest:
    """Structured input to a generation client.

    ``system_preamble`` is the instruction template; ``{question}`` and
    ``{context}`` placeholders are filled when the wire prompt is rendered.
    Context passages keep their retrieval order.
    """

    system_preamble: str
    question: str
    context: tuple[str, ...] = ()
    max_tokens: int = 256
    temperature: float = 0.0

    def render_prompt(self) -> str:
        return self.system_preamble.format(
            question=self.question, context="\n\n".join(self.context)
        )


# ---------------------------------------------------------------------------
# Offline stubs
# ---------------------------------------------------------------------------


class StubEmbeddingProvider:
    """Feature-hash bag-of-tokens embedding, L2-normalized.

    Deterministic per text; the hash buckets come from sha1 so results do
    not depend on interpreter hash randomization.
    """

    def __init__(self, dimension: int = STUB_DIMENSION, max_tokens: int = 512):
        self.provider_id = f"stub-hash-{dimension}"
        self.dimension = dimension
        self.max_tokens = max_tokens

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in normalize_tokens(text):
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            vec[bucket] += 1.0
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0 else vec


def _split_sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+", text) if s.strip()]


class ExtractiveStubGenerator:
    """Answers with the evidence sentence that best overlaps the question."""

    def generate(self, request: GenerationRequest) -> str:
        question_tokens = normalize_tokens(request.question)
        best_sentence = ""
        best_overlap = -1
        for passage in request.context:
            for sentence in _split_sentences(passage) or [passage.strip()]:
                tokens = normalize_tokens(sentence)
                overlap = sum(min(tokens.count(t), question_tokens.count(t)) for t in set(tokens))
                if overlap > best_overlap:
                    best_overlap = overlap
                    best_sentence = sentence
        return best_sentence


class TemplateQuestionStubGenerator:
    """Emits a fixed number of template questions about the context passage."""

    def __init__(self, questions_per_call: int = 3):
        self.questions_per_call = questions_per_call

    def generate(self, request: GenerationRequest) -> str:
        source = request.context[0] if request.context else ""
        topic = " ".join(normalize_tokens(source)[:4]) or "this topic"
        lines = [
            f"{i}. What does the guideline state about {topic} (aspect {i})?"
            for i in range(1, self.questions_per_call + 1)
        ]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------


def _post_json(client: httpx.Client, url: str, payload: dict) -> dict:
    try:
        response = client.post(url, json=payload)
    except httpx.HTTPError as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    if response.status_code >= 400:
        raise TransportError(f"{url} returned HTTP {response.status_code}")
    try:
        return response.json()
    except ValueError as exc:
        raise ProviderError(f"{url} returned a non-JSON body") from exc


class HttpEmbeddingProvider:
    """Embedding service client; one POST per text."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int,
        max_tokens: int = 512,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.provider_id = f"{model}@{endpoint}"
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.max_tokens = max_tokens
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def embed_text(self, text: str) -> np.ndarray:
        body = _post_json(self._client, self.endpoint, {"model": self.model, "input": text})
        if "embedding" not in body or not isinstance(body["embedding"], list):
            raise ProviderError("embedding response missing 'embedding' list")
        return np.asarray(body["embedding"], dtype=np.float64)


class HttpGenerationClient:
    """Text-completion service client."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def generate(self, request: GenerationRequest) -> str:
        body = _post_json(
            self._client,
            self.endpoint,
            {
                "model": self.model,
                "prompt": request.render_prompt(),
                "max_tokens": request.max_tokens,
                "temperature": request.temperature,
            },
        )
        if "text" not in body or not isinstance(body["text"], str):
            raise ProviderError("generation response missing 'text'")
        return body["text"]
