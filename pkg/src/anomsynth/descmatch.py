"""Anomaly description generation and texture matching.

For one industrial object: ask the vision-language backend for plausible
defect descriptions, embed each description, and pick the most similar
accepted texture by cosine similarity over the cached embeddings. All
embeddings are unit-norm, so cosine reduces to a dot product.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import (
    EmbeddingVector,
    TextEmbedder,
    VLLMBackend,
    vllm_query,
)
from .errors import InvalidInputError, NoCandidatesError

RUNNER_UP_COUNT = 5


@dataclass(frozen=True)
class AnomalyDescriptor:
    """One normalized defect description for one object."""

    object_name: str
    description: str
    source: str = "vllm"
    raw_answer_ref: str | None = None

    def __post_init__(self):
        if not self.description or self.description != self.description.strip().lower():
            raise InvalidInputError(f"description must be normalized, got {self.description!r}")
        if self.source not in ("vllm", "manual"):
            raise InvalidInputError(f"source must be vllm|manual, got {self.source!r}")

    def to_dict(self) -> dict:
        return {
            "object_name": self.object_name,
            "description": self.description,
            "source": self.source,
            "raw_answer_ref": self.raw_answer_ref,
        }


@dataclass(frozen=True)
class MatchResult:
    descriptor: AnomalyDescriptor
    asset_id: str
    similarity: float
    runner_ups: tuple[tuple[str, float], ...]

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor.to_dict(),
            "asset_id": self.asset_id,
            "similarity": self.similarity,
            "runner_ups": [list(r) for r in self.runner_ups],
        }


class TranscriptLog:
    """Per-run append-only log of raw VLLM answers."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._count = 0

    def record(self, object_name: str, question: str, raw: str) -> str | None:
        self._count += 1
        if self.path is None:
            return None
        with open(self.path, "a") as fh:
            fh.write(f"--- entry {self._count} | object: {object_name}\n")
            fh.write(f"Q: {question}\n")
            fh.write(f"A: {raw}\n")
        return f"{self.path.name}#{self._count}"


def generate_descriptions(
    vllm: VLLMBackend,
    object_name: str,
    normal_image: np.ndarray | None,
    template_id: str = "default",
    templates: dict[str, str] | None = None,
    transcript: TranscriptLog | None = None,
) -> list[AnomalyDescriptor]:
    """Query the VLLM for defect descriptions of one object."""
    descriptions, raw = vllm_query(vllm, object_name, normal_image, template_id, templates)
    ref = None
    if transcript is not None:
        ref = transcript.record(object_name, template_id, raw)
    return [
        AnomalyDescriptor(object_name=object_name, description=d, raw_answer_ref=ref)
        for d in descriptions
    ]


def match(
    descriptor: AnomalyDescriptor,
    pool: list[tuple[str, EmbeddingVector]],
    text_embedder: TextEmbedder,
    k: int = RUNNER_UP_COUNT,
) -> MatchResult:
    """Best-matching texture asset for one description.

    Ties in similarity break toward the lexicographically smallest asset id,
    which also makes the result independent of pool ordering.
    """
    if not pool:
        raise NoCandidatesError("matching pool is empty")
    query = text_embedder.embed_text(descriptor.description)
    scored = [(aid, query.cosine(vec)) for aid, vec in pool]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    winner_id, winner_sim = scored[0]
    return MatchResult(
        descriptor=descriptor,
        asset_id=winner_id,
        similarity=winner_sim,
        runner_ups=tuple(scored[1 : 1 + k]),
    )


def match_all(
    descriptors: list[AnomalyDescriptor],
    pool: list[tuple[str, EmbeddingVector]],
    text_embedder: TextEmbedder,
    k: int = RUNNER_UP_COUNT,
) -> tuple[list[MatchResult], list[tuple[AnomalyDescriptor, Exception]]]:
    """Match every descriptor; failures are collected, not propagated."""
    results: list[MatchResult] = []
    failures: list[tuple[AnomalyDescriptor, Exception]] = []
    for d in descriptors:
        try:
            results.append(match(d, pool, text_embedder, k=k))
        except Exception as exc:  # noqa: BLE001 - error isolation per descriptor
            failures.append((d, exc))
    return results, failures


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    import json

    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
