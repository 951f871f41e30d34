"""Texture library: ingestion, density cleaning, curation, captions, embeddings.

The library lives in one directory: ``manifest.json`` (snapshot),
``decisions.jsonl`` (append-only event log, flushed before any decision is
acknowledged), ``embeddings.bin`` + ``embeddings.idx`` (vector cache), and
``categories.txt`` if a custom taxonomy is used. Reloading a library replays
any log events newer than the snapshot, so a crash between a decision and a
snapshot save loses nothing.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .backends import Captioner, EmbeddingVector, ImageEmbedder
from .errors import (
    InvalidInputError,
    NotFoundError,
    StateConflictError,
    TaxonomyError,
)
from .imageops import area_fraction, canny, load_image, resize_image, to_gray
from .imageops import DEFAULT_CANNY_HIGH, DEFAULT_CANNY_LOW

SCHEMA_VERSION = 1

# Automatic cleaning bounds on edge coverage; assets strictly outside
# [MIN, MAX] are auto-rejected as sparse/dense.
EDGE_DENSITY_MIN = 0.02
EDGE_DENSITY_MAX = 0.70

# Densities are measured on a fixed-size downscaled copy for speed; the
# resolution is recorded in the manifest so verdicts stay comparable.
EDGE_EVAL_SIZE = 512

STATES = ("pending", "accepted", "rejected", "auto_rejected")

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def clean_verdict(edge_density: float) -> str:
    """Classify an edge-coverage fraction: 'pass', or why it is rejected."""
    if edge_density > EDGE_DENSITY_MAX:
        return "auto_rejected(dense)"
    if edge_density < EDGE_DENSITY_MIN:
        return "auto_rejected(sparse)"
    return "pass"


@dataclass
class Taxonomy:
    categories: list[str]

    def __post_init__(self):
        if not self.categories:
            raise InvalidInputError("taxonomy must be nonempty")
        if len(set(self.categories)) != len(self.categories):
            raise InvalidInputError("taxonomy names must be unique")

    def __contains__(self, name: str) -> bool:
        return name in self.categories

    @classmethod
    def default(cls) -> "Taxonomy":
        text = resources.files("anomsynth").joinpath("data/categories.txt").read_text()
        return cls._parse(text)

    @classmethod
    def from_file(cls, path: str | Path) -> "Taxonomy":
        return cls._parse(Path(path).read_text())

    @classmethod
    def _parse(cls, text: str) -> "Taxonomy":
        names = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        return cls(names)


@dataclass
class TextureAsset:
    asset_id: str
    category: str
    image_path: str
    content_hash: str
    edge_density: float
    caption: str | None = None
    curation_state: str = "pending"
    decision_note: str | None = None
    embedding_ref: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TextureAsset":
        return cls(**d)


@dataclass
class IngestResult:
    added: int = 0
    skipped_non_images: int = 0
    skipped_duplicates: int = 0


@dataclass
class CacheStats:
    computed: int = 0
    hits: int = 0


class EmbeddingCache:
    """Disk-backed (key, dim, vector) store: raw float64 blobs plus a text index."""

    def __init__(self, bin_path: Path, index_path: Path):
        self.bin_path = Path(bin_path)
        self.index_path = Path(index_path)
        self._index: dict[str, tuple[int, int]] = {}
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                if not line.strip():
                    continue
                key, dim, offset = line.rsplit("\t", 2)
                self._index[key] = (int(offset), int(dim))

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def keys(self):
        return self._index.keys()

    def get(self, key: str) -> np.ndarray | None:
        entry = self._index.get(key)
        if entry is None:
            return None
        offset, dim = entry
        with open(self.bin_path, "rb") as fh:
            fh.seek(offset)
            return np.frombuffer(fh.read(8 * dim), dtype=np.float64).copy()

    def put(self, key: str, values: np.ndarray) -> None:
        if "\t" in key or "\n" in key:
            raise InvalidInputError("cache keys may not contain tabs or newlines")
        v = np.asarray(values, dtype=np.float64).ravel()
        self.bin_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.bin_path, "ab") as fh:
            offset = fh.tell()
            fh.write(v.tobytes())
        with open(self.index_path, "a") as fh:
            fh.write(f"{key}\t{v.size}\t{offset}\n")
        self._index[key] = (offset, v.size)


class TextureLibrary:
    """One curated texture library rooted at a directory."""

    def __init__(
        self,
        root: str | Path,
        taxonomy: Taxonomy | None = None,
        canny_low: float = DEFAULT_CANNY_LOW,
        canny_high: float = DEFAULT_CANNY_HIGH,
        edge_eval_size: int = EDGE_EVAL_SIZE,
    ):
        self.root = Path(root)
        self.taxonomy = taxonomy or Taxonomy.default()
        self.canny_low = canny_low
        self.canny_high = canny_high
        self.edge_eval_size = edge_eval_size
        self.assets: dict[str, TextureAsset] = {}
        self.backend_descriptors: list[dict] = []
        self._hashes: set[str] = set()
        self._decision_seq = 0
        self._lock = threading.RLock()

    # -- persistence ---------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def log_path(self) -> Path:
        return self.root / "decisions.jsonl"

    def cache(self) -> EmbeddingCache:
        return EmbeddingCache(self.root / "embeddings.bin", self.root / "embeddings.idx")

    def save(self) -> None:
        with self._lock:
            doc = {
                "schema_version": SCHEMA_VERSION,
                "taxonomy": self.taxonomy.categories,
                "edge_config": {
                    "canny_low": self.canny_low,
                    "canny_high": self.canny_high,
                    "eval_size": self.edge_eval_size,
                },
                "decision_seq": self._decision_seq,
                "backend_descriptors": self.backend_descriptors,
                "assets": [a.to_dict() for a in self.assets.values()],
            }
            self.root.mkdir(parents=True, exist_ok=True)
            tmp = self.manifest_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
            os.replace(tmp, self.manifest_path)

    @classmethod
    def load(cls, root: str | Path) -> "TextureLibrary":
        root = Path(root)
        doc = json.loads((root / "manifest.json").read_text())
        if doc["schema_version"] != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported manifest schema {doc['schema_version']}")
        lib = cls(
            root,
            taxonomy=Taxonomy(doc["taxonomy"]),
            canny_low=doc["edge_config"]["canny_low"],
            canny_high=doc["edge_config"]["canny_high"],
            edge_eval_size=doc["edge_config"]["eval_size"],
        )
        lib.backend_descriptors = doc.get("backend_descriptors", [])
        for d in doc["assets"]:
            asset = TextureAsset.from_dict(d)
            lib.assets[asset.asset_id] = asset
            lib._hashes.add(asset.content_hash)
        lib._decision_seq = doc["decision_seq"]
        lib._replay_log()
        return lib

    def _replay_log(self) -> None:
        if not self.log_path.exists():
            return
        for line in self.log_path.read_text().splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            if event["seq"] <= self._decision_seq:
                continue
            asset = self.assets.get(event["asset_id"])
            if asset is None:
                continue
            self._apply_event(asset, event)
            self._decision_seq = event["seq"]

    def _apply_event(self, asset: TextureAsset, event: dict) -> None:
        if event["action"] == "auto_clean":
            if event["verdict"] != "pass":
                asset.curation_state = "auto_rejected"
                asset.decision_note = event["verdict"]
        elif event["action"] == "decide":
            asset.curation_state = "accepted" if event["decision"] == "accept" else "rejected"
            asset.decision_note = event.get("note")

    def _append_event(self, event: dict) -> None:
        # flushed before the caller acknowledges the decision
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _next_event(self, asset_id: str, action: str, **fields) -> dict:
        self._decision_seq += 1
        return {
            "seq": self._decision_seq,
            "ts": datetime.now(timezone.utc).isoformat(),
            "asset_id": asset_id,
            "action": action,
            **fields,
        }

    # -- ingestion and cleaning ----------------------------------------------

    def _edge_density(self, image: np.ndarray) -> float:
        h, w = image.shape[:2]
        if max(h, w) > self.edge_eval_size:
            image = resize_image(image, self.edge_eval_size, self.edge_eval_size)
        edges = canny(to_gray(image), self.canny_low, self.canny_high)
        return area_fraction(edges, "whole-image")

    def ingest(self, category: str, source_dir: str | Path) -> IngestResult:
        """Register every decodable image under ``source_dir`` as a pending asset."""
        if category not in self.taxonomy:
            raise TaxonomyError(f"unknown category {category!r}")
        source = Path(source_dir)
        if not source.is_dir():
            raise InvalidInputError(f"not a directory: {source}")
        result = IngestResult()
        with self._lock:
            for path in sorted(source.iterdir()):
                if not path.is_file() or path.suffix.lower() not in _IMAGE_SUFFIXES:
                    result.skipped_non_images += 1
                    continue
                try:
                    image = load_image(path)
                except Exception:
                    result.skipped_non_images += 1
                    continue
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                if digest in self._hashes:
                    result.skipped_duplicates += 1
                    continue
                asset = TextureAsset(
                    asset_id=digest[:16],
                    category=category,
                    image_path=str(path.resolve()),
                    content_hash=digest,
                    edge_density=self._edge_density(image),
                )
                self.assets[asset.asset_id] = asset
                self._hashes.add(digest)
                result.added += 1
        return result

    def auto_clean(self, asset_id: str) -> str:
        """Apply the density bounds to one pending asset; returns the verdict."""
        with self._lock:
            asset = self._get(asset_id)
            verdict = clean_verdict(asset.edge_density)
            event = self._next_event(asset_id, "auto_clean", verdict=verdict)
            self._append_event(event)
            self._apply_event(asset, event)
            return verdict

    def clean_pending(self) -> dict:
        """Run auto_clean over all pending assets; returns verdict counts."""
        counts = {"pass": 0, "auto_rejected(dense)": 0, "auto_rejected(sparse)": 0}
        with self._lock:
            for asset in list(self.assets.values()):
                if asset.curation_state != "pending":
                    continue
                counts[self.auto_clean(asset.asset_id)] += 1
        return counts

    # -- curation --------------------------------------------------------------

    def _get(self, asset_id: str) -> TextureAsset:
        asset = self.assets.get(asset_id)
        if asset is None:
            raise NotFoundError(f"no asset {asset_id!r}")
        return asset

    def decide(self, asset_id: str, decision: str, note: str | None = None, actor: str = "cli") -> TextureAsset:
        """Accept or reject one pending asset; single decision per asset."""
        if decision not in ("accept", "reject"):
            raise InvalidInputError(f"decision must be accept|reject, got {decision!r}")
        with self._lock:
            asset = self._get(asset_id)
            if asset.curation_state != "pending":
                raise StateConflictError(
                    f"asset {asset_id} already {asset.curation_state}, cannot {decision}"
                )
            event = self._next_event(asset_id, "decide", decision=decision, note=note, actor=actor)
            self._append_event(event)
            self._apply_event(asset, event)
            return asset

    # -- captions and embeddings ------------------------------------------------

    def caption_accepted(self, captioner: Captioner) -> int:
        """Caption accepted assets that lack one; idempotent."""
        count = 0
        with self._lock:
            self._record_descriptor(captioner.descriptor.to_dict())
            for asset in self.assets.values():
                if asset.curation_state != "accepted" or asset.caption is not None:
                    continue
                image = load_image(asset.image_path)
                asset.caption = captioner.caption(image, hint=asset.category)
                count += 1
        return count

    def build_embedding_cache(self, embedder: ImageEmbedder) -> CacheStats:
        """Ensure every accepted asset has a cached embedding; returns stats."""
        stats = CacheStats()
        backend_name = embedder.descriptor.name
        with self._lock:
            self._record_descriptor(embedder.descriptor.to_dict())
            cache = self.cache()
            for asset in self.assets.values():
                if asset.curation_state != "accepted":
                    continue
                key = f"{asset.content_hash}:{backend_name}"
                if key in cache:
                    stats.hits += 1
                else:
                    image = load_image(asset.image_path)
                    cache.put(key, embedder.embed_image(image).values)
                    stats.computed += 1
                asset.embedding_ref = key
        return stats

    def _record_descriptor(self, desc: dict) -> None:
        if desc not in self.backend_descriptors:
            self.backend_descriptors.append(desc)

    # -- queries -----------------------------------------------------------------

    def matching_pool(self) -> list[tuple[str, EmbeddingVector]]:
        """Accepted assets with embeddings, as (asset_id, vector) pairs."""
        cache = self.cache()
        pool = []
        for asset in self.assets.values():
            if asset.curation_state == "accepted" and asset.embedding_ref:
                values = cache.get(asset.embedding_ref)
                if values is not None:
                    pool.append((asset.asset_id, EmbeddingVector(values)))
        return pool

    def queue(self, state: str = "pending", category: str | None = None, limit: int = 50, offset: int = 0) -> tuple[list[TextureAsset], int]:
        """Paged asset listing filtered by state and category; returns (page, total)."""
        if state not in STATES:
            raise InvalidInputError(f"unknown state {state!r}")
        rows = [
            a
            for a in self.assets.values()
            if a.curation_state == state and (category is None or a.category == category)
        ]
        return rows[offset : offset + limit], len(rows)

    def stats(self) -> dict:
        by_state = {s: 0 for s in STATES}
        by_category: dict[str, dict[str, int]] = {}
        for a in self.assets.values():
            by_state[a.curation_state] += 1
            cat = by_category.setdefault(a.category, {s: 0 for s in STATES})
            cat[a.curation_state] += 1
        return {"total": len(self.assets), "by_state": by_state, "by_category": by_category}
