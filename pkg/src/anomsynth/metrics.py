"""Dataset quality metrics and the distribution-visualization export.

Inception Score measures sharpness/diversity from per-image class
probabilities; intra-cluster distance measures diversity as the mean
pairwise perceptual distance within a generation cluster; k-means (Lloyd
with kmeans++ seeding) reduces point clouds for plotting; the projection
export emits (group, x, y) rows plus per-group ellipse moments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import Projector
from .errors import InvalidInputError, UndefinedDistanceError

KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class ClusterSpec:
    """Images generated for one (object, description) pair."""

    cluster_key: tuple[str, str]
    members: tuple[str, ...]

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidInputError("cluster needs at least one member")


def _validate_rows(rows: np.ndarray) -> np.ndarray:
    r = np.asarray(rows, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
        raise InvalidInputError("need a nonempty N x C probability matrix")
    if (r < -1e-9).any():
        raise InvalidInputError("probabilities must be non-negative")
    if not np.allclose(r.sum(axis=1), 1.0, atol=1e-6):
        raise InvalidInputError("each probability row must sum to 1")
    return np.clip(r, 0.0, None)


def inception_score(rows: np.ndarray) -> float:
    """exp of the mean KL between per-image distributions and their marginal."""
    r = _validate_rows(rows)
    marginal = r.mean(axis=0)
    # 0*log(0) := 0; the marginal is positive wherever any row is
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)) - np.log(marginal), 0.0)
    kls = (r * log_ratio).sum(axis=1)
    return float(np.exp(kls.mean()))


def perceptual_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Distance between two perceptual feature vectors (euclidean norm)."""
    return float(np.linalg.norm(np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)))


def intra_cluster_distance(features: np.ndarray) -> float:
    """Mean pairwise perceptual distance over one cluster's member features."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise UndefinedDistanceError("intra-cluster distance needs at least 2 members")
    n = f.shape[0]
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += perceptual_distance(f[i], f[j])
            pairs += 1
    return total / pairs


def dataset_intra_cluster_distance(cluster_features: list[np.ndarray]) -> float:
    """Mean of per-cluster distances over clusters with at least 2 members."""
    values = []
    for f in cluster_features:
        if np.asarray(f).shape[0] >= 2:
            values.append(intra_cluster_distance(f))
    if not values:
        raise UndefinedDistanceError("no cluster has 2 or more members")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia_history: list[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[int(rng.integers(0, n))]
    for i in range(1, k):
        dist_sq = np.min(
            ((points[:, None, :] - centroids[None, :i, :]) ** 2).sum(axis=2), axis=1
        )
        total = dist_sq.sum()
        if total == 0.0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=dist_sq / total))
        centroids[i] = points[idx]
    return centroids


def kmeans_reduce(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = KMEANS_MAX_ITER) -> KMeansResult:
    """Lloyd's algorithm with kmeans++ seeding.

    Stops when assignments stabilize or after ``max_iter`` iterations; the
    recorded inertia never increases from one iteration to the next.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError("points must be an N x D matrix")
    n = x.shape[0]
    if not (1 <= k <= n):
        raise InvalidInputError(f"need 1 <= k <= N, got k={k}, N={n}")

    centroids = _kmeanspp_seed(x, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        dists = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        history.append(float(dists[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(k):
            members = x[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # adopt the point farthest from its centroid; the next
                # assignment step can only lower inertia
                farthest = int(dists[np.arange(n), assignments].argmax())
                centroids[j] = x[farthest]
    return KMeansResult(centroids=centroids, assignments=assignments, inertia_history=history)


# ---------------------------------------------------------------------------
# projection export


def export_projection(
    groups: dict[str, np.ndarray],
    projector: Projector,
    csv_path: str | Path,
    reduce_to: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Project named feature groups to 2-D and write plot-ready artifacts.

    Writes ``csv_path`` with one (group, x, y) row per projected point and a
    sibling ``*_ellipses.json`` with each group's mean and covariance for
    marginal plots. ``reduce_to`` pre-reduces each group to that many
    k-means centroids first.
    """
    if not groups:
        raise InvalidInputError("no feature groups given")
    names: list[str] = []
    blocks: list[np.ndarray] = []
    for name, feats in groups.items():
        f = np.asarray(feats, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise InvalidInputError(f"group {name!r} must be a nonempty N x D matrix")
        if reduce_to is not None and f.shape[0] > reduce_to:
            if rng is None:
                rng = np.random.default_rng(0)
            f = kmeans_reduce(f, reduce_to, rng).centroids
        names.extend([name] * f.shape[0])
        blocks.append(f)

    projected = projector.project(np.vstack(blocks))

    csv_path = Path(csv_path)
    with open(csv_path, "w") as fh:
        fh.write("group,x,y\n")
        for name, (px, py) in zip(names, projected):
            fh.write(f"{name},{float(px)!r},{float(py)!r}\n")

    ellipses: dict[str, dict] = {}
    offset = 0
    for (name, _), block in zip(groups.items(), blocks):
        pts = projected[offset : offset + block.shape[0]]
        offset += block.shape[0]
        mean = pts.mean(axis=0)
        centered = pts - mean
        denom = max(len(pts) - 1, 1)
        cov = centered.T @ centered / denom
        ellipses[name] = {"mean": mean.tolist(), "cov": cov.tolist(), "count": len(pts)}
    ellipse_path = csv_path.with_name(csv_path.stem + "_ellipses.json")
    ellipse_path.write_text(json.dumps(ellipses, indent=2, sort_keys=True))

    return {
        "rows": len(names),
        "groups": len(groups),
        "csv": str(csv_path),
        "ellipses": str(ellipse_path),
    }
