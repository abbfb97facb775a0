"""Run-level metrics: diversity, agreement, citation quality, correlations.

Semantic diversity combines embedding dispersion (mean pairwise cosine
distance) with the Shannon entropy of a seeded K-means clustering of the
question embeddings; the cross-model composite min-max normalizes each
metric over the model set and averages the two.

Gwet's AC1 is computed with the multi-rater reduction: observed agreement
is the mean over items of the pairwise agreement fraction among that item's
raters; chance agreement is 2*pi*(1-pi) with pi the overall proportion of
positive labels.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .errors import (
    DegenerateVariance,
    TooFewModels,
    TooFewQuestions,
    UndefinedAgreement,
)
from .filtering import GroundingScore, WeightedQA

logger = logging.getLogger(__name__)

DEFAULT_KMEANS_K = 50
_KMEANS_MAX_ITER = 50
_KMEANS_TOL = 1e-6


@dataclass(frozen=True, slots=True)
class DiversityReport:
    model_id: str
    dispersion: float
    entropy: float
    entropy_max: float
    combined: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "dispersion": self.dispersion,
            "entropy": self.entropy,
            "entropy_max": self.entropy_max,
            "combined": self.combined,
        }


@dataclass(frozen=True, slots=True)
class AnnotationRecord:
    qa_id: str
    rater_id: str
    label: str  # "valid" | "invalid"

    def __post_init__(self) -> None:
        if self.label not in ("valid", "invalid"):
            raise ValueError("label must be 'valid' or 'invalid'")


@dataclass(frozen=True, slots=True)
class D2EGWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("weights must be nonnegative")
        if self.alpha == self.beta == self.gamma == 0:
            raise ValueError("at least one weight must be positive")


# --- dispersion and entropy -----------------------------------------------------


def embedding_dispersion(vectors: Sequence[Sequence[float]]) -> float:
    """Mean cosine distance over ordered pairs i != j."""
    n = len(vectors)
    if n < 2:
        raise TooFewQuestions("dispersion needs at least two questions")
    matrix = np.asarray(vectors, dtype=np.float64)
    unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    sim = unit @ unit.T
    distances = 1.0 - sim
    np.fill_diagonal(distances, 0.0)
    return float(distances.sum() / (n * (n - 1)))


def _kmeans_pp_init(matrix: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = matrix.shape[0]
    centroids = np.empty((k, matrix.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = matrix[first]
    dist_sq = ((matrix - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = dist_sq.sum()
        if total <= 0:
            centroids[i:] = matrix[int(rng.integers(n))]
            break
        probabilities = dist_sq / total
        target = rng.random()
        chosen = int(np.searchsorted(np.cumsum(probabilities), target, side="right"))
        chosen = min(chosen, n - 1)
        centroids[i] = matrix[chosen]
        dist_sq = np.minimum(dist_sq, ((matrix - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans_cluster(
    vectors: Sequence[Sequence[float]],
    k: int,
    seed: int,
) -> np.ndarray:
    """Deterministic seeded K-means; returns the assignment per point.

    Seeding is k-means++ driven by the given seed; Lloyd iterations stop
    after 50 rounds or once centroid movement drops below 1e-6. An emptied
    cluster is reseeded to the point farthest from its centroid.
    """
    matrix = np.asarray(vectors, dtype=np.float64)
    n = matrix.shape[0]
    k = min(k, n)
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(matrix, k, rng)
    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(_KMEANS_MAX_ITER):
        distances = ((matrix[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = distances.argmin(axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = matrix[assignment == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                farthest = int(distances.min(axis=1).argmax())
                new_centroids[j] = matrix[farthest]
        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if movement < _KMEANS_TOL:
            break
    distances = ((matrix[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return distances.argmin(axis=1)


def semantic_entropy(
    vectors: Sequence[Sequence[float]],
    k: int = DEFAULT_KMEANS_K,
    seed: int = 0,
) -> tuple[float, list[int]]:
    """Shannon entropy (bits) of the K-means cluster distribution."""
    if len(vectors) == 0:
        raise TooFewQuestions("entropy needs at least one question")
    assignment = kmeans_cluster(vectors, k, seed)
    counts = np.bincount(assignment, minlength=min(k, len(vectors)))
    total = counts.sum()
    entropy = 0.0
    for c in counts:
        if c > 0:
            p = c / total
            entropy -= p * math.log2(p)
    return entropy, [int(c) for c in counts]


def combined_diversity(
    metrics: Mapping[str, tuple[float, float]],
) -> dict[str, float]:
    """Min-max normalize (dispersion, entropy) across models, then average.

    A metric with no spread across models contributes 0.5 for everyone.
    """
    if len(metrics) < 2:
        raise TooFewModels("combined diversity needs at least two models")
    models = sorted(metrics)
    dispersions = np.array([metrics[m][0] for m in models])
    entropies = np.array([metrics[m][1] for m in models])

    def norm(values: np.ndarray) -> np.ndarray:
        span = values.max() - values.min()
        if span <= 0:
            return np.full(len(values), 0.5)
        return (values - values.min()) / span

    combined = (norm(dispersions) + norm(entropies)) / 2.0
    return {m: float(c) for m, c in zip(models, combined)}


# --- agreement --------------------------------------------------------------------


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Read an annotation file: CSV with columns qa_id, rater_id, label."""
    records: list[AnnotationRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"qa_id", "rater_id", "label"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"annotation file missing column(s): {', '.join(sorted(missing))}")
        for row in reader:
            records.append(
                AnnotationRecord(
                    qa_id=row["qa_id"], rater_id=row["rater_id"], label=row["label"].strip().lower()
                )
            )
    return records


def gwet_ac1(records: Sequence[AnnotationRecord]) -> float:
    """Chance-corrected inter-rater agreement over binary validity labels."""
    if not records:
        raise ValueError("no annotation records")
    by_item: dict[str, list[str]] = {}
    seen: set[tuple[str, str]] = set()
    for rec in records:
        key = (rec.qa_id, rec.rater_id)
        if key in seen:
            raise ValueError(f"duplicate rating for {key}")
        seen.add(key)
        by_item.setdefault(rec.qa_id, []).append(rec.label)

    agreements: list[float] = []
    for qa_id, labels in by_item.items():
        r = len(labels)
        if r < 2:
            raise ValueError(f"item {qa_id} has fewer than 2 ratings")
        valid = sum(1 for lab in labels if lab == "valid")
        pairs = r * (r - 1) / 2
        agreeing = valid * (valid - 1) / 2 + (r - valid) * (r - valid - 1) / 2
        agreements.append(agreeing / pairs)

    p_observed = sum(agreements) / len(agreements)
    pi = sum(1 for rec in records if rec.label == "valid") / len(records)
    p_expected = 2.0 * pi * (1.0 - pi)
    if p_expected >= 1.0:
        raise UndefinedAgreement("expected agreement is 1; AC1 undefined")
    return (p_observed - p_expected) / (1.0 - p_expected)


# --- citation quality ---------------------------------------------------------------


def model_citation_score(
    scores: Sequence[tuple[str, GroundingScore]],
) -> dict[str, float]:
    """Mean grounding score per generator model."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for model_id, gs in scores:
        sums[model_id] = sums.get(model_id, 0.0) + gs.score
        counts[model_id] = counts.get(model_id, 0) + 1
    out = {}
    for model_id in sorted(sums):
        if counts[model_id] == 0:
            logger.warning("no questions for model %s; omitting citation score", model_id)
            continue
        out[model_id] = sums[model_id] / counts[model_id]
    return out


# --- correlations -----------------------------------------------------------------


def _t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided p-value from the t distribution via the incomplete beta."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Product-moment correlation with a two-sided t-test p-value."""
    if len(x) != len(y):
        raise ValueError("inputs must have equal length")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 points")
    ax = np.asarray(x, dtype=np.float64)
    ay = np.asarray(y, dtype=np.float64)
    dx = ax - ax.mean()
    dy = ay - ay.mean()
    sx = float((dx * dx).sum())
    sy = float((dy * dy).sum())
    if sx <= 0 or sy <= 0:
        raise DegenerateVariance("zero variance input")
    r = float((dx * dy).sum() / math.sqrt(sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, _t_sf_two_sided(t, n - 2)


def _average_ranks(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Rank correlation (average ranks for ties) with a t-test p-value."""
    return pearson(_average_ranks(x), _average_ranks(y))


# --- generation objective diagnostic ----------------------------------------------


def d2eg_objective(
    qset: Sequence[WeightedQA],
    chunk_ids: Sequence[str],
    weights: D2EGWeights,
    embeddings: Mapping[str, Sequence[float]],
    covered_chunks: Mapping[str, Sequence[str]] | None = None,
) -> tuple[float, dict[str, float]]:
    """Diagnostic objective: size + uncovered-chunk + uniformity penalties.

    ``covered_chunks`` maps qa_id to the chunk ids that question covers
    (defaults to the question's own chunk); multihop questions should list
    their member chunks. Uniformity is the mean pairwise cosine similarity
    among question embeddings, zero for fewer than two questions.
    """
    covered: set[str] = set()
    for wqa in qset:
        qa_id = wqa.qa.qa_id
        if covered_chunks and qa_id in covered_chunks:
            covered.update(covered_chunks[qa_id])
        else:
            covered.add(wqa.qa.chunk_id)
    if chunk_ids:
        uncovered = sum(1 for c in chunk_ids if c not in covered) / len(chunk_ids)
    else:
        uncovered = 0.0

    if len(qset) >= 2:
        matrix = np.asarray([embeddings[w.qa.qa_id] for w in qset], dtype=np.float64)
        unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
        sim = unit @ unit.T
        np.fill_diagonal(sim, 0.0)
        uniformity = float(sim.sum() / (len(qset) * (len(qset) - 1)))
    else:
        uniformity = 0.0

    size_term = float(len(qset))
    total = weights.alpha * size_term + weights.beta * uncovered + weights.gamma * uniformity
    return total, {
        "size": size_term,
        "uncovered": uncovered,
        "uniformity": uniformity,
    }
