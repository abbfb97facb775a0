"""Citation grounding and semantic deduplication.

Grounding: a citation is scored against its source chunk with a partial
ratio, the best value of 2*Match(c, w)/(|c|+|w|) over contiguous source
windows w at least as long as the citation. Match is the total length of
the best matching contiguous blocks (sequence-matcher style); a longest
common subsequence variant is available via ``use_lcs`` for comparison.
Scores live on [0, 1]; a QA pair's grounding score is the mean over its
citations, and zero when it cites nothing.

Both strings are normalized before matching (casefold, whitespace runs
collapsed, markdown emphasis markers stripped), so a citation scores 1.0
exactly when it appears verbatim in the chunk modulo those cosmetics.

Deduplication: density clustering over question embeddings. Two questions
are neighbors when their cosine similarity strictly exceeds tau_sim; with
the default min_points=2 any similar pair forms a cluster. Each cluster is
replaced by its medoid, weighted by cluster size; noise passes through with
weight 1. Input order never affects membership: points are canonicalized
by qa_id before clustering.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import EmptyCitation, EmptySource
from .generation import QAPair
from .providers.models import EmbeddingVector

logger = logging.getLogger(__name__)

DEFAULT_THETA_CIT = 0.85
DEFAULT_TAU_SIM = 0.9
DEFAULT_MIN_POINTS = 2

_EMPHASIS_CHARS = re.compile(r"[*_`]")
_WS_RUN = re.compile(r"\s+")


def normalize_for_matching(text: str) -> str:
    text = _EMPHASIS_CHARS.sub("", text)
    return _WS_RUN.sub(" ", text).strip().casefold()


def partial_ratio(citation: str, source: str, use_lcs: bool = False) -> float:
    """Best fuzzy-match ratio of the citation against source windows, in [0, 1]."""
    c = normalize_for_matching(citation)
    s = normalize_for_matching(source)
    if not c:
        raise EmptyCitation("citation is empty after normalization")
    if not s:
        raise EmptySource("source is empty after normalization")
    return _kernels.best_window_score(c, s, use_lcs)


@dataclass(frozen=True, slots=True)
class GroundingScore:
    qa_id: str
    per_citation: tuple[float, ...]
    score: float

    def to_json_dict(self) -> dict:
        return {"qa_id": self.qa_id, "per_citation": list(self.per_citation), "score": self.score}

    @classmethod
    def from_json_dict(cls, data: dict) -> "GroundingScore":
        return cls(
            qa_id=data["qa_id"],
            per_citation=tuple(data["per_citation"]),
            score=float(data["score"]),
        )


def score_qa_grounding(qa: QAPair, chunk_text: str, use_lcs: bool = False) -> GroundingScore:
    """Mean partial ratio over the pair's citations; 0.0 with no citations."""
    per = tuple(partial_ratio(c.text, chunk_text, use_lcs) for c in qa.citations)
    score = sum(per) / len(per) if per else 0.0
    return GroundingScore(qa_id=qa.qa_id, per_citation=per, score=score)


def filter_by_grounding(
    pool: Sequence[tuple[QAPair, GroundingScore]],
    theta: float = DEFAULT_THETA_CIT,
) -> list[tuple[QAPair, GroundingScore]]:
    """Keep pairs scoring strictly above theta."""
    if not (0.0 <= theta <= 1.0):
        raise ValueError("theta must be in [0, 1]")
    return [(qa, gs) for qa, gs in pool if gs.score > theta]


@dataclass(frozen=True, slots=True)
class WeightedQA:
    qa: QAPair
    weight: float
    cluster_size: int
    is_noise: bool

    def __post_init__(self) -> None:
        if self.is_noise and (self.weight != 1 or self.cluster_size != 1):
            raise ValueError("noise representatives carry weight 1")
        if not self.is_noise and self.weight != self.cluster_size:
            raise ValueError("cluster representatives weigh their cluster size")

    def to_json_dict(self) -> dict:
        return {
            "qa": self.qa.to_json_dict(),
            "weight": self.weight,
            "cluster_size": self.cluster_size,
            "is_noise": self.is_noise,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "WeightedQA":
        return cls(
            qa=QAPair.from_json_dict(data["qa"]),
            weight=float(data["weight"]),
            cluster_size=int(data["cluster_size"]),
            is_noise=bool(data["is_noise"]),
        )


def _similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / norms
    return unit @ unit.T


def cluster_questions(
    qcit: Sequence[QAPair],
    embeddings: Mapping[str, EmbeddingVector],
    tau_sim: float = DEFAULT_TAU_SIM,
    min_points: int = DEFAULT_MIN_POINTS,
) -> tuple[list[list[str]], list[str]]:
    """Density clusters (as qa_id lists) plus the noise qa_ids.

    The neighborhood predicate is cosine similarity strictly above tau_sim;
    min_points counts the point itself. Points are sorted by qa_id before
    labeling, so cluster membership is a pure function of the input set.
    """
    if not (0.0 < tau_sim < 1.0):
        raise ValueError("tau_sim must be in (0, 1)")
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    if not qcit:
        return [], []

    ordered = sorted(qcit, key=lambda qa: qa.qa_id)
    ids = [qa.qa_id for qa in ordered]
    vectors = np.array([embeddings[qa.qa_id].vector for qa in ordered], dtype=np.float64)
    sim = _similarity_matrix(vectors)
    adjacency = sim > tau_sim
    np.fill_diagonal(adjacency, True)
    core = adjacency.sum(axis=1) >= min_points
    labels = _kernels.dbscan_labels(adjacency, core)

    clusters: dict[int, list[str]] = {}
    noise: list[str] = []
    for qa_id, label in zip(ids, labels):
        if label < 0:
            noise.append(qa_id)
        else:
            clusters.setdefault(int(label), []).append(qa_id)
    ordered_clusters = [sorted(members) for members in clusters.values()]
    ordered_clusters.sort(key=lambda m: m[0])
    return ordered_clusters, sorted(noise)


def select_representatives(
    clusters: Sequence[Sequence[str]],
    noise: Sequence[str],
    qa_by_id: Mapping[str, QAPair],
    embeddings: Mapping[str, EmbeddingVector],
) -> list[WeightedQA]:
    """Medoid per cluster (weight = cluster size) plus weight-1 noise points.

    The medoid minimizes the summed cosine distance to its cluster; ties go
    to the lexicographically smallest qa_id.
    """
    out: list[WeightedQA] = []
    for members in clusters:
        member_ids = sorted(members)
        vectors = np.array([embeddings[m].vector for m in member_ids], dtype=np.float64)
        sim = _similarity_matrix(vectors)
        dist_sums = (1.0 - sim).sum(axis=1)
        medoid_id = member_ids[int(np.argmin(dist_sums))]
        out.append(
            WeightedQA(
                qa=qa_by_id[medoid_id],
                weight=float(len(member_ids)),
                cluster_size=len(member_ids),
                is_noise=False,
            )
        )
    for qa_id in noise:
        out.append(WeightedQA(qa=qa_by_id[qa_id], weight=1.0, cluster_size=1, is_noise=True))
    out.sort(key=lambda w: w.qa.qa_id)
    return out
