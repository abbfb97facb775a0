"""Pairwise comparative evaluation with a judge ensemble.

Every target pair (A, B) is judged on every question in both presentation
orders; per-order consensus across judges is bias-corrected as
0.5*(v(A,B) - v(B,A)), weighted by question salience, and summed into the
pair score S(A, B). A judge that only reacts to answer position therefore
cancels to exactly zero. Global rankings come from Bradley-Terry (iterative
MLE on win fractions derived from S) or Elo (sequential updates in
canonical question order).

A missing or failed model response is a forfeit: it loses outright (-1)
against any substantive response and ties (0) against another forfeit,
recorded as a synthetic verdict so reruns reproduce byte-identically.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyVerdictSet, MissingTag, ProviderRefusal, TransportError
from .filtering import WeightedQA
from .prompts import load_template, render
from .providers.client import ProviderClient
from .providers.models import ModelSpec, Role
from .summarization import extract_tagged_block

logger = logging.getLogger(__name__)

FORFEIT_JUDGE_ID = "forfeit-rule"
ELO_K_FACTOR = 16.0
BT_CONVERGENCE = 1e-8
BT_MAX_ITERATIONS = 20000


@dataclass(frozen=True, slots=True)
class JudgeContext:
    question: str
    response_a: str
    response_b: str
    summary_text: str
    chunk_text: str
    qa_id: str
    pair: tuple[str, str]
    order: str  # "AB" or "BA": which response is presented first

    def __post_init__(self) -> None:
        if self.order not in ("AB", "BA"):
            raise ValueError("order must be 'AB' or 'BA'")


@dataclass(frozen=True, slots=True)
class JudgeVerdict:
    qa_id: str
    judge_model_id: str
    order: str
    value: float
    raw_response: str

    def __post_init__(self) -> None:
        if not (-1.0 <= self.value <= 1.0):
            raise ValueError("verdict value must be in [-1, 1]")

    def to_json_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "judge_model_id": self.judge_model_id,
            "order": self.order,
            "value": self.value,
            "raw_response": self.raw_response,
        }


@dataclass(frozen=True, slots=True)
class QuestionScore:
    qa_id: str
    weight: float
    v_bar_ab: float
    v_bar_ba: float
    v_corrected: float

    def to_json_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "weight": self.weight,
            "v_bar_ab": self.v_bar_ab,
            "v_bar_ba": self.v_bar_ba,
            "v_corrected": self.v_corrected,
        }


@dataclass(frozen=True, slots=True)
class PairwiseScore:
    model_a_id: str
    model_b_id: str
    per_question: tuple[QuestionScore, ...]
    total: float

    def swapped(self) -> "PairwiseScore":
        return PairwiseScore(
            model_a_id=self.model_b_id,
            model_b_id=self.model_a_id,
            per_question=tuple(
                QuestionScore(
                    qa_id=q.qa_id,
                    weight=q.weight,
                    v_bar_ab=q.v_bar_ba,
                    v_bar_ba=q.v_bar_ab,
                    v_corrected=-q.v_corrected,
                )
                for q in self.per_question
            ),
            total=-self.total,
        )


@dataclass(frozen=True, slots=True)
class Ranking:
    method: str
    ratings: dict[str, float]
    order: tuple[str, ...]
    degenerate: bool = False
    degenerate_detail: str = ""

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "ratings": self.ratings,
            "order": list(self.order),
            "degenerate": self.degenerate,
            "degenerate_detail": self.degenerate_detail,
        }


# --- response collection -----------------------------------------------------


def build_answer_prompt(question: str, chunk_text: str) -> str:
    return render(load_template("answer"), chunk=chunk_text, question=question)


def collect_responses(
    models: Sequence[ModelSpec],
    qfinal: Sequence[WeightedQA],
    chunk_texts: Mapping[str, str],
    client: ProviderClient,
    parallel: bool = False,
) -> dict[tuple[str, str], str | None]:
    """One response per (model, question); failures become forfeits (None)."""
    if not models:
        raise ValueError("need at least one target model")
    tasks = [
        (model, wqa)
        for wqa in sorted(qfinal, key=lambda w: w.qa.qa_id)
        for model in sorted(models, key=lambda m: m.model_id)
    ]

    def run_one(task: tuple[ModelSpec, WeightedQA]) -> tuple[tuple[str, str], str | None]:
        model, wqa = task
        prompt = build_answer_prompt(wqa.qa.question, chunk_texts[wqa.qa.chunk_id])
        try:
            exchange = client.chat(model, prompt)
            return (model.model_id, wqa.qa.qa_id), exchange.response_text
        except (TransportError, ProviderRefusal) as exc:
            logger.warning("target %s forfeits %s: %s", model.model_id, wqa.qa.qa_id, exc)
            return (model.model_id, wqa.qa.qa_id), None

    if parallel and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=8) as pool:
            return dict(pool.map(run_one, tasks))
    return dict(run_one(t) for t in tasks)


# --- judging -------------------------------------------------------------------

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _parse_verdict_value(raw: str) -> float:
    try:
        block = extract_tagged_block(raw, "verdict")
    except MissingTag:
        logger.warning("unparseable verdict (no tag); scoring 0")
        return 0.0
    m = _NUMBER_RE.search(block)
    if m is None:
        logger.warning("unparseable verdict %r; scoring 0", block[:40])
        return 0.0
    value = float(m.group(0))
    if value < -1.0 or value > 1.0:
        logger.warning("verdict %s out of range; clamping", value)
        return max(-1.0, min(1.0, value))
    return value


def judge_pair(ctx: JudgeContext, judge: ModelSpec, client: ProviderClient) -> JudgeVerdict:
    """One judge call for one (question, pair, order) context."""
    if judge.role is not Role.JUDGE:
        raise ValueError(f"model {judge.model_id!r} is not a judge")
    prompt = render(
        load_template("judge"),
        question=ctx.question,
        answer_1=ctx.response_a,
        answer_2=ctx.response_b,
        summary=ctx.summary_text,
        chunk=ctx.chunk_text,
    )
    try:
        raw = client.chat(judge, prompt).response_text
        value = _parse_verdict_value(raw)
    except (TransportError, ProviderRefusal) as exc:
        logger.warning("judge %s failed on %s: %s; scoring 0", judge.model_id, ctx.qa_id, exc)
        raw = ""
        value = 0.0
    return JudgeVerdict(
        qa_id=ctx.qa_id,
        judge_model_id=judge.model_id,
        order=ctx.order,
        value=value,
        raw_response=raw,
    )


def consensus_score(verdicts: Sequence[JudgeVerdict]) -> float:
    """Arithmetic mean across judges for one (question, order)."""
    if not verdicts:
        raise EmptyVerdictSet("no verdicts to aggregate")
    qa_ids = {v.qa_id for v in verdicts}
    orders = {v.order for v in verdicts}
    if len(qa_ids) != 1 or len(orders) != 1:
        raise ValueError("consensus requires verdicts for one question and one order")
    return sum(v.value for v in verdicts) / len(verdicts)


def bias_corrected_score(v_ab: float, v_ba: float) -> float:
    """Half the difference of the order-swapped scores; antisymmetric."""
    if not (-1.0 <= v_ab <= 1.0 and -1.0 <= v_ba <= 1.0):
        raise ValueError("consensus scores must be in [-1, 1]")
    return 0.5 * (v_ab - v_ba)


def pairwise_total(
    model_a_id: str,
    model_b_id: str,
    question_scores: Sequence[QuestionScore],
) -> PairwiseScore:
    total = sum(q.weight * q.v_corrected for q in question_scores)
    return PairwiseScore(
        model_a_id=model_a_id,
        model_b_id=model_b_id,
        per_question=tuple(question_scores),
        total=total,
    )


def evaluate_pairwise(
    targets: Sequence[ModelSpec],
    judges: Sequence[ModelSpec],
    qfinal: Sequence[WeightedQA],
    summaries: Mapping[str, str],
    chunk_texts: Mapping[str, str],
    client: ProviderClient,
    parallel: bool = False,
    responses: Mapping[tuple[str, str], str | None] | None = None,
) -> tuple[list[PairwiseScore], list[JudgeVerdict]]:
    """Full tournament: every unordered target pair on every question."""
    if len(targets) < 2:
        raise ValueError("pairwise evaluation needs at least two target models")
    if not judges:
        raise ValueError("need at least one judge model")
    if responses is None:
        responses = collect_responses(targets, qfinal, chunk_texts, client, parallel=parallel)

    target_ids = sorted(m.model_id for m in targets)
    judge_specs = sorted(judges, key=lambda m: m.model_id)
    weighted = sorted(qfinal, key=lambda w: w.qa.qa_id)

    all_verdicts: list[JudgeVerdict] = []
    pair_scores: list[PairwiseScore] = []
    for i, a_id in enumerate(target_ids):
        for b_id in target_ids[i + 1 :]:
            question_scores: list[QuestionScore] = []
            for wqa in weighted:
                qa = wqa.qa
                resp_a = responses[(a_id, qa.qa_id)]
                resp_b = responses[(b_id, qa.qa_id)]
                order_means: dict[str, float] = {}
                for order in ("AB", "BA"):
                    verdicts = _verdicts_for_order(
                        qa.qa_id,
                        qa.question,
                        resp_a,
                        resp_b,
                        order,
                        (a_id, b_id),
                        summaries.get(qa.doc_id, ""),
                        chunk_texts[qa.chunk_id],
                        judge_specs,
                        client,
                    )
                    all_verdicts.extend(verdicts)
                    order_means[order] = consensus_score(verdicts)
                question_scores.append(
                    QuestionScore(
                        qa_id=qa.qa_id,
                        weight=wqa.weight,
                        v_bar_ab=order_means["AB"],
                        v_bar_ba=order_means["BA"],
                        v_corrected=bias_corrected_score(order_means["AB"], order_means["BA"]),
                    )
                )
            pair_scores.append(pairwise_total(a_id, b_id, question_scores))
    return pair_scores, all_verdicts


def _verdicts_for_order(
    qa_id: str,
    question: str,
    resp_a: str | None,
    resp_b: str | None,
    order: str,
    pair: tuple[str, str],
    summary_text: str,
    chunk_text: str,
    judges: Sequence[ModelSpec],
    client: ProviderClient,
) -> list[JudgeVerdict]:
    """Judge one presentation order, or synthesize the forfeit outcome.

    Verdict values are always oriented A-vs-B regardless of presentation:
    for order "BA" the judge's first-position score is recorded as v(B, A).
    """
    if resp_a is None or resp_b is None:
        if resp_a is None and resp_b is None:
            value = 0.0
        elif resp_a is None:
            value = -1.0 if order == "AB" else 1.0
        else:
            value = 1.0 if order == "AB" else -1.0
        return [
            JudgeVerdict(
                qa_id=qa_id,
                judge_model_id=FORFEIT_JUDGE_ID,
                order=order,
                value=value,
                raw_response="",
            )
        ]
    first, second = (resp_a, resp_b) if order == "AB" else (resp_b, resp_a)
    ctx = JudgeContext(
        question=question,
        response_a=first,
        response_b=second,
        summary_text=summary_text,
        chunk_text=chunk_text,
        qa_id=qa_id,
        pair=pair,
        order=order,
    )
    return [judge_pair(ctx, judge, client) for judge in judges]


# --- global ranking ---------------------------------------------------------


def _strongly_connected(beats: np.ndarray) -> bool:
    """Ford's condition: the positive-win digraph must be one strong component."""
    n = beats.shape[0]
    if n <= 1:
        return True

    def reach(matrix: np.ndarray) -> np.ndarray:
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(matrix[u] & ~seen):
                seen[v] = True
                stack.append(int(v))
        return seen

    return bool(reach(beats).all() and reach(beats.T).all())


def fit_bradley_terry(
    win_fractions: np.ndarray,
    played: np.ndarray,
    tolerance: float = BT_CONVERGENCE,
) -> np.ndarray:
    """Iterative MLE for log-strengths, centered at mean zero.

    ``win_fractions[i, j]`` is i's expected win share against j in one
    weighted game; ``played[i, j]`` marks observed pairs. Uses the standard
    minorization update until the largest log-strength change is below
    ``tolerance``.
    """
    n = win_fractions.shape[0]
    strengths = np.ones(n, dtype=np.float64)
    for _ in range(BT_MAX_ITERATIONS):
        updated = np.empty_like(strengths)
        for i in range(n):
            wins = 0.0
            denominator = 0.0
            for j in range(n):
                if i == j or not played[i, j]:
                    continue
                wins += win_fractions[i, j]
                denominator += 1.0 / (strengths[i] + strengths[j])
            updated[i] = wins / denominator if denominator > 0 else strengths[i]
        updated /= np.exp(np.mean(np.log(updated)))
        delta = np.max(np.abs(np.log(updated) - np.log(strengths)))
        strengths = updated
        if delta < tolerance:
            break
    ratings = np.log(strengths)
    return ratings - ratings.mean()


def _elo_ratings(
    model_ids: Sequence[str],
    pair_scores: Sequence[PairwiseScore],
    k_factor: float = ELO_K_FACTOR,
) -> dict[str, float]:
    """Sequential Elo over per-question corrected outcomes.

    Questions are visited in canonical qa_id order, pairs in lexicographic
    order inside each question; outcomes map v' in [-1, 1] to a score in
    [0, 1]. Updates are zero-sum, so ratings stay centered at zero.
    """
    ratings = {m: 0.0 for m in model_ids}
    per_pair: dict[tuple[str, str], dict[str, float]] = {}
    qa_ids: set[str] = set()
    for ps in pair_scores:
        key = (ps.model_a_id, ps.model_b_id)
        per_pair[key] = {q.qa_id: q.v_corrected for q in ps.per_question}
        qa_ids.update(per_pair[key])

    for qa_id in sorted(qa_ids):
        for (a_id, b_id) in sorted(per_pair):
            corrected = per_pair[(a_id, b_id)].get(qa_id)
            if corrected is None:
                continue
            score_a = (1.0 + corrected) / 2.0
            expected_a = 1.0 / (1.0 + 10.0 ** ((ratings[b_id] - ratings[a_id]) / 400.0))
            ratings[a_id] += k_factor * (score_a - expected_a)
            ratings[b_id] += k_factor * ((1.0 - score_a) - (1.0 - expected_a))
    return ratings


def rank_models(
    pair_scores: Sequence[PairwiseScore],
    method: str = "bradley_terry",
    model_ids: Sequence[str] | None = None,
) -> Ranking:
    """Global ranking from pairwise totals via Bradley-Terry or Elo.

    Bradley-Terry converts each pair total to a win fraction
    p = 0.5 * (1 + S / W) where W is the pair's total question weight. When
    some model never concedes any win mass (the MLE diverges), the ranking
    falls back to win counts and is flagged degenerate.
    """
    if method not in ("bradley_terry", "elo"):
        raise ValueError(f"unknown ranking method {method!r}")
    ids = set(model_ids or [])
    for ps in pair_scores:
        ids.update((ps.model_a_id, ps.model_b_id))
    ordered_ids = sorted(ids)
    if not ordered_ids:
        raise ValueError("no models to rank")
    index = {m: i for i, m in enumerate(ordered_ids)}
    n = len(ordered_ids)

    if method == "elo":
        ratings = _elo_ratings(ordered_ids, pair_scores)
        return _build_ranking("elo", ratings)

    win_fractions = np.zeros((n, n), dtype=np.float64)
    played = np.zeros((n, n), dtype=bool)
    for ps in pair_scores:
        i, j = index[ps.model_a_id], index[ps.model_b_id]
        total_weight = sum(q.weight for q in ps.per_question)
        if total_weight <= 0:
            continue
        p = 0.5 * (1.0 + ps.total / total_weight)
        p = min(1.0, max(0.0, p))
        win_fractions[i, j] = p
        win_fractions[j, i] = 1.0 - p
        played[i, j] = played[j, i] = True

    beats = (win_fractions > 0) & played
    if n > 1 and not _strongly_connected(beats):
        # Certain winners/losers push the MLE to infinity; fall back to an
        # ordinal ranking by win count and say so.
        copeland = {
            m: float(np.sum(win_fractions[index[m]] > win_fractions[:, index[m]]))
            for m in ordered_ids
        }
        return _build_ranking(
            "bradley_terry",
            copeland,
            degenerate=True,
            detail="win graph not strongly connected; ordinal ranking by wins, strengths unbounded",
        )

    ratings_arr = fit_bradley_terry(win_fractions, played)
    ratings = {m: float(ratings_arr[index[m]]) for m in ordered_ids}
    return _build_ranking("bradley_terry", ratings)


def _build_ranking(method: str, ratings: dict[str, float], degenerate: bool = False, detail: str = "") -> Ranking:
    order = tuple(sorted(ratings, key=lambda m: (-ratings[m], m)))
    return Ranking(
        method=method,
        ratings=ratings,
        order=order,
        degenerate=degenerate,
        degenerate_detail=detail,
    )


def pairwise_matrix(pair_scores: Sequence[PairwiseScore]) -> dict[str, dict[str, float]]:
    """S(A, B) lookup including the antisymmetric mirror entries."""
    matrix: dict[str, dict[str, float]] = {}
    for ps in pair_scores:
        matrix.setdefault(ps.model_a_id, {})[ps.model_b_id] = ps.total
        matrix.setdefault(ps.model_b_id, {})[ps.model_a_id] = -ps.total
    return matrix
