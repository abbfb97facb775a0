"""Pipeline orchestration: stages, persistence, manifest.

Stages run in a fixed order, each reading and writing only its own JSON
Lines files inside the output directory, so any suffix of the pipeline can
be rerun against existing upstream outputs. Offline runs (mock providers)
use a logical clock that advances one tick per provider call, which makes
timings, timestamps, traces and therefore entire output directories
byte-reproducible; live runs use the wall clock.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import analytics as analytics_mod
from ._serde import canonical_json, derive_seed, file_sha256, read_jsonl, write_jsonl
from .chunking import (
    Chunk,
    MultihopChunk,
    chunk_document,
    default_multihop_count,
    make_multihop_chunks,
    split_sentences,
)
from .config import RunConfig
from .errors import (
    DocbenchError,
    EmptyAfterNormalization,
    InsufficientChunks,
    StageInputMissing,
    TraceMiss,
)
from .filtering import (
    WeightedQA,
    cluster_questions,
    filter_by_grounding,
    score_qa_grounding,
    select_representatives,
)
from .generation import QAPair, QuestionMode, generate_ensemble
from .ingestion import NormalizedDocument, load_corpus, normalize
from .judging import collect_responses, evaluate_pairwise, pairwise_matrix, rank_models
from .mcq import MCQItem, pose_mcq, results_table, score_subject
from .providers.backends import (
    BackendReply,
    HashEmbeddingBackend,
    HTTPChatBackend,
    HTTPEmbeddingBackend,
    MockChatBackend,
)
from .providers.client import Clock, ProviderClient, TickClock
from .providers.models import EmbeddingVector, ModelSpec, Role
from .providers.trace import (
    RecordedTrace,
    ReplayChatBackend,
    ReplayEmbeddingBackend,
    TraceWriter,
)
from .summarization import Summary, summarize

logger = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "chunk", "summarize", "generate", "filter", "dedup", "evaluate", "analyze")

DOCUMENTS_FILE = "documents.jsonl"
CHUNKS_FILE = "chunks.jsonl"
SUMMARIES_FILE = "summaries.jsonl"
Q_RAW_FILE = "q_raw.jsonl"
GROUNDING_FILE = "grounding.jsonl"
Q_CIT_FILE = "q_cit.jsonl"
Q_FINAL_FILE = "q_final.jsonl"
RESPONSES_FILE = "responses.jsonl"
VERDICTS_FILE = "verdicts.jsonl"
RANKING_FILE = "ranking.json"
PREDICTIONS_FILE = "predictions.jsonl"
MCQ_RESULTS_FILE = "mcq_results.csv"
ANALYTICS_FILE = "analytics.json"
MANIFEST_FILE = "manifest.json"
TRACE_FILE = "trace.jsonl"

_STAGE_OUTPUTS: dict[str, tuple[str, ...]] = {
    "ingest": (DOCUMENTS_FILE,),
    "chunk": (CHUNKS_FILE,),
    "summarize": (SUMMARIES_FILE,),
    "generate": (Q_RAW_FILE,),
    "filter": (GROUNDING_FILE, Q_CIT_FILE),
    "dedup": (Q_FINAL_FILE,),
    "evaluate": (RESPONSES_FILE, VERDICTS_FILE, RANKING_FILE, PREDICTIONS_FILE, MCQ_RESULTS_FILE),
    "analyze": (ANALYTICS_FILE,),
}


@dataclass(frozen=True, slots=True)
class RunManifest:
    run_id: str
    config_hash: str
    stage_checksums: dict[str, str]
    timings_ms: dict[str, int]
    counts: dict[str, int]
    warnings: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "stage_checksums": self.stage_checksums,
            "timings_ms": self.timings_ms,
            "counts": self.counts,
            "warnings": list(self.warnings),
        }


class _WarningCollector(logging.Handler):
    def __init__(self) -> None:
        super().__init__(level=logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name.removeprefix('docbench.')}: {record.getMessage()}")


class _DispatchingChatBackend:
    """Routes per model endpoint: mock:// stays offline, anything else HTTP."""

    def __init__(self, seed: int, offline: bool):
        self.mock = MockChatBackend(seed=seed)
        self.http = HTTPChatBackend()
        self.offline = offline

    def complete(self, model: ModelSpec, prompt: str, seed: int | None) -> BackendReply:
        if self.offline or model.endpoint.startswith("mock://"):
            return self.mock.complete(model, prompt, seed)
        return self.http.complete(model, prompt, seed)


class _DispatchingEmbeddingBackend:
    def __init__(self, seed: int, offline: bool):
        self.mock = HashEmbeddingBackend(seed=seed)
        self.http = HTTPEmbeddingBackend()
        self.offline = offline

    def embed_batch(self, model: ModelSpec, texts: Sequence[str]) -> list[list[float]]:
        if self.offline or model.endpoint.startswith("mock://"):
            return self.mock.embed_batch(model, texts)
        return self.http.embed_batch(model, texts)


class PipelineRun:
    """One configured run bound to an output directory."""

    def __init__(
        self,
        config: RunConfig,
        output_dir: str | Path | None = None,
        offline: bool = False,
        replay_trace: str | Path | None = None,
    ):
        self.config = config
        self.output_dir = Path(output_dir if output_dir is not None else config.output_dir)
        self.offline = offline
        self.replay_trace = Path(replay_trace) if replay_trace else None
        self._deterministic = (
            offline
            or replay_trace is not None
            or all(m.endpoint.startswith("mock://") for m in config.models)
        )
        self._warnings = _WarningCollector()
        self._timings: dict[str, int] = {}
        self._current_stage: str | None = None

    # -- provider wiring ---------------------------------------------------

    def _build_client(self, trace_writer: TraceWriter | None) -> ProviderClient:
        seed = derive_seed(self.config.seed, "providers")
        if self.replay_trace is not None:
            recorded = RecordedTrace.load(self.replay_trace)
            chat = ReplayChatBackend(recorded)
            embed = ReplayEmbeddingBackend(recorded)
        else:
            chat = _DispatchingChatBackend(seed=seed, offline=self.offline)
            embed = _DispatchingEmbeddingBackend(
                seed=derive_seed(self.config.seed, "embeddings"), offline=self.offline
            )
        clock: Clock = TickClock() if self._deterministic else Clock()
        sleep: Callable[[float], None] = (lambda _s: None) if self._deterministic else time.sleep
        return ProviderClient(
            chat_backend=chat,
            embedding_backend=embed,
            trace=trace_writer,
            clock=clock,
            sleep=sleep,
            default_seed=seed,
        )

    # -- helpers -----------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.output_dir / name

    def _require(self, name: str, producer: str) -> Path:
        path = self._path(name)
        if not path.is_file():
            raise StageInputMissing(f"{name} missing; run the {producer!r} stage first")
        return path

    def _embedder(self) -> ModelSpec:
        return self.config.models_with_role(Role.EMBEDDER)[0]

    def _summarizer(self) -> ModelSpec:
        # deterministic choice: first generator id in sorted order
        first = sorted(self.config.generation.generator_model_ids)[0]
        return self.config.model_by_id(first)

    # -- stage loaders ------------------------------------------------------

    def _load_documents(self) -> list[tuple[NormalizedDocument, str | None]]:
        path = self._require(DOCUMENTS_FILE, "ingest")
        out = []
        for rec in read_jsonl(path):
            category = rec.pop("category", None)
            out.append((NormalizedDocument.from_json_dict(rec), category))
        return out

    def _load_chunks(self) -> list[Chunk | MultihopChunk]:
        path = self._require(CHUNKS_FILE, "chunk")
        out: list[Chunk | MultihopChunk] = []
        for rec in read_jsonl(path):
            if rec["kind"] == "chunk":
                out.append(Chunk.from_json_dict(rec))
            else:
                out.append(MultihopChunk.from_json_dict(rec))
        return out

    def _load_summaries(self) -> dict[str, Summary]:
        path = self._require(SUMMARIES_FILE, "summarize")
        return {
            rec["doc_id"]: Summary(
                doc_id=rec["doc_id"], text=rec["text"], model_id=rec["model_id"], raw_response=""
            )
            for rec in read_jsonl(path)
        }

    def _load_qa(self, name: str, producer: str) -> list[QAPair]:
        path = self._require(name, producer)
        return [QAPair.from_json_dict(rec) for rec in read_jsonl(path)]

    def _load_qfinal(self) -> list[WeightedQA]:
        path = self._require(Q_FINAL_FILE, "dedup")
        return [WeightedQA.from_json_dict(rec) for rec in read_jsonl(path)]

    def _chunk_texts(self, chunks: Sequence[Chunk | MultihopChunk]) -> dict[str, str]:
        return {c.chunk_id: c.text for c in chunks}

    def _embed_texts(
        self, client: ProviderClient, keyed: Sequence[tuple[str, str]]
    ) -> dict[str, EmbeddingVector]:
        """Embed (key, text) pairs in one deterministic batch per call."""
        if not keyed:
            return {}
        vectors = client.embed(self._embedder(), [text for _, text in keyed])
        return {key: vec for (key, _), vec in zip(keyed, vectors)}

    # -- stages -------------------------------------------------------------

    def _stage_ingest(self, client: ProviderClient) -> None:
        sources = load_corpus(self.config.corpus)
        records = []
        for source in sources:
            try:
                doc = normalize(source)
            except (EmptyAfterNormalization, DocbenchError) as exc:
                logger.warning("rejected document %s: %s", source.doc_id, exc)
                continue
            rec = doc.to_json_dict()
            rec["category"] = source.category
            records.append(rec)
        write_jsonl(self._path(DOCUMENTS_FILE), records)

    def _stage_chunk(self, client: ProviderClient) -> None:
        documents = self._load_documents()
        params = self.config.chunking
        rng = np.random.default_rng(params.rng_seed)  # one sampler for the whole run
        records: list[dict] = []
        for doc, _category in documents:
            sentences = split_sentences(doc.text, doc.doc_id)
            if not sentences:
                logger.warning("document %s has no sentences; skipping", doc.doc_id)
                continue
            if len(sentences) > 1:
                embedded = self._embed_texts(client, [(str(s.index), s.text) for s in sentences])
                sentences = [s.with_embedding(embedded[str(s.index)]) for s in sentences]
            chunks = chunk_document(sentences, params)
            records.extend(c.to_json_dict() for c in chunks)
            if len(chunks) >= params.h_min:
                count = default_multihop_count(len(chunks))
                if count > 0:
                    try:
                        multihops = make_multihop_chunks(chunks, params, count, rng=rng)
                        records.extend(m.to_json_dict() for m in multihops)
                    except InsufficientChunks as exc:
                        logger.warning("no multihop chunks for %s: %s", doc.doc_id, exc)
        write_jsonl(self._path(CHUNKS_FILE), records)

    def _stage_summarize(self, client: ProviderClient) -> None:
        documents = self._load_documents()
        summarizer = self._summarizer()
        records = []
        for doc, _category in documents:
            summary = summarize(doc, summarizer, client)
            records.append(summary.to_json_dict())
        write_jsonl(self._path(SUMMARIES_FILE), records)

    def _stage_generate(self, client: ProviderClient) -> None:
        chunks = self._load_chunks()
        summaries = self._load_summaries()
        models = {m.model_id: m for m in self.config.models}
        q_raw = generate_ensemble(
            summaries,
            chunks,
            self.config.generation,
            models,
            client,
            parallel=not self._deterministic,
        )
        write_jsonl(self._path(Q_RAW_FILE), [qa.to_json_dict() for qa in q_raw])

    def _stage_filter(self, client: ProviderClient) -> None:
        q_raw = self._load_qa(Q_RAW_FILE, "generate")
        chunk_texts = self._chunk_texts(self._load_chunks())
        scored = []
        for qa in q_raw:
            text = chunk_texts.get(qa.chunk_id)
            if text is None:
                logger.warning("question %s references unknown chunk %s", qa.qa_id, qa.chunk_id)
                continue
            scored.append((qa, score_qa_grounding(qa, text)))
        kept = filter_by_grounding(scored, self.config.filtering.theta_cit)
        write_jsonl(self._path(GROUNDING_FILE), [gs.to_json_dict() for _, gs in scored])
        write_jsonl(self._path(Q_CIT_FILE), [qa.to_json_dict() for qa, _ in kept])

    def _stage_dedup(self, client: ProviderClient) -> None:
        q_cit = self._load_qa(Q_CIT_FILE, "filter")
        if not q_cit:
            write_jsonl(self._path(Q_FINAL_FILE), [])
            return
        ordered = sorted(q_cit, key=lambda qa: qa.qa_id)
        embeddings = self._embed_texts(client, [(qa.qa_id, qa.question) for qa in ordered])
        clusters, noise = cluster_questions(
            ordered,
            embeddings,
            tau_sim=self.config.filtering.tau_sim,
            min_points=self.config.filtering.min_points,
        )
        weighted = select_representatives(
            clusters, noise, {qa.qa_id: qa for qa in ordered}, embeddings
        )
        write_jsonl(self._path(Q_FINAL_FILE), [w.to_json_dict() for w in weighted])

    def _stage_evaluate(self, client: ProviderClient) -> None:
        if self.config.evaluation.mode == "mcq":
            self._evaluate_mcq(client)
        else:
            self._evaluate_pairwise(client)

    def _evaluate_pairwise(self, client: ProviderClient) -> None:
        qfinal = self._load_qfinal()
        chunks = self._load_chunks()
        summaries = self._load_summaries()
        targets = self.config.models_with_role(Role.TARGET)
        judges = [self.config.model_by_id(j) for j in sorted(self.config.evaluation.judges)]
        chunk_texts = self._chunk_texts(chunks)
        summary_texts = {doc_id: s.text for doc_id, s in summaries.items()}

        responses = collect_responses(
            targets, qfinal, chunk_texts, client, parallel=not self._deterministic
        )
        response_records = [
            {
                "model_id": model_id,
                "qa_id": qa_id,
                "response": text,
                "forfeit": text is None,
            }
            for (model_id, qa_id), text in sorted(responses.items())
        ]
        write_jsonl(self._path(RESPONSES_FILE), response_records)

        pair_scores, verdicts = evaluate_pairwise(
            targets,
            judges,
            qfinal,
            summary_texts,
            chunk_texts,
            client,
            responses=responses,
        )
        write_jsonl(self._path(VERDICTS_FILE), [v.to_json_dict() for v in verdicts])

        ranking = rank_models(
            pair_scores,
            method=self.config.evaluation.ranking_method,
            model_ids=[m.model_id for m in targets],
        )
        report = ranking.to_json_dict()
        report["pairwise_matrix"] = pairwise_matrix(pair_scores)
        report["per_pair"] = [
            {
                "model_a_id": ps.model_a_id,
                "model_b_id": ps.model_b_id,
                "total": ps.total,
                "per_question": [q.to_json_dict() for q in ps.per_question],
            }
            for ps in pair_scores
        ]
        self._path(RANKING_FILE).write_text(canonical_json(report) + "\n", encoding="utf-8")

    def _evaluate_mcq(self, client: ProviderClient) -> None:
        qfinal = self._load_qfinal()
        chunks = self._load_chunks()
        categories = {doc.doc_id: category for doc, category in self._load_documents()}
        chunk_texts = self._chunk_texts(chunks)
        targets = self.config.models_with_role(Role.TARGET)

        items: list[MCQItem] = []
        for wqa in sorted(qfinal, key=lambda w: w.qa.qa_id):
            qa = wqa.qa
            if qa.mode is not QuestionMode.MULTIPLE_CHOICE:
                logger.warning("skipping non-mcq question %s in mcq evaluation", qa.qa_id)
                continue
            subject = categories.get(qa.doc_id) or "uncategorized"
            items.append(MCQItem.from_qa(qa, subject=subject))

        prediction_records = []
        cells = []
        chunk_of = {w.qa.qa_id: w.qa.chunk_id for w in qfinal}
        for model in targets:
            by_subject: dict[str, tuple[list[int | None], list[MCQItem]]] = {}
            for item in items:
                predicted = pose_mcq(model, item, chunk_texts[chunk_of[item.qa_id]], client)
                prediction_records.append(
                    {
                        "model_id": model.model_id,
                        "qa_id": item.qa_id,
                        "subject": item.subject,
                        "predicted_index": predicted,
                        "gold_index": item.gold_index,
                        "correct": predicted == item.gold_index,
                    }
                )
                preds, subject_items = by_subject.setdefault(item.subject, ([], []))
                preds.append(predicted)
                subject_items.append(item)
            for subject in sorted(by_subject):
                preds, subject_items = by_subject[subject]
                cells.append(score_subject(model.model_id, subject, preds, subject_items))
        write_jsonl(self._path(PREDICTIONS_FILE), prediction_records)
        self._path(MCQ_RESULTS_FILE).write_text(results_table(cells), encoding="utf-8")

    def _stage_analyze(self, client: ProviderClient) -> None:
        q_raw = self._load_qa(Q_RAW_FILE, "generate")
        q_cit = self._load_qa(Q_CIT_FILE, "filter")
        qfinal = self._load_qfinal()
        chunks = self._load_chunks()
        grounding = {
            rec["qa_id"]: rec["score"]
            for rec in read_jsonl(self._require(GROUNDING_FILE, "filter"))
        }

        from .filtering import GroundingScore

        citation_scores = analytics_mod.model_citation_score(
            [
                (qa.generator_model_id, GroundingScore(qa.qa_id, (), grounding[qa.qa_id]))
                for qa in q_raw
                if qa.qa_id in grounding
            ]
        )

        diversity: dict[str, dict] = {}
        metrics: dict[str, tuple[float, float]] = {}
        by_model: dict[str, list[QAPair]] = {}
        for qa in sorted(q_cit, key=lambda q: q.qa_id):
            by_model.setdefault(qa.generator_model_id, []).append(qa)
        for model_id in sorted(by_model):
            questions = by_model[model_id]
            if len(questions) < 2:
                logger.warning("model %s has %d retained questions; diversity skipped", model_id, len(questions))
                continue
            embedded = self._embed_texts(client, [(qa.qa_id, qa.question) for qa in questions])
            vectors = [embedded[qa.qa_id].vector for qa in questions]
            dispersion = analytics_mod.embedding_dispersion(vectors)
            entropy, _sizes = analytics_mod.semantic_entropy(
                vectors, k=self.config.analytics.K, seed=derive_seed(self.config.seed, "kmeans")
            )
            k_eff = min(self.config.analytics.K, len(vectors))
            metrics[model_id] = (dispersion, entropy)
            diversity[model_id] = {
                "dispersion": dispersion,
                "entropy": entropy,
                "entropy_max": float(np.log2(k_eff)) if k_eff > 0 else 0.0,
            }
        combined: dict[str, float] | None = None
        if len(metrics) >= 2:
            combined = analytics_mod.combined_diversity(metrics)
            for model_id, value in combined.items():
                diversity[model_id]["combined"] = value

        original_chunk_ids = [c.chunk_id for c in chunks if isinstance(c, Chunk)]
        member_map = {
            c.chunk_id: list(c.member_chunk_ids) for c in chunks if isinstance(c, MultihopChunk)
        }
        coverage = {
            w.qa.qa_id: member_map.get(w.qa.chunk_id, [w.qa.chunk_id]) for w in qfinal
        }
        if qfinal:
            embedded_final = self._embed_texts(
                client, [(w.qa.qa_id, w.qa.question) for w in sorted(qfinal, key=lambda w: w.qa.qa_id)]
            )
            final_vectors = {qa_id: vec.vector for qa_id, vec in embedded_final.items()}
        else:
            final_vectors = {}
        objective, components = analytics_mod.d2eg_objective(
            qfinal,
            original_chunk_ids,
            self.config.analytics.d2eg_weights,
            final_vectors,
            covered_chunks=coverage,
        )

        weights = self.config.analytics.d2eg_weights
        report = {
            "citation_scores": citation_scores,
            "diversity": diversity,
            "combined_diversity": combined,
            "d2eg": {
                "objective": objective,
                "components": components,
                "weights": {"alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma},
            },
        }
        self._path(ANALYTICS_FILE).write_text(canonical_json(report) + "\n", encoding="utf-8")

    # -- run ------------------------------------------------------------------

    def run(self, stages: Sequence[str] | None = None) -> RunManifest:
        """Execute the selected stages (all by default) and write the manifest."""
        selected = list(STAGE_ORDER) if stages is None else list(stages)
        for name in selected:
            if name not in STAGE_ORDER:
                raise ValueError(f"unknown stage {name!r}")
        self.output_dir.mkdir(parents=True, exist_ok=True)

        root_logger = logging.getLogger("docbench")
        root_logger.addHandler(self._warnings)
        trace_writer = TraceWriter(self._path(TRACE_FILE))
        try:
            client = self._build_client(trace_writer)
            runners = {
                "ingest": self._stage_ingest,
                "chunk": self._stage_chunk,
                "summarize": self._stage_summarize,
                "generate": self._stage_generate,
                "filter": self._stage_filter,
                "dedup": self._stage_dedup,
                "evaluate": self._stage_evaluate,
                "analyze": self._stage_analyze,
            }
            for name in STAGE_ORDER:
                if name not in selected:
                    continue
                self._current_stage = name
                started = client.clock.now_ms()
                try:
                    runners[name](client)
                except TraceMiss as exc:
                    raise TraceMiss(str(exc), fingerprint=exc.fingerprint, stage=name) from exc
                self._timings[name] = client.clock.now_ms() - started
            self._current_stage = None
        finally:
            trace_writer.close()
            root_logger.removeHandler(self._warnings)

        manifest = self._build_manifest()
        self._path(MANIFEST_FILE).write_text(
            canonical_json(manifest.to_json_dict()) + "\n", encoding="utf-8"
        )
        return manifest

    def _build_manifest(self) -> RunManifest:
        checksums: dict[str, str] = {}
        for names in _STAGE_OUTPUTS.values():
            for name in names:
                path = self._path(name)
                if path.is_file():
                    checksums[name] = file_sha256(path)
        counts: dict[str, int] = {}
        counters = {
            "documents": DOCUMENTS_FILE,
            "chunks": CHUNKS_FILE,
            "q_raw": Q_RAW_FILE,
            "q_cit": Q_CIT_FILE,
            "q_final": Q_FINAL_FILE,
        }
        for key, name in counters.items():
            path = self._path(name)
            if path.is_file():
                counts[key] = sum(1 for _ in read_jsonl(path))
        config_hash = self.config.config_hash()
        return RunManifest(
            run_id=config_hash[:12],
            config_hash=config_hash,
            stage_checksums=checksums,
            timings_ms=dict(sorted(self._timings.items())),
            counts=counts,
            warnings=tuple(self._warnings.messages),
        )


