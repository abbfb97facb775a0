"""Declarative run configuration.

One structured document (YAML or JSON) with a fixed schema; unknown keys
are errors, not warnings, because silent typos in evaluation configs are a
classic failure mode. Everything random in a run flows from the single
``seed`` through named sub-seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ._serde import canonical_json, sha256_text
from .chunking import ChunkingParams
from .errors import ConfigInvalid
from .generation import GenerationConfig, QuestionMode
from .analytics import D2EGWeights, DEFAULT_KMEANS_K
from .filtering import DEFAULT_MIN_POINTS, DEFAULT_TAU_SIM, DEFAULT_THETA_CIT
from .providers.models import ModelSpec, Role, SamplingParams


@dataclass(frozen=True, slots=True)
class FilteringConfig:
    theta_cit: float = DEFAULT_THETA_CIT
    tau_sim: float = DEFAULT_TAU_SIM
    min_points: int = DEFAULT_MIN_POINTS


@dataclass(frozen=True, slots=True)
class EvaluationConfig:
    mode: str = "pairwise"  # "pairwise" | "mcq"
    judges: tuple[str, ...] = ()
    ranking_method: str = "bradley_terry"


@dataclass(frozen=True, slots=True)
class AnalyticsConfig:
    K: int = DEFAULT_KMEANS_K
    d2eg_weights: D2EGWeights = field(default_factory=D2EGWeights)


@dataclass(frozen=True, slots=True)
class RunConfig:
    corpus: str
    models: tuple[ModelSpec, ...]
    chunking: ChunkingParams
    generation: GenerationConfig
    filtering: FilteringConfig
    evaluation: EvaluationConfig
    analytics: AnalyticsConfig
    seed: int
    output_dir: str

    def model_by_id(self, model_id: str) -> ModelSpec:
        for model in self.models:
            if model.model_id == model_id:
                return model
        raise ConfigInvalid(f"unknown model_id {model_id!r}")

    def models_with_role(self, role: Role) -> list[ModelSpec]:
        return sorted((m for m in self.models if m.role is role), key=lambda m: m.model_id)

    def identity_dict(self) -> dict:
        """Semantic config identity: everything except filesystem locations,
        so hashes and run ids are stable across machines and output dirs."""
        return {
            "models": [m.to_json_dict() for m in self.models],
            "chunking": {
                "l_min": self.chunking.l_min,
                "l_max": self.chunking.l_max,
                "tau": self.chunking.tau,
                "h_min": self.chunking.h_min,
                "h_max": self.chunking.h_max,
                "rng_seed": self.chunking.rng_seed,
            },
            "generation": {
                "generator_model_ids": list(self.generation.generator_model_ids),
                "question_modes": sorted(m.value for m in self.generation.question_modes),
                "difficulty_targets": list(self.generation.difficulty_targets),
                "question_type_hints": list(self.generation.question_type_hints),
                "max_questions_per_chunk": self.generation.max_questions_per_chunk,
            },
            "filtering": {
                "theta_cit": self.filtering.theta_cit,
                "tau_sim": self.filtering.tau_sim,
                "min_points": self.filtering.min_points,
            },
            "evaluation": {
                "mode": self.evaluation.mode,
                "judges": list(self.evaluation.judges),
                "ranking_method": self.evaluation.ranking_method,
            },
            "analytics": {
                "K": self.analytics.K,
                "d2eg_weights": {
                    "alpha": self.analytics.d2eg_weights.alpha,
                    "beta": self.analytics.d2eg_weights.beta,
                    "gamma": self.analytics.d2eg_weights.gamma,
                },
            },
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        return sha256_text(canonical_json(self.identity_dict()))


_TOP_KEYS = {
    "corpus", "models", "chunking", "generation", "filtering",
    "evaluation", "analytics", "seed", "output_dir",
}
_MODEL_KEYS = {
    "model_id", "family", "role", "endpoint", "max_in_flight",
    "sampling", "price_per_output_token",
}
_SAMPLING_KEYS = {"temperature", "top_p", "max_output_tokens"}
_CHUNKING_KEYS = {"l_min", "l_max", "tau", "h_min", "h_max", "rng_seed"}
_GENERATION_KEYS = {
    "generator_model_ids", "question_modes", "difficulty_targets",
    "question_type_hints", "max_questions_per_chunk",
}
_FILTERING_KEYS = {"theta_cit", "tau_sim", "min_points"}
_EVALUATION_KEYS = {"mode", "judges", "ranking_method"}
_ANALYTICS_KEYS = {"K", "d2eg_weights"}
_WEIGHT_KEYS = {"alpha", "beta", "gamma"}


def _check_keys(mapping: Mapping[str, Any], allowed: set[str], path: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigInvalid(f"unknown key(s) at {path}: {', '.join(sorted(unknown))}")


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse and validate a config file; raises ConfigInvalid on any problem."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config root must be a mapping")
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "<root>")
    for key in ("corpus", "models", "seed", "output_dir"):
        if key not in raw:
            raise ConfigInvalid(f"missing required key {key!r}")

    try:
        models = tuple(_parse_model(m, i) for i, m in enumerate(raw["models"]))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigInvalid(f"invalid models entry: {exc}") from exc
    ids = [m.model_id for m in models]
    if len(ids) != len(set(ids)):
        raise ConfigInvalid("duplicate model_id in models")

    chunking_raw = raw.get("chunking") or {}
    _check_keys(chunking_raw, _CHUNKING_KEYS, "chunking")
    generation_raw = raw.get("generation") or {}
    _check_keys(generation_raw, _GENERATION_KEYS, "generation")
    filtering_raw = raw.get("filtering") or {}
    _check_keys(filtering_raw, _FILTERING_KEYS, "filtering")
    evaluation_raw = raw.get("evaluation") or {}
    _check_keys(evaluation_raw, _EVALUATION_KEYS, "evaluation")
    analytics_raw = raw.get("analytics") or {}
    _check_keys(analytics_raw, _ANALYTICS_KEYS, "analytics")
    weights_raw = analytics_raw.get("d2eg_weights") or {}
    _check_keys(weights_raw, _WEIGHT_KEYS, "analytics.d2eg_weights")

    try:
        seed = int(raw["seed"])
        chunking = ChunkingParams(
            l_min=int(chunking_raw.get("l_min", 128)),
            l_max=int(chunking_raw.get("l_max", 512)),
            tau=float(chunking_raw.get("tau", 0.6)),
            h_min=int(chunking_raw.get("h_min", 2)),
            h_max=int(chunking_raw.get("h_max", 5)),
            rng_seed=int(chunking_raw["rng_seed"]) if "rng_seed" in chunking_raw else _default_rng_seed(seed),
        )
        generator_ids = tuple(generation_raw.get("generator_model_ids") or ())
        generation = GenerationConfig(
            generator_model_ids=generator_ids,
            question_modes=frozenset(
                QuestionMode(m) for m in generation_raw.get("question_modes", ["open_ended"])
            ),
            difficulty_targets=tuple(generation_raw.get("difficulty_targets", ["basic", "advanced"])),
            question_type_hints=tuple(generation_raw.get("question_type_hints", [])),
            max_questions_per_chunk=generation_raw.get("max_questions_per_chunk"),
        )
        filtering = FilteringConfig(
            theta_cit=float(filtering_raw.get("theta_cit", DEFAULT_THETA_CIT)),
            tau_sim=float(filtering_raw.get("tau_sim", DEFAULT_TAU_SIM)),
            min_points=int(filtering_raw.get("min_points", DEFAULT_MIN_POINTS)),
        )
        evaluation = EvaluationConfig(
            mode=str(evaluation_raw.get("mode", "pairwise")),
            judges=tuple(evaluation_raw.get("judges", [])),
            ranking_method=str(evaluation_raw.get("ranking_method", "bradley_terry")),
        )
        analytics = AnalyticsConfig(
            K=int(analytics_raw.get("K", DEFAULT_KMEANS_K)),
            d2eg_weights=D2EGWeights(
                alpha=float(weights_raw.get("alpha", 1.0)),
                beta=float(weights_raw.get("beta", 1.0)),
                gamma=float(weights_raw.get("gamma", 1.0)),
            ),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(str(exc)) from exc

    corpus = str(raw["corpus"])
    if base_dir is not None and not Path(corpus).is_absolute():
        corpus = str(base_dir / corpus)

    config = RunConfig(
        corpus=corpus,
        models=models,
        chunking=chunking,
        generation=generation,
        filtering=filtering,
        evaluation=evaluation,
        analytics=analytics,
        seed=seed,
        output_dir=str(raw["output_dir"]),
    )
    _validate_cross_references(config)
    return config


def _default_rng_seed(seed: int) -> int:
    from ._serde import derive_seed

    return derive_seed(seed, "multihop")


def _parse_model(raw: Mapping[str, Any], position: int) -> ModelSpec:
    if not isinstance(raw, Mapping):
        raise ConfigInvalid(f"models[{position}] must be a mapping")
    _check_keys(raw, _MODEL_KEYS, f"models[{position}]")
    sampling_raw = raw.get("sampling") or {}
    _check_keys(sampling_raw, _SAMPLING_KEYS, f"models[{position}].sampling")
    return ModelSpec(
        model_id=str(raw["model_id"]),
        family=str(raw.get("family", "")),
        role=Role(raw["role"]),
        endpoint=str(raw.get("endpoint", "mock://chat")),
        max_in_flight=int(raw.get("max_in_flight", 4)),
        sampling=SamplingParams(
            temperature=float(sampling_raw.get("temperature", 0.0)),
            top_p=float(sampling_raw.get("top_p", 1.0)),
            max_output_tokens=int(sampling_raw.get("max_output_tokens", 2048)),
        ),
        price_per_output_token=raw.get("price_per_output_token"),
    )


def _validate_cross_references(config: RunConfig) -> None:
    ids = {m.model_id for m in config.models}
    if not (0.0 < config.filtering.theta_cit < 1.0):
        raise ConfigInvalid("filtering.theta_cit must be in (0, 1)")
    if not (0.0 < config.filtering.tau_sim < 1.0):
        raise ConfigInvalid("filtering.tau_sim must be in (0, 1)")
    if config.filtering.min_points < 1:
        raise ConfigInvalid("filtering.min_points must be >= 1")
    if config.analytics.K < 1:
        raise ConfigInvalid("analytics.K must be >= 1")
    if config.evaluation.mode not in ("pairwise", "mcq"):
        raise ConfigInvalid("evaluation.mode must be 'pairwise' or 'mcq'")
    if config.evaluation.ranking_method not in ("bradley_terry", "elo"):
        raise ConfigInvalid("evaluation.ranking_method must be 'bradley_terry' or 'elo'")

    for model_id in config.generation.generator_model_ids:
        if model_id not in ids:
            raise ConfigInvalid(f"generation references unknown model {model_id!r}")
        if config.model_by_id(model_id).role is not Role.GENERATOR:
            raise ConfigInvalid(f"{model_id!r} is not a generator model")
    for model_id in config.evaluation.judges:
        if model_id not in ids:
            raise ConfigInvalid(f"evaluation references unknown model {model_id!r}")
        if config.model_by_id(model_id).role is not Role.JUDGE:
            raise ConfigInvalid(f"{model_id!r} is not a judge model")
    if not config.models_with_role(Role.EMBEDDER):
        raise ConfigInvalid("at least one embedder model is required")
    if config.evaluation.mode == "pairwise":
        if not config.evaluation.judges:
            raise ConfigInvalid("pairwise evaluation requires at least one judge")
        if len(config.models_with_role(Role.TARGET)) < 2:
            raise ConfigInvalid("pairwise evaluation requires at least two target models")
    if config.evaluation.mode == "mcq":
        if QuestionMode.MULTIPLE_CHOICE not in config.generation.question_modes:
            raise ConfigInvalid("mcq evaluation requires multiple_choice in generation.question_modes")
        if not config.models_with_role(Role.TARGET):
            raise ConfigInvalid("mcq evaluation requires at least one target model")
