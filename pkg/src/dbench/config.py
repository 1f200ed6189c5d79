"""Pipeline configuration: one structured file drives every stage.

Snapshots differ only by window and cutoff, so everything a stage needs is
named here. Gate thresholds stay at their canonical values unless the
override flag is set, in which case every produced manifest carries a
non-canonical watermark.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping

import yaml

from .corpus import (
    DEFAULT_SUBDOMAINS,
    SNAPSHOT_ID_RE,
    SourceSpec,
    TemporalWindow,
    load_allowlist,
    window_for_month,
)
from .errors import ConfigError
from .filtering import GateThresholds
from .gateway import ModelGateway, ModelRegistry, ModelSpec, build_registry
from .solvers import DEFAULT_MAX_RESULTS, DEFAULT_MAX_STEPS, SolverConfig


@dataclass
class AltTestConfig:
    human_scores_path: Path | None = None
    epsilon: float = 0.0
    alpha: float = 0.05
    solver_id: str | None = None  # whose evaluation scores feed the "evaluation" dimension
    llm_annotator_id: str = "llm-judge"


@dataclass
class PipelineConfig:
    snapshot_id: str
    window: TemporalWindow
    cutoff_date: date
    taxonomy: tuple[str, ...]
    sources: list[SourceSpec]
    model_specs: list[ModelSpec]
    extractor_model: str
    filter_judge_model: str
    eval_judge_model: str
    solvers: list[SolverConfig]
    release_dates: dict[str, date] = field(default_factory=dict)
    thresholds: GateThresholds = field(default_factory=GateThresholds)
    allow_noncanonical_thresholds: bool = False
    alt_test: AltTestConfig = field(default_factory=AltTestConfig)
    filter_batch_size: int = 20
    extraction_retries: int = 2
    filter_retries: int = 1
    transport_retries: int = 3
    permits: int = 4
    cache_enabled: bool = True
    search_corpus_path: Path | None = None
    search_max_results: int = DEFAULT_MAX_RESULTS
    include_question_in_eval: bool = False
    decoding: dict[str, dict] = field(default_factory=dict)
    workspace: Path | None = None

    def validate(self) -> None:
        if not SNAPSHOT_ID_RE.match(self.snapshot_id):
            raise ConfigError(f"snapshot_id {self.snapshot_id!r} does not match YYYY-MM")
        if self.cutoff_date >= self.window.start_date:
            raise ConfigError(
                f"cutoff_date {self.cutoff_date} must be strictly earlier than the window "
                f"start {self.window.start_date}"
            )
        if not self.taxonomy:
            raise ConfigError("taxonomy must be non-empty")
        taxonomy = set(self.taxonomy)
        for source in self.sources:
            for entry in source.allowlist:
                if entry.subdomain not in taxonomy:
                    raise ConfigError(
                        f"allowlist subdomain {entry.subdomain!r} for journal "
                        f"{entry.journal!r} is not in the taxonomy"
                    )
        if not self.thresholds.canonical and not self.allow_noncanonical_thresholds:
            raise ConfigError(
                "gate thresholds differ from the canonical values; set "
                "allow_noncanonical_thresholds to run anyway (outputs are watermarked)"
            )
        model_ids = {spec.model_id for spec in self.model_specs}
        for role, model_id in (
            ("extractor", self.extractor_model),
            ("filter_judge", self.filter_judge_model),
            ("eval_judge", self.eval_judge_model),
        ):
            if model_id not in model_ids:
                raise ConfigError(f"{role} model {model_id!r} is not in the registry")
        seen_solvers: set[str] = set()
        for solver in self.solvers:
            if solver.solver_id in seen_solvers:
                raise ConfigError(f"duplicate solver id {solver.solver_id!r}")
            seen_solvers.add(solver.solver_id)
            if solver.backbone not in model_ids:
                raise ConfigError(
                    f"solver {solver.solver_id!r} backbone {solver.backbone!r} is not registered"
                )
            if solver.cutoff_date >= self.window.start_date:
                raise ConfigError(
                    f"solver {solver.solver_id!r} cutoff {solver.cutoff_date} is not "
                    f"strictly earlier than the window start"
                )
        needs_search = [s.solver_id for s in self.solvers if s.kind != "base"]
        if needs_search and self.search_corpus_path is None:
            raise ConfigError(
                f"solvers {needs_search} use the literature-search tool; configure "
                "search.corpus"
            )

    def build_registry(self) -> ModelRegistry:
        return build_registry(self.model_specs)

    def build_gateway(self, workspace: Path) -> ModelGateway:
        cache_dir = workspace / "cache" / "models" if self.cache_enabled else None
        return ModelGateway(
            self.build_registry(),
            cache_dir=cache_dir,
            permits=self.permits,
            max_retries=self.transport_retries,
        )

    def decoding_for(self, role: str) -> dict:
        return dict(self.decoding.get(role, {}))

    def to_manifest_dict(self, workspace: Path) -> dict:
        """Resolved config as recorded in the snapshot manifest.

        Paths under the workspace are relativized so manifests stay
        machine-portable.
        """

        def portable(path: Path | None) -> str | None:
            if path is None:
                return None
            try:
                return str(Path(path).resolve().relative_to(Path(workspace).resolve()))
            except ValueError:
                return str(path)

        return {
            "snapshot_id": self.snapshot_id,
            "window": self.window.to_dict(),
            "cutoff_date": self.cutoff_date.isoformat(),
            "taxonomy": list(self.taxonomy),
            "sources": [
                {
                    "source_id": source.source_id,
                    "kind": source.kind,
                    "allowlist": [
                        {"journal": e.journal, "subdomain": e.subdomain, "quartile": e.quartile}
                        for e in source.allowlist
                    ],
                }
                for source in self.sources
            ],
            "models": {
                "extractor": self.extractor_model,
                "filter_judge": self.filter_judge_model,
                "eval_judge": self.eval_judge_model,
                "registry": sorted(spec.model_id for spec in self.model_specs),
            },
            "solvers": [
                {
                    "solver_id": solver.solver_id,
                    "kind": solver.kind,
                    "backbone": solver.backbone,
                    "thinking": solver.thinking,
                    "max_steps": solver.max_steps,
                    "max_results": solver.max_results,
                    "cutoff_date": solver.cutoff_date.isoformat(),
                }
                for solver in self.solvers
            ],
            "release_dates": {m: d.isoformat() for m, d in sorted(self.release_dates.items())},
            "thresholds": self.thresholds.to_dict(),
            "filter_batch_size": self.filter_batch_size,
            "retries": {
                "extraction": self.extraction_retries,
                "filter": self.filter_retries,
                "transport": self.transport_retries,
            },
            "permits": self.permits,
            "include_question_in_eval": self.include_question_in_eval,
            "search_corpus": portable(self.search_corpus_path),
            "human_scores": portable(self.alt_test.human_scores_path),
        }


def _parse_date(value: Any, context: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{context}: invalid date {value!r}") from exc


def _resolve_path(base: Path, value: Any) -> Path:
    path = Path(str(value))
    return path if path.is_absolute() else (base / path).resolve()


def _parse_model_spec(raw: Mapping[str, Any]) -> ModelSpec:
    try:
        return ModelSpec(
            model_id=raw["model_id"],
            provider=raw.get("provider", "stub"),
            endpoint=raw.get("endpoint"),
            api_key_env=raw.get("api_key_env", "MODEL_API_KEY"),
            api_base_env=raw.get("api_base_env", "MODEL_API_BASE"),
            thinking_capable=bool(raw.get("thinking_capable", False)),
            release_date=(
                _parse_date(raw["release_date"], raw["model_id"])
                if raw.get("release_date")
                else None
            ),
            script=raw.get("script"),
            default_reply=raw.get("default_reply"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid model registry entry: {exc}") from exc


def load_config(path: Path | str, *, snapshot_override: str | None = None) -> PipelineConfig:
    """Parse and validate the YAML config; relative paths resolve against it."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    base = path.parent.resolve()

    snapshot_id = snapshot_override or str(raw.get("snapshot_id", ""))
    if not snapshot_id:
        raise ConfigError("snapshot_id is required")
    if not SNAPSHOT_ID_RE.match(snapshot_id):
        raise ConfigError(f"snapshot_id {snapshot_id!r} does not match YYYY-MM")

    window_raw = raw.get("window")
    if window_raw:
        window = TemporalWindow(
            _parse_date(window_raw.get("start"), "window.start"),
            _parse_date(window_raw.get("end"), "window.end"),
        )
    else:
        window = window_for_month(snapshot_id)

    cutoff = _parse_date(raw.get("cutoff_date"), "cutoff_date")
    taxonomy = tuple(raw.get("taxonomy") or DEFAULT_SUBDOMAINS)

    sources: list[SourceSpec] = []
    for source_raw in raw.get("sources", []):
        allowlist_path = source_raw.get("allowlist")
        if not allowlist_path:
            raise ConfigError(f"source {source_raw.get('source_id')!r} needs an allowlist CSV")
        allowlist = load_allowlist(_resolve_path(base, allowlist_path))
        config_map = dict(source_raw.get("config", {}))
        if "path" in config_map:
            config_map["path"] = str(_resolve_path(base, config_map["path"]))
        sources.append(
            SourceSpec(
                source_id=source_raw["source_id"],
                kind=source_raw["kind"],
                allowlist=allowlist,
                config=config_map,
                q1_only=bool(source_raw.get("q1_only", True)),
            )
        )

    models_raw = raw.get("models", {})
    model_specs = [_parse_model_spec(entry) for entry in models_raw.get("registry", [])]

    solvers: list[SolverConfig] = []
    for solver_raw in raw.get("solvers", []):
        solvers.append(
            SolverConfig(
                solver_id=solver_raw["solver_id"],
                kind=solver_raw["kind"],
                backbone=solver_raw["backbone"],
                thinking=bool(solver_raw.get("thinking", False)),
                max_steps=int(solver_raw.get("max_steps", DEFAULT_MAX_STEPS)),
                max_results=int(solver_raw.get("max_results", DEFAULT_MAX_RESULTS)),
                cutoff_date=(
                    _parse_date(solver_raw["cutoff_date"], solver_raw["solver_id"])
                    if solver_raw.get("cutoff_date")
                    else cutoff
                ),
            )
        )

    release_dates = {
        model_id: _parse_date(value, f"release_dates.{model_id}")
        for model_id, value in (raw.get("release_dates") or {}).items()
    }
    for spec in model_specs:
        if spec.release_date is not None:
            release_dates.setdefault(spec.model_id, spec.release_date)

    thresholds_raw = raw.get("thresholds") or {}
    thresholds = GateThresholds(
        relevance=int(thresholds_raw.get("relevance", 4)),
        clarity=int(thresholds_raw.get("clarity", 5)),
        centrality=int(thresholds_raw.get("centrality", 5)),
    )

    alt_raw = raw.get("alt_test") or {}
    alt_config = AltTestConfig(
        human_scores_path=(
            _resolve_path(base, alt_raw["human_scores"]) if alt_raw.get("human_scores") else None
        ),
        epsilon=float(alt_raw.get("epsilon", 0.0)),
        alpha=float(alt_raw.get("alpha", 0.05)),
        solver_id=alt_raw.get("solver_id"),
        llm_annotator_id=alt_raw.get("llm_annotator_id", "llm-judge"),
    )

    search_raw = raw.get("search") or {}
    config = PipelineConfig(
        snapshot_id=snapshot_id,
        window=window,
        cutoff_date=cutoff,
        taxonomy=taxonomy,
        sources=sources,
        model_specs=model_specs,
        extractor_model=models_raw.get("extractor", ""),
        filter_judge_model=models_raw.get("filter_judge", ""),
        eval_judge_model=models_raw.get("eval_judge", ""),
        solvers=solvers,
        release_dates=release_dates,
        thresholds=thresholds,
        allow_noncanonical_thresholds=bool(raw.get("allow_noncanonical_thresholds", False)),
        alt_test=alt_config,
        filter_batch_size=int(raw.get("filter_batch_size", 20)),
        extraction_retries=int(raw.get("extraction_retries", 2)),
        filter_retries=int(raw.get("filter_retries", 1)),
        transport_retries=int(raw.get("transport_retries", 3)),
        permits=int(raw.get("permits", 4)),
        cache_enabled=bool(raw.get("cache_enabled", True)),
        search_corpus_path=(
            _resolve_path(base, search_raw["corpus"]) if search_raw.get("corpus") else None
        ),
        search_max_results=int(search_raw.get("max_results", DEFAULT_MAX_RESULTS)),
        include_question_in_eval=bool(raw.get("include_question_in_eval", False)),
        decoding={k: dict(v) for k, v in (raw.get("decoding") or {}).items()},
        workspace=_resolve_path(base, raw["workspace"]) if raw.get("workspace") else None,
    )
    config.validate()
    return config
