"""Stage orchestration: resumable commands over one monthly snapshot.

Each stage writes its artifacts under the workspace, then records in the
snapshot manifest both its own artifact digest and the digests of the inputs
it consumed. A downstream command refuses to run (StaleUpstream) when its
upstream stage ran against inputs that have since changed, and re-running a
completed stage whose inputs match is a no-op unless forced.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

from filelock import FileLock, Timeout

from . import __version__
from .alt_test import render_alignment_report, validate_judge
from .config import PipelineConfig
from .corpus import (
    IngestLog,
    dedupe,
    enforce_temporal_separation,
    fetch_abstracts,
    read_corpus_snapshot,
    write_corpus_snapshot,
)
from .errors import ConfigError, MissingStage, SnapshotLocked, StaleUpstream
from .evaluation import (
    aggregate,
    aggregate_csv,
    eval_records_path,
    evaluate_run,
    read_eval_records,
    render_matrix_markdown,
    score_matrix,
    write_eval_records,
)
from .extraction import QAPair, extract_snapshot
from .filtering import filter_snapshot
from .ioutil import atomic_write_text, canonical_dumps, digest_files, read_jsonl, write_jsonl
from .prompts import prompt_version_hashes
from .search import LocalSearchIndex
from .solvers import load_candidates, solve_benchmark, solver_prompt_hashes

logger = logging.getLogger(__name__)

STAGE_ORDER = ("acquire", "extract", "filter", "alttest", "solve", "judge", "report")

# Direct upstream stages each command validates before running.
STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "acquire": (),
    "extract": ("acquire",),
    "filter": ("extract", "acquire"),
    "alttest": ("filter",),
    "solve": ("filter",),
    "judge": ("solve", "filter"),
    "report": ("judge",),
}


def stage_dirs(workspace: Path, snapshot_id: str) -> dict[str, list[Path]]:
    w = Path(workspace)
    return {
        "acquire": [w / "corpus" / snapshot_id],
        "extract": [w / "qa" / snapshot_id / "raw.jsonl", w / "qa" / snapshot_id / "extract_failures.jsonl"],
        "filter": [w / "qa" / snapshot_id / "verdicts.jsonl", w / "bench" / snapshot_id],
        "alttest": [w / "alt" / snapshot_id],
        "solve": [w / "runs" / snapshot_id],
        "judge": [w / "eval" / snapshot_id],
        "report": [w / "report" / snapshot_id],
    }


# Manifest digest keys named after the artifact each stage owns.
STAGE_DIGEST_NAMES = {
    "acquire": "corpus",
    "extract": "raw_qa",
    "filter": "benchmark",
    "alttest": "alt_test",
    "solve": "runs",
    "judge": "eval",
    "report": "report",
}


def _artifact_files(paths: Sequence[Path]) -> list[Path]:
    files: list[Path] = []
    for path in paths:
        if path.is_file():
            files.append(path)
        elif path.is_dir():
            files.extend(p for p in sorted(path.rglob("*")) if p.is_file())
    return files


def stage_digest(workspace: Path, snapshot_id: str, stage: str) -> str | None:
    """Content digest over the stage's artifact files; None when nothing exists."""
    files = _artifact_files(stage_dirs(workspace, snapshot_id)[stage])
    if not files:
        return None
    return digest_files(Path(workspace), files)


def manifest_path(workspace: Path, snapshot_id: str) -> Path:
    return Path(workspace) / "manifests" / f"{snapshot_id}.json"


def load_manifest(workspace: Path, snapshot_id: str) -> dict:
    path = manifest_path(workspace, snapshot_id)
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"snapshot_id": snapshot_id, "stages": {}}


def save_manifest(workspace: Path, snapshot_id: str, manifest: dict) -> None:
    atomic_write_text(manifest_path(workspace, snapshot_id), canonical_dumps(manifest) + "\n")


@dataclass
class StageResult:
    stage: str
    ran: bool
    digest: str | None
    message: str = ""


class SnapshotPipeline:
    """Runs stage commands for one (config, workspace) snapshot."""

    def __init__(self, config: PipelineConfig, workspace: Path, *, lock_timeout_s: float = 60.0):
        self.config = config
        self.workspace = Path(workspace)
        self.snapshot_id = config.snapshot_id
        self.lock_timeout_s = lock_timeout_s
        self._gateway = None
        self.emit_plot_data = False

    # -- shared plumbing ------------------------------------------------

    @property
    def gateway(self):
        if self._gateway is None:
            self._gateway = self.config.build_gateway(self.workspace)
        return self._gateway

    def _lock(self) -> FileLock:
        lock_file = self.workspace / "manifests" / f"{self.snapshot_id}.lock"
        lock_file.parent.mkdir(parents=True, exist_ok=True)
        return FileLock(str(lock_file), timeout=self.lock_timeout_s)

    def _current_input_digests(self, stage: str) -> dict[str, str]:
        digests: dict[str, str] = {}
        for upstream in STAGE_DEPS[stage]:
            digest = stage_digest(self.workspace, self.snapshot_id, upstream)
            if digest is not None:
                digests[STAGE_DIGEST_NAMES[upstream]] = digest
        return digests

    def _validate_upstream(self, stage: str, manifest: dict) -> None:
        for upstream in STAGE_DEPS[stage]:
            entry = manifest["stages"].get(upstream)
            if entry is None:
                raise MissingStage(f"stage {upstream!r} has not run for {self.snapshot_id}")
            if stage_digest(self.workspace, self.snapshot_id, upstream) is None:
                raise MissingStage(f"stage {upstream!r} left no artifacts on disk")
            for input_name, recorded in entry.get("inputs", {}).items():
                current = self._digest_by_name(input_name)
                if current != recorded:
                    raise StaleUpstream(
                        f"stage {upstream!r} ran against an outdated {input_name!r}; "
                        f"re-run it first"
                    )

    def _digest_by_name(self, digest_name: str) -> str | None:
        for stage, name in STAGE_DIGEST_NAMES.items():
            if name == digest_name:
                return stage_digest(self.workspace, self.snapshot_id, stage)
        return None

    def _record_stage(self, stage: str, manifest: dict, inputs: Mapping[str, str]) -> str | None:
        digest = stage_digest(self.workspace, self.snapshot_id, stage)
        manifest["stages"][stage] = {
            "digest": digest,
            "inputs": dict(inputs),
            "completed_at": datetime.now(timezone.utc).isoformat(),
        }
        manifest["snapshot_id"] = self.snapshot_id
        manifest["package_version"] = __version__
        manifest["prompt_hashes"] = {**prompt_version_hashes(), **solver_prompt_hashes()}
        manifest["config"] = self.config.to_manifest_dict(self.workspace)
        manifest["canonical_gate"] = self.config.thresholds.canonical
        if not self.config.thresholds.canonical:
            manifest["watermark"] = "NON-CANONICAL GATE THRESHOLDS"
        save_manifest(self.workspace, self.snapshot_id, manifest)
        return digest

    def _clear_stage(self, stage: str) -> None:
        for path in stage_dirs(self.workspace, self.snapshot_id)[stage]:
            if path.is_dir():
                shutil.rmtree(path)
            elif path.is_file():
                path.unlink()

    def run_stage(self, stage: str, *, force: bool = False) -> StageResult:
        if stage not in STAGE_ORDER:
            raise ConfigError(f"unknown stage {stage!r}")
        lock = self._lock()
        try:
            lock.acquire()
        except Timeout as exc:
            raise SnapshotLocked(
                f"another process is writing snapshot {self.snapshot_id}"
            ) from exc
        try:
            manifest = load_manifest(self.workspace, self.snapshot_id)
            self._validate_upstream(stage, manifest)
            inputs = self._current_input_digests(stage)
            entry = manifest["stages"].get(stage)
            if (
                not force
                and entry is not None
                and entry.get("inputs") == inputs
                and entry.get("digest") == stage_digest(self.workspace, self.snapshot_id, stage)
                and entry.get("digest") is not None
            ):
                return StageResult(stage, ran=False, digest=entry["digest"], message="up to date")
            # Leftovers from a forced rerun or a run killed mid-stage (artifacts
            # present, manifest entry absent or stale) are cleared; a stage is
            # complete only once its manifest entry is recorded.
            self._clear_stage(stage)
            runner: Callable[[], str] = getattr(self, f"_run_{stage}")
            message = runner()
            digest = self._record_stage(stage, manifest, inputs)
            return StageResult(stage, ran=True, digest=digest, message=message)
        finally:
            lock.release()

    def run_all(self, *, force: bool = False) -> list[StageResult]:
        results = []
        for stage in STAGE_ORDER:
            if stage == "alttest" and self.config.alt_test.human_scores_path is None:
                continue
            results.append(self.run_stage(stage, force=force))
        return results

    # -- stage bodies ----------------------------------------------------

    def _run_acquire(self) -> str:
        log = IngestLog()
        records = []
        for source in self.config.sources:
            records.extend(fetch_abstracts(source, self.config.window, log=log))
        records = dedupe(records)
        write_corpus_snapshot(
            records,
            self.snapshot_id,
            self.workspace,
            window=self.config.window,
            source_ids=[source.source_id for source in self.config.sources],
            skips=log.skipped,
        )
        if self.config.release_dates:
            report = enforce_temporal_separation(
                records,
                self.config.release_dates,
                eligibility_dates=log.eligibility_dates,
            )
            atomic_write_text(
                self.workspace / "corpus" / self.snapshot_id / "eligibility.json",
                canonical_dumps(report.to_dict()) + "\n",
            )
        return f"{len(records)} records, {len(log.skipped)} skipped"

    def _read_corpus(self):
        return read_corpus_snapshot(self.workspace, self.snapshot_id)[0]

    def _read_pairs(self, path: Path) -> list[QAPair]:
        return [QAPair.from_dict(row) for row in read_jsonl(path)]

    def _run_extract(self) -> str:
        records = self._read_corpus()
        pairs, failures = extract_snapshot(
            records,
            self.config.extractor_model,
            self.gateway,
            snapshot_id=self.snapshot_id,
            max_corrective_retries=self.config.extraction_retries,
            decoding=self.config.decoding_for("extractor"),
            max_workers=self.config.permits,
        )
        qa_dir = self.workspace / "qa" / self.snapshot_id
        write_jsonl(qa_dir / "raw.jsonl", [pair.to_dict() for pair in pairs])
        write_jsonl(qa_dir / "extract_failures.jsonl", [f.to_dict() for f in failures])
        return f"{len(pairs)} pairs, {len(failures)} failures"

    def _run_filter(self) -> str:
        pairs = self._read_pairs(self.workspace / "qa" / self.snapshot_id / "raw.jsonl")
        abstracts = {r.abstract_id: r.abstract_text for r in self._read_corpus()}
        outcome = filter_snapshot(
            pairs,
            abstracts,
            self.config.filter_judge_model,
            self.gateway,
            batch_size=self.config.filter_batch_size,
            retry_limit=self.config.filter_retries,
            thresholds=self.config.thresholds,
            decoding=self.config.decoding_for("filter_judge"),
            max_workers=self.config.permits,
        )
        write_jsonl(
            self.workspace / "qa" / self.snapshot_id / "verdicts.jsonl",
            [verdict.to_dict() for verdict in outcome.verdicts],
        )
        bench_dir = self.workspace / "bench" / self.snapshot_id
        write_jsonl(bench_dir / "benchmark.jsonl", [pair.to_dict() for pair in outcome.retained])
        counts: dict[str, int] = {}
        for pair in outcome.retained:
            counts[pair.subdomain] = counts.get(pair.subdomain, 0) + 1
        bench_manifest = {
            "snapshot_id": self.snapshot_id,
            "judge_model": self.config.filter_judge_model,
            "thresholds": self.config.thresholds.to_dict(),
            "canonical_gate": self.config.thresholds.canonical,
            "counts": counts,
            "total": len(outcome.retained),
        }
        if not self.config.thresholds.canonical:
            bench_manifest["watermark"] = "NON-CANONICAL GATE THRESHOLDS"
        atomic_write_text(bench_dir / "manifest.json", canonical_dumps(bench_manifest) + "\n")
        return f"{len(outcome.retained)} retained of {len(outcome.verdicts)}"

    def _llm_filter_scores(self) -> dict[str, dict[str, int]]:
        rows = read_jsonl(self.workspace / "qa" / self.snapshot_id / "verdicts.jsonl")
        scores: dict[str, dict[str, int]] = {"relevance": {}, "clarity": {}, "centrality": {}}
        for row in rows:
            if row.get("scores"):
                for dimension in scores:
                    scores[dimension][row["qa_id"]] = row["scores"][dimension]
        return scores

    def _run_alttest(self) -> str:
        alt = self.config.alt_test
        if alt.human_scores_path is None:
            raise ConfigError("alt-test needs alt_test.human_scores in the config")
        from .alt_test import load_human_scores

        human_table = load_human_scores(alt.human_scores_path)
        llm_scores = self._llm_filter_scores()
        if "evaluation" in human_table:
            if alt.solver_id is None:
                raise ConfigError(
                    "human scores include the evaluation dimension; set alt_test.solver_id"
                )
            eval_path = eval_records_path(self.workspace, self.snapshot_id, alt.solver_id)
            if not eval_path.exists():
                raise MissingStage(
                    f"evaluation dimension requires eval records for {alt.solver_id!r}; "
                    "run the judge stage first"
                )
            llm_scores["evaluation"] = {
                record.qa_id: record.verdict.score for record in read_eval_records(eval_path)
            }
        results = {}
        for dimension, human_scores in sorted(human_table.items()):
            sample_ids = sorted(
                {qa_id for per_annotator in human_scores.values() for qa_id in per_annotator}
            )
            results.update(
                validate_judge(
                    sample_ids,
                    alt.human_scores_path,
                    {dimension: llm_scores.get(dimension, {})},
                    dimensions=[dimension],
                    epsilon=alt.epsilon,
                    alpha=alt.alpha,
                    llm_annotator_id=alt.llm_annotator_id,
                )
            )
        alt_dir = self.workspace / "alt" / self.snapshot_id
        atomic_write_text(
            alt_dir / "alt_test.json",
            canonical_dumps({d: r.to_dict() for d, r in results.items()}) + "\n",
        )
        atomic_write_text(alt_dir / "report.md", render_alignment_report(results))
        return f"{len(results)} dimensions"

    def _benchmark_pairs(self) -> list[QAPair]:
        return self._read_pairs(self.workspace / "bench" / self.snapshot_id / "benchmark.jsonl")

    def _search_index(self) -> LocalSearchIndex | None:
        if self.config.search_corpus_path is None:
            return None
        return LocalSearchIndex.from_jsonl(self.config.search_corpus_path)

    def _run_solve(self) -> str:
        pairs = self._benchmark_pairs()
        index = self._search_index()
        total = 0
        for solver in self.config.solvers:
            answers = solve_benchmark(
                pairs,
                solver,
                self.gateway,
                index,
                runs_root=self.workspace,
                snapshot_id=self.snapshot_id,
            )
            total += len(answers)
        return f"{total} runs across {len(self.config.solvers)} solvers"

    def _run_judge(self) -> str:
        pairs = self._benchmark_pairs()
        total = 0
        for solver in self.config.solvers:
            candidates = load_candidates(self.workspace, self.snapshot_id, solver.solver_id)
            records, failures = evaluate_run(
                pairs,
                candidates,
                solver.solver_id,
                self.config.eval_judge_model,
                self.gateway,
                snapshot_id=self.snapshot_id,
                include_question=self.config.include_question_in_eval,
                decoding=self.config.decoding_for("eval_judge"),
                max_workers=self.config.permits,
            )
            write_eval_records(
                eval_records_path(self.workspace, self.snapshot_id, solver.solver_id), records
            )
            if failures:
                write_jsonl(
                    self.workspace / "eval" / self.snapshot_id / f"{solver.solver_id}_failures.jsonl",
                    failures,
                )
            total += len(records)
        return f"{total} verdicts across {len(self.config.solvers)} solvers"

    def run_report(self, *, emit_plot_data: bool = False) -> str:
        records = []
        for solver in self.config.solvers:
            path = eval_records_path(self.workspace, self.snapshot_id, solver.solver_id)
            if path.exists():
                records.extend(read_eval_records(path))
        if not records:
            raise MissingStage("no evaluation records to report on")
        subdomains = {
            pair.qa_id: pair.subdomain for pair in self._benchmark_pairs()
        }
        report_dir = self.workspace / "report" / self.snapshot_id
        by_solver = aggregate(records, ("solver",))
        atomic_write_text(report_dir / "by_solver.csv", aggregate_csv(by_solver, ("solver",)))
        by_cell = aggregate(records, ("solver", "subdomain"), subdomains=subdomains)
        atomic_write_text(
            report_dir / "by_solver_subdomain.csv",
            aggregate_csv(by_cell, ("solver", "subdomain")),
        )
        matrix = score_matrix(records, subdomains)
        atomic_write_text(report_dir / "matrix.md", render_matrix_markdown(matrix))
        if emit_plot_data:
            atomic_write_text(report_dir / "plot_data.json", canonical_dumps(matrix) + "\n")
        return f"{len(records)} records reported"

    def _run_report(self) -> str:
        return self.run_report(emit_plot_data=self.emit_plot_data)
