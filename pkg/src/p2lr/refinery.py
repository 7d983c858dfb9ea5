"""Orchestration of the full progressive pseudo-label refinement loop.

Each step embeds the data with the mean teacher, clusters the embeddings into
pseudo labels, scores every sample with the configured uncertainty criterion,
admits the scheduled fraction of lowest-uncertainty samples, refines the
student model on the admitted set against the frozen centroids, and finally
moves the teacher toward the student by EMA.  Ground-truth metrics (purity,
wrong-label detection, retrieval) are recorded at every step from the
evaluation-only hidden identities.

Runs are deterministic end to end: every random draw flows through an integer
seed derived from the config seed, and all reductions are fixed-order.  The
ablation driver reruns the loop across criteria and seeds, optionally in
parallel worker processes, with results that do not depend on worker count.
"""

import os
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import fileio
from .clusterer import ClusterModel, assign, cluster_purity, kmeans, wrong_label_mask
from .embedder import (
    TeacherState,
    ema_update,
    embed,
    identity_model,
    refine_model,
    refine_model_and_classifier,
    save_checkpoint,
    selection_loss,
    teacher_model,
)
from .errors import ConfigurationError, FileFormatError, P2LRError
from .evalkit import auroc, detection_metrics, retrieval_eval
from .selector import exp_reweight, schedule_fraction, select_lowest, selection_threshold
from .synthgen import corrupt_labels, generate_prototypes, sample_target
from .uncertainty import consistency_scores, kl_ideal_scores, l2_scores

__all__ = [
    "CRITERIA",
    "REPORT_SCHEMA",
    "ABLATION_SCHEMA",
    "RefineryConfig",
    "StepRecord",
    "RefineryReport",
    "AblationTable",
    "config_from_dict",
    "run_refinery",
    "run_ablation",
    "report_from_dict",
]

REPORT_SCHEMA = "p2lr-report-1"
ABLATION_SCHEMA = "p2lr-ablation-1"

CRITERIA = (
    "kl_ideal",
    "l2_centroid",
    "consistency",
    "internal_classifier",
    "reweight",
    "none",
)

# Disjoint seed streams for the independent random draws of one run.
_SEED_TARGET = 1
_SEED_CLUSTER = 1_000
_SEED_CORRUPT = 100_000
_SEED_RETRIEVAL = 200_000


@dataclass(frozen=True)
class RefineryConfig:
    """Complete, serializable description of one refinement run."""

    seed: int = 0
    # synthetic domain
    c_true: int = 20
    d: int = 16
    n_per_id: int = 30
    noise_sigma: float = 0.1
    shift_scale: float = 0.2
    corrupt_fraction: float = 0.0
    min_separation: float = 1.0
    # clustering
    k: int | None = None  # None means c_true
    recluster_every: int = 1
    warm_start: bool = False
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-9
    # scoring and selection
    alpha: float = 20.0
    epsilon: float = 0.99
    start_fraction: float = 0.3
    growth: float = 1.5
    n_steps: int = 100
    criterion: str = "kl_ideal"
    reweight_temperature: float | None = None  # None means per-step mean score
    # refinement
    lr: float = 0.1
    n_grad_steps: int = 25
    momentum: float = 0.9
    # evaluation and output
    query_fraction: float = 0.3
    checkpoint_every: int = 0
    dump_selection: bool = False
    out_dir: str | None = None

    @classmethod
    def desk(cls, **overrides) -> "RefineryConfig":
        """Desk-scale defaults: the full config with a short 30-step horizon."""
        overrides.setdefault("n_steps", 30)
        return cls(**overrides)

    @property
    def effective_k(self) -> int:
        return self.c_true if self.k is None else self.k

    @property
    def n_samples(self) -> int:
        return self.c_true * self.n_per_id

    def validate(self) -> None:
        """Raise ConfigurationError naming the first offending field."""

        def need(cond: bool, field_name: str, why: str):
            if not cond:
                raise ConfigurationError(
                    f"{field_name}: {why} (got {getattr(self, field_name)!r})"
                )

        need(isinstance(self.seed, int) and not isinstance(self.seed, bool), "seed", "must be an integer")
        need(isinstance(self.c_true, int) and self.c_true >= 2, "c_true", "must be an integer >= 2")
        need(isinstance(self.d, int) and self.d >= 2, "d", "must be an integer >= 2")
        need(isinstance(self.n_per_id, int) and self.n_per_id >= 2, "n_per_id", "must be an integer >= 2 so identities can split into query and gallery")
        need(self.noise_sigma >= 0, "noise_sigma", "must be >= 0")
        need(self.shift_scale >= 0, "shift_scale", "must be >= 0")
        need(0 <= self.corrupt_fraction <= 1, "corrupt_fraction", "must be in [0, 1]")
        need(0 <= self.min_separation < 2, "min_separation", "must be in [0, 2)")
        k = self.effective_k
        need(isinstance(k, int) and 2 <= k <= self.n_samples, "k", f"must be an integer in [2, N={self.n_samples}]")
        need(isinstance(self.recluster_every, int) and self.recluster_every >= 1, "recluster_every", "must be an integer >= 1")
        need(isinstance(self.warm_start, bool), "warm_start", "must be a boolean")
        need(isinstance(self.kmeans_max_iters, int) and self.kmeans_max_iters >= 1, "kmeans_max_iters", "must be an integer >= 1")
        need(self.kmeans_tol >= 0, "kmeans_tol", "must be >= 0")
        need(self.alpha > 0, "alpha", "must be > 0")
        need(1.0 / k < self.epsilon <= 1.0, "epsilon", f"must be in (1/k={1.0 / k:.4g}, 1]")
        need(0 < self.start_fraction < 1, "start_fraction", "must be in (0, 1)")
        need(self.growth > 0, "growth", "must be > 0")
        need(isinstance(self.n_steps, int) and self.n_steps >= 0, "n_steps", "must be an integer >= 0")
        need(self.criterion in CRITERIA, "criterion", f"must be one of {CRITERIA}")
        need(
            self.reweight_temperature is None or self.reweight_temperature > 0,
            "reweight_temperature",
            "must be > 0 or null",
        )
        need(self.lr > 0, "lr", "must be > 0")
        need(isinstance(self.n_grad_steps, int) and self.n_grad_steps >= 1, "n_grad_steps", "must be an integer >= 1")
        need(0 <= self.momentum < 1, "momentum", "must be in [0, 1)")
        need(0 < self.query_fraction < 1, "query_fraction", "must be in (0, 1)")
        need(isinstance(self.checkpoint_every, int) and self.checkpoint_every >= 0, "checkpoint_every", "must be an integer >= 0")
        need(isinstance(self.dump_selection, bool), "dump_selection", "must be a boolean")
        need(self.out_dir is None or isinstance(self.out_dir, str), "out_dir", "must be a path or null")


def config_from_dict(data: dict) -> RefineryConfig:
    """Build a config from flat JSON keys; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"config must be an object, got {type(data).__name__}")
    known = {f.name for f in fields(RefineryConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    config = RefineryConfig(**data)
    config.validate()
    return config


@dataclass(frozen=True)
class StepRecord:
    """Metrics of one refinement step, all computed before the EMA update."""

    step: int
    select_fraction: float
    threshold: float | None
    n_selected: int
    mean_score_selected: float
    mean_score_rejected: float | None
    purity: float
    detection_precision: float | None
    detection_recall: float | None
    detection_auroc: float | None
    loss_before: float
    loss_after: float
    map: float
    rank1: float
    rank5: float
    rank10: float


@dataclass(frozen=True)
class RefineryReport:
    config: RefineryConfig
    steps: tuple[StepRecord, ...]
    summary: dict

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "config": asdict(self.config),
            "steps": [asdict(s) for s in self.steps],
            "summary": self.summary,
        }


def report_from_dict(data: dict) -> RefineryReport:
    if not isinstance(data, dict) or data.get("schema") != REPORT_SCHEMA:
        raise FileFormatError(
            f"report schema must be {REPORT_SCHEMA!r}, got {data.get('schema')!r}"
            if isinstance(data, dict)
            else "report must be a JSON object"
        )
    config = config_from_dict(data.get("config", {}))
    step_fields = {f.name for f in fields(StepRecord)}
    steps = []
    for i, raw in enumerate(data.get("steps", [])):
        unknown = sorted(set(raw) - step_fields)
        missing = sorted(step_fields - set(raw))
        if unknown or missing:
            raise FileFormatError(
                f"step record {i}: unknown keys {unknown}, missing keys {missing}"
            )
        steps.append(StepRecord(**raw))
    summary = data.get("summary")
    if not isinstance(summary, dict):
        raise FileFormatError("report summary must be an object")
    return RefineryReport(config=config, steps=tuple(steps), summary=summary)


def _driving_scores(criterion, teacher_feats, student, raw, labels, centroids,
                    cls_weights, alpha, epsilon) -> np.ndarray:
    if criterion in ("kl_ideal", "reweight", "none"):
        return kl_ideal_scores(teacher_feats, labels, centroids, alpha, epsilon)
    if criterion == "l2_centroid":
        return l2_scores(teacher_feats, labels, centroids)
    if criterion == "consistency":
        student_feats = embed(student, raw)
        return consistency_scores(teacher_feats, student_feats, centroids, alpha)
    if criterion == "internal_classifier":
        return kl_ideal_scores(teacher_feats, labels, cls_weights, alpha, epsilon)
    raise ConfigurationError(f"criterion: unknown value {criterion!r}")


def run_refinery(config: RefineryConfig) -> RefineryReport:
    """Execute n_steps + 1 refinement steps and return the full report.

    When config.out_dir is set, report.json and timings.json are written
    there (plus optional selection.csv and model checkpoints).  A failing
    stage aborts with the step index and stage name attached to the error,
    flushing the partial report first.
    """
    config.validate()
    out_dir = config.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    k = config.effective_k
    horizon = config.n_steps
    internal = config.criterion == "internal_classifier"

    records: list[StepRecord] = []
    timings: list[float] = []
    selection_rows: list[tuple] = []
    step_index = -1
    stage = "generate"
    try:
        prototypes = generate_prototypes(
            config.c_true, config.d, config.min_separation, config.seed
        )
        target = sample_target(
            prototypes,
            config.n_per_id,
            config.noise_sigma,
            config.shift_scale,
            config.seed + _SEED_TARGET,
        )
        raw = target.raw_features
        hidden = target.hidden_labels
        n = raw.shape[0]

        student = identity_model(config.d)
        teacher = TeacherState(
            weights=np.eye(config.d), bias=np.zeros(config.d), momentum=config.momentum
        )
        cls_weights = None
        cluster = None

        for t in range(horizon + 1):
            step_index = t
            started = time.perf_counter()

            stage = "embed"
            teacher_feats = embed(teacher_model(teacher), raw)

            stage = "cluster"
            if cluster is None or t % config.recluster_every == 0:
                init = cluster.centroids if (config.warm_start and cluster is not None) else None
                cluster = kmeans(
                    teacher_feats,
                    k,
                    max_iters=config.kmeans_max_iters,
                    tol=config.kmeans_tol,
                    seed=config.seed + _SEED_CLUSTER + t,
                    init_centroids=init,
                )
            else:
                # Off-cycle steps keep centroids frozen and only re-assign.
                assignments = assign(teacher_feats, cluster.centroids)
                diff = teacher_feats - cluster.centroids[assignments]
                cluster = ClusterModel(
                    centroids=cluster.centroids,
                    assignments=assignments,
                    inertia=float(np.einsum("nd,nd->", diff, diff)),
                    c=k,
                    inertia_history=cluster.inertia_history,
                )

            stage = "corrupt"
            labels = cluster.assignments
            if config.corrupt_fraction > 0:
                labels, corrupt_mask = corrupt_labels(
                    labels, config.corrupt_fraction, k, config.seed + _SEED_CORRUPT + t
                )
            else:
                corrupt_mask = np.zeros(n, dtype=bool)

            stage = "score"
            if internal and cls_weights is None:
                cls_weights = cluster.centroids.copy()
            scores = _driving_scores(
                config.criterion, teacher_feats, student, raw, labels,
                cluster.centroids, cls_weights, config.alpha, config.epsilon,
            )

            stage = "select"
            fraction = schedule_fraction(t, horizon, config.start_fraction, config.growth)
            if config.criterion == "none":
                threshold = None
                indicators = np.ones(n, dtype=np.int64)
            elif config.criterion == "reweight":
                threshold = None
                temperature = config.reweight_temperature
                if temperature is None:
                    mean_score = float(scores.mean())
                    temperature = mean_score if mean_score > 0 else 1.0
                indicators = exp_reweight(scores, temperature)
            else:
                threshold, count = selection_threshold(scores, fraction)
                indicators = select_lowest(scores, threshold, count)
            selected_mask = indicators > 0
            n_selected = int(selected_mask.sum())
            mean_selected = float(scores[selected_mask].mean())
            n_rejected = n - n_selected
            mean_rejected = float(scores[~selected_mask].mean()) if n_rejected else None

            stage = "evaluate"
            purity = cluster_purity(labels, hidden)
            wrong = corrupt_mask if config.corrupt_fraction > 0 else wrong_label_mask(labels, hidden)
            if n_rejected >= 1:
                detection = detection_metrics(scores, wrong, n_rejected / n)
                det_precision = detection.precision
                det_recall = detection.recall
                det_auroc = detection.auroc
            else:
                det_precision = None
                det_recall = None
                det_auroc = auroc(scores, wrong)
            retrieval = retrieval_eval(
                teacher_feats, hidden, config.query_fraction,
                config.seed + _SEED_RETRIEVAL + t,
            )

            stage = "refine"
            loss_targets = cls_weights if internal else cluster.centroids
            loss_before = selection_loss(
                student, raw, loss_targets, labels, indicators, config.alpha, config.epsilon
            )
            if internal:
                student, cls_weights = refine_model_and_classifier(
                    student, cls_weights, raw, labels, indicators,
                    config.alpha, config.epsilon, config.lr, config.n_grad_steps,
                )
                loss_targets = cls_weights
            else:
                student = refine_model(
                    student, raw, cluster.centroids, labels, indicators,
                    config.alpha, config.epsilon, config.lr, config.n_grad_steps,
                )
            loss_after = selection_loss(
                student, raw, loss_targets, labels, indicators, config.alpha, config.epsilon
            )

            stage = "teacher"
            teacher = ema_update(teacher, student)

            stage = "record"
            records.append(
                StepRecord(
                    step=t,
                    select_fraction=fraction,
                    threshold=threshold,
                    n_selected=n_selected,
                    mean_score_selected=mean_selected,
                    mean_score_rejected=mean_rejected,
                    purity=purity,
                    detection_precision=det_precision,
                    detection_recall=det_recall,
                    detection_auroc=det_auroc,
                    loss_before=loss_before,
                    loss_after=loss_after,
                    map=retrieval.map,
                    rank1=retrieval.cmc[1],
                    rank5=retrieval.cmc[5],
                    rank10=retrieval.cmc[10],
                )
            )
            if config.dump_selection:
                selection_rows.extend(
                    (t, i, scores[i], indicators[i], threshold, fraction)
                    for i in range(n)
                )
            if out_dir and config.checkpoint_every and t % config.checkpoint_every == 0:
                save_checkpoint(
                    os.path.join(out_dir, f"checkpoint_{t:04d}.json"), student, teacher
                )
            timings.append(time.perf_counter() - started)
    except P2LRError as exc:
        where = f"step {step_index}, stage {stage}" if step_index >= 0 else f"stage {stage}"
        exc.args = (f"{where}: {exc}",)
        if out_dir:
            partial = RefineryReport(
                config=config,
                steps=tuple(records),
                summary={"aborted": {"step": step_index, "stage": stage, "error": str(exc)}},
            )
            fileio.write_json(os.path.join(out_dir, "report.json"), partial.to_dict())
        raise

    last = records[-1]
    summary = {
        "n_steps": horizon,
        "n_samples": n,
        "final_purity": last.purity,
        "final_map": last.map,
        "final_rank1": last.rank1,
        "final_detection_auroc": last.detection_auroc,
        "initial_mean_score_selected": records[0].mean_score_selected,
        "final_mean_score_selected": last.mean_score_selected,
    }
    report = RefineryReport(config=config, steps=tuple(records), summary=summary)
    if out_dir:
        fileio.write_json(os.path.join(out_dir, "report.json"), report.to_dict())
        # Wall-clock timings are the one non-reproducible quantity, so they
        # live in a sidecar and never touch the canonical report.
        fileio.write_json(
            os.path.join(out_dir, "timings.json"),
            {"per_step_seconds": timings, "total_seconds": sum(timings)},
        )
        if config.dump_selection:
            fileio.write_selection_csv(
                os.path.join(out_dir, "selection.csv"), selection_rows
            )
    return report


@dataclass(frozen=True)
class AblationTable:
    """Per-criterion aggregate of final-step metrics across seeds."""

    criteria: tuple[str, ...]
    seeds: tuple[int, ...]
    rows: tuple[dict, ...]
    cells: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "schema": ABLATION_SCHEMA,
            "criteria": list(self.criteria),
            "seeds": list(self.seeds),
            "rows": [dict(r) for r in self.rows],
            "cells": [dict(c) for c in self.cells],
        }

    def row(self, criterion: str) -> dict:
        for r in self.rows:
            if r["criterion"] == criterion:
                return r
        raise KeyError(criterion)


def _ablation_cell(config: RefineryConfig) -> dict:
    cell = {"criterion": config.criterion, "seed": config.seed}
    try:
        report = run_refinery(config)
    except P2LRError as exc:
        cell["error"] = str(exc)
        return cell
    cell["summary"] = report.summary
    return cell


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def ablation_workers() -> int:
    """Worker-process cap for ablation sweeps, from the P2LR_THREADS env var."""
    raw = os.environ.get("P2LR_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigurationError(f"P2LR_THREADS must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigurationError(f"P2LR_THREADS must be >= 1, got {workers}")
    return workers


def run_ablation(
    base_config: RefineryConfig,
    criteria,
    seeds,
    max_workers: int | None = None,
) -> AblationTable:
    """Run the refinery per (criterion, seed) and aggregate final metrics.

    Failed cells are recorded with their error and skipped in the statistics;
    the sweep itself always completes.  Results are identical for any worker
    count because cells are independent seeded runs assembled in a fixed
    order.
    """
    criteria = tuple(criteria)
    seeds = tuple(int(s) for s in seeds)
    if not criteria:
        raise ConfigurationError("criteria: need at least one")
    if not seeds:
        raise ConfigurationError("seeds: need at least one")
    bad = [c for c in criteria if c not in CRITERIA]
    if bad:
        raise ConfigurationError(f"criteria: unknown values {bad}; valid: {CRITERIA}")
    if max_workers is None:
        max_workers = ablation_workers()

    cell_configs = [
        replace(
            base_config,
            criterion=criterion,
            seed=seed,
            out_dir=None,
            dump_selection=False,
            checkpoint_every=0,
        )
        for criterion in criteria
        for seed in seeds
    ]
    for cfg in cell_configs:
        cfg.validate()

    if max_workers == 1:
        results = [_ablation_cell(cfg) for cfg in cell_configs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_ablation_cell, cell_configs, chunksize=1))

    rows = []
    for criterion in criteria:
        cells = [r for r in results if r["criterion"] == criterion]
        ok = [c["summary"] for c in cells if "summary" in c]
        purity_mean, purity_std = _mean_std([s["final_purity"] for s in ok])
        map_mean, map_std = _mean_std([s["final_map"] for s in ok])
        rank1_mean, rank1_std = _mean_std([s["final_rank1"] for s in ok])
        auroc_mean, auroc_std = _mean_std(
            [s["final_detection_auroc"] for s in ok if s["final_detection_auroc"] is not None]
        )
        rows.append(
            {
                "criterion": criterion,
                "n_seeds": len(ok),
                "failures": [
                    {"seed": c["seed"], "error": c["error"]} for c in cells if "error" in c
                ],
                "purity_mean": purity_mean,
                "purity_std": purity_std,
                "map_mean": map_mean,
                "map_std": map_std,
                "rank1_mean": rank1_mean,
                "rank1_std": rank1_std,
                "auroc_mean": auroc_mean,
                "auroc_std": auroc_std,
            }
        )
    return AblationTable(
        criteria=criteria, seeds=seeds, rows=tuple(rows), cells=tuple(results)
    )
