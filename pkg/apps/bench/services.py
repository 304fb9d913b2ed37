import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from apps.bench.generators import generate
from apps.bench.models import SeedOutcome
from apps.bench.schemas import ExperimentConfig, MetricSummary, ModelSpec, RunSummary, Task
from apps.convex_nets.schemas import Arch, WeightStyle
from apps.convex_nets.services import build_net, check_convexity, init_diagnostics, save_net
from apps.ot_learn.services import (
    checkpoint_select,
    icnn_baseline_train,
    pushforward,
    saddle_train,
    write_map,
)
from apps.ot_learn.sinkhorn import EntropicMapEstimator, sinkhorn_divergence
from apps.theory_lab.services import build_construction, embedding_checks, random_piece_counts
from apps.training.services import mse, train_regression, write_rows
from core.config import settings
from core.exceptions import ConfigurationError, DivergenceError
from core.tensor import Rng

logger = logging.getLogger(__name__)

KEY_COLUMNS = ("method", "width", "depth", "d", "generator")


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Experiment config from a JSON file; non-None overrides replace file values"""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read experiment config {path}: {e}")
    raw.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid experiment config {path}: {e}")


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode()).hexdigest()[:12]


def metric_summary(values: Iterable[Optional[float]]) -> MetricSummary:
    """Mean and standard error over the finite values"""
    finite = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=np.float64)
    if finite.size == 0:
        return MetricSummary(n=0)
    se = float(finite.std(ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else 0.0
    return MetricSummary(mean=float(finite.mean()), se=se, n=int(finite.size))


def _model_net(spec: ModelSpec, d: int, rng: Rng):
    return build_net(spec.arch, d, spec.widths, spec.gate, rng, spec.weight_style)


class ExperimentRunner:
    """Runs one ExperimentConfig over its seeds and writes the run directory.

    Layout: data.csv (one row per seed), trace.csv (per-epoch rows with a
    seed column), summary.json and checkpoints/.
    """

    def __init__(self, config: ExperimentConfig, root: Optional[Union[str, Path]] = None):
        self.config = config
        base = root or config.output or settings.HYCNN_OUTPUT_ROOT
        self.run_dir = Path(base) / config.name
        self.checkpoint_dir = self.run_dir / "checkpoints"
        self.hash = config_hash(config)

    def run(self) -> RunSummary:
        cfg = self.config
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Run {cfg.name}: task={cfg.task.value} method={cfg.label} seeds={cfg.seeds} -> {self.run_dir}")
        if cfg.task == Task.INIT_DIAGNOSTICS:
            return self._init_diagnostics()

        outcomes = [self._run_seed(seed) for seed in cfg.seeds]
        write_rows(
            self.run_dir / "data.csv",
            [{"seed": o.seed, **o.metrics, "diverged": o.diverged, "passed": o.passed} for o in outcomes],
        )
        write_rows(self.run_dir / "trace.csv", [{"seed": o.seed, **row} for o in outcomes for row in o.trace])

        names = list(dict.fromkeys(name for o in outcomes for name in o.metrics))
        verdicts = [o.passed for o in outcomes if o.passed is not None]
        summary = self._summary(
            metrics={name: metric_summary(o.metrics.get(name) for o in outcomes) for name in names},
            diverged_seeds=[o.seed for o in outcomes if o.diverged],
            passed=all(verdicts) if verdicts else None,
        )
        return self._write_summary(summary)

    def _summary(self, metrics: Dict[str, MetricSummary], diverged_seeds: List[int], passed: Optional[bool]) -> RunSummary:
        cfg = self.config
        return RunSummary(
            name=cfg.name,
            task=cfg.task,
            method=cfg.label,
            generator=cfg.generator,
            d=cfg.d,
            width=cfg.model.width,
            depth=cfg.model.depth,
            seeds=list(cfg.seeds),
            metrics=metrics,
            diverged=bool(diverged_seeds),
            diverged_seeds=diverged_seeds,
            passed=passed,
        )

    def _write_summary(self, summary: RunSummary) -> RunSummary:
        (self.run_dir / "summary.json").write_text(summary.model_dump_json(indent=2))
        if summary.diverged:
            logger.warning(f"Run {summary.name}: seeds {summary.diverged_seeds} diverged")
        logger.info(f"Run {summary.name} done")
        return summary

    def _run_seed(self, seed: int) -> SeedOutcome:
        handlers = {
            Task.REGRESSION: self._regression,
            Task.OT: self._ot,
            Task.CONSTRUCT: self._construct,
            Task.PIECES: self._pieces,
            Task.EMBED: self._embed,
        }
        rng = Rng(seed).child(self.config.task.value)
        try:
            outcome = handlers[self.config.task](seed, rng)
        except DivergenceError as e:
            logger.warning(f"Seed {seed} diverged: {e.detail}")
            trace = [row if isinstance(row, dict) else row.model_dump(mode="json") for row in e.trace]
            return SeedOutcome(seed=seed, trace=trace, diverged=True)
        logger.info(f"Seed {seed} done: {outcome.metrics}")
        return outcome

    def _save(self, net, name: str, seed: int, epoch: int) -> None:
        save_net(net, self.checkpoint_dir / f"{name}_seed{seed}.json", metadata={"config_hash": self.hash, "epoch": epoch})

    # ------------------------------------------------------------ tasks

    def _regression(self, seed: int, rng: Rng) -> SeedOutcome:
        cfg = self.config
        spec = cfg.generator_spec(seed)
        train = generate(spec, cfg.n, rng.child("train"))
        test = generate(spec.model_copy(update={"sigma": 0.0}), cfg.n_test, rng.child("test"))
        net = _model_net(cfg.model, cfg.d, rng.child("init"))
        result = train_regression(net, train.X, train.y, cfg.train.model_copy(update={"seed": seed}), rng.child("batches"))

        outcome = SeedOutcome(
            seed=seed,
            metrics={"test_mse": mse(result.predictor, test.X, test.clean), "train_mse": result.trace[-1].train_mse},
            trace=[row.model_dump(mode="json") for row in result.trace],
        )
        if net.nonneg:
            report = check_convexity(net, rng.child("convexity"))
            outcome.metrics["convexity_violation"] = report.max_violation
            outcome.passed = report.passed
        self._save(net, "net", seed, cfg.train.epochs)
        return outcome

    def _ot(self, seed: int, rng: Rng) -> SeedOutcome:
        cfg = self.config
        spec = cfg.generator_spec(seed)
        data = generate(spec, cfg.n, rng.child("train"), cfg.m)
        val = generate(spec, cfg.n_val, rng.child("validation"))
        test = generate(spec, cfg.n_test, rng.child("test"))
        eps = cfg.ot.val_eps
        outcome = SeedOutcome(seed=seed)

        if cfg.estimator == "entropic":
            mapped = EntropicMapEstimator(cfg.entropic_eps).fit(data.source, data.target).predict(test.source.X)
        else:
            ot_cfg = cfg.ot.model_copy(update={"seed": seed})
            baseline = cfg.model.arch in (Arch.ICNN, Arch.ICNNQ)
            critic = cfg.critic or (
                cfg.model.model_copy(update={"weight_style": WeightStyle.GAUSSIAN}) if baseline else cfg.model
            )
            f = _model_net(cfg.model, cfg.d, rng.child("potential"))
            g = _model_net(critic, cfg.d, rng.child("critic"))
            trainer = icnn_baseline_train if baseline else saddle_train
            validation = (val.source, val.target) if (ot_cfg.eval_every or cfg.select_k) else None
            result = trainer(f, g, data.source, data.target, ot_cfg, validation=validation, rng=rng.child("batches"))
            outcome.trace = [row.model_dump(mode="json") for row in result.trace]
            mapped = pushforward(f, test.source.X)
            if cfg.select_k:
                report = checkpoint_select(result.checkpoints, val.source, val.target, cfg.select_k, eps, test.source, test.target)
                outcome.metrics["selected_test_sinkhorn"] = report.test_metric
            self._save(f, "potential", seed, ot_cfg.outer_T)
            self._save(g, "critic", seed, ot_cfg.outer_T)
            if cfg.d == 2:
                write_map(self.checkpoint_dir / f"reverse_map_seed{seed}.csv", test.target.X, pushforward(g, test.target.X))

        write_map(self.checkpoint_dir / f"map_seed{seed}.csv", test.source.X, mapped)
        outcome.metrics["test_sinkhorn"] = sinkhorn_divergence(mapped, test.target, eps)
        if data.transport_map is not None:
            diff = mapped - data.transport_map(test.source.X)
            outcome.metrics["test_mse"] = float(np.mean(np.sum(diff**2, axis=1)))
        return outcome

    def _construct(self, seed: int, rng: Rng) -> SeedOutcome:
        spec = self.config.construct
        net, cert = build_construction(**spec.model_dump(), rng=rng)
        self._save(net, "construction", seed, 0)
        (self.checkpoint_dir / f"certificate_seed{seed}.json").write_text(cert.model_dump_json(by_alias=True, indent=2))
        return SeedOutcome(
            seed=seed,
            metrics={"measured": cert.measured, "claimed_bound": cert.claimed_bound},
            passed=cert.passed,
        )

    def _pieces(self, seed: int, rng: Rng) -> SeedOutcome:
        model = self.config.model
        gate = model.gate if model.gate.single_lane else None
        (report,) = random_piece_counts(model.widths, [seed], gate)
        return SeedOutcome(
            seed=seed,
            metrics={"kinks": float(report.kinks), "kink_bound": float(report.kink_bound), "sup_error": report.sup_error},
            passed=report.passed,
        )

    def _embed(self, seed: int, rng: Rng) -> SeedOutcome:
        report = embedding_checks(Rng(seed), samples=self.config.n)
        metrics = {
            "icnn_single_gate_max_delta": report.icnn_single_gate_max_delta,
            "icnn_relu_max_delta": report.icnn_relu_max_delta,
            "icnn_leaky_max_delta": report.icnn_leaky_max_delta,
            "hycnn_to_relu_max_delta": report.hycnn_to_relu_max_delta,
        }
        return SeedOutcome(seed=seed, metrics=metrics, passed=report.passed)

    def _init_diagnostics(self) -> RunSummary:
        cfg = self.config
        rows = init_diagnostics(cfg.model.depth, cfg.model.width, cfg.d, cfg.seeds)
        write_rows(self.run_dir / "data.csv", rows)
        first_norm = rows[0].hidden_norm
        ratios = [row.hidden_norm / first_norm for row in rows]
        passed = all(0.7 <= r.second_moment <= 1.3 and 0.3 <= r.cross_moment <= 0.7 for r in rows)
        summary = self._summary(
            metrics={
                "second_moment": metric_summary(r.second_moment for r in rows),
                "cross_moment": metric_summary(r.cross_moment for r in rows),
                "hidden_norm_ratio": metric_summary(ratios),
            },
            diverged_seeds=[],
            passed=passed,
        )
        return self._write_summary(summary)


def run_experiment(config: ExperimentConfig, root: Optional[Union[str, Path]] = None) -> RunSummary:
    return ExperimentRunner(config, root).run()


def read_summary(run_dir: Union[str, Path]) -> RunSummary:
    path = Path(run_dir) / "summary.json"
    try:
        return RunSummary.model_validate_json(path.read_text())
    except OSError as e:
        raise ConfigurationError(f"No summary in {run_dir}: {e}")
    except ValidationError as e:
        raise ConfigurationError(f"Summary in {run_dir} does not match the schema: {e}")


RANKING_METRICS = ("test_mse", "test_sinkhorn")


def _ranking(row: Dict[str, Any]) -> tuple:
    """Within one task, generator and dimension: lowest test MSE first, runs without it last"""
    for name in RANKING_METRICS:
        value = row.get(f"{name}_mean")
        if value is not None:
            return (0, value)
    return (1, 0.0)


def summarize(run_dirs: Sequence[Union[str, Path]], output: Optional[Union[str, Path]] = None) -> List[Dict[str, Any]]:
    """One row per run keyed by (method, width, depth, d, generator) with metric mean and SE columns.

    Rows are grouped by task, generator and d, best test MSE first.
    """
    rows: Dict[tuple, Dict[str, Any]] = {}
    for run_dir in run_dirs:
        summary = read_summary(run_dir)
        key = (summary.method, summary.width, summary.depth, summary.d, summary.generator or "")
        if key in rows:
            raise ConfigurationError(f"Two runs share the key {dict(zip(KEY_COLUMNS, key))}")
        row: Dict[str, Any] = dict(zip(KEY_COLUMNS, key))
        row.update(task=summary.task.value, seeds=len(summary.seeds), diverged=summary.diverged)
        for name, metric in sorted(summary.metrics.items()):
            row[f"{name}_mean"] = metric.mean
            row[f"{name}_se"] = metric.se
        rows[key] = row
    table = sorted(
        (rows[key] for key in sorted(rows)),
        key=lambda row: (row["task"], row["generator"], row["d"], *_ranking(row)),
    )
    if output is not None:
        write_rows(output, table)
    logger.info(f"Summarized {len(table)} runs")
    return table


def exit_status(summary: RunSummary) -> int:
    """0 on success, the divergence code when a seed diverged, 1 when a check failed"""
    if summary.diverged:
        return DivergenceError.exit_code
    if summary.passed is False:
        return 1
    return 0
