"""
The four-phase adversarial fine-tuning interval.

Each interval: (1) train the adapter on the current dataset spec, (2) evaluate
per-pose errors on the fixed grid, (3) fit the loss landscape and pick poses
with the configured sampler, (4) draw the next dataset spec from those poses.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text
from .adapters import ModelAdapter
from .datagen import DatasetSpec, DiversityConfig, generate_dataset_spec
from .geometry import PoseGrid, build_grid
from .landscape import ErrorSample, FitConfig, LossLandscape, composite_metrics, fit_landscape, samples_to_arrays
from .sampling import RomeConfig, SamplingPlan, greedy_sample, rome_sample, uniform_sample

log = logging.getLogger(__name__)

SAMPLERS = ("rome", "greedy", "random")

# Lighter than the standalone fit defaults: the loop refits every interval and
# warm-starts from the previous landscape. Scores use physical units so the
# curvature term cannot swamp the error term.
LOOP_FIT = FitConfig(hidden=(32, 32), iterations=1500, dtype="float32", w_error="raw")


class LoopError(RuntimeError):
    pass


@dataclass(frozen=True)
class LoopConfig:
    intervals: int = 8
    epochs_per_interval: int = 5
    augmentation_fraction: float = 0.15
    samples_per_cycle: int = 50_000
    n_theta: int = 50
    n_phi: int = 50
    radius: float = 2.5
    sampler: str = "rome"
    rome: RomeConfig = field(default_factory=RomeConfig)
    random_fraction: float = 0.5
    fit: FitConfig = LOOP_FIT
    warm_start: bool = True
    warm_iterations: int = 500
    always_fit: bool = False
    seed: int = 0
    diversity: DiversityConfig | None = None

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise LoopError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if not (0 < self.augmentation_fraction <= 1):
            raise LoopError("augmentation_fraction must lie in (0, 1]")
        for name in ("epochs_per_interval", "samples_per_cycle", "n_theta", "n_phi"):
            if getattr(self, name) < 1:
                raise LoopError(f"{name} must be >= 1")
        if self.intervals < 0:
            raise LoopError("intervals must be >= 0")
        if not (0 < self.random_fraction <= 1):
            raise LoopError("random_fraction must lie in (0, 1]")

    def grid(self) -> PoseGrid:
        return build_grid(self.n_theta, self.n_phi, radius=self.radius)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("diversity")
        d["fit"]["hidden"] = list(self.fit.hidden)
        return d


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


@dataclass
class IterationReport:
    interval: int
    errors: list[ErrorSample]
    mean_error: float
    std_error: float
    plan_summary: dict
    fit_report: dict | None
    dataset_summary: dict
    plan: SamplingPlan = field(repr=False, default=None)
    landscape: LossLandscape | None = field(repr=False, default=None)
    next_dataset: DatasetSpec | None = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "interval": self.interval,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "errors": [[s.pose.theta_deg, s.pose.phi_deg, s.error_mm] for s in self.errors],
            "plan_summary": self.plan_summary,
            "plan": [
                {"theta_deg": p.theta_deg, "phi_deg": p.phi_deg, "region": list(idx), "rule": rule}
                for p, (idx, rule) in zip(self.plan.selected, self.plan.provenance)
            ] if self.plan is not None else [],
            "fit_report": self.fit_report,
            "dataset_summary": self.dataset_summary,
        }


def error_stats(errors: Sequence[ErrorSample]) -> tuple[float, float]:
    e = np.array([s.error_mm for s in errors], dtype=float)
    return float(np.mean(e)), float(np.std(e))


def fallback_count(n: int, rome: RomeConfig) -> int:
    return max(1, math.floor(n / rome.P**3) * math.floor(rome.alpha))


def select_poses(
    errors: Sequence[ErrorSample], config: LoopConfig, interval: int, warm: LossLandscape | None = None
) -> tuple[SamplingPlan, LossLandscape | None]:
    """Phase 3: landscape fit (when needed) and the configured sampler."""
    poses = [s.pose for s in errors]
    landscape = None
    if config.sampler == "rome" or config.always_fit:
        fit_cfg = config.fit
        init = None
        if config.warm_start and warm is not None:
            init = warm.regressor
            fit_cfg = dataclasses.replace(fit_cfg, iterations=config.warm_iterations)
        landscape = fit_landscape(errors, fit_cfg, seed=derive_seed(config.seed, interval, 1), init=init)

    if config.sampler == "greedy":
        plan = greedy_sample(poses, [s.error_mm for s in errors])
    elif config.sampler == "random":
        count = max(1, round(config.random_fraction * len(poses)))
        plan = uniform_sample(poses, count, seed=derive_seed(config.seed, interval, 2))
    else:
        theta, phi, _ = samples_to_arrays(errors)
        X, Y = landscape.scale_poses(theta, phi)
        _, W = composite_metrics(landscape, X, Y)
        rome_cfg = dataclasses.replace(config.rome, seed=derive_seed(config.seed, interval, 3))
        plan = rome_sample(poses, X, Y, W, rome_cfg)

    if not plan.selected:
        log.warning("interval %d: %s selected no poses; falling back to uniform sampling", interval, plan.method)
        fb = uniform_sample(
            poses, fallback_count(len(poses), config.rome), seed=derive_seed(config.seed, interval, 4), method="fallback"
        )
        fb.tau = plan.tau
        plan = fb
    return plan, landscape


def initial_dataset(config: LoopConfig, grid: PoseGrid | None = None) -> DatasetSpec:
    return generate_dataset_spec(
        grid or config.grid(),
        config.samples_per_cycle,
        config.diversity,
        seed=derive_seed(config.seed, 0, 0),
        interval=0,
        augmentation_fraction=config.augmentation_fraction,
    )


def run_interval(
    adapter: ModelAdapter,
    config: LoopConfig,
    interval: int = 0,
    previous: IterationReport | None = None,
) -> IterationReport:
    """One SHARE interval. ``previous`` supplies the dataset drawn from its plan; without it the full grid seeds the data."""
    grid = config.grid()
    dataset = previous.next_dataset if previous is not None and previous.next_dataset is not None else None
    if dataset is None:
        dataset = initial_dataset(config, grid)
        dataset.interval = interval

    try:
        adapter.train(dataset, config.epochs_per_interval)
    except Exception as exc:
        raise LoopError(f"interval {interval}: training failed: {exc}") from exc
    try:
        errors = adapter.evaluate(grid)
    except Exception as exc:
        raise LoopError(f"interval {interval}: evaluation failed: {exc}") from exc
    if len(errors) != len(grid):
        raise LoopError(f"interval {interval}: adapter returned {len(errors)} errors for {len(grid)} poses")

    plan, landscape = select_poses(errors, config, interval, previous.landscape if previous else None)
    next_dataset = generate_dataset_spec(
        plan,
        config.samples_per_cycle,
        config.diversity,
        seed=derive_seed(config.seed, interval + 1, 0),
        interval=interval + 1,
        augmentation_fraction=config.augmentation_fraction,
    )
    mean, std = error_stats(errors)
    uniq, _ = dataset.pose_histogram()
    return IterationReport(
        interval=interval,
        errors=list(errors),
        mean_error=mean,
        std_error=std,
        plan_summary=plan.summary(),
        fit_report=landscape.fit_report.to_dict() if landscape is not None else None,
        dataset_summary={
            "interval": dataset.interval,
            "samples": dataset.samples_per_cycle,
            "augmentation_fraction": dataset.augmentation_fraction,
            "epochs": config.epochs_per_interval,
            "unique_poses": int(len(uniq)),
        },
        plan=plan,
        landscape=landscape,
        next_dataset=next_dataset,
    )


def run_loop(
    adapter: ModelAdapter,
    config: LoopConfig,
    on_report: Callable[[IterationReport], None] | None = None,
) -> list[IterationReport]:
    reports: list[IterationReport] = []
    previous = None
    for k in range(config.intervals):
        report = run_interval(adapter, config, k, previous)
        log.info("interval %d: mean %.3f mm, std %.3f mm, %d poses selected",
                 k, report.mean_error, report.std_error, len(report.plan))
        if on_report is not None:
            on_report(report)
        reports.append(report)
        previous = report
    return reports


def write_report(report: IterationReport, directory) -> Path:
    path = Path(directory) / f"report.{report.interval:03d}.json"
    return atomic_write_text(path, json.dumps(report.to_dict(), indent=1) + "\n")


def sensitivity_report(errors: Sequence[ErrorSample]) -> list[tuple[float, float, float]]:
    """``(theta, phi, error)`` rows in sweep order: azimuth outer, elevation inner."""
    rows = [(s.pose.theta_deg, s.pose.phi_deg, s.error_mm) for s in errors]
    return sorted(rows, key=lambda r: (r[1], r[0]))


def azimuth_profile(rows: Sequence[tuple[float, float, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean error per azimuth over the elevations of a sweep."""
    phi = np.array([r[1] for r in rows])
    err = np.array([r[2] for r in rows])
    uniq, inv = np.unique(phi, return_inverse=True)
    return uniq, np.bincount(inv, weights=err) / np.bincount(inv)
