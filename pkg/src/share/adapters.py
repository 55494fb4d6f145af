"""
Model adapters: the trainable, per-pose evaluable stand-in for an HPS regressor.

``SyntheticOracle`` is a closed-form error surface that improves where it is
trained. ``FileBridge`` hands each request to an external process through
files in an exchange directory.
"""

from __future__ import annotations

import json
import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import CsvFormatError, atomic_write_text
from .datagen import DatasetSpec, emit_config
from .geometry import PoseGrid, angular_distance, build_grid, write_grid_csv
from .landscape import ErrorSample, read_errors_csv


class AdapterError(RuntimeError):
    pass


class BridgeTimeout(AdapterError):
    pass


class ModelAdapter(ABC):
    """What the loop needs from a model: train on a dataset, report per-pose errors."""

    #: whether ``evaluate`` may be invoked concurrently
    parallel_safe = False

    @abstractmethod
    def train(self, dataset: DatasetSpec, epochs: int) -> None: ...

    @abstractmethod
    def evaluate(self, grid: PoseGrid) -> list[ErrorSample]: ...


@dataclass(frozen=True)
class OracleParams:
    base_error: float = 100.0
    azimuth_amplitude: float = 30.0
    harmonics: int = 2
    peak_sharpness: float = 3.0  # 0 gives a pure cosine; larger values narrow the peaks
    elevation_slope: float = 0.3  # mm per degree; top-down views are worse
    noise_sigma: float = 10.0
    adaptation_rate: float = 0.8  # rho: excess error factor per epoch-equivalent
    neighborhood_deg: float = 15.0
    floor_fraction: float = 0.2

    def __post_init__(self):
        if not (0 < self.adaptation_rate < 1):
            raise AdapterError("adaptation_rate must lie in (0, 1)")
        if self.neighborhood_deg <= 0 or self.noise_sigma < 0 or self.harmonics < 0 or self.peak_sharpness < 0:
            raise AdapterError("neighborhood_deg > 0, noise_sigma >= 0, harmonics >= 0 required")


class SyntheticOracle(ModelAdapter):
    """Analytic per-pose error with neighborhood-local improvement.

    Untrained error is ``base + amplitude*bump(phi) + slope*theta`` where
    ``bump`` oscillates in [-1, 1] with ``harmonics`` periods; it is
    ``cos(harmonics*phi)`` at zero sharpness and turns into narrow peaks over
    flat troughs as the sharpness grows.

    Each training call adds exposure ``epochs * fraction * c(q) / u(q)`` at
    every pose ``q``: ``c`` is the dataset's kernel-weighted share near ``q``
    (biweight kernel, zero beyond the neighborhood radius) and ``u`` the share a
    uniform dataset over the reference grid would put there. The error above
    the floor decays as ``rate ** exposure``.
    """

    parallel_safe = True

    def __init__(self, params: OracleParams | None = None, seed: int = 0, reference_grid: PoseGrid | None = None):
        self.params = params or OracleParams()
        self.seed = int(seed)
        self.reference = reference_grid or build_grid(50, 50)
        self._ref = np.column_stack([self.reference.thetas, self.reference.phis])
        self.history: list[tuple[np.ndarray, np.ndarray, float]] = []  # (poses (k,2), weights, epoch-equivalents)
        self.train_calls = 0
        self._cache: dict[bytes, tuple[np.ndarray, int, np.ndarray]] = {}

    @property
    def floor(self) -> float:
        return self.params.floor_fraction * self.params.base_error

    def initial_error(self, theta, phi) -> np.ndarray:
        p = self.params
        theta, phi = np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
        c = np.cos(np.radians(p.harmonics * phi))
        k = p.peak_sharpness
        if k > 0:
            lo = math.exp(-2.0 * k)
            c = 2.0 * (np.exp(k * (c - 1.0)) - lo) / (1.0 - lo) - 1.0
        return p.base_error + p.azimuth_amplitude * c + p.elevation_slope * theta

    def _coverage(self, theta, phi, poses, weights) -> np.ndarray:
        d = angular_distance(theta[:, None], phi[:, None], poses[None, :, 0], poses[None, :, 1])
        u = np.clip(d / self.params.neighborhood_deg, 0.0, 1.0)
        return ((1.0 - u * u) ** 2) @ weights

    def exposure(self, theta, phi) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        key = theta.tobytes() + phi.tobytes()
        if key in self._cache:
            uniform, done, total = self._cache[key]
        else:
            n_ref = len(self._ref)
            uniform = self._coverage(theta, phi, self._ref, np.full(n_ref, 1.0 / n_ref))
            done, total = 0, np.zeros(theta.shape)
        for poses, weights, epoch_eq in self.history[done:]:
            total = total + epoch_eq * self._coverage(theta, phi, poses, weights) / uniform
        self._cache[key] = (uniform, len(self.history), total)
        return total

    def expected_error(self, theta, phi) -> np.ndarray:
        e0 = self.initial_error(theta, phi)
        excess = np.maximum(e0 - self.floor, 0.0)
        return np.minimum(e0, self.floor) + excess * self.params.adaptation_rate ** self.exposure(theta, phi)

    def train(self, dataset: DatasetSpec, epochs: int) -> None:
        uniq, counts = dataset.pose_histogram()
        weights = counts / counts.sum()
        self.history.append((uniq[:, :2].copy(), weights, float(epochs) * dataset.augmentation_fraction))
        self.train_calls += 1

    def evaluate(self, grid: PoseGrid) -> list[ErrorSample]:
        theta, phi = grid.thetas, grid.phis
        err = self.expected_error(theta, phi)
        if self.params.noise_sigma > 0:
            rng = np.random.default_rng([self.seed, self.train_calls])
            err = err + rng.normal(0.0, self.params.noise_sigma, size=err.shape)
        err = np.maximum(err, 0.0)
        return [ErrorSample(p, float(e)) for p, e in zip(grid.poses, err)]


class FileBridge(ModelAdapter):
    """Exchange-directory protocol for an external model process.

    For interval ``NNN`` (zero-padded), ``train`` writes ``NNN.trainspec.json``
    and waits for ``NNN.ack``; ``evaluate`` writes ``NNN.grid.csv`` and waits for
    ``NNN.errors.csv`` holding one ``theta_deg,phi_deg,error_mm`` row per grid
    pose in grid order. Responders must create their files atomically.
    """

    parallel_safe = False

    def __init__(self, directory, timeout: float = 600.0, poll: float = 0.05, emit_configs: bool = False):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.timeout = float(timeout)
        self.poll = float(poll)
        self.emit_configs = emit_configs
        self.interval = 0

    def path(self, interval: int, suffix: str) -> Path:
        return self.directory / f"{interval:03d}.{suffix}"

    def _wait(self, path: Path, what: str) -> None:
        deadline = time.monotonic() + self.timeout
        while not path.exists():
            if time.monotonic() >= deadline:
                raise BridgeTimeout(f"timed out after {self.timeout:g}s waiting for {what} ({path})")
            time.sleep(self.poll)

    def train(self, dataset: DatasetSpec, epochs: int) -> None:
        self.interval = dataset.interval
        uniq, counts = dataset.pose_histogram()
        payload = {
            "interval": dataset.interval,
            "epochs": int(epochs),
            "samples": dataset.samples_per_cycle,
            "augmentation_fraction": dataset.augmentation_fraction,
            "poses": [
                {"theta_deg": float(t), "phi_deg": float(p), "radius": float(r), "count": int(c)}
                for (t, p, r), c in zip(uniq, counts)
            ],
        }
        if self.emit_configs:
            cfg = emit_config(dataset, self.path(dataset.interval, "config.json"))
            payload["config"] = cfg.name
        atomic_write_text(self.path(dataset.interval, "trainspec.json"), json.dumps(payload, indent=1) + "\n")
        self._wait(self.path(dataset.interval, "ack"), "training acknowledgment")

    def evaluate(self, grid: PoseGrid) -> list[ErrorSample]:
        n = self.interval
        write_grid_csv(self.path(n, "grid.csv"), grid)
        target = self.path(n, "errors.csv")
        self._wait(target, "evaluation errors")
        try:
            samples = read_errors_csv(target)
        except CsvFormatError as exc:
            raise AdapterError(f"bad errors file from responder: {exc}") from exc
        if len(samples) != len(grid):
            raise AdapterError(f"{target.name} has {len(samples)} rows for a {len(grid)}-pose grid")
        out = []
        for s, pose in zip(samples, grid.poses):
            if not (math.isclose(s.pose.theta_deg, pose.theta_deg, abs_tol=1e-5)
                    and math.isclose(s.pose.phi_deg, pose.phi_deg, abs_tol=1e-5)):
                raise AdapterError(f"{target.name} rows are not in grid order near {pose}")
            out.append(ErrorSample(pose, s.error_mm))
        return out
