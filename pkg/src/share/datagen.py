"""
Render-configuration generation.

A :class:`DatasetSpec` lists one scene per requested image: a randomized body
(10 shape and 72 pose parameters, skin, clothing, scale), lighting, background
and a camera pose drawn from the current sampling plan. Specs are stored
column-wise so that 50k-scene cycles stay cheap; :meth:`DatasetSpec.scenes`
gives the per-scene view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text, fmt, write_csv
from .geometry import CameraPose, PoseGrid
from .sampling import SamplingPlan

CONFIG_VERSION = 1
N_SHAPE = 10
N_POSE = 72
GT_CSV_HEADER = ("scene_index", "joint_index", "x_mm", "y_mm", "z_mm")
TAG_FIELDS = ("skin", "clothing", "lighting", "background")


class DatagenError(ValueError):
    pass


def default_vocabularies() -> dict[str, tuple[str, ...]]:
    text = resources.files("share").joinpath("data/vocabularies.json").read_text()
    return {k: tuple(v) for k, v in json.loads(text).items()}


def config_schema() -> dict:
    return json.loads(resources.files("share").joinpath("data/config.schema.json").read_text())


@dataclass(frozen=True)
class HumanSpec:
    shape_params: tuple[float, ...]
    pose_params: tuple[float, ...]
    skin_tone: str
    clothing: str
    body_scale: float = 1.0

    def __post_init__(self):
        if len(self.shape_params) != N_SHAPE or len(self.pose_params) != N_POSE:
            raise DatagenError(f"need {N_SHAPE} shape and {N_POSE} pose parameters")
        if not self.body_scale > 0:
            raise DatagenError("body_scale must be positive")


@dataclass(frozen=True)
class SceneSpec:
    human: HumanSpec
    lighting: str
    background: str
    camera: CameraPose
    seed: int


@dataclass(frozen=True)
class DiversityConfig:
    """Ranges for randomized scene content.

    ``shape_bank`` / ``pose_bank`` are optional (K, 10) / (K, 72) arrays of
    externally sourced parameters; rows are drawn uniformly instead of the
    uniform ranges when given.
    """

    shape_range: float = 2.0
    pose_range: float = np.pi / 3
    global_orient_range: float = np.pi
    scale_range: tuple[float, float] = (0.9, 1.1)
    vocabularies: dict = field(default_factory=default_vocabularies)
    shape_bank: np.ndarray | None = None
    pose_bank: np.ndarray | None = None


def load_parameter_bank(path) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Read an ``.npz`` holding ``shape`` (K, 10) and/or ``pose`` (K, 72) arrays."""
    with np.load(path) as z:
        shape = np.asarray(z["shape"], dtype=float) if "shape" in z else None
        pose = np.asarray(z["pose"], dtype=float) if "pose" in z else None
    if shape is not None and (shape.ndim != 2 or shape.shape[1] != N_SHAPE):
        raise DatagenError(f"shape bank must be (K, {N_SHAPE}), got {shape.shape}")
    if pose is not None and (pose.ndim != 2 or pose.shape[1] != N_POSE):
        raise DatagenError(f"pose bank must be (K, {N_POSE}), got {pose.shape}")
    return shape, pose


@dataclass(eq=False)
class DatasetSpec:
    interval: int
    samples_per_cycle: int
    augmentation_fraction: float
    cameras: np.ndarray  # (n, 3): theta_deg, phi_deg, radius
    shape: np.ndarray  # (n, 10)
    pose: np.ndarray  # (n, 72)
    scale: np.ndarray  # (n,)
    skin: tuple[str, ...]
    clothing: tuple[str, ...]
    lighting: tuple[str, ...]
    background: tuple[str, ...]
    seeds: np.ndarray  # (n,) int64
    engine: str | None = None

    def __post_init__(self):
        n = len(self.cameras)
        if n != self.samples_per_cycle:
            raise DatagenError(f"spec holds {n} scenes but requests {self.samples_per_cycle}")
        for name in ("shape", "pose", "scale", "skin", "clothing", "lighting", "background", "seeds"):
            if len(getattr(self, name)) != n:
                raise DatagenError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if not (0 < self.augmentation_fraction <= 1):
            raise DatagenError("augmentation_fraction must lie in (0, 1]")

    def __len__(self) -> int:
        return self.samples_per_cycle

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSpec):
            return NotImplemented
        arrays = ("cameras", "shape", "pose", "scale", "seeds")
        plain = ("interval", "samples_per_cycle", "augmentation_fraction", "skin", "clothing",
                 "lighting", "background", "engine")
        return all(getattr(self, a) == getattr(other, a) for a in plain) and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays
        )

    def scene(self, i: int) -> SceneSpec:
        th, ph, r = self.cameras[i]
        return SceneSpec(
            HumanSpec(tuple(self.shape[i].tolist()), tuple(self.pose[i].tolist()),
                      self.skin[i], self.clothing[i], float(self.scale[i])),
            self.lighting[i],
            self.background[i],
            CameraPose(float(th), float(ph), float(r)),
            int(self.seeds[i]),
        )

    def scenes(self) -> list[SceneSpec]:
        return [self.scene(i) for i in range(len(self))]

    def pose_histogram(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique camera rows and their counts."""
        uniq, counts = np.unique(self.cameras, axis=0, return_counts=True)
        return uniq, counts


def _pose_source(source) -> list[CameraPose]:
    if isinstance(source, SamplingPlan):
        return list(source.selected)
    if isinstance(source, PoseGrid):
        return list(source.poses)
    return list(source)


def generate_dataset_spec(
    source: SamplingPlan | PoseGrid | Sequence[CameraPose],
    count: int,
    diversity: DiversityConfig | None = None,
    seed: int = 0,
    interval: int = 0,
    augmentation_fraction: float = 0.15,
) -> DatasetSpec:
    """Draw ``count`` scenes whose cameras come uniformly from ``source``.

    Poses are drawn without replacement when ``count`` fits in the source and
    with replacement otherwise.
    """
    poses = _pose_source(source)
    if not poses:
        raise DatagenError("pose source is empty")
    if isinstance(count, bool) or int(count) != count or count < 1:
        raise DatagenError(f"count must be a positive integer, got {count!r}")
    count = int(count)
    div = diversity or DiversityConfig()
    rng = np.random.default_rng(seed)

    pool = np.array([p.key() for p in poses], dtype=float)
    pick = rng.choice(len(pool), size=count, replace=count > len(pool))
    cameras = pool[pick]

    if div.shape_bank is not None:
        shape = np.asarray(div.shape_bank, dtype=float)[rng.integers(0, len(div.shape_bank), count)]
    else:
        shape = rng.uniform(-div.shape_range, div.shape_range, size=(count, N_SHAPE))
    if div.pose_bank is not None:
        pose = np.asarray(div.pose_bank, dtype=float)[rng.integers(0, len(div.pose_bank), count)]
    else:
        pose = rng.uniform(-div.pose_range, div.pose_range, size=(count, N_POSE))
        pose[:, :3] = rng.uniform(-div.global_orient_range, div.global_orient_range, size=(count, 3))
    scale = rng.uniform(div.scale_range[0], div.scale_range[1], size=count)

    tags = {}
    for name in TAG_FIELDS:
        vocab = tuple(div.vocabularies[name])
        if not vocab:
            raise DatagenError(f"vocabulary {name!r} is empty")
        tags[name] = tuple(vocab[i] for i in rng.integers(0, len(vocab), count))
    seeds = rng.integers(0, 2**31 - 1, size=count, dtype=np.int64)

    return DatasetSpec(
        interval=int(interval),
        samples_per_cycle=count,
        augmentation_fraction=float(augmentation_fraction),
        cameras=cameras,
        shape=shape,
        pose=pose,
        scale=scale,
        seeds=seeds,
        **tags,
    )


def spec_to_dict(spec: DatasetSpec, engine: str | None = None) -> dict:
    scenes = []
    for i in range(len(spec)):
        th, ph, r = spec.cameras[i].tolist()
        scenes.append({
            "human": {
                "shape": spec.shape[i].tolist(),
                "pose": spec.pose[i].tolist(),
                "skin": spec.skin[i],
                "clothing": spec.clothing[i],
                "scale": float(spec.scale[i]),
            },
            "lighting": spec.lighting[i],
            "background": spec.background[i],
            "camera": {"theta_deg": th, "phi_deg": ph, "radius": r},
            "seed": int(spec.seeds[i]),
        })
    out = {
        "version": CONFIG_VERSION,
        "interval": spec.interval,
        "samples": spec.samples_per_cycle,
        "augmentation_fraction": spec.augmentation_fraction,
    }
    engine = engine or spec.engine
    if engine:
        out["engine"] = engine
    out["scenes"] = scenes
    return out


def spec_from_dict(d: dict) -> DatasetSpec:
    if d.get("version") != CONFIG_VERSION:
        raise DatagenError(f"unsupported config version {d.get('version')!r}")
    scenes = d["scenes"]
    return DatasetSpec(
        interval=int(d["interval"]),
        samples_per_cycle=int(d["samples"]),
        augmentation_fraction=float(d.get("augmentation_fraction", 0.15)),
        cameras=np.array([[s["camera"]["theta_deg"], s["camera"]["phi_deg"], s["camera"]["radius"]]
                          for s in scenes], dtype=float).reshape(-1, 3),
        shape=np.array([s["human"]["shape"] for s in scenes], dtype=float).reshape(-1, N_SHAPE),
        pose=np.array([s["human"]["pose"] for s in scenes], dtype=float).reshape(-1, N_POSE),
        scale=np.array([s["human"]["scale"] for s in scenes], dtype=float),
        skin=tuple(s["human"]["skin"] for s in scenes),
        clothing=tuple(s["human"]["clothing"] for s in scenes),
        lighting=tuple(s["lighting"] for s in scenes),
        background=tuple(s["background"] for s in scenes),
        seeds=np.array([s["seed"] for s in scenes], dtype=np.int64),
        engine=d.get("engine"),
    )


def emit_config(spec: DatasetSpec, path, engine: str | None = None) -> Path:
    """Write the render configuration JSON. ``engine`` adds an ``engine`` tag to the payload."""
    return atomic_write_text(path, json.dumps(spec_to_dict(spec, engine), separators=(",", ":")) + "\n")


def load_config(path) -> DatasetSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


# -- ground truth ---------------------------------------------------------------

# Canonical T-pose, SMPL joint order, millimeters (x left, y up, z forward).
T_POSE_MM = np.array([
    [0, 0, 0], [60, -90, 0], [-60, -90, 0], [0, 110, 0],
    [60, -470, 0], [-60, -470, 0], [0, 250, 0], [60, -870, -40],
    [-60, -870, -40], [0, 310, 0], [60, -920, 80], [-60, -920, 80],
    [0, 520, 0], [80, 430, 0], [-80, 430, 0], [0, 600, 40],
    [180, 440, 0], [-180, 440, 0], [440, 440, 0], [-440, 440, 0],
    [690, 440, 0], [-690, 440, 0], [770, 440, 0], [-770, 440, 0],
], dtype=float)


def stub_joint_regressor(human: HumanSpec) -> np.ndarray:
    """Stand-in for a body model: T-pose scaled by body size, each joint nudged by its own axis-angle.

    Zero pose, zero shape and unit scale return ``T_POSE_MM`` exactly.
    """
    pose = np.asarray(human.pose_params, dtype=float).reshape(24, 3)
    height = human.body_scale * (1.0 + 0.05 * float(human.shape_params[0]))
    return T_POSE_MM * height + 40.0 * pose


class GroundTruthError(RuntimeError):
    def __init__(self, scene_index: int, cause: Exception):
        self.scene_index = scene_index
        super().__init__(f"joint regressor failed on scene {scene_index}: {cause}")


def ground_truth_bundle(
    spec: DatasetSpec, joint_regressor: Callable[[HumanSpec], np.ndarray] = stub_joint_regressor
) -> list[np.ndarray]:
    """One (J, 3) joint set per scene, in scene order."""
    out = []
    for i in range(len(spec)):
        try:
            joints = np.asarray(joint_regressor(spec.scene(i).human), dtype=float)
            if joints.ndim != 2 or joints.shape[1] != 3 or not np.all(np.isfinite(joints)):
                raise DatagenError(f"regressor returned invalid joints of shape {joints.shape}")
        except Exception as exc:
            raise GroundTruthError(i, exc) from exc
        out.append(joints)
    return out


def write_ground_truth_csv(path, bundle: Sequence[np.ndarray]):
    rows = (
        (s, j, fmt(x), fmt(y), fmt(z))
        for s, joints in enumerate(bundle)
        for j, (x, y, z) in enumerate(joints)
    )
    return write_csv(path, GT_CSV_HEADER, rows)
