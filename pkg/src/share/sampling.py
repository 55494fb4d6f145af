"""
Camera-pose samplers over evaluated poses: greedy (above-mean error), RoME
(Regions of Maximal Error), and uniform random.

RoME tiles the scaled ``(X, Y, W)`` cube into ``P**3`` regions, drops regions
with no sample above the mean score, and draws ``M = floor(alpha*N/P**3)``
members from regions whose mean score beats the threshold and
``floor(M/alpha)`` from the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import fmt, read_csv, write_csv
from .geometry import CameraPose

PLAN_CSV_HEADER = ("theta_deg", "phi_deg", "region_i", "region_j", "region_k", "rule")
RULES = ("high", "low", "fallback")


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    index: tuple[int, int, int]
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    members: tuple[int, ...]


@dataclass(frozen=True)
class RomeConfig:
    P: int = 8
    alpha: float = 4.0
    seed: int = 0
    count_basis: str = "all"  # N counts all samples, or only members of surviving regions

    def __post_init__(self):
        if isinstance(self.P, bool) or int(self.P) != self.P or self.P < 1:
            raise SamplingError(f"P must be a positive integer, got {self.P!r}")
        if not (self.alpha >= 1):
            raise SamplingError(f"alpha must be >= 1, got {self.alpha!r}")
        if self.count_basis not in ("all", "surviving"):
            raise SamplingError(f"count_basis must be 'all' or 'surviving', got {self.count_basis!r}")
        object.__setattr__(self, "P", int(self.P))


@dataclass
class SamplingPlan:
    selected: list[CameraPose]
    provenance: list[tuple[tuple[int, int, int], str]]
    method: str
    tau: float | None = None
    per_region_counts: dict[tuple[int, int, int], int] = field(default_factory=dict)
    quota_high: int | None = None
    quota_low: int | None = None
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.selected)

    def summary(self) -> dict:
        rules = [r for _, r in self.provenance]
        return {
            "method": self.method,
            "selected": len(self.selected),
            "tau": self.tau,
            "quota_high": self.quota_high,
            "quota_low": self.quota_low,
            "fallback": self.fallback,
            "rule_counts": {r: rules.count(r) for r in RULES if r in rules},
            "regions_used": len(self.per_region_counts),
        }


def _dedupe(indices, poses):
    seen, out = set(), []
    for i in indices:
        key = poses[i]
        if key not in seen:
            seen.add(key)
            out.append(i)
    return out


def greedy_sample(poses: Sequence[CameraPose], errors: Sequence[float]) -> SamplingPlan:
    """Every pose whose error is strictly above the mean error."""
    if len(poses) == 0:
        raise SamplingError("greedy sampling needs at least one sample")
    if len(poses) != len(errors):
        raise SamplingError("poses and errors differ in length")
    err = np.asarray(errors, dtype=float)
    mean = float(np.mean(err))
    keep = _dedupe(np.flatnonzero(err > mean), poses)
    return SamplingPlan(
        selected=[poses[i] for i in keep],
        provenance=[((0, 0, 0), "high")] * len(keep),
        method="greedy",
        tau=mean,
        per_region_counts={(0, 0, 0): len(keep)} if keep else {},
    )


def uniform_sample(poses: Sequence[CameraPose], count: int, seed: int = 0, method: str = "random") -> SamplingPlan:
    """``count`` distinct poses drawn uniformly without replacement."""
    if len(poses) == 0:
        raise SamplingError("uniform sampling needs at least one sample")
    count = max(0, min(int(count), len(poses)))
    idx = np.random.default_rng(seed).choice(len(poses), size=count, replace=False)
    keep = _dedupe(sorted(int(i) for i in idx), poses)
    return SamplingPlan(
        selected=[poses[i] for i in keep],
        provenance=[((0, 0, 0), "fallback")] * len(keep),
        method=method,
        per_region_counts={(0, 0, 0): len(keep)} if keep else {},
        fallback=method == "fallback",
    )


def scale_scores(W) -> np.ndarray:
    """Min-max scale scores into [-1, 1]; a constant score vector maps to 0."""
    W = np.asarray(W, dtype=float)
    lo, hi = float(W.min()), float(W.max())
    if hi == lo:
        return np.zeros_like(W)
    return 2.0 * (W - lo) / (hi - lo) - 1.0


def _bin(values: np.ndarray, P: int) -> np.ndarray:
    """Cell index per value on [-1, 1] split into P cells: lower-inclusive, top face in the last cell."""
    v = np.clip(values, -1.0, 1.0)
    idx = np.clip(np.floor((v + 1.0) * 0.5 * P).astype(int), 0, P - 1)
    lo = -1.0 + 2.0 * idx / P
    hi = -1.0 + 2.0 * (idx + 1) / P
    idx = np.where(v < lo, idx - 1, idx)
    idx = np.where((v >= hi) & (idx < P - 1), idx + 1, idx)
    return idx


def region_indices(X, Y, W_scaled, P: int) -> np.ndarray:
    """(n, 3) region index per sample."""
    cols = []
    for name, v in (("X", X), ("Y", Y), ("W", W_scaled)):
        v = np.asarray(v, dtype=float)
        if np.any(np.abs(v) > 1.0 + 1e-9):
            raise SamplingError(f"{name} coordinates must lie in [-1, 1]")
        cols.append(_bin(v, P))
    return np.column_stack(cols)


def partition_regions(X, Y, W, P: int) -> list[Region]:
    """Tile [-1, 1]^3 into P**3 regions ordered by (i, j, k); W is min-max scaled first."""
    if isinstance(P, bool) or int(P) != P or P < 1:
        raise SamplingError(f"P must be a positive integer, got {P!r}")
    P = int(P)
    idx = region_indices(X, Y, scale_scores(W), P)
    flat = idx[:, 0] * P * P + idx[:, 1] * P + idx[:, 2]
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(P**3 + 1))
    edges = -1.0 + 2.0 * np.arange(P + 1) / P
    regions = []
    for r in range(P**3):
        i, j, k = r // (P * P), (r // P) % P, r % P
        members = tuple(int(m) for m in order[bounds[r] : bounds[r + 1]])
        regions.append(
            Region(
                (i, j, k),
                (float(edges[i]), float(edges[j]), float(edges[k])),
                (float(edges[i + 1]), float(edges[j + 1]), float(edges[k + 1])),
                members,
            )
        )
    return regions


def rome_quotas(n: int, config: RomeConfig) -> tuple[int, int]:
    """(M, low-region quota) for ``n`` samples, each floored at 1."""
    M = max(1, math.floor(config.alpha * n / config.P**3))
    return M, max(1, math.floor(M / config.alpha))


def rome_sample(
    poses: Sequence[CameraPose], X, Y, W, config: RomeConfig | None = None
) -> SamplingPlan:
    """RoME selection over scored poses. ``X, Y`` are scaled coordinates, ``W`` raw scores.

    The plan is empty (``fallback`` set) when no score exceeds the mean.
    """
    config = config or RomeConfig()
    W = np.asarray(W, dtype=float)
    n = len(poses)
    if n == 0:
        raise SamplingError("RoME sampling needs at least one sample")
    if not (len(X) == len(Y) == W.size == n):
        raise SamplingError("poses, X, Y and W differ in length")
    if not np.all(np.isfinite(W)):
        raise SamplingError("scores must be finite")

    tau = float(np.mean(W))
    regions = partition_regions(X, Y, W, config.P)
    surviving = [r for r in regions if r.members and np.any(W[list(r.members)] > tau)]
    basis = n if config.count_basis == "all" else sum(len(r.members) for r in surviving)
    M, low = rome_quotas(basis, config)

    rng = np.random.default_rng(config.seed)
    chosen: list[int] = []
    provenance = []
    counts: dict[tuple[int, int, int], int] = {}
    taken = set()
    for r in surviving:
        members = np.array(r.members)
        aw = float(np.mean(W[members]))
        rule = "high" if aw > tau else "low"
        quota = min(M if rule == "high" else low, members.size)
        pick = rng.choice(members, size=quota, replace=False)
        c = 0
        for i in sorted(int(p) for p in pick):
            if poses[i] in taken:
                continue
            taken.add(poses[i])
            chosen.append(i)
            provenance.append((r.index, rule))
            c += 1
        counts[r.index] = c

    return SamplingPlan(
        selected=[poses[i] for i in chosen],
        provenance=provenance,
        method="rome",
        tau=tau,
        per_region_counts=counts,
        quota_high=M,
        quota_low=low,
        fallback=not chosen,
    )


@dataclass(frozen=True)
class RegionDensity:
    index: tuple[int, int, int]
    members: int
    selected: int
    density: float
    rule: str | None


def density_report(plan: SamplingPlan, regions: Sequence[Region]) -> list[RegionDensity]:
    """Per-region selected/member ratio; regions with no members report 0."""
    rules = {idx: rule for idx, rule in plan.provenance}
    out = []
    for r in regions:
        sel = plan.per_region_counts.get(r.index, 0)
        m = len(r.members)
        out.append(RegionDensity(r.index, m, sel, sel / m if m else 0.0, rules.get(r.index)))
    return out


def write_plan_csv(path, plan: SamplingPlan):
    rows = (
        (fmt(p.theta_deg, 9), fmt(p.phi_deg, 9), i, j, k, rule)
        for p, ((i, j, k), rule) in zip(plan.selected, plan.provenance)
    )
    return write_csv(path, PLAN_CSV_HEADER, rows)


def read_plan_csv(path, radius: float | None = None) -> SamplingPlan:
    from ._io import CsvFormatError
    from .geometry import DEFAULT_RADIUS

    types = {"theta_deg": float, "phi_deg": float, "region_i": int, "region_j": int, "region_k": int, "rule": str}
    rows = read_csv(path, PLAN_CSV_HEADER, types)
    selected, prov = [], []
    for r in rows:
        if r["rule"] not in RULES:
            raise CsvFormatError(path, r["_line"], f"unknown rule {r['rule']!r}")
        selected.append(CameraPose(r["theta_deg"], r["phi_deg"], radius or DEFAULT_RADIUS))
        prov.append(((r["region_i"], r["region_j"], r["region_k"]), r["rule"]))
    counts: dict = {}
    for idx, _ in prov:
        counts[idx] = counts.get(idx, 0) + 1
    return SamplingPlan(selected, prov, method="file", per_region_counts=counts)
