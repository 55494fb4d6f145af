"""
Continuous loss landscape ``E = f(theta, phi)`` fitted from per-pose errors.

Inputs and target are min-max scaled into [-1, 1]; a small tanh MLP trained by
full-batch gradient descent maps scaled ``(X, Y)`` to scaled ``E``. Slopes
and curvature come from finite differences on the scaled surface, and feed
the composite adversarial score ``W = |E| + |grad f| + |Hess f|_F``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write_text, fmt, read_csv, write_csv
from .geometry import CameraPose, PoseGrid

log = logging.getLogger(__name__)

ERRORS_CSV_HEADER = ("theta_deg", "phi_deg", "error_mm")
SURFACE_CSV_HEADER = ("theta_deg", "phi_deg", "X", "Y", "E_scaled", "E_mm", "W")
FORMAT_TAG = "share-landscape/1"
MIN_FIT_SAMPLES = 16


class LandscapeError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSample:
    pose: CameraPose
    error_mm: float

    def __post_init__(self):
        e = float(self.error_mm)
        if not math.isfinite(e) or e < 0:
            raise LandscapeError(f"error_mm must be finite and >= 0, got {self.error_mm}")
        object.__setattr__(self, "error_mm", e)


def samples_to_arrays(samples: Sequence[ErrorSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = np.array([s.pose.theta_deg for s in samples], dtype=float)
    phi = np.array([s.pose.phi_deg for s in samples], dtype=float)
    err = np.array([s.error_mm for s in samples], dtype=float)
    return theta, phi, err


# -- scaling ---------------------------------------------------------------

AXES = ("theta", "phi", "E")


@dataclass(frozen=True)
class MinMaxScaler:
    """Affine map of each axis' observed ``[min, max]`` onto ``[-1, 1]``.

    An axis whose min equals its max is degenerate: it scales to 0 everywhere
    and unscales to the constant.
    """

    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]

    def __post_init__(self):
        for a, lo, hi in zip(AXES, self.mins, self.maxs):
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
                raise LandscapeError(f"invalid extremes for axis {a}: [{lo}, {hi}]")

    @property
    def degenerate(self) -> tuple[bool, bool, bool]:
        return tuple(hi == lo for lo, hi in zip(self.mins, self.maxs))

    def _axis(self, axis) -> int:
        return AXES.index(axis) if isinstance(axis, str) else int(axis)

    def scale(self, values, axis):
        i = self._axis(axis)
        lo, hi = self.mins[i], self.maxs[i]
        v = np.asarray(values, dtype=float)
        if hi == lo:
            return np.zeros_like(v)
        return 2.0 * (v - lo) / (hi - lo) - 1.0

    def unscale(self, values, axis):
        i = self._axis(axis)
        lo, hi = self.mins[i], self.maxs[i]
        v = np.asarray(values, dtype=float)
        if hi == lo:
            return np.full_like(v, lo)
        return lo + (v + 1.0) * 0.5 * (hi - lo)

    def unscale_slope(self, axis) -> float:
        """d(unscaled)/d(scaled) for ``axis``; 0 on a degenerate axis."""
        i = self._axis(axis)
        return 0.5 * (self.maxs[i] - self.mins[i])


def fit_scaler(samples: Sequence[ErrorSample]) -> MinMaxScaler:
    if not samples:
        raise LandscapeError("cannot fit a scaler on no samples")
    theta, phi, err = samples_to_arrays(samples)
    cols = (theta, phi, err)
    scaler = MinMaxScaler(
        tuple(float(c.min()) for c in cols), tuple(float(c.max()) for c in cols)
    )
    for name, flag in zip(AXES, scaler.degenerate):
        if flag:
            log.warning("axis %s is constant across samples; it scales to 0", name)
    return scaler


# -- regressor ---------------------------------------------------------------

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(a.dtype)),
}


@dataclass(frozen=True)
class FitConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    optimizer: str = "adam"  # or "momentum"
    learning_rate: float = 1e-2
    momentum: float = 0.9
    iterations: int = 5000
    init_scale: float = 0.5
    periodic_phi: bool = False
    dtype: str = "float64"
    fd_step: float = 0.01
    w_error: str = "scaled"  # W on the scaled surface, or "raw": mm, mm/deg, mm/deg^2

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise LandscapeError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("momentum", "adam"):
            raise LandscapeError(f"unknown optimizer {self.optimizer!r}")
        if self.iterations < 0 or self.learning_rate <= 0 or not self.hidden:
            raise LandscapeError("iterations >= 0, learning_rate > 0 and >= 1 hidden layer required")
        if not (0 < self.fd_step <= 0.5):
            raise LandscapeError("fd_step must lie in (0, 0.5]")
        if self.w_error not in ("scaled", "raw"):
            raise LandscapeError(f"w_error must be 'scaled' or 'raw', got {self.w_error!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class MLP:
    """Fully connected regressor; ``weights[i]`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, scale: float, activation: str) -> "MLP":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-scale, scale, size=fan_out))
        return cls(weights, biases, activation)

    def forward(self, x: np.ndarray) -> np.ndarray:
        act = _ACTIVATIONS[self.activation][0]
        a = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = act(a)
        return a[:, 0]


def _train(mlp: MLP, x: np.ndarray, y: np.ndarray, cfg: FitConfig) -> MLP:
    """Full-batch training on mean squared error. Works in ``cfg.dtype``."""
    dt = np.dtype(cfg.dtype)
    act, dact = _ACTIVATIONS[cfg.activation]
    W = [w.astype(dt) for w in mlp.weights]
    B = [b.astype(dt) for b in mlp.biases]
    x = x.astype(dt)
    y = y.astype(dt).reshape(-1, 1)
    n = x.shape[0]
    lr, mu = dt.type(cfg.learning_rate), dt.type(cfg.momentum)
    vel = [np.zeros_like(p) for p in W + B]
    sq = [np.zeros_like(p) for p in W + B]
    params = W + B
    L = len(W)
    b1, b2 = 0.9, 0.999

    for it in range(1, cfg.iterations + 1):
        acts = [x]
        for i in range(L):
            z = acts[-1] @ W[i] + B[i]
            acts.append(act(z) if i < L - 1 else z)
        g = (acts[-1] - y) * dt.type(2.0 / n)
        grads_w, grads_b = [None] * L, [None] * L
        for i in range(L - 1, -1, -1):
            grads_w[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ W[i].T) * dact(acts[i])
        grads = grads_w + grads_b
        if cfg.optimizer == "momentum":
            for p, v, gr in zip(params, vel, grads):
                v *= mu
                v -= lr * gr
                p += v
        else:
            c1 = dt.type(lr / (1 - b1**it))
            c2 = dt.type(1.0 / (1 - b2**it))
            for p, m, s, gr in zip(params, vel, sq, grads):
                m *= b1
                m += (1 - b1) * gr
                s *= b2
                s += (1 - b2) * gr * gr
                p -= c1 * m / (np.sqrt(s * c2) + 1e-8)

    return MLP([w.astype(float) for w in W], [b.astype(float) for b in B], cfg.activation)


# -- landscape -------------------------------------------------------------


@dataclass(frozen=True)
class FitReport:
    final_loss: float
    iterations: int
    seed: int
    n_samples: int
    degenerate_axes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {**asdict(self), "degenerate_axes": list(self.degenerate_axes)}


@dataclass
class LossLandscape:
    scaler: MinMaxScaler
    regressor: MLP
    config: FitConfig
    fit_report: FitReport

    def _features(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=float).ravel()
        Y = np.asarray(Y, dtype=float).ravel()
        if not self.config.periodic_phi:
            return np.column_stack([X, Y])
        phi = np.radians(self.scaler.unscale(Y, "phi"))
        return np.column_stack([X, np.cos(phi), np.sin(phi)])

    def predict_scaled(self, X, Y) -> np.ndarray:
        """Scaled error at scaled coordinates. Vectorized."""
        shape = np.shape(X)
        return self.regressor.forward(self._features(X, Y)).reshape(shape)

    def scale_poses(self, theta, phi) -> tuple[np.ndarray, np.ndarray]:
        return self.scaler.scale(theta, "theta"), self.scaler.scale(phi, "phi")

    def predict_mm(self, theta, phi) -> np.ndarray:
        X, Y = self.scale_poses(theta, phi)
        return self.scaler.unscale(self.predict_scaled(X, Y), "E")


def _check_samples(samples: Sequence[ErrorSample]):
    if len(samples) < MIN_FIT_SAMPLES:
        raise LandscapeError(f"need at least {MIN_FIT_SAMPLES} samples to fit, got {len(samples)}")
    theta, phi, err = samples_to_arrays(samples)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(phi)) and np.all(np.isfinite(err))):
        raise LandscapeError("samples contain non-finite values")
    return theta, phi, err


def fit_landscape(
    samples: Sequence[ErrorSample],
    config: FitConfig | None = None,
    seed: int = 0,
    init: MLP | None = None,
) -> LossLandscape:
    """Fit the scaled error surface.

    ``init`` warm-starts from existing weights of matching shape instead of the
    seeded uniform initialization.
    """
    config = config or FitConfig()
    theta, phi, err = _check_samples(samples)
    scaler = fit_scaler(samples)
    X, Y = scaler.scale(theta, "theta"), scaler.scale(phi, "phi")
    target = scaler.scale(err, "E")

    n_in = 3 if config.periodic_phi else 2
    sizes = [n_in, *config.hidden, 1]
    if init is not None and init.sizes == sizes and init.activation == config.activation:
        mlp = MLP([w.copy() for w in init.weights], [b.copy() for b in init.biases], init.activation)
    else:
        mlp = MLP.init(sizes, np.random.default_rng(seed), config.init_scale, config.activation)

    shell = LossLandscape(scaler, mlp, config, FitReport(float("nan"), 0, seed, len(samples)))
    feats = shell._features(X, Y)
    trained = _train(mlp, feats, target, config)
    resid = trained.forward(feats) - target
    report = FitReport(
        final_loss=float(np.mean(resid * resid)),
        iterations=config.iterations,
        seed=int(seed),
        n_samples=len(samples),
        degenerate_axes=tuple(a for a, d in zip(AXES, scaler.degenerate) if d),
    )
    return LossLandscape(scaler, trained, config, report)


def predict(landscape: LossLandscape, pose: CameraPose) -> float:
    return float(landscape.predict_mm(pose.theta_deg, pose.phi_deg))


# -- derivatives -------------------------------------------------------------

# first-derivative stencils (offsets in steps, weights / h)
_D1_CENTRAL = ((-1, 0, 1), (-0.5, 0.0, 0.5))
_D1_FORWARD = ((0, 1, 2), (-1.5, 2.0, -0.5))
# second-derivative stencils (weights / h^2)
_D2_CENTRAL = ((-1, 0, 1), (1.0, -2.0, 1.0))
_D2_FORWARD = ((0, 1, 2, 3), (2.0, -5.0, 4.0, -1.0))


def _stencil(coord: float, h: float, order: int):
    """Pick a stencil that stays inside [-1, 1]; mirror the forward one at the upper edge."""
    central, forward = (_D1_CENTRAL, _D1_FORWARD) if order == 1 else (_D2_CENTRAL, _D2_FORWARD)
    eps = 1e-12
    if coord - h >= -1 - eps and coord + h <= 1 + eps:
        return central
    if coord - h < -1 - eps:
        return forward
    offs, wts = forward
    sign = -1.0 if order == 1 else 1.0
    return tuple(-o for o in offs), tuple(sign * w for w in wts)


def derivatives(landscape: LossLandscape, X, Y, h: float | None = None):
    """Gradient and Hessian of the scaled surface at scaled ``(X, Y)``.

    Scalars give a (2,) gradient and (2, 2) Hessian; arrays of n points give
    (n, 2) and (n, 2, 2). Second-order finite differences, central in the
    interior and one-sided within ``h`` of the domain edge.
    """
    h = landscape.config.fd_step if h is None else float(h)
    scalar = np.ndim(X) == 0
    Xs = np.atleast_1d(np.asarray(X, dtype=float)).ravel()
    Ys = np.atleast_1d(np.asarray(Y, dtype=float)).ravel()
    n = Xs.size

    # Collect every stencil point for all queries, then run one batched forward pass.
    px, py, plans = [], [], []

    def add(points):
        start = len(px)
        for dx, dy in points:
            px.append(dx)
            py.append(dy)
        return start

    for x, y in zip(Xs, Ys):
        d1x, d1y = _stencil(x, h, 1), _stencil(y, h, 1)
        d2x, d2y = _stencil(x, h, 2), _stencil(y, h, 2)
        entry = []
        for kind, offs_w in (
            ("gx", [((x + o * h, y), w) for o, w in zip(*d1x)]),
            ("gy", [((x, y + o * h), w) for o, w in zip(*d1y)]),
            ("hxx", [((x + o * h, y), w) for o, w in zip(*d2x)]),
            ("hyy", [((x, y + o * h), w) for o, w in zip(*d2y)]),
            ("hxy", [((x + ox * h, y + oy * h), wx * wy) for ox, wx in zip(*d1x) for oy, wy in zip(*d1y)]),
        ):
            start = add(p for p, _ in offs_w)
            entry.append((kind, start, np.array([w for _, w in offs_w])))
        plans.append(entry)

    f = landscape.predict_scaled(np.array(px), np.array(py))
    grad = np.empty((n, 2))
    hess = np.empty((n, 2, 2))
    for k, entry in enumerate(plans):
        vals = {}
        for kind, start, w in entry:
            vals[kind] = float(w @ f[start : start + w.size])
        grad[k] = (vals["gx"] / h, vals["gy"] / h)
        hxy = vals["hxy"] / (h * h)
        hess[k] = ((vals["hxx"] / (h * h), hxy), (hxy, vals["hyy"] / (h * h)))
    hess = 0.5 * (hess + hess.transpose(0, 2, 1))
    if scalar:
        return grad[0], hess[0]
    return grad, hess


@dataclass(frozen=True)
class WeightedSample:
    X: float
    Y: float
    E: float
    W: float


def composite_metrics(landscape: LossLandscape, X, Y, h: float | None = None):
    """Vectorized composite score. Returns arrays ``(E, W)`` for the given scaled points."""
    X = np.atleast_1d(np.asarray(X, dtype=float))
    Y = np.atleast_1d(np.asarray(Y, dtype=float))
    E = landscape.predict_scaled(X, Y)
    grad, hess = derivatives(landscape, X, Y, h)
    if landscape.config.w_error == "raw":
        # chain rule to millimeters per degree; a degenerate input axis has no slope
        sc = landscape.scaler
        e_slope = sc.unscale_slope("E")
        inv = np.array([1.0 / s if s else 0.0 for s in (sc.unscale_slope("theta"), sc.unscale_slope("phi"))])
        e_term = np.abs(sc.unscale(E, "E"))
        grad = grad * e_slope * inv
        hess = hess * e_slope * np.outer(inv, inv)
    else:
        e_term = np.abs(E)
    W = e_term + np.linalg.norm(grad, axis=1) + np.sqrt(np.sum(hess * hess, axis=(1, 2)))
    return E, W


def composite_metric(landscape: LossLandscape, X: float, Y: float) -> WeightedSample:
    E, W = composite_metrics(landscape, X, Y)
    return WeightedSample(float(X), float(Y), float(E[0]), float(W[0]))


# -- export & persistence ------------------------------------------------------


def export_landscape(landscape: LossLandscape, grid: Iterable[CameraPose]) -> list[tuple]:
    """Rows of ``theta_deg, phi_deg, X, Y, E_scaled, E_mm, W`` for every grid pose."""
    poses = list(grid)
    theta = np.array([p.theta_deg for p in poses])
    phi = np.array([p.phi_deg for p in poses])
    X, Y = landscape.scale_poses(theta, phi)
    E, W = composite_metrics(landscape, X, Y)
    E_mm = landscape.scaler.unscale(E, "E")
    return [
        tuple(float(v) for v in row)
        for row in zip(theta, phi, X, Y, E, E_mm, W)
    ]


def write_surface_csv(path, rows: Iterable[tuple]):
    return write_csv(path, SURFACE_CSV_HEADER, ([fmt(v) for v in r] for r in rows))


def landscape_to_dict(landscape: LossLandscape) -> dict:
    m = landscape.regressor
    return {
        "format": FORMAT_TAG,
        "scaler": {"axes": list(AXES), "mins": list(landscape.scaler.mins), "maxs": list(landscape.scaler.maxs)},
        "config": {**asdict(landscape.config), "hidden": list(landscape.config.hidden)},
        "regressor": {
            "activation": m.activation,
            "layer_sizes": m.sizes,
            "weights": [w.tolist() for w in m.weights],
            "biases": [b.tolist() for b in m.biases],
        },
        "fit_report": landscape.fit_report.to_dict(),
    }


def landscape_from_dict(d: dict) -> LossLandscape:
    if d.get("format") != FORMAT_TAG:
        raise LandscapeError(f"not a landscape file (format={d.get('format')!r})")
    sc = d["scaler"]
    reg = d["regressor"]
    weights = [np.array(w, dtype=float).reshape(a, b) for w, a, b in
               zip(reg["weights"], reg["layer_sizes"][:-1], reg["layer_sizes"][1:])]
    biases = [np.array(b, dtype=float) for b in reg["biases"]]
    rep = dict(d["fit_report"])
    rep["degenerate_axes"] = tuple(rep.get("degenerate_axes", ()))
    return LossLandscape(
        MinMaxScaler(tuple(sc["mins"]), tuple(sc["maxs"])),
        MLP(weights, biases, reg["activation"]),
        FitConfig.from_dict(d["config"]),
        FitReport(**rep),
    )


def save_landscape(landscape: LossLandscape, path) -> Path:
    # json writes floats with repr(), which round-trips float64 exactly.
    return atomic_write_text(path, json.dumps(landscape_to_dict(landscape), indent=1) + "\n")


def load_landscape(path) -> LossLandscape:
    return landscape_from_dict(json.loads(Path(path).read_text()))


def read_errors_csv(path) -> list[ErrorSample]:
    from ._io import CsvFormatError
    from .geometry import GeometryError

    rows = read_csv(path, ERRORS_CSV_HEADER)
    out = []
    for r in rows:
        lineno = r["_line"]
        try:
            out.append(ErrorSample(CameraPose(r["theta_deg"], r["phi_deg"]), r["error_mm"]))
        except (GeometryError, LandscapeError) as exc:
            raise CsvFormatError(path, lineno, str(exc)) from None
    return out


def write_errors_csv(path, samples: Iterable[ErrorSample]):
    rows = ((fmt(s.pose.theta_deg), fmt(s.pose.phi_deg), fmt(s.error_mm)) for s in samples)
    return write_csv(path, ERRORS_CSV_HEADER, rows)
