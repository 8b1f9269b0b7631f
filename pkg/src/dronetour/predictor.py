"""Flight-time regression: a single-hidden-layer net trained with Adam.

The net maps the six operation coordinates (start, delivery, end in the
plane) to the drone-only flight duration in seconds. Training data comes
from the flight planner itself, so the labels are exact durations of
feasible discrete trajectories, not continuous-time approximations.

Everything here is deliberately dependency-free: the forward pass, the
gradients, Adam and the learning-rate schedules are spelled out so their
behaviour is fixed by this file alone.
"""

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (DivergenceError, InfeasibleEnergyError, ModelFormatError,
                     NoPathError, SamplingError)
from .physics import DronePhysicsParams, FlightSpec, cruise_router, \
    drone_only_duration_s, plan_drone_only_flight

_CSV_HEADER = "xs,ys,xd,yd,xe,ye,label_s"
_MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Rows of (six features, oracle duration label), with provenance."""

    features: np.ndarray          # (n, 6): xs, ys, xd, yd, xe, ye in metres
    labels: np.ndarray            # (n,) seconds
    scenario: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "features",
                           np.asarray(self.features, dtype=float))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=float))
        if self.features.ndim != 2 or self.features.shape[1] != 6:
            raise ValueError("features must be an (n, 6) array")
        if self.labels.shape != (len(self.features),):
            raise ValueError("labels must match the feature rows")
        if len(self.labels) and not np.all(self.labels > 0):
            raise ValueError("labels must be positive durations")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return len(self.labels)

    def save_csv(self, path) -> None:
        rows = np.column_stack([self.features, self.labels])
        np.savetxt(path, rows, delimiter=",", header=_CSV_HEADER, comments="")

    @classmethod
    def load_csv(cls, path, scenario: str = "", seed: Optional[int] = None
                 ) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip()
            if header != _CSV_HEADER:
                raise ValueError(f"unexpected dataset header {header!r}")
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(features=rows[:, :6], labels=rows[:, 6],
                   scenario=scenario, seed=seed)


def generate_training_data(region: Tuple[float, float, float, float],
                           count: int, params: DronePhysicsParams,
                           ras_list: Sequence = (), seed: int = 0,
                           scenario: str = "") -> Dataset:
    """Label `count` random operations with the drone-only flight oracle.

    The three nodes of each operation are uniform in `region` (xmin, xmax,
    ymin, ymax); start and end sit at truck-bed altitude, the delivery on
    the ground. Rows whose points fall inside restricted airspace, or whose
    flight has no feasible path, are resampled (with a retry budget).
    Without restricted airspace only the tick arithmetic runs, which keeps
    large datasets cheap.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    xmin, xmax, ymin, ymax = region
    rng = np.random.default_rng(seed)
    router = cruise_router(ras_list, params)
    bed, ground = params.truck_bed_alt, 0.0

    feats = np.empty((count, 6))
    labels = np.empty(count)
    seen = set()
    budget = 200 * count
    row = 0
    while row < count:
        if budget <= 0:
            raise SamplingError(
                "retry budget exhausted; the region may be mostly "
                "restricted airspace")
        budget -= 1
        xs = rng.uniform(xmin, xmax, 3)
        ys = rng.uniform(ymin, ymax, 3)
        key = (*xs, *ys)
        if key in seen:
            continue
        start = (xs[0], ys[0], bed)
        deliv = (xs[1], ys[1], ground)
        end = (xs[2], ys[2], bed)
        try:
            if ras_list:
                # full build: the duration shortcut cannot see a blocked
                # vertical approach
                spec = FlightSpec(start=start, delivery=deliv, end=end,
                                  ras_list=tuple(ras_list))
                label = plan_drone_only_flight(spec, params, router=router).duration
            else:
                label = drone_only_duration_s(start, deliv, end, params,
                                              router=router)
        except (NoPathError, InfeasibleEnergyError):
            continue
        seen.add(key)
        feats[row] = (xs[0], ys[0], xs[1], ys[1], xs[2], ys[2])
        labels[row] = label
        row += 1
    return Dataset(features=feats, labels=labels, scenario=scenario, seed=seed)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mlp:
    """Trained regressor: standardise, one hidden layer, linear head."""

    w1: np.ndarray                # (hidden, 6)
    b1: np.ndarray                # (hidden,)
    w2: np.ndarray                # (hidden,)
    b2: float
    activation: str               # "identity" | "relu"
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def __post_init__(self):
        if self.activation not in ("identity", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w1.ndim != 2 or self.w1.shape[1] != 6 or len(self.w1) < 1:
            raise ValueError("w1 must be (hidden, 6) with hidden >= 1")
        for arr in (self.w1, self.b1, self.w2, self.x_mean, self.x_std):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model weights must be finite")
        if not (math.isfinite(self.b2) and math.isfinite(self.y_mean)
                and math.isfinite(self.y_std)):
            raise ValueError("model weights must be finite")
        if np.any(self.x_std <= 0) or self.y_std <= 0:
            raise ValueError("standardisation stds must be positive")

    @property
    def hidden_size(self) -> int:
        return len(self.w1)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; the defaults mirror the documented selection."""

    hidden_size: int = 4000
    activation: str = "relu"
    alpha: float = 0.05           # L2 strength on the weight matrices
    lr_schedule: str = "constant"  # constant | inverse_scaling | adaptive
    base_lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    seed: int = 0
    patience: int = 20            # epochs without improvement before stopping

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be at least 1")
        if self.activation not in ("identity", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.lr_schedule not in ("constant", "inverse_scaling", "adaptive"):
            raise ValueError(f"unknown schedule {self.lr_schedule!r}")
        if self.base_lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr, batch size and epochs must be positive")
        if self.alpha < 0 or self.patience < 1:
            raise ValueError("alpha must be nonnegative, patience positive")


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return z if kind == "identity" else np.maximum(z, 0.0)


def _forward(X, w1, b1, w2, b2, kind):
    a1 = _act(X @ w1.T + b1, kind)
    return a1 @ w2 + b2, a1


def _loss(X, y, w1, b1, w2, b2, kind, alpha) -> float:
    pred, _ = _forward(X, w1, b1, w2, b2, kind)
    mse = float(np.mean((pred - y) ** 2))
    return mse + alpha * (float(np.sum(w1 * w1)) + float(np.sum(w2 * w2)))


def _grads(X, y, w1, b1, w2, b2, kind, alpha):
    """Analytic gradients of the regularised MSE. Biases carry no penalty."""
    n = len(X)
    pred, a1 = _forward(X, w1, b1, w2, b2, kind)
    de = 2.0 * (pred - y) / n
    gw2 = a1.T @ de + 2.0 * alpha * w2
    gb2 = float(np.sum(de))
    da1 = np.outer(de, w2)
    if kind == "relu":
        da1 = da1 * (a1 > 0)
    gw1 = da1.T @ X + 2.0 * alpha * w1
    gb1 = da1.sum(axis=0)
    return gw1, gb1, gw2, gb2


def lr_for_epoch(schedule: str, base_lr: float, epoch: int,
                 adaptive_lr: float) -> float:
    """Step size for a 1-based epoch; never exceeds base_lr."""
    if schedule == "constant":
        return base_lr
    if schedule == "inverse_scaling":
        return base_lr / math.sqrt(epoch)
    return min(adaptive_lr, base_lr)


def train(ds: Dataset, cfg: TrainConfig) -> Mlp:
    """Fit the net with Adam on standardised features and labels.

    The monitored quantity is the full-dataset objective at each epoch end;
    the adaptive schedule halves the step size after two consecutive epochs
    without improvement, and training stops after `patience` stale epochs.
    The returned weights are the best seen, so the final training loss never
    exceeds the initial one. Deterministic for a fixed seed and dataset.
    """
    if len(ds) < 10:
        raise ValueError("training needs at least 10 rows")
    rng = np.random.default_rng(cfg.seed)
    X = ds.features
    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std = np.where(x_std > 1e-12, x_std, 1.0)
    Xs = (X - x_mean) / x_std
    y_mean = float(ds.labels.mean())
    y_std = float(ds.labels.std())
    if y_std <= 1e-12:
        y_std = 1.0
    ys = (ds.labels - y_mean) / y_std

    h = cfg.hidden_size
    lim1 = math.sqrt(6.0 / (6 + h))
    lim2 = math.sqrt(6.0 / (h + 1))
    w1 = rng.uniform(-lim1, lim1, (h, 6))
    b1 = np.zeros(h)
    w2 = rng.uniform(-lim2, lim2, h)
    b2 = 0.0

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    mom = [np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2), 0.0]
    vel = [np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2), 0.0]
    step = 0
    n = len(ds)
    kind, alpha = cfg.activation, cfg.alpha

    def objective():
        return _loss(Xs, ys, w1, b1, w2, b2, kind, alpha)

    best_loss = objective()
    if not math.isfinite(best_loss):
        raise DivergenceError("objective is not finite before training")
    best = (w1.copy(), b1.copy(), w2.copy(), b2)
    adaptive_lr = cfg.base_lr
    stall = 0
    stale_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_for_epoch(cfg.lr_schedule, cfg.base_lr, epoch, adaptive_lr)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            rows = order[lo:lo + cfg.batch_size]
            grads = _grads(Xs[rows], ys[rows], w1, b1, w2, b2, kind, alpha)
            step += 1
            corr1 = 1.0 - beta1 ** step
            corr2 = 1.0 - beta2 ** step
            new = []
            for p, g, i in zip((w1, b1, w2, b2), grads, range(4)):
                mom[i] = beta1 * mom[i] + (1 - beta1) * g
                vel[i] = beta2 * vel[i] + (1 - beta2) * (g * g)
                upd = lr * (mom[i] / corr1) / (np.sqrt(vel[i] / corr2) + eps)
                new.append(p - upd)
            w1, b1, w2, b2 = new[0], new[1], new[2], float(new[3])
        loss = objective()
        if not math.isfinite(loss):
            raise DivergenceError(f"objective diverged at epoch {epoch}")
        if loss < best_loss - 1e-12:
            best_loss = loss
            best = (w1.copy(), b1.copy(), w2.copy(), b2)
            stall = 0
            stale_epochs = 0
        else:
            stall += 1
            stale_epochs += 1
            if cfg.lr_schedule == "adaptive" and stall >= 2:
                adaptive_lr /= 2.0
                stall = 0
            if stale_epochs >= cfg.patience:
                break

    w1, b1, w2, b2 = best
    return Mlp(w1=w1, b1=b1, w2=w2, b2=b2, activation=kind,
               x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)


def predict(m: Mlp, features) -> float:
    """Duration estimate in seconds for one six-feature row, clamped at 0."""
    return float(predict_batch(m, np.asarray(features, dtype=float)[None, :])[0])


def predict_batch(m: Mlp, X: np.ndarray) -> np.ndarray:
    Xs = (np.asarray(X, dtype=float) - m.x_mean) / m.x_std
    out, _ = _forward(Xs, m.w1, m.b1, m.w2, m.b2, m.activation)
    return np.maximum(out * m.y_std + m.y_mean, 0.0)


# ---------------------------------------------------------------------------
# model selection and persistence
# ---------------------------------------------------------------------------

def holdout_mse(m: Mlp, ds: Dataset) -> float:
    err = predict_batch(m, ds.features) - ds.labels
    return float(np.mean(err * err))


def grid_search(ds: Dataset, grid: Sequence[TrainConfig],
                holdout_fraction: float = 0.2, seed: int = 0
                ) -> Tuple[TrainConfig, List[Dict]]:
    """Train every lattice point, score on a shared holdout split.

    Returns the config with the lowest holdout MSE (ties: smaller hidden
    size, then smaller alpha) and one report row per lattice point.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_hold = max(1, int(round(holdout_fraction * len(ds))))
    hold, fit = order[:n_hold], order[n_hold:]
    ds_fit = Dataset(ds.features[fit], ds.labels[fit],
                     scenario=ds.scenario, seed=ds.seed)
    ds_hold = Dataset(ds.features[hold], ds.labels[hold],
                      scenario=ds.scenario, seed=ds.seed)

    report = []
    for cfg in grid:
        model = train(ds_fit, cfg)
        report.append({
            "hidden_size": cfg.hidden_size, "activation": cfg.activation,
            "alpha": cfg.alpha, "lr_schedule": cfg.lr_schedule,
            "holdout_mse": holdout_mse(model, ds_hold),
        })
    ranked = sorted(
        range(len(grid)),
        key=lambda i: (report[i]["holdout_mse"], grid[i].hidden_size,
                       grid[i].alpha))
    return grid[ranked[0]], report


def save_model(m: Mlp, path) -> None:
    doc = {
        "version": _MODEL_VERSION,
        "activation": m.activation,
        "x_mean": m.x_mean.tolist(), "x_std": m.x_std.tolist(),
        "y_mean": m.y_mean, "y_std": m.y_std,
        "w1": m.w1.tolist(), "b1": m.b1.tolist(),
        "w2": m.w2.tolist(), "b2": m.b2,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> Mlp:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(
                f"{path}: invalid model JSON at line {exc.lineno} "
                f"column {exc.colno}") from exc
    version = doc.get("version")
    if version != _MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: model version {version!r} unsupported "
            f"(expected {_MODEL_VERSION})")
    try:
        return Mlp(
            w1=np.asarray(doc["w1"], dtype=float),
            b1=np.asarray(doc["b1"], dtype=float),
            w2=np.asarray(doc["w2"], dtype=float),
            b2=float(doc["b2"]), activation=doc["activation"],
            x_mean=np.asarray(doc["x_mean"], dtype=float),
            x_std=np.asarray(doc["x_std"], dtype=float),
            y_mean=float(doc["y_mean"]), y_std=float(doc["y_std"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: incomplete model document: {exc}") \
            from exc
