"""Fault-detection mechanisms over labeled response series.

The default mechanism is a logistic-regression classifier trained full-batch
with Newton steps and an Armijo backtracking line search, which keeps the
training loss nonincreasing and the fitted weights bit-reproducible for a
fixed split. A simple k-sigma threshold alert is included as a second
mechanism, and external mechanisms can be registered by name.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .telemetry import ResponseSeries


class InsufficientDataError(ValueError):
    """The series cannot support training (class absent or too few rows)."""


class ConvergenceError(RuntimeError):
    pass


@dataclass
class LabeledDataset:
    """Feature matrix with binary labels and a train/test split tag per row."""

    features: np.ndarray  # (rows, cols) float64
    labels: np.ndarray  # (rows,) int, 1 = fault
    is_train: np.ndarray  # (rows,) bool
    mean: np.ndarray | None = None  # set by zscore_fit_apply
    std: np.ndarray | None = None

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.is_train], self.labels[self.is_train]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[~self.is_train], self.labels[~self.is_train]


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    loss_history: tuple[float, ...] = ()

    def decision(self, features: np.ndarray) -> np.ndarray:
        return _sigmoid(features @ self.weights + self.bias)


@dataclass(frozen=True)
class DetectionOutcome:
    """Detection score in [0, 1] for one (fault, response) evaluation."""

    score: float
    mechanism: str
    run_scores: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


MIN_CLASS_ROWS = 4


def lagged_features(values: np.ndarray, window: int) -> np.ndarray:
    """Sliding window of current value plus ``window - 1`` lags.

    Lags before the start of the series repeat the first observation;
    zero-filling would hand the classifier an artificial "early row" marker
    that leaks the label on short series.
    """
    values = np.asarray(values, dtype=np.float64)
    cols = [values]
    for lag in range(1, window):
        if len(values) == 0:
            cols.append(values.copy())
            continue
        shifted = np.concatenate([np.full(min(lag, len(values)), values[0]), values[:-lag]])
        cols.append(shifted[: len(values)])
    return np.column_stack(cols) if len(values) else np.zeros((0, window))


def build_dataset(
    series: ResponseSeries,
    split_ratio: float,
    rng: np.random.Generator,
    feature_window: int = 3,
) -> LabeledDataset:
    """Turn a labeled response series into a stratified train/test dataset.

    The train split is rebalanced by duplicating minority-class rows with
    replacement until class counts are exactly equal; the test split keeps
    the original imbalance.
    """
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must be within (0, 1)")
    values = np.array([row.value for row in series.rows], dtype=np.float64)
    labels = np.array([1 if row.label == "fault" else 0 for row in series.rows], dtype=np.int64)

    n_fault = int(labels.sum())
    n_normal = int(len(labels) - n_fault)
    if n_fault == 0 or n_normal == 0:
        raise InsufficientDataError(
            f"class absent in series '{series.name}' "
            f"({n_fault} fault rows, {n_normal} normal rows)"
        )
    if n_fault < MIN_CLASS_ROWS or n_normal < MIN_CLASS_ROWS:
        raise InsufficientDataError(
            f"insufficient data in series '{series.name}': need at least "
            f"{MIN_CLASS_ROWS} rows per class, have {n_fault} fault / {n_normal} normal"
        )

    features = lagged_features(values, feature_window)

    is_train = np.zeros(len(labels), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        take = min(max(int(len(idx) * split_ratio), 1), len(idx) - 1)
        is_train[idx[:take]] = True

    train_idx = np.flatnonzero(is_train)
    train_labels = labels[train_idx]
    counts = {cls: int((train_labels == cls).sum()) for cls in (0, 1)}
    minority = min(counts, key=counts.get)
    deficit = counts[1 - minority] - counts[minority]
    extra_rows = np.empty((0,), dtype=np.int64)
    if deficit > 0:
        pool = train_idx[train_labels == minority]
        extra_rows = rng.choice(pool, size=deficit, replace=True)

    order = np.concatenate([train_idx, extra_rows, np.flatnonzero(~is_train)])
    return LabeledDataset(
        features=features[order],
        labels=labels[order],
        is_train=np.concatenate(
            [
                np.ones(len(train_idx) + len(extra_rows), dtype=bool),
                np.zeros(int((~is_train).sum()), dtype=bool),
            ]
        ),
    )


def zscore_fit_apply(ds: LabeledDataset) -> LabeledDataset:
    """Normalize features to zero mean / unit variance using train-split
    statistics only; constant train columns are dropped with a warning."""
    x_train, _ = ds.train
    if x_train.shape[0] == 0:
        raise ValueError("train split is empty")
    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)  # population std
    keep = std > 0.0
    if not keep.all():
        dropped = np.flatnonzero(~keep).tolist()
        warnings.warn(f"dropping constant feature columns {dropped}", stacklevel=2)
    if not keep.any():
        raise InsufficientDataError("all feature columns are constant on the train split")
    transformed = (ds.features[:, keep] - mean[keep]) / std[keep]
    return LabeledDataset(
        features=transformed,
        labels=ds.labels.copy(),
        is_train=ds.is_train.copy(),
        mean=mean[keep],
        std=std[keep],
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss_gradient(
    x: np.ndarray, y: np.ndarray, weights: np.ndarray, bias: float, l2: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with an l2 ridge on the weights (bias excluded);
    returns (loss, gradient over [weights, bias])."""
    z = x @ weights + bias
    # log(1 + exp(z)) - y*z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(weights @ weights)
    p = _sigmoid(z)
    residual = (p - y) / len(y)
    grad_w = x.T @ residual + l2 * weights
    grad_b = float(residual.sum())
    return loss, np.concatenate([grad_w, [grad_b]])


def train_logreg(
    ds: LabeledDataset,
    l2: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 100_000,
) -> LogRegModel:
    """Fit logistic regression on the train split by damped Newton iteration
    until the gradient infinity-norm drops below ``tol``."""
    x, y_int = ds.train
    y = y_int.astype(np.float64)
    if x.shape[0] == 0 or len(np.unique(y_int)) < 2:
        raise InsufficientDataError("training split must contain both classes")

    n, d = x.shape
    theta = np.zeros(d + 1)
    losses: list[float] = []
    loss, grad = logreg_loss_gradient(x, y, theta[:d], theta[d], l2)
    losses.append(loss)

    xb = np.hstack([x, np.ones((n, 1))])
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return LogRegModel(
                weights=theta[:d].copy(),
                bias=float(theta[d]),
                mean=ds.mean if ds.mean is not None else np.zeros(d),
                std=ds.std if ds.std is not None else np.ones(d),
                loss_history=tuple(losses),
            )
        p = _sigmoid(xb @ theta)
        w = p * (1.0 - p)
        hessian = (xb * w[:, None]).T @ xb / n
        hessian[:d, :d] += l2 * np.eye(d)
        hessian += 1e-12 * np.eye(d + 1)
        step = np.linalg.solve(hessian, grad)

        # Armijo backtracking keeps the loss nonincreasing.
        t = 1.0
        slope = float(grad @ step)
        while t > 1e-12:
            candidate = theta - t * step
            cand_loss, cand_grad = logreg_loss_gradient(x, y, candidate[:d], candidate[d], l2)
            if cand_loss <= loss - 1e-4 * t * slope:
                break
            t *= 0.5
        theta = theta - t * step
        loss, grad = cand_loss, cand_grad
        losses.append(loss)

    raise ConvergenceError(
        f"logistic regression failed to converge after {max_iter} iterations; "
        f"gradient infinity-norm {np.max(np.abs(grad)):.3e}"
    )


def evaluate_logreg(model: LogRegModel, ds: LabeledDataset) -> DetectionOutcome:
    """Detection score = test-split classification accuracy at the 0.5 cut."""
    x, y = ds.test
    if x.shape[0] == 0:
        raise ValueError("test split is empty")
    predicted = (model.decision(x) > 0.5).astype(np.int64)
    return DetectionOutcome(
        score=float(np.mean(predicted == y)), mechanism="logistic_regression"
    )


@dataclass(frozen=True)
class ThresholdAlert:
    """Alert rule: flag an observation whose raw value leaves the
    mu +/- k*sigma band fitted on normal-labeled training rows."""

    mean: float
    std: float
    k: float


def fit_threshold_alert(ds: LabeledDataset, k: float = 3.0) -> ThresholdAlert:
    x, y = ds.train
    normal = x[y == 0, 0]
    if normal.size == 0:
        raise InsufficientDataError("no normal rows in the train split")
    std = float(normal.std())
    return ThresholdAlert(mean=float(normal.mean()), std=std if std > 0 else 1.0, k=k)


def evaluate_threshold_alert(alert: ThresholdAlert, ds: LabeledDataset) -> DetectionOutcome:
    """Detection score = balanced accuracy of the band rule on the test split."""
    x, y = ds.test
    if x.shape[0] == 0:
        raise ValueError("test split is empty")
    flagged = np.abs(x[:, 0] - alert.mean) > alert.k * alert.std
    fault = y == 1
    tpr = float(flagged[fault].mean()) if fault.any() else 0.0
    tnr = float((~flagged[~fault]).mean()) if (~fault).any() else 0.0
    return DetectionOutcome(
        score=(tpr + tnr) / 2.0, mechanism="threshold_alert"
    )


class DetectionMechanism(Protocol):
    """Interface external detectors implement to plug into the runner."""

    def run(self, ds: LabeledDataset) -> DetectionOutcome: ...


@dataclass(frozen=True)
class LogisticRegressionMechanism:
    l2: float = 1e-4
    tol: float = 1e-6

    def run(self, ds: LabeledDataset) -> DetectionOutcome:
        normalized = zscore_fit_apply(ds)
        model = train_logreg(normalized, l2=self.l2, tol=self.tol)
        return evaluate_logreg(model, normalized)


@dataclass(frozen=True)
class ThresholdAlertMechanism:
    k: float = 3.0

    def run(self, ds: LabeledDataset) -> DetectionOutcome:
        alert = fit_threshold_alert(ds, k=self.k)
        return evaluate_threshold_alert(alert, ds)


_REGISTRY: dict[str, Callable[..., DetectionMechanism]] = {}


def register_mechanism(name: str, factory: Callable[..., DetectionMechanism]) -> None:
    _REGISTRY[name] = factory


def make_mechanism(name: str, **params) -> DetectionMechanism:
    try:
        return _REGISTRY[name](**params)
    except KeyError:
        raise KeyError(f"unknown detection mechanism '{name}'") from None


register_mechanism(
    "logistic_regression",
    lambda l2=1e-4, tol=1e-6, **_: LogisticRegressionMechanism(l2=l2, tol=tol),
)
register_mechanism("threshold_alert", lambda alert_k=3.0, **_: ThresholdAlertMechanism(k=alert_k))
