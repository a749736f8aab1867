"""Retention, forgetting, and efficiency metrics plus report assembly.

* Retention: squared maximum mean discrepancy between generated samples
  and held-out retained data (RBF kernel, fixed bandwidth, V-statistic
  with all index pairs including the diagonal), and the accuracy of the
  benchmark classifier on real labeled samples.
* Forgetting: the fraction of generated samples the classifier assigns to
  the forget class (decision threshold 0.5), and the mean classifier
  confidence on that class (leakage).
* Efficiency: wall-clock training time and per-sample generation
  milliseconds measured over 5000 samples at 10 integration steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from .datasets import RETAIN, LabeledDataset
from .energy import BinaryClassifier

__all__ = [
    "KernelConfig",
    "MetricsReport",
    "mmd2",
    "mmd2_reference",
    "retention_accuracy",
    "forget_rate",
    "leakage",
    "measure_inference_ms",
    "evaluate_model",
    "REPORT_COLUMNS",
]

INFERENCE_TIMING_SAMPLES = 5000
INFERENCE_TIMING_STEPS = 10


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel k(x, y) = exp(-||x - y||^2 / (2 bandwidth^2))."""

    bandwidth: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


def _as_batch(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (n, d) array")
    return arr


def _kernel_sum(a: np.ndarray, b: np.ndarray, kernel: KernelConfig) -> float:
    sq = (
        (a * a).sum(axis=1)[:, None]
        + (b * b).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return float(np.exp(-sq / (2.0 * kernel.bandwidth**2)).sum())


def mmd2(X: np.ndarray, Y: np.ndarray, kernel: KernelConfig = KernelConfig()) -> float:
    """Biased (V-statistic) squared MMD with every index pair included:

        (1/n^2) sum k(x, x') + (1/m^2) sum k(y, y') - (2/nm) sum k(x, y)

    Symmetric in (X, Y) and non-negative; identical multisets give 0.
    """
    a = _as_batch(X, "X")
    b = _as_batch(Y, "Y")
    n, m = a.shape[0], b.shape[0]
    value = (
        _kernel_sum(a, a, kernel) / (n * n)
        + _kernel_sum(b, b, kernel) / (m * m)
        - 2.0 * _kernel_sum(a, b, kernel) / (n * m)
    )
    # the estimator is a squared RKHS norm; clip float residue at zero
    return max(value, 0.0)


def mmd2_reference(X: np.ndarray, Y: np.ndarray, kernel: KernelConfig = KernelConfig()) -> float:
    """Naive double-loop evaluation of the same estimator (test oracle)."""
    a = _as_batch(X, "X")
    b = _as_batch(Y, "Y")

    def k(u, v):
        d = u - v
        return np.exp(-(d @ d) / (2.0 * kernel.bandwidth**2))

    term_xx = sum(k(u, v) for u in a for v in a) / (len(a) * len(a))
    term_yy = sum(k(u, v) for u in b for v in b) / (len(b) * len(b))
    term_xy = sum(k(u, v) for u in a for v in b) / (len(a) * len(b))
    return term_xx + term_yy - 2.0 * term_xy


def retention_accuracy(
    classifier: BinaryClassifier, points: np.ndarray, labels: np.ndarray
) -> float:
    """Fraction of real labeled samples the classifier tags correctly."""
    pts = _as_batch(points, "points")
    labels = np.asarray(labels)
    if labels.shape != (pts.shape[0],):
        raise ValueError("labels must align with points")
    return float(np.mean(classifier.predict(pts) == labels))


def forget_rate(classifier: BinaryClassifier, generated: np.ndarray) -> float:
    """Fraction of generated samples classified into the forget class."""
    pts = _as_batch(generated, "generated")
    return float(np.mean(classifier.predict_proba(pts) > 0.5))


def leakage(classifier: BinaryClassifier, generated: np.ndarray) -> float:
    """Mean classifier confidence on the forget class over generated samples."""
    pts = _as_batch(generated, "generated")
    return float(np.mean(classifier.predict_proba(pts)))


def measure_inference_ms(
    model,
    n: int = INFERENCE_TIMING_SAMPLES,
    n_steps: int = INFERENCE_TIMING_STEPS,
    seed: int = 0,
    repeats: int = 3,
) -> tuple[float, float]:
    """Mean and std of per-sample generation time in milliseconds."""
    times = []
    for r in range(repeats):
        start = time.perf_counter()
        model.sample(n, n_steps=n_steps, seed=seed + r)
        times.append((time.perf_counter() - start) * 1000.0 / n)
    return float(np.mean(times)), float(np.std(times))


REPORT_COLUMNS = [
    "dataset",
    "method",
    "seed",
    "lam",
    "mmd_retain",
    "retention_accuracy",
    "forget_rate",
    "leakage",
    "train_time_s",
    "inference_ms_per_sample",
]


@dataclass
class MetricsReport:
    """One experiment run's metric row; None marks an explicitly absent value."""

    dataset: str
    method: str
    seed: int
    lam: float | None
    mmd_retain: float | None
    retention_accuracy: float | None
    forget_rate: float | None
    leakage: float | None
    train_time_s: float | None
    inference_ms_per_sample: float | None

    def __post_init__(self):
        for name in ("retention_accuracy", "forget_rate", "leakage"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("mmd_retain", "train_time_s", "inference_ms_per_sample"):
            v = getattr(self, name)
            if v is not None and v < 0.0:
                raise ValueError(f"{name} must be non-negative, got {v}")

    def to_row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    @staticmethod
    def header() -> list[str]:
        return list(REPORT_COLUMNS)


def evaluate_model(
    model,
    dataset_name: str,
    classifier: BinaryClassifier,
    n_eval: int = 1000,
    eval_seed: int = 0,
    method: str = "",
    lam: float | None = None,
    train_time_s: float | None = None,
    inference_ms: float | None = None,
    heldout: LabeledDataset | None = None,
) -> MetricsReport:
    """Assemble one report row for a trained generator.

    Generated samples (n_eval of them) are scored against a held-out
    labeled sample of the benchmark: MMD against its retain subset,
    accuracy of the classifier on its labeled rows, forget rate and
    leakage on the generated batch.
    """
    from . import datasets as ds

    if heldout is None:
        # held-out evaluation data: same law, seed stream disjoint from training
        heldout = ds.generate(dataset_name, 4 * n_eval, seed=[eval_seed, 0x6576616C])
    retain = heldout.retain_points
    if retain.shape[0] < n_eval:
        raise ValueError("held-out retain subset smaller than n_eval")
    generated = model.sample(n_eval, seed=[eval_seed, 0x67656E])
    real = retain[:n_eval]
    # accuracy is scored on real held-out retained samples (labels all retain)
    acc_labels = np.full(retain.shape[0], RETAIN)
    return MetricsReport(
        dataset=dataset_name,
        method=method,
        seed=eval_seed,
        lam=lam,
        mmd_retain=mmd2(generated, real),
        retention_accuracy=retention_accuracy(classifier, retain, acc_labels),
        forget_rate=forget_rate(classifier, generated),
        leakage=leakage(classifier, generated),
        train_time_s=train_time_s,
        inference_ms_per_sample=inference_ms,
    )
