"""SHAP-style attribution fingerprints via the DeepLIFT rescale rule.

The explained scalar is the classifier's pre-sigmoid logit g(x). For each
background reference b, layer multipliers are the rescale ratios
(relu(z_x) - relu(z_b)) / (z_x - z_b) chained through the weights, which
makes the per-reference contributions satisfy summation-to-delta exactly:
sum_j phi_j = g(x) - g(b). Averaging over the background set then gives
completeness: phi0 + sum_j phi_j = g(x) with phi0 the mean background logit.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import neural

# Below this pre-activation delta the rescale ratio falls back to the relu
# derivative (1 if z_x > 0 else 0) to avoid 0/0.
NEAR_ZERO_DELTA = 1e-9

# Completeness gap allowed relative to max(1, |g(x)|).
COMPLETENESS_RTOL = 1e-5

ORIGINS = ("clean", "fgsm", "pgd", "deepfool")


class EmptySelectionError(ValueError):
    """The fingerprint class filter selected no rows."""


@dataclass(frozen=True)
class BackgroundSet:
    """Clean, preprocessed reference samples plus their provenance."""

    B: np.ndarray
    seed: int | None = None
    source: str = ""

    def __post_init__(self) -> None:
        B = np.array(self.B, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] < 1:
            raise ValueError("background must be a non-empty 2-d matrix")
        if B.min() < -1e-12 or B.max() > 1.0 + 1e-12:
            raise ValueError("background entries must lie in [0, 1]")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @property
    def size(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def describe(self) -> str:
        return f"{self.source} (k={self.size}, seed={self.seed})"


@dataclass
class AttributionFingerprint:
    """Per-sample SHAP vector phi plus the expected baseline output phi0."""

    phi: np.ndarray
    phi0: float
    model_output: float          # the explained logit g(x)
    sample_id: int | str
    origin: str = "clean"

    @property
    def completeness_gap(self) -> float:
        return abs(self.phi0 + float(self.phi.sum()) - self.model_output)

    def is_complete(self, rtol: float = COMPLETENESS_RTOL) -> bool:
        return self.completeness_gap <= rtol * max(1.0, abs(self.model_output))


def sample_background(
    X: np.ndarray, size: int = 100, seed: int = 0, source: str = "clean-train"
) -> BackgroundSet:
    """Uniform sample without replacement from clean rows, recorded seed."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 1:
        raise ValueError("cannot sample a background from an empty matrix")
    k = min(size, n)
    if k < size:
        warnings.warn(
            f"background size reduced from {size} to {k} (only {n} rows)",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return BackgroundSet(B=X[idx], seed=seed, source=source)


def expected_output(model: neural.MlpModel, background: BackgroundSet) -> float:
    """phi0: mean logit over the background distribution."""
    return float(np.mean(neural.logit(model, background.B)))


def _reference_contributions(
    model: neural.MlpModel,
    x: np.ndarray,
    B: np.ndarray,
    trace_b: neural.ForwardTrace | None = None,
) -> np.ndarray:
    """Rescale-rule contributions of x against each reference row of B.

    Returns a (K, M) matrix whose row k sums to g(x) - g(b_k) up to
    floating point. trace_b may be passed to reuse a precomputed forward
    pass over B.
    """
    if model.output_size != 1:
        raise ValueError("attribution requires a single-output model")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_size:
        raise ValueError("x must be a single input vector matching the model")
    if B.ndim != 2 or B.shape[1] != model.input_size:
        raise ValueError("baseline matrix shape does not match the model input")

    _, trace_x = neural.forward(model, x[None, :])
    if trace_b is None:
        _, trace_b = neural.forward(model, B)

    n_layers = len(model.weights)
    mult = np.ones((B.shape[0], 1))
    for i in reversed(range(n_layers)):
        # mult is d(logit)/d(pre-activation of layer i), per reference
        mult = mult @ model.weights[i]
        if i == 0:
            break
        zx = trace_x.pre[i - 1]            # (1, units)
        zb = trace_b.pre[i - 1]            # (K, units)
        delta = zx - zb
        small = np.abs(delta) <= NEAR_ZERO_DELTA
        ratio = (np.maximum(zx, 0.0) - np.maximum(zb, 0.0)) / np.where(
            small, 1.0, delta
        )
        ratio = np.where(small, (zx > 0).astype(np.float64), ratio)
        mult = mult * ratio
    return mult * (x[None, :] - B)


def deeplift_single(
    model: neural.MlpModel, x: np.ndarray, baseline: np.ndarray
) -> np.ndarray:
    """Contribution vector of x against one reference; sums to g(x) - g(b)."""
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.ndim != 1:
        raise ValueError("baseline must be a single vector")
    return _reference_contributions(model, x, baseline[None, :])[0]


def shap_fingerprint(
    model: neural.MlpModel,
    x: np.ndarray,
    background: BackgroundSet,
    sample_id: int | str = 0,
    origin: str = "clean",
    _trace_b: neural.ForwardTrace | None = None,
    _phi0: float | None = None,
) -> AttributionFingerprint:
    """Mean rescale-rule contributions over the background set.

    Completeness phi0 + sum(phi) = g(x) holds by linearity of the mean.
    """
    contrib = _reference_contributions(model, x, background.B, trace_b=_trace_b)
    phi = contrib.mean(axis=0)
    phi0 = expected_output(model, background) if _phi0 is None else _phi0
    return AttributionFingerprint(
        phi=phi,
        phi0=phi0,
        model_output=float(neural.logit(model, x)),
        sample_id=sample_id,
        origin=origin,
    )


def fingerprint_batch(
    model: neural.MlpModel,
    X: np.ndarray,
    background: BackgroundSet,
    labels: np.ndarray | None = None,
    class_filter: str | None = None,
    sample_ids: np.ndarray | list | None = None,
    origin: str = "clean",
) -> list[AttributionFingerprint]:
    """One fingerprint per selected row, input order preserved.

    class_filter 'malicious' keeps rows with label 1, 'benign' keeps label
    0, None keeps everything. sample_ids defaults to row indices.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    n = X.shape[0]
    if sample_ids is None:
        sample_ids = np.arange(n)
    if len(sample_ids) != n:
        raise ValueError("sample_ids length must match X")

    if class_filter in (None, "all"):
        rows = np.arange(n)
    elif class_filter in ("malicious", "benign"):
        if labels is None:
            raise ValueError("class_filter requires labels")
        wanted = 1 if class_filter == "malicious" else 0
        rows = np.flatnonzero(np.asarray(labels) == wanted)
    else:
        raise ValueError(f"unknown class_filter {class_filter!r}")
    if rows.size == 0:
        raise EmptySelectionError(f"class_filter {class_filter!r} selected no rows")

    _, trace_b = neural.forward(model, background.B)
    phi0 = expected_output(model, background)
    return [
        shap_fingerprint(
            model, X[i], background,
            sample_id=sample_ids[i], origin=origin,
            _trace_b=trace_b, _phi0=phi0,
        )
        for i in rows
    ]


def fingerprints_to_matrix(fps: list[AttributionFingerprint]) -> np.ndarray:
    if not fps:
        raise EmptySelectionError("no fingerprints")
    return np.array([fp.phi for fp in fps], dtype=np.float64)


def count_completeness_violations(
    fps: list[AttributionFingerprint], rtol: float = COMPLETENESS_RTOL
) -> int:
    return sum(not fp.is_complete(rtol) for fp in fps)


def save_fingerprints(fps: list[AttributionFingerprint], path: str | Path) -> None:
    """CSV columns: sample_id, phi0, phi_1..phi_M, model_output, origin."""
    if not fps:
        raise EmptySelectionError("no fingerprints to save")
    m = fps[0].phi.shape[0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "phi0", *(f"phi_{j + 1}" for j in range(m)),
             "model_output", "origin"]
        )
        for fp in fps:
            writer.writerow(
                [fp.sample_id, repr(float(fp.phi0)),
                 *(repr(float(v)) for v in fp.phi),
                 repr(float(fp.model_output)), fp.origin]
            )


def load_fingerprints(path: str | Path) -> list[AttributionFingerprint]:
    path = Path(path)
    fps: list[AttributionFingerprint] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        m = len(header) - 4
        for raw in reader:
            if not raw:
                continue
            fps.append(
                AttributionFingerprint(
                    phi=np.array([float(v) for v in raw[2 : 2 + m]]),
                    phi0=float(raw[1]),
                    model_output=float(raw[2 + m]),
                    sample_id=int(raw[0]) if raw[0].isdigit() else raw[0],
                    origin=raw[3 + m],
                )
            )
    if not fps:
        raise EmptySelectionError(f"{path}: no fingerprints")
    return fps
