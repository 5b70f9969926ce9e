"""Flow-feature dataset handling: ingestion, scaling, splitting, synthesis.

Feature matrices are float64 throughout. After min-max preprocessing every
value lies in the [0, 1] box; the attack budgets and attribution baselines
downstream rely on that box being fixed.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# CIC-IoT2023 flow features in canonical column order (index 0..38).
CIC_IOT2023_FEATURES: tuple[str, ...] = (
    "Header_Length",
    "Protocol Type",
    "Time_To_Live",
    "Rate",
    "fin_flag_number",
    "syn_flag_number",
    "rst_flag_number",
    "psh_flag_number",
    "ack_flag_number",
    "ece_flag_number",
    "cwr_flag_number",
    "ack_count",
    "syn_count",
    "fin_count",
    "rst_count",
    "HTTP",
    "HTTPS",
    "DNS",
    "Telnet",
    "SMTP",
    "SSH",
    "IRC",
    "TCP",
    "UDP",
    "DHCP",
    "ARP",
    "ICMP",
    "IGMP",
    "IPv",
    "LLC",
    "Tot sum",
    "Min",
    "Max",
    "AVG",
    "Std",
    "Tot size",
    "IAT",
    "Number",
    "Variance",
)

# Label strings mapped to the benign class; everything else is malicious.
DEFAULT_BENIGN_LABELS = frozenset({"BenignTraffic"})

LABEL_COLUMN = "label"


class SchemaError(ValueError):
    """A CSV header or matrix dimension does not match the expected schema."""


class ParseError(ValueError):
    """A CSV cell could not be parsed as a number."""


class EmptyDatasetError(ValueError):
    """No usable rows were found or selected."""


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, unique feature names; list position is the column index."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 1:
            raise SchemaError("schema needs at least one feature")
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def m(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"unknown feature name: {name!r}") from None

    @classmethod
    def cic_iot2023(cls) -> "FeatureSchema":
        return cls(CIC_IOT2023_FEATURES)

    @classmethod
    def synthetic(cls, m: int) -> "FeatureSchema":
        return cls(tuple(f"f{j}" for j in range(m)))


@dataclass(frozen=True)
class FlowDataset:
    """Immutable matrix of flow feature vectors with binary labels.

    y == 0 is benign traffic, y == 1 is malicious traffic.
    """

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise SchemaError(f"X must be 2-d, got shape {X.shape}")
        if X.shape[1] != self.schema.m:
            raise SchemaError(
                f"X has {X.shape[1]} columns but schema has {self.schema.m} features"
            )
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise SchemaError(
                f"label count {y.shape} does not match row count {X.shape[0]}"
            )
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 (benign) or 1 (malicious)")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.schema.m


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature min/max fitted on training data only."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.array(self.min, dtype=np.float64)
        hi = np.array(self.max, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise SchemaError("scaler min/max must be 1-d arrays of equal length")
        if np.any(hi < lo):
            raise ValueError("scaler max must be >= min per feature")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def m(self) -> int:
        return self.min.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    """Stratified train/val/test fractions plus the shuffle seed."""

    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")


def load_csv(
    path: str | Path,
    schema: FeatureSchema,
    label_column: str = LABEL_COLUMN,
    benign_labels: frozenset[str] | set[str] = DEFAULT_BENIGN_LABELS,
) -> FlowDataset:
    """Load a flow-feature CSV into a FlowDataset.

    The header must contain every schema feature plus the label column; extra
    columns are ignored. Label strings found in ``benign_labels`` map to 0,
    everything else to 1. Rows containing NaN/inf are dropped with a counted
    warning.

    Raises:
        SchemaError: a required column is missing from the header.
        ParseError: a cell cannot be parsed as a number (names row/column).
        EmptyDatasetError: the file has no header or no usable data rows.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDatasetError(f"{path}: file is empty")
        header = [cell.strip() for cell in header]
        positions = {name: i for i, name in enumerate(header)}

        missing = [n for n in (*schema.names, label_column) if n not in positions]
        if missing:
            raise SchemaError(
                f"{path}: missing required column(s): {', '.join(missing)}"
            )
        feat_idx = [positions[n] for n in schema.names]
        label_idx = positions[label_column]
        max_idx = max(*feat_idx, label_idx)

        rows: list[list[float]] = []
        labels: list[int] = []
        dropped = 0
        for line_no, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) <= max_idx:
                raise ParseError(
                    f"{path}: row {line_no}: expected at least {max_idx + 1} cells, "
                    f"got {len(raw)}"
                )
            values = []
            for name, col in zip(schema.names, feat_idx):
                cell = raw[col].strip()
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {line_no}, column {name!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            if not all(math.isfinite(v) for v in values):
                dropped += 1
                continue
            rows.append(values)
            labels.append(0 if raw[label_idx].strip() in benign_labels else 1)

    if dropped:
        warnings.warn(
            f"{path}: dropped {dropped} row(s) containing NaN/inf values",
            stacklevel=2,
        )
    if not rows:
        raise EmptyDatasetError(f"{path}: no usable data rows")
    X = np.array(rows, dtype=np.float64)
    logger.info("loaded %d rows x %d features from %s", X.shape[0], X.shape[1], path)
    return FlowDataset(schema=schema, X=X, y=np.array(labels, dtype=np.int64))


def fit_scaler(ds: FlowDataset) -> ScalerParams:
    """Compute per-feature min/max from ``ds`` only (never from test data)."""
    if ds.n < 1:
        raise EmptyDatasetError("cannot fit a scaler on an empty dataset")
    return ScalerParams(min=ds.X.min(axis=0), max=ds.X.max(axis=0))


def apply_scaler(ds: FlowDataset, s: ScalerParams) -> FlowDataset:
    """Min-max scale into [0, 1], clamping; constant features map to 0."""
    if s.m != ds.m:
        raise SchemaError(
            f"scaler has {s.m} features but dataset has {ds.m}"
        )
    span = s.max - s.min
    safe = np.where(span > 0, span, 1.0)
    scaled = np.clip((ds.X - s.min) / safe, 0.0, 1.0)
    scaled[:, span <= 0] = 0.0
    return FlowDataset(schema=ds.schema, X=scaled, y=ds.y)


def _largest_remainder(n: int, fracs: tuple[float, ...]) -> list[int]:
    """Integer allocation of n by fractions, deterministic tie-breaking."""
    quotas = [n * f for f in fracs]
    counts = [int(math.floor(q)) for q in quotas]
    leftovers = sorted(
        range(len(fracs)),
        key=lambda i: (-(quotas[i] - counts[i]), i),
    )
    for i in leftovers[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(
    ds: FlowDataset, spec: SplitSpec
) -> tuple[FlowDataset, FlowDataset, FlowDataset]:
    """Deterministic class-stratified shuffle split.

    Each class is shuffled under the seed and allocated to train/val/test by
    largest-remainder rounding, so every split's class ratio matches the
    whole dataset within one sample per class. Identical spec (including
    seed) always yields identical row assignments.
    """
    if ds.n < 3:
        raise EmptyDatasetError("need at least 3 rows to split")
    rng = np.random.default_rng(spec.seed)
    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in np.unique(ds.y):
        cls_idx = np.flatnonzero(ds.y == cls)
        shuffled = cls_idx[rng.permutation(cls_idx.size)]
        counts = _largest_remainder(cls_idx.size, fracs)
        start = 0
        for part, count in zip(parts, counts):
            part.append(shuffled[start : start + count])
            start += count
    names = ("train", "val", "test")
    out = []
    for name, chunks in zip(names, parts):
        idx = np.sort(np.concatenate(chunks))
        for cls in np.unique(ds.y):
            if not np.any(ds.y[idx] == cls):
                warnings.warn(
                    f"split {name!r} received no rows of class {cls}",
                    stacklevel=2,
                )
        out.append(FlowDataset(schema=ds.schema, X=ds.X[idx], y=ds.y[idx]))
    return out[0], out[1], out[2]


def synth_generate(
    n_per_class: int,
    m: int,
    class_separation: float = 0.3,
    noise: float = 0.1,
    seed: int = 0,
) -> FlowDataset:
    """Generate a two-class Gaussian-mixture dataset inside [0, 1]^m.

    Class centroids sit ``class_separation`` apart along a seeded random
    direction d. Variance along d is tied to the separation (sigma =
    class_separation / 6, so class overlap stays small whenever the classes
    are separated at all); ``noise`` controls the variance perpendicular to
    d, which spreads the per-feature ranges without mixing the classes. The
    last ceil(m/4) features carry no class signal (identical distribution
    in both classes) so importance-rank analysis has known ground truth.
    Benign rows (y=0) come first, then malicious (y=1).
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if m < 2:
        raise ValueError("m must be >= 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    n_noise = math.ceil(m / 4)
    n_informative = m - n_noise

    # Random signs with magnitudes in [0.5, 1.5]: every informative feature
    # contributes, with enough spread for distinct importance ranks.
    direction = np.zeros(m)
    signs = rng.choice((-1.0, 1.0), size=n_informative)
    direction[:n_informative] = signs * rng.uniform(0.5, 1.5, n_informative)
    direction /= np.linalg.norm(direction)

    n = n_per_class
    margin_sigma = class_separation / 6.0
    margins = np.concatenate(
        [
            -0.5 * class_separation + margin_sigma * rng.standard_normal(n),
            +0.5 * class_separation + margin_sigma * rng.standard_normal(n),
        ]
    )
    eta = noise * rng.standard_normal((2 * n, m))
    eta -= np.outer(eta @ direction, direction)  # strictly perpendicular to d
    X = np.clip(0.5 + margins[:, None] * direction + eta, 0.0, 1.0)
    y = np.concatenate([np.zeros(n, int), np.ones(n, int)])
    return FlowDataset(schema=FeatureSchema.synthetic(m), X=X, y=y)


def save_dataset(ds: FlowDataset, path: str | Path) -> None:
    """Write a dataset as CSV with exact float round-trip (repr formatting)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*ds.schema.names, LABEL_COLUMN])
        for row, label in zip(ds.X, ds.y):
            writer.writerow([*(repr(float(v)) for v in row), int(label)])


def load_dataset(path: str | Path) -> FlowDataset:
    """Read back a CSV written by :func:`save_dataset`."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != LABEL_COLUMN:
            raise SchemaError(f"{path}: not a saved dataset (missing label column)")
        schema = FeatureSchema(tuple(header[:-1]))
        rows, labels = [], []
        for raw in reader:
            if not raw:
                continue
            rows.append([float(v) for v in raw[:-1]])
            labels.append(int(raw[-1]))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    return FlowDataset(schema=schema, X=np.array(rows), y=np.array(labels))


def save_scaler(s: ScalerParams, schema: FeatureSchema, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": list(schema.names),
        "min": s.min.tolist(),
        "max": s.max.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_scaler(path: str | Path) -> tuple[ScalerParams, FeatureSchema]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    schema = FeatureSchema(tuple(payload["schema"]))
    params = ScalerParams(min=np.array(payload["min"]), max=np.array(payload["max"]))
    if params.m != schema.m:
        raise SchemaError(f"{path}: scaler/schema dimension mismatch")
    return params, schema
