"""Pattern extraction: standardization, PCA, and extreme-weight composites."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .panel import EventTable

#: Incident-feature universe for the pattern analysis (user-overridable).
DEFAULT_PCA_FEATURES = (
    "max_wind", "precip3d", "trans_speed", "min_distance", "impact_doy",
    "entity_lat", "entity_lon", "log10_basis_goods", "log10_basis_service",
    "delta_goods_m1", "delta_service_m1",
)


@dataclass
class Scaler:
    """Column means and standard deviations used for z-scoring."""

    feature_names: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.sds


@dataclass
class StandardizeResult:
    z: np.ndarray
    scaler: Scaler
    row_index: np.ndarray  # indices of retained rows in the input matrix
    n_dropped_rows: int
    dropped_constant: tuple[str, ...] = ()


def standardize(matrix: np.ndarray, feature_names: tuple[str, ...]) -> StandardizeResult:
    """Z-score columns (mean 0, sample sd 1) after dropping incomplete rows.

    Rows containing any missing value are dropped and counted; constant
    columns are dropped with a warning record.  All-constant input is an
    error.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(feature_names):
        raise ValueError("matrix shape does not match feature names")
    keep_rows = ~np.isnan(x).any(axis=1)
    row_index = np.flatnonzero(keep_rows)
    x = x[keep_rows]
    if x.shape[0] < 2:
        raise EstimationError("standardization needs at least 2 complete rows")
    means = x.mean(axis=0)
    sds = x.std(axis=0)  # population sd: {1, 3} -> {-1, 1}
    varying = sds > 0
    if not varying.any():
        raise EstimationError("all columns are constant")
    dropped = tuple(np.array(feature_names)[~varying])
    x = x[:, varying]
    scaler = Scaler(tuple(np.array(feature_names)[varying]), means[varying], sds[varying])
    return StandardizeResult(
        z=(x - scaler.means) / scaler.sds,
        scaler=scaler,
        row_index=row_index,
        n_dropped_rows=int((~keep_rows).sum()),
        dropped_constant=dropped,
    )


@dataclass
class PcaModel:
    """Eigendecomposition of the sample covariance of standardized data.

    ``components`` holds one orthonormal loading vector per column, sorted
    by explained variance (non-increasing).  The sign convention makes each
    component's largest-magnitude loading positive.
    """

    feature_names: tuple[str, ...]
    scaler: Scaler
    components: np.ndarray  # (p, k), columns are loading vectors
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    scores: np.ndarray  # (n, k)
    row_index: np.ndarray  # alignment of scores with the source table rows

    @property
    def n_components(self) -> int:
        return self.components.shape[1]


def fit_pca(std: StandardizeResult) -> PcaModel:
    """PCA via symmetric eigendecomposition of the covariance (divisor n-1)."""
    z = std.z
    n, p = z.shape
    if n <= p:
        raise EstimationError(f"PCA needs more observations ({n}) than features ({p})")
    if not np.isfinite(z).all():
        raise EstimationError("standardized matrix contains non-finite values")
    cov = (z.T @ z) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    for j in range(p):
        pivot = int(np.argmax(np.abs(eigvecs[:, j])))
        if eigvecs[pivot, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    total = eigvals.sum()
    ratios = eigvals / total if total > 0 else np.full(p, np.nan)
    return PcaModel(
        feature_names=std.scaler.feature_names,
        scaler=std.scaler,
        components=eigvecs,
        explained_variance=eigvals,
        explained_variance_ratio=ratios,
        scores=z @ eigvecs,
        row_index=std.row_index,
    )


def pca_on_table(table: EventTable, features: tuple[str, ...] = DEFAULT_PCA_FEATURES) -> PcaModel:
    """Standardize the selected event-table columns and fit the PCA."""
    matrix = np.column_stack([table.column(name) for name in features])
    return fit_pca(standardize(matrix, tuple(features)))


@dataclass
class GroupComposite:
    group: str  # "low" or "high"
    n: int
    small_sample: bool
    metrics: dict[str, float]  # metric name -> group mean
    table_rows: np.ndarray  # row indices into the source table


EXTREME_METRICS = (
    "max_wind", "precip3d", "trans_speed", "delta_goods_m1", "delta_service_m1",
)


def extreme_composites(
    model: PcaModel,
    table: EventTable,
    pc: int,
    low_q: float = 0.10,
    high_q: float = 0.90,
    min_group: int = 10,
) -> tuple[GroupComposite, GroupComposite]:
    """Mean hazard and employment-change metrics of extreme-weight rows.

    Groups are the observations with component scores strictly below the
    ``low_q`` quantile and strictly above the ``high_q`` quantile.  Groups
    smaller than ``min_group`` are emitted with a small-sample flag.
    """
    scores = model.scores[:, pc]
    lo = np.quantile(scores, low_q)
    hi = np.quantile(scores, high_q)
    out = []
    for name, mask in (("low", scores < lo), ("high", scores > hi)):
        rows = model.row_index[mask]
        metrics = {}
        for metric in EXTREME_METRICS:
            values = np.array([_table_cell(table, r, metric) for r in rows])
            values = values[~np.isnan(values)]
            metrics[metric] = float(values.mean()) if values.size else math.nan
        out.append(GroupComposite(name, int(rows.size), rows.size < min_group, metrics, rows))
    return out[0], out[1]


def _table_cell(table: EventTable, row: int, name: str) -> float:
    from .panel import _row_value

    return float(_row_value(table.rows[row], name))
