"""Predictive modeling of post-storm employment changes.

Month-1 changes are regressed on storm and entity features with a multiple
linear regression baseline and a variance-reduction random forest, validated
with a time-ordered blocked K-fold, and scored under scaled-hazard
counterfactuals.  Forests are bit-reproducible for a given seed: every tree
draws its bootstrap sample and split features from its own generator seeded
by (master seed, tree index), so results do not depend on worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, FormatError
from .panel import EventTable
from .patterns import Scaler

PREDICT_FEATURES = (
    "max_wind", "precip3d", "trans_speed", "min_distance", "impact_doy",
    "entity_lat", "entity_lon",
)
_FORBIDDEN_FEATURES = ("min_pressure",)
TAIL_BAND = (-0.10, -0.05)


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered model inputs and the target column.

    Minimum pressure is never allowed (wind is the sole intensity metric),
    and a goods/service target excludes the other group's employment basis.
    """

    features: tuple[str, ...]
    target: str

    def __post_init__(self):
        if not self.features:
            raise ValueError("feature list is empty")
        if len(set(self.features)) != len(self.features):
            raise ValueError("duplicate feature names")
        for banned in _FORBIDDEN_FEATURES:
            if banned in self.features:
                raise ValueError(f"feature {banned!r} is excluded from predictive models")
        for sector, other in (("goods", "service"), ("service", "goods")):
            if self.target.startswith(f"delta_{sector}_") and f"log10_basis_{other}" in self.features:
                raise ValueError(
                    f"log10_basis_{other} cannot be used when predicting {self.target}"
                )


def default_feature_spec(sector: str = "service") -> FeatureSpec:
    if sector not in ("goods", "service"):
        raise ValueError("default feature spec supports the goods/service targets")
    return FeatureSpec(PREDICT_FEATURES + (f"log10_basis_{sector}",), f"delta_{sector}_m1")


def design_matrix(
    table: EventTable,
    spec: FeatureSpec,
    condition=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Raw (X, y, timestamps, row_index) for complete rows passing ``condition``.

    Timestamps are impact-date ordinals used by the temporal K-fold.
    """
    rows = [
        (i, row) for i, row in enumerate(table.rows) if condition is None or condition(row)
    ]
    x_all = np.array(
        [[_value(table, i, name) for name in spec.features] for i, _ in rows], dtype=float
    ).reshape(len(rows), len(spec.features))
    y_all = np.array([_value(table, i, spec.target) for i, _ in rows], dtype=float)
    ts_all = np.array([row.incident.impact_date.toordinal() for _, row in rows], dtype=float)
    keep = ~(np.isnan(x_all).any(axis=1) | np.isnan(y_all))
    index = np.array([i for i, _ in rows], dtype=int)[keep]
    return x_all[keep], y_all[keep], ts_all[keep], index


def _value(table: EventTable, row: int, name: str) -> float:
    from .panel import _row_value

    return float(_row_value(table.rows[row], name))


def temporal_kfold(n: int, k: int, timestamps: np.ndarray) -> list[np.ndarray]:
    """Split row indices into k time-contiguous blocks of near-equal size.

    Rows are ordered by timestamp (stable on ties); the first ``n % k``
    blocks carry the extra row.  Blocks partition ``range(n)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    timestamps = np.asarray(timestamps)
    if timestamps.shape != (n,):
        raise ValueError("timestamps must have one entry per row")
    order = np.argsort(timestamps, kind="stable")
    return [block for block in np.array_split(order, k)]


# ---------------------------------------------------------------------------
# Multiple linear regression


@dataclass
class LinearModel:
    feature_names: tuple[str, ...]
    coef: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.coef + self.intercept


def fit_mlr(x: np.ndarray, y: np.ndarray, feature_names: tuple[str, ...] | None = None) -> LinearModel:
    """Least squares via QR; exact on noiseless linear data.

    Rank deficiency raises an error naming the collinear columns.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    names = feature_names or tuple(f"x{j}" for j in range(p))
    a = np.column_stack([x, np.ones(n)])
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    bad = [names[j] for j in range(p) if diag[j] <= 1e-10 * max(np.abs(a[:, j]).max(), 1.0)]
    if bad:
        raise EstimationError(f"rank-deficient design, columns: {', '.join(bad)}")
    beta = np.linalg.solve(r, q.T @ y)
    return LinearModel(tuple(names), beta[:p], float(beta[p]))


# ---------------------------------------------------------------------------
# Random forest


@dataclass
class ForestParams:
    n_trees: int = 300
    max_depth: int | None = None
    min_samples_leaf: int = 5
    features_per_split: int | None = None  # default ceil(p / 3)
    seed: int = 0
    n_jobs: int = 1

    def validate(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


@dataclass
class _Tree:
    feature: np.ndarray  # int, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importance: np.ndarray  # per-feature total variance reduction

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            internal = np.flatnonzero(self.feature[node] >= 0)
            if internal.size == 0:
                return self.value[node]
            cur = node[internal]
            go_left = x[internal, self.feature[cur]] <= self.threshold[cur]
            node[internal] = np.where(go_left, self.left[cur], self.right[cur])


def _grow_tree(x: np.ndarray, y: np.ndarray, params: ForestParams, rng) -> _Tree:
    n, p = x.shape
    mtry = params.features_per_split or math.ceil(p / 3)
    mtry = min(mtry, p)
    msl = params.min_samples_leaf
    feature, threshold, left, right, value = [], [], [], [], []
    importance = np.zeros(p)

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(np.arange(n), 0, root)]
    while stack:
        idx, depth, slot = stack.pop()
        ys = y[idx]
        mean = ys.mean()
        value[slot] = float(mean)
        sse_parent = float(((ys - mean) ** 2).sum())
        if (
            idx.size < 2 * msl
            or sse_parent <= 0.0
            or (params.max_depth is not None and depth >= params.max_depth)
        ):
            continue
        best = None  # (cost, feature, threshold, left_size, order)
        for f in rng.permutation(p)[:mtry]:
            vals = x[idx, f]
            order = np.argsort(vals, kind="stable")
            vs = vals[order]
            yo = ys[order]
            c1 = np.cumsum(yo)
            c2 = np.cumsum(yo * yo)
            sizes = np.arange(1, idx.size)
            valid = (vs[:-1] < vs[1:]) & (sizes >= msl) & (idx.size - sizes >= msl)
            if not valid.any():
                continue
            pos = np.flatnonzero(valid)
            nl = sizes[pos].astype(float)
            nr = idx.size - nl
            sse_l = c2[pos] - c1[pos] ** 2 / nl
            sse_r = (c2[-1] - c2[pos]) - (c1[-1] - c1[pos]) ** 2 / nr
            cost = sse_l + sse_r
            j = int(np.argmin(cost))
            if best is None or cost[j] < best[0]:
                cut = 0.5 * (vs[pos[j]] + vs[pos[j] + 1])
                if cut >= vs[pos[j] + 1]:  # float midpoint collapse
                    cut = vs[pos[j]]
                best = (float(cost[j]), int(f), float(cut), int(pos[j] + 1), order)
        if best is None:
            continue
        cost, f, cut, n_left, order = best
        gain = sse_parent - cost
        if gain <= 0.0:
            continue
        importance[f] += gain
        left_idx = idx[order[:n_left]]
        right_idx = idx[order[n_left:]]
        l_slot, r_slot = new_node(), new_node()
        feature[slot] = f
        threshold[slot] = cut
        left[slot] = l_slot
        right[slot] = r_slot
        stack.append((right_idx, depth + 1, r_slot))
        stack.append((left_idx, depth + 1, l_slot))
    return _Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
        importance,
    )


@dataclass
class ForestModel:
    """Bagged regression trees with impurity feature importances."""

    feature_names: tuple[str, ...]
    params: ForestParams
    trees: list[_Tree]
    importances: np.ndarray  # normalized to sum 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.predict(x)
        return total / len(self.trees)


def fit_forest(
    x: np.ndarray,
    y: np.ndarray,
    params: ForestParams | None = None,
    feature_names: tuple[str, ...] | None = None,
) -> ForestModel:
    """Train the forest: each tree sees a bootstrap resample of the rows.

    Tree ``t`` uses ``default_rng([seed, t])``, which makes the fit
    bit-reproducible and independent of ``n_jobs``.
    """
    params = params or ForestParams()
    params.validate()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if n < 2 * params.min_samples_leaf:
        raise EstimationError(
            f"forest needs at least {2 * params.min_samples_leaf} rows, got {n}"
        )
    names = feature_names or tuple(f"x{j}" for j in range(p))

    def build(t: int) -> _Tree:
        rng = np.random.default_rng([params.seed, t])
        rows = rng.integers(0, n, n)
        return _grow_tree(x[rows], y[rows], params, rng)

    if params.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
            trees = list(pool.map(build, range(params.n_trees)))
    else:
        trees = [build(t) for t in range(params.n_trees)]
    raw = np.mean([tree.importance for tree in trees], axis=0)
    total = raw.sum()
    importances = raw / total if total > 0 else np.full(p, 1.0 / p)
    return ForestModel(tuple(names), params, trees, importances)


# ---------------------------------------------------------------------------
# Cross-validation


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float | None:
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot <= 0:
        return None
    ss_res = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def mean_absolute_error(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.abs(y_true - y_pred).mean())


@dataclass
class ModelCvMetrics:
    r2: list[float | None]
    mae: list[float]

    def _stats(self, values: list[float]) -> tuple[float, float]:
        arr = np.array(values, dtype=float)
        if arr.size == 0:
            return math.nan, math.nan
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return float(arr.mean()), sd

    @property
    def r2_mean_sd(self) -> tuple[float, float]:
        return self._stats([v for v in self.r2 if v is not None])

    @property
    def mae_mean_sd(self) -> tuple[float, float]:
        return self._stats(self.mae)


@dataclass
class CvReport:
    k: int
    metrics: dict[str, ModelCvMetrics]
    fold_sizes: list[int]
    fold_models: dict[str, list] = field(default_factory=dict)
    fold_scalers: list[Scaler] = field(default_factory=list)


def _fit_scaler(x: np.ndarray, names: tuple[str, ...]) -> Scaler:
    means = x.mean(axis=0)
    sds = x.std(axis=0)  # population sd, same convention as patterns.standardize
    sds = np.where(sds > 0, sds, 1.0)
    return Scaler(names, means, sds)


def cross_validate(
    model_fitters: dict[str, callable],
    x_raw: np.ndarray,
    y: np.ndarray,
    timestamps: np.ndarray,
    feature_names: tuple[str, ...],
    k: int = 5,
) -> CvReport:
    """Blocked time-ordered K-fold evaluation of each model.

    For every fold the scaler and the models are fit on the other k-1
    blocks only, then scored on the held-out block (R2 and MAE).  A
    zero-variance test target yields a missing R2 for that fold.
    """
    n = y.size
    if n < 2 * k:
        raise EstimationError(f"cross-validation needs at least {2 * k} rows, got {n}")
    blocks = temporal_kfold(n, k, timestamps)
    metrics = {name: ModelCvMetrics([], []) for name in model_fitters}
    fold_models: dict[str, list] = {name: [] for name in model_fitters}
    fold_scalers: list[Scaler] = []
    for i, test_idx in enumerate(blocks):
        train_idx = np.concatenate([b for j, b in enumerate(blocks) if j != i])
        scaler = _fit_scaler(x_raw[train_idx], feature_names)
        fold_scalers.append(scaler)
        x_train = scaler.transform(x_raw[train_idx])
        x_test = scaler.transform(x_raw[test_idx])
        for name, fitter in model_fitters.items():
            model = fitter(x_train, y[train_idx])
            pred = model.predict(x_test)
            metrics[name].r2.append(r2_score(y[test_idx], pred))
            metrics[name].mae.append(mean_absolute_error(y[test_idx], pred))
            fold_models[name].append(model)
    return CvReport(k, metrics, [len(b) for b in blocks], fold_models, fold_scalers)


def feature_importance(fold_forests: list[ForestModel]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sd of normalized impurity importances across CV folds."""
    stack = np.array([forest.importances for forest in fold_forests])
    sd = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 else np.zeros(stack.shape[1])
    return stack.mean(axis=0), sd


# ---------------------------------------------------------------------------
# Hazard-scaling scenarios


@dataclass
class TrainedModel:
    """A fitted model plus the training-time scaler and feature spec."""

    model: object  # ForestModel or LinearModel
    scaler: Scaler
    spec: FeatureSpec
    condition: str = "all"


def train_on_table(
    table: EventTable,
    spec: FeatureSpec,
    condition=None,
    condition_name: str = "all",
    params: ForestParams | None = None,
) -> TrainedModel:
    """Fit a forest on all rows passing the condition (full-sample model)."""
    x_raw, y, _, _ = design_matrix(table, spec, condition)
    scaler = _fit_scaler(x_raw, spec.features)
    forest = fit_forest(scaler.transform(x_raw), y, params, spec.features)
    return TrainedModel(forest, scaler, spec, condition_name)


@dataclass
class ScenarioResult:
    wind_factor: float
    precip_factor: float
    baseline_pred: np.ndarray
    scenario_pred: np.ndarray
    band: tuple[float, float]
    hist_edges: np.ndarray
    hist_baseline: np.ndarray
    hist_scenario: np.ndarray

    @property
    def identical_to_baseline(self) -> bool:
        return bool(np.array_equal(self.baseline_pred, self.scenario_pred))

    @property
    def mean_baseline(self) -> float:
        return float(self.baseline_pred.mean())

    @property
    def mean_scenario(self) -> float:
        return float(self.scenario_pred.mean())

    def tail_mass(self, which: str = "scenario") -> float:
        pred = self.scenario_pred if which == "scenario" else self.baseline_pred
        lo, hi = self.band
        return float(((pred >= lo) & (pred <= hi)).mean())

    @property
    def tail_ratio(self) -> float:
        base = self.tail_mass("baseline")
        return self.tail_mass("scenario") / base if base > 0 else math.inf


def scenario_predict(
    trained: TrainedModel,
    x_raw: np.ndarray,
    wind_factor: float,
    precip_factor: float,
    band: tuple[float, float] = TAIL_BAND,
) -> ScenarioResult:
    """Score a scaled-hazard counterfactual in the training frame.

    Raw wind and 3-day precipitation are multiplied by the factors, then
    re-standardized with the training scaler (never refit) and predicted.
    Factors of exactly 1.0 reproduce the baseline bit-for-bit.
    """
    if wind_factor <= 0 or precip_factor <= 0:
        raise ValueError("scaling factors must be positive")
    features = trained.spec.features
    x_scaled = np.array(x_raw, dtype=float, copy=True)
    for name, factor in (("max_wind", wind_factor), ("precip3d", precip_factor)):
        if name in features:
            x_scaled[:, features.index(name)] *= factor
    baseline = trained.model.predict(trained.scaler.transform(x_raw))
    scenario = trained.model.predict(trained.scaler.transform(x_scaled))
    edges = np.linspace(-0.5, 0.5, 101)
    return ScenarioResult(
        wind_factor=wind_factor,
        precip_factor=precip_factor,
        baseline_pred=baseline,
        scenario_pred=scenario,
        band=band,
        hist_edges=edges,
        hist_baseline=np.histogram(baseline, edges)[0],
        hist_scenario=np.histogram(scenario, edges)[0],
    )


# ---------------------------------------------------------------------------
# Forest serialization (flat node list)

_FOREST_MAGIC = "SPFOREST 1"


def write_forest(trained: TrainedModel, path) -> None:
    """Serialize a trained forest bundle to the documented text format.

    Header lines carry the condition, target, feature names, scaler, and
    hyperparameters; every tree follows as ``tree <i> nodes <n>`` plus one
    ``feature threshold left right value`` line per node (feature -1 marks
    a leaf).  Floats are written with ``repr`` so reloads are bit-exact.
    """
    model = trained.model
    if not isinstance(model, ForestModel):
        raise TypeError("only forest bundles are serialized")
    p = model.params
    lines = [
        _FOREST_MAGIC,
        f"condition {trained.condition}",
        f"target {trained.spec.target}",
        "features " + " ".join(trained.spec.features),
        "scaler_mean " + " ".join(repr(float(v)) for v in trained.scaler.means),
        "scaler_sd " + " ".join(repr(float(v)) for v in trained.scaler.sds),
        (
            f"params n_trees={p.n_trees} max_depth={p.max_depth or 'none'} "
            f"min_samples_leaf={p.min_samples_leaf} "
            f"features_per_split={p.features_per_split or 'auto'} seed={p.seed}"
        ),
        "importances " + " ".join(repr(float(v)) for v in model.importances),
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t} nodes {tree.n_nodes}")
        for j in range(tree.n_nodes):
            lines.append(
                f"{tree.feature[j]} {repr(float(tree.threshold[j]))} "
                f"{tree.left[j]} {tree.right[j]} {repr(float(tree.value[j]))}"
            )
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_forest(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _FOREST_MAGIC:
        raise FormatError(f"{path}: not a serialized forest")
    fields: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("tree "):
        key, _, rest = lines[i].partition(" ")
        fields[key] = rest
        i += 1
    features = tuple(fields["features"].split())
    spec = FeatureSpec(features, fields["target"])
    scaler = Scaler(
        features,
        np.array([float(v) for v in fields["scaler_mean"].split()]),
        np.array([float(v) for v in fields["scaler_sd"].split()]),
    )
    raw_params = dict(pair.split("=") for pair in fields["params"].split())
    params = ForestParams(
        n_trees=int(raw_params["n_trees"]),
        max_depth=None if raw_params["max_depth"] == "none" else int(raw_params["max_depth"]),
        min_samples_leaf=int(raw_params["min_samples_leaf"]),
        features_per_split=(
            None if raw_params["features_per_split"] == "auto" else int(raw_params["features_per_split"])
        ),
        seed=int(raw_params["seed"]),
    )
    importances = np.array([float(v) for v in fields["importances"].split()])
    trees = []
    while i < len(lines) and lines[i] != "end":
        head = lines[i].split()
        if head[0] != "tree":
            raise FormatError(f"{path}: unexpected line {lines[i]!r}")
        n_nodes = int(head[3])
        feature, threshold, lefts, rights, values = [], [], [], [], []
        for j in range(n_nodes):
            f, th, lf, rt, vl = lines[i + 1 + j].split()
            feature.append(int(f))
            threshold.append(float(th))
            lefts.append(int(lf))
            rights.append(int(rt))
            values.append(float(vl))
        trees.append(
            _Tree(
                np.array(feature, dtype=np.int64),
                np.array(threshold),
                np.array(lefts, dtype=np.int64),
                np.array(rights, dtype=np.int64),
                np.array(values),
                np.zeros(len(features)),
            )
        )
        i += 1 + n_nodes
    if len(trees) != params.n_trees:
        raise FormatError(f"{path}: expected {params.n_trees} trees, found {len(trees)}")
    model = ForestModel(features, params, trees, importances)
    return TrainedModel(model, scaler, spec, fields.get("condition", "all"))
