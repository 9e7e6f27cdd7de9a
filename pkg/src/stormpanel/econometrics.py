"""Two-way fixed-effects estimation and event-study difference-in-differences.

The fixed-effects model regresses log10 employment on a hurricane dummy and
monthly covariates after absorbing entity and time intercepts by alternating
demeaning.  The DiD estimator compares log-employment changes (relative to
the month before impact) of treated entities against entities never hit in
the -4..+12 window, aggregated across event months and bootstrapped at the
entity level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .ingest import CovariatePanel, EmploymentPanel
from .hazard import Incident
from .errors import EstimationError

X_NAMES = ("income_per_capita", "workage_pop", "education")
DID_WINDOW = (-4, 12)


@dataclass
class PanelDesign:
    """Stacked monthly observations for the fixed-effects model."""

    y: np.ndarray  # log10 employment
    d: np.ndarray  # hurricane dummy, {0, 1}
    x: np.ndarray  # (n, k) covariates
    entity_codes: np.ndarray  # int codes into entity_labels
    time_codes: np.ndarray
    entity_labels: list[str]
    time_labels: list[int]
    x_names: tuple[str, ...] = X_NAMES

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_periods(self) -> int:
        return len(self.time_labels)


def build_panel_design(
    panel: EmploymentPanel,
    covariates: CovariatePanel,
    incidents: list[Incident],
    sector: str = "total",
    ownership: str = "private",
    months: range | None = None,
) -> PanelDesign:
    """Assemble the regression panel for one sector.

    A (entity, month) cell is included when employment is present and
    positive and all covariates are available; entities flagged
    covariate-missing are excluded entirely.  The hurricane dummy is 1 only
    in the calendar month of closest approach.
    """
    if not covariates.monthly:
        raise ValueError("covariates must be interpolated to monthly first")
    treated: dict[str, set[int]] = {}
    for inc in incidents:
        treated.setdefault(inc.entity_id, set()).add(inc.impact_month)
    month_set = set(months) if months is not None else None
    y_rows, d_rows, x_rows, ent_rows, time_rows = [], [], [], [], []
    for (entity_id, own, sec, month), value in panel.data.items():
        if own != ownership or sec != sector or value <= 0:
            continue
        if month_set is not None and month not in month_set:
            continue
        if entity_id in covariates.missing_entities:
            continue
        cov = covariates.month_values(entity_id, month)
        if cov is None:
            continue
        y_rows.append(math.log10(value))
        d_rows.append(1.0 if month in treated.get(entity_id, ()) else 0.0)
        x_rows.append([cov[name] for name in X_NAMES])
        ent_rows.append(entity_id)
        time_rows.append(month)
    entity_labels = sorted(set(ent_rows))
    time_labels = sorted(set(time_rows))
    ent_code = {e: i for i, e in enumerate(entity_labels)}
    time_code = {t: i for i, t in enumerate(time_labels)}
    order = np.lexsort((time_rows, [ent_code[e] for e in ent_rows]))
    y = np.array(y_rows)[order]
    d = np.array(d_rows)[order]
    x = np.array(x_rows, dtype=float).reshape(len(y_rows), len(X_NAMES))[order]
    entity_codes = np.array([ent_code[e] for e in ent_rows])[order]
    time_codes = np.array([time_code[t] for t in time_rows])[order]
    return PanelDesign(y, d, x, entity_codes, time_codes, entity_labels, time_labels)


@dataclass
class DemeanedDesign:
    z: np.ndarray  # (n, 1 + 1 + k) demeaned [y, D, X]
    design: PanelDesign
    entity_adjust: np.ndarray  # (n_entities, cols) cumulative subtracted means
    time_adjust: np.ndarray
    n_sweeps: int


def within_transform(
    design: PanelDesign,
    tol: float = 1e-10,
    max_sweeps: int = 1000,
) -> DemeanedDesign:
    """Absorb entity and time effects by alternating demeaning.

    Balanced panels converge in a single pass; unbalanced panels iterate
    until the largest subtracted mean falls below ``tol``.  The cumulative
    entity/time adjustments are kept so the original values can be
    reconstructed as ``z + entity_adjust[i] + time_adjust[t]``.
    """
    counts_e = np.bincount(design.entity_codes, minlength=design.n_entities)
    if design.n_obs == 0 or counts_e.min() < 2:
        raise EstimationError("every included entity needs at least 2 periods")
    z = np.column_stack([design.y, design.d, design.x]).astype(float)
    ent_adjust = np.zeros((design.n_entities, z.shape[1]))
    time_adjust = np.zeros((design.n_periods, z.shape[1]))
    counts_t = np.bincount(design.time_codes, minlength=design.n_periods)
    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        for codes, counts, adjust in (
            (design.entity_codes, counts_e, ent_adjust),
            (design.time_codes, counts_t, time_adjust),
        ):
            sums = np.zeros_like(adjust)
            np.add.at(sums, codes, z)
            means = sums / counts[:, None]
            z -= means[codes]
            adjust += means
            worst = max(worst, float(np.abs(means).max(initial=0.0)))
        if worst < tol:
            return DemeanedDesign(z, design, ent_adjust, time_adjust, sweep)
    raise EstimationError(f"within transform did not converge in {max_sweeps} sweeps")


@dataclass
class FixedEffectsFit:
    """Coefficients of the hurricane dummy and covariates with inference."""

    terms: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    p: np.ndarray
    se_cluster: np.ndarray
    p_cluster: np.ndarray
    r2_overall: float
    resid_variance: float
    n_obs: int
    n_entities: int
    n_periods: int
    dof: int

    def term(self, name: str) -> dict[str, float]:
        i = self.terms.index(name)
        return {
            "coef": float(self.coef[i]),
            "se": float(self.se[i]),
            "p": float(self.p[i]),
            "se_cluster": float(self.se_cluster[i]),
            "p_cluster": float(self.p_cluster[i]),
        }

    @property
    def delta(self) -> float:
        return float(self.coef[0])


def _t_sf2(t: np.ndarray, dof: int) -> np.ndarray:
    """Two-sided Student-t p-values via the regularized incomplete beta."""
    t = np.asarray(t, dtype=float)
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def fit_fixed_effects(design: PanelDesign) -> FixedEffectsFit:
    """OLS on the demeaned panel with absorbed-effects degrees of freedom.

    Slopes are solved through a QR decomposition; rank deficiency raises an
    error naming the offending columns.  Conventional and entity-clustered
    standard errors are both reported.  ``r2_overall`` is the squared
    Pearson correlation between y and the slope part of the fit on the
    un-demeaned data.
    """
    dm = within_transform(design)
    names = ("hurricane",) + design.x_names
    yd = dm.z[:, 0]
    w = dm.z[:, 1:]
    n, k = w.shape
    q, r = np.linalg.qr(w)
    diag = np.abs(np.diag(r))
    scale = np.abs(w).max(axis=0)
    scale[scale == 0] = 1.0
    bad = [names[j] for j in range(k) if diag[j] <= 1e-10 * max(scale[j], 1.0)]
    if bad:
        raise EstimationError(f"design is rank deficient in columns: {', '.join(bad)}")
    coef = np.linalg.solve(r, q.T @ yd)
    resid = yd - w @ coef
    dof = n - k - design.n_entities - design.n_periods + 1
    if dof <= 0:
        raise EstimationError("not enough observations for the absorbed effects")
    sigma2 = float(resid @ resid) / dof
    rinv = np.linalg.solve(r, np.eye(k))
    xtx_inv = rinv @ rinv.T
    se = np.sqrt(sigma2 * np.diag(xtx_inv))
    p = _t_sf2(coef / se, dof)

    # CR1 entity-clustered sandwich
    n_groups = design.n_entities
    meat = np.zeros((k, k))
    we = w * resid[:, None]
    sums = np.zeros((n_groups, k))
    np.add.at(sums, design.entity_codes, we)
    for g in range(n_groups):
        meat += np.outer(sums[g], sums[g])
    correction = (n_groups / (n_groups - 1)) * ((n - 1) / dof) if n_groups > 1 else 1.0
    vcov_cl = correction * xtx_inv @ meat @ xtx_inv
    se_cl = np.sqrt(np.diag(vcov_cl))
    dof_cl = n_groups - 1
    p_cl = _t_sf2(coef / se_cl, dof_cl)

    fitted_raw = np.column_stack([design.d, design.x]) @ coef
    vy = design.y - design.y.mean()
    vf = fitted_raw - fitted_raw.mean()
    denom = math.sqrt(float(vy @ vy) * float(vf @ vf))
    r2_overall = float((vy @ vf) / denom) ** 2 if denom > 0 else math.nan
    return FixedEffectsFit(
        terms=names,
        coef=coef,
        se=se,
        p=np.asarray(p),
        se_cluster=se_cl,
        p_cluster=np.asarray(p_cl),
        r2_overall=r2_overall,
        resid_variance=sigma2,
        n_obs=n,
        n_entities=design.n_entities,
        n_periods=design.n_periods,
        dof=dof,
    )


# ---------------------------------------------------------------------------
# Event-study difference-in-differences


@dataclass
class DidResult:
    rel_months: np.ndarray  # window offsets, e.g. -4..12
    att: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_treated: int  # treated entity-events across all usable event months
    n_control: int  # control entity-events
    event_months: list[int]
    skipped_event_months: list[int] = field(default_factory=list)
    n_boot: int = 0
    seed: int = 0


def did_event_study(
    outcome: dict[tuple[str, int], float],
    treatment_months: dict[str, set[int]],
    window: tuple[int, int] = DID_WINDOW,
    n_boot: int = 1000,
    seed: int = 0,
    covariates: dict[str, np.ndarray] | None = None,
) -> DidResult:
    """Average treatment effect by month relative to hurricane impact.

    ``outcome`` maps (entity, month index) to the outcome level (log10
    employment in the headline use).  For every event month m the treated
    group is the entities hit at m and the control group is the entities
    with no hit anywhere in [m+window[0], m+window[1]]; both require a
    baseline value at m-1.  Changes are relative to m-1, so the rel-month
    -1 effect is 0 by construction.  Event-month ATTs are combined with
    treated-count weights, and the 95% CI comes from an entity-level
    nonparametric bootstrap with per-resample seeds derived from ``seed``.

    When ``covariates`` maps entities to fixed covariate vectors, the
    optional adjustment mode first regresses the per-entity changes on the
    covariates (pooled treated and control, per relative month, within
    each event month) and estimates the ATT on the residuals.
    """
    lo, hi = window
    rel = np.arange(lo, hi + 1)
    entities = sorted({e for e, _ in outcome})
    ent_code = {e: i for i, e in enumerate(entities)}
    event_months = sorted({m for months in treatment_months.values() for m in months})

    blocks = []  # (treated matrix, control matrix, treated rows, control rows)
    skipped = []
    for m in event_months:
        treated_ids, control_ids = [], []
        for e in entities:
            hits = treatment_months.get(e, set())
            if (e, m - 1) not in outcome:
                continue
            if m in hits:
                treated_ids.append(e)
            elif not any(m + r in hits for r in rel):
                control_ids.append(e)
        if not treated_ids or not control_ids:
            skipped.append(m)
            continue

        def changes(ids):
            mat = np.full((len(ids), rel.size), np.nan)
            for row, e in enumerate(ids):
                base = outcome[(e, m - 1)]
                for j, r in enumerate(rel):
                    v = outcome.get((e, m + r))
                    if v is not None:
                        mat[row, j] = v - base
            return mat

        tr_mat = changes(treated_ids)
        co_mat = changes(control_ids)
        if covariates is not None:
            tr_mat, co_mat = _residualize(tr_mat, co_mat, treated_ids, control_ids, covariates)
        blocks.append(
            (tr_mat,
             co_mat,
             np.array([ent_code[e] for e in treated_ids]),
             np.array([ent_code[e] for e in control_ids]),
             m)
        )
    if not blocks:
        raise EstimationError("no event month has both treated and control entities")

    def weighted_att(multiplicity: np.ndarray) -> np.ndarray:
        total = np.zeros(rel.size)
        weight = np.zeros(rel.size)
        for tr_mat, co_mat, tr_idx, co_idx, _ in blocks:
            w_tr = multiplicity[tr_idx].astype(float)
            w_co = multiplicity[co_idx].astype(float)
            n_tr = w_tr.sum()
            if n_tr == 0 or w_co.sum() == 0:
                continue
            att_m = _weighted_colmean(tr_mat, w_tr) - _weighted_colmean(co_mat, w_co)
            ok = ~np.isnan(att_m)
            total[ok] += n_tr * att_m[ok]
            weight[ok] += n_tr
        with np.errstate(invalid="ignore"):
            return np.where(weight > 0, total / np.maximum(weight, 1.0), np.nan)

    ones = np.ones(len(entities))
    att = weighted_att(ones)
    boots = np.empty((n_boot, rel.size))
    for b in range(n_boot):
        rng = np.random.default_rng([seed, b])
        sample = rng.integers(0, len(entities), len(entities))
        boots[b] = weighted_att(np.bincount(sample, minlength=len(entities)))
    ci_low = np.full(rel.size, np.nan)
    ci_high = np.full(rel.size, np.nan)
    ok = ~np.isnan(att)
    if ok.any():
        ci_low[ok] = np.nanpercentile(boots[:, ok], 2.5, axis=0)
        ci_high[ok] = np.nanpercentile(boots[:, ok], 97.5, axis=0)
    return DidResult(
        rel_months=rel,
        att=att,
        ci_low=ci_low,
        ci_high=ci_high,
        n_treated=sum(len(bl[2]) for bl in blocks),
        n_control=sum(len(bl[3]) for bl in blocks),
        event_months=[bl[4] for bl in blocks],
        skipped_event_months=skipped,
        n_boot=n_boot,
        seed=seed,
    )


def _residualize(tr_mat, co_mat, treated_ids, control_ids, covariates):
    """Replace changes with residuals from a pooled regression on covariates."""
    try:
        x = np.array([covariates[e] for e in treated_ids + control_ids], dtype=float)
    except KeyError as exc:
        raise EstimationError(f"missing covariates for entity {exc.args[0]!r}") from exc
    x = np.column_stack([x, np.ones(x.shape[0])])
    stacked = np.vstack([tr_mat, co_mat])
    out = stacked.copy()
    for j in range(stacked.shape[1]):
        col = stacked[:, j]
        rows = ~np.isnan(col)
        if rows.sum() <= x.shape[1]:
            continue  # too few points to adjust; leave raw changes
        beta, *_ = np.linalg.lstsq(x[rows], col[rows], rcond=None)
        out[rows, j] = col[rows] - x[rows] @ beta
    return out[: tr_mat.shape[0]], out[tr_mat.shape[0]:]


def _weighted_colmean(mat: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Column means with row weights, ignoring NaN cells."""
    mask = ~np.isnan(mat)
    w = weights[:, None] * mask
    totals = np.nansum(np.where(mask, mat, 0.0) * weights[:, None], axis=0)
    denom = w.sum(axis=0)
    with np.errstate(invalid="ignore"):
        return np.where(denom > 0, totals / np.maximum(denom, 1.0), np.nan)
