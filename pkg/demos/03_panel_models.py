"""Two-way fixed effects and event-study DiD on the monthly panel.

Fits log10 employment on the hurricane dummy plus socioeconomic covariates
with entity and month intercepts absorbed, then traces the DiD treatment
effect from 4 months before to 12 months after impact.
"""

import math
import tempfile

from stormpanel import ingest
from stormpanel.econometrics import build_panel_design, did_event_study, fit_fixed_effects
from stormpanel.hazard import mask_overland, match_incidents
from stormpanel.synthetic import build_fixture

with tempfile.TemporaryDirectory() as d:
    build_fixture(d)
    tracks = ingest.parse_tracks(f"{d}/tracks.csv")
    mask = ingest.parse_landmask(f"{d}/landmask.csv")
    entities = ingest.parse_entities(f"{d}/entities.csv")
    employment = ingest.parse_employment(f"{d}/employment.csv")
    cov = ingest.parse_covariates(f"{d}/covariates.csv")

months = employment.months()
monthly_cov = ingest.interpolate_covariates(cov, range(months[0], months[-1] + 1))
incidents = match_incidents(mask_overland(tracks, mask), entities)

print("fixed-effects fits (log10 private employment):")
print(f"{'sector':24s} {'R2 overall':>10s} {'hurricane':>12s} {'p':>8s}")
for sector in ("total", "goods", "service", "construction", "leisure_hospitality"):
    design = build_panel_design(employment, monthly_cov, incidents, sector=sector)
    fit = fit_fixed_effects(design)
    h = fit.term("hurricane")
    star = "*" if h["p"] < 0.05 else " "
    print(f"{sector:24s} {fit.r2_overall:10.3f} {h['coef']:+12.5f}{star} {h['p']:8.4f}")

treatment = {}
for inc in incidents:
    treatment.setdefault(inc.entity_id, set()).add(inc.impact_month)
outcome = {
    (e, m): math.log10(v)
    for (e, own, sec, m), v in employment.data.items()
    if own == "private" and sec == "leisure_hospitality" and v > 0
}
res = did_event_study(outcome, treatment, n_boot=400, seed=42)
print(f"\nDiD, leisure and hospitality ({res.n_treated} treated, {res.n_control} controls):")
for r, a, lo, hi in zip(res.rel_months, res.att, res.ci_low, res.ci_high):
    if math.isnan(a):
        continue
    bar = "#" * max(0, int(abs(a) * 300))
    print(f"  month {r:+3d}: {a:+.4f} [{lo:+.4f}, {hi:+.4f}] {bar}")
