"""Command-line orchestrator.

Usage: ``stormpanel <subcommand> --config <path> [--cond NAME] [--force]
[--threads N] [--seed N]``.  Subcommands run one pipeline stage each and
write plain delimited text plus a JSON manifest into the configured output
directory.  Exit codes: 0 success, 1 validation error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from . import econometrics, hazard, ingest, panel, patterns, predict
from .config import RunConfig, parse_run_config
from .errors import (
    ConfigError,
    EmptyInputError,
    EstimationError,
    FormatError,
    StaleUpstreamError,
    StormpanelError,
)
from .manifest import RunManifest, StageTimer, check_upstream, write_manifest
from .months import format_month
from .panel import CONDITION_NAMES, named_condition

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _fmt(value) -> str:
    return hazard._fmt(value)


def load_precip(path) -> ingest.PrecipGrid:
    """Load either the long CSV or the packed binary (sniffed by magic)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
    if magic == b"SPGR1":
        return ingest.read_precip_binary(path)
    return ingest.parse_precip(path)


def _monthly_covariates(cfg: RunConfig, employment: ingest.EmploymentPanel):
    cov = ingest.parse_covariates(cfg.input_path("covariates"))
    months = employment.months()
    if not months:
        raise EmptyInputError("employment panel has no usable records")
    return ingest.interpolate_covariates(cov, range(months[0], months[-1] + 1))


def _sector_list(cfg: RunConfig) -> list[str]:
    raw = str(cfg.sectors).strip()
    if raw == "all":
        return list(ingest.SECTORS)
    sectors = [s.strip() for s in raw.split(",") if s.strip()]
    unknown = [s for s in sectors if s not in ingest.SECTORS]
    if unknown:
        raise ConfigError(f"unknown sectors in config: {', '.join(unknown)}")
    return sectors


def _write_csv(path, header, rows) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Stages


def cmd_link(cfg: RunConfig, args) -> None:
    inputs = cfg.require_inputs(["tracks", "precip", "employment", "entities", "covariates", "landmask"])
    outdir = cfg.outdir
    os.makedirs(outdir, exist_ok=True)
    m = RunManifest("link", cfg.config_hash, cfg.seed)
    m.record_inputs(inputs)
    with StageTimer() as timer:
        tracks = ingest.parse_tracks(inputs["tracks"])
        mask = ingest.parse_landmask(inputs["landmask"])
        entities = ingest.parse_entities(inputs["entities"])
        grid = load_precip(inputs["precip"])
        overland = hazard.mask_overland(tracks, mask)
        incidents = hazard.match_incidents(overland, entities, cfg.radius_km)
        incidents = hazard.attach_precip(incidents, grid, cfg.precip_window_days)
        out_path = os.path.join(outdir, "incidents.csv")
        hazard.write_incidents(incidents, out_path)
    if not incidents:
        _warn("no incidents matched; incident file is empty")
    m.counts.update(
        {
            "track_rows": tracks.n_input_rows,
            "track_rows_dropped": tracks.n_dropped_rows,
            "storms": len(tracks.storms),
            "storms_overland": len(overland.storms),
            "points_overland": overland.n_points,
            "entities": len(entities),
            "entity_rows_dropped": entities.n_dropped_rows,
            "incidents": len(incidents),
        }
    )
    m.wall_clock_s = timer.elapsed
    m.record_output(out_path)
    write_manifest(outdir, m)
    print(f"link: {len(incidents)} incidents from {len(overland.storms)} over-land storms")


def cmd_table(cfg: RunConfig, args) -> None:
    inputs = cfg.require_inputs(["employment", "entities", "covariates"])
    outdir = cfg.outdir
    if not args.force:
        check_upstream(outdir, "link", ["incidents.csv"], cfg.config_hash)
    incidents_path = os.path.join(outdir, "incidents.csv")
    inputs["incidents"] = incidents_path
    m = RunManifest("table", cfg.config_hash, cfg.seed)
    m.record_inputs(inputs)
    with StageTimer() as timer:
        incidents = hazard.read_incidents(incidents_path)
        employment = ingest.parse_employment(inputs["employment"])
        entities = ingest.parse_entities(inputs["entities"])
        covariates = _monthly_covariates(cfg, employment)
        table = panel.build_event_table(
            incidents,
            employment,
            covariates,
            entities,
            min_employment=cfg.min_employment,
            ownership=str(cfg.ownership),
        )
        out_path = os.path.join(outdir, "events.csv")
        panel.write_event_table(table, out_path)
    m.counts["event_rows"] = len(table)
    m.counts["employment_rows_dropped"] = employment.n_dropped_rows
    m.counts["employment_cells_dropped"] = employment.n_dropped_cells
    for reason, count in sorted(table.exclusions.items()):
        m.counts[f"excluded_{reason}"] = count
    m.wall_clock_s = timer.elapsed
    m.record_output(out_path)
    write_manifest(outdir, m)
    print(f"table: {len(table)} event rows ({sum(table.exclusions.values())} excluded)")


def _load_events(cfg: RunConfig, args) -> panel.EventTable:
    outdir = cfg.outdir
    if not args.force:
        check_upstream(outdir, "table", ["events.csv"], cfg.config_hash)
    return panel.read_event_table(os.path.join(outdir, "events.csv"))


def cmd_composite(cfg: RunConfig, args) -> None:
    outdir = cfg.outdir
    table = _load_events(cfg, args)
    cond = named_condition(args.cond, cfg.thresholds())
    stage = f"composite_{args.cond}"
    m = RunManifest(stage, cfg.config_hash, cfg.seed)
    m.inputs["events.csv"] = _hash_artifact(outdir, "events.csv")
    with StageTimer() as timer:
        cells = panel.composite_matrix(table, cond)
        comp_path = os.path.join(outdir, f"composites_{args.cond}.csv")
        panel.write_composites(cells, comp_path)
        dist_path = os.path.join(outdir, f"distribution_{args.cond}.csv")
        rows = []
        for sector in ("goods", "service"):
            for region, region_ok in (
                ("all", lambda r: True),
                ("coastal", lambda r: r.coastal_state),
                ("inland", lambda r: not r.coastal_state),
            ):
                dist = panel.conditioned_distribution(
                    table,
                    lambda r, ok=region_ok: cond(r) and ok(r),
                    sector=sector,
                    min_group=cfg.min_group,
                    allow_small=args.allow_small,
                )
                s = dist.summary
                rows.append(
                    [
                        sector, region, dist.sample.size,
                        _fmt(s.mean) if s else "", _fmt(s.sd) if s else "",
                        _fmt(s.skew) if s else "",
                        "1" if dist.refused_small_sample else "0",
                    ]
                )
        _write_csv(dist_path, ["sector", "region", "n", "mean", "sd", "skew", "refused_small_n"], rows)
    m.counts["cells"] = len(cells)
    m.wall_clock_s = timer.elapsed
    m.record_output(comp_path)
    m.record_output(dist_path)
    write_manifest(outdir, m)
    print(f"composite[{args.cond}]: {len(cells)} cells")


def _hash_artifact(outdir: str, name: str) -> str:
    from .manifest import sha256_file

    return sha256_file(os.path.join(outdir, name))


def cmd_fe(cfg: RunConfig, args) -> None:
    inputs = cfg.require_inputs(["employment", "covariates"])
    outdir = cfg.outdir
    if not args.force:
        check_upstream(outdir, "link", ["incidents.csv"], cfg.config_hash)
    inputs["incidents"] = os.path.join(outdir, "incidents.csv")
    m = RunManifest("fe", cfg.config_hash, cfg.seed)
    m.record_inputs(inputs)
    with StageTimer() as timer:
        employment = ingest.parse_employment(inputs["employment"])
        covariates = _monthly_covariates(cfg, employment)
        incidents = hazard.read_incidents(inputs["incidents"])
        rows = []
        failed = 0
        for sector in _sector_list(cfg):
            design = econometrics.build_panel_design(
                employment, covariates, incidents, sector=sector, ownership=str(cfg.ownership)
            )
            try:
                fit = econometrics.fit_fixed_effects(design)
            except EstimationError as exc:
                _warn(f"fe[{sector}]: {exc}")
                failed += 1
                continue
            for term in fit.terms:
                stats = fit.term(term)
                rows.append(
                    [
                        sector, term, _fmt(stats["coef"]), _fmt(stats["se"]),
                        _fmt(stats["p"]), _fmt(stats["se_cluster"]), _fmt(stats["p_cluster"]),
                        "1" if stats["p"] < 0.05 else "0",
                        _fmt(fit.r2_overall), fit.n_obs, fit.n_entities, fit.n_periods,
                    ]
                )
        out_path = os.path.join(outdir, "fe_results.csv")
        _write_csv(
            out_path,
            ["sector", "term", "coef", "se", "p", "se_cluster", "p_cluster",
             "sig05", "r2_overall", "n_obs", "n_entities", "n_periods"],
            rows,
        )
    m.counts["sectors_fit"] = len(_sector_list(cfg)) - failed
    m.counts["sectors_failed"] = failed
    m.wall_clock_s = timer.elapsed
    m.record_output(out_path)
    write_manifest(outdir, m)
    print(f"fe: {m.counts['sectors_fit']} sectors fit")


def cmd_did(cfg: RunConfig, args) -> None:
    inputs = cfg.require_inputs(["employment"])
    outdir = cfg.outdir
    if not args.force:
        check_upstream(outdir, "link", ["incidents.csv"], cfg.config_hash)
    inputs["incidents"] = os.path.join(outdir, "incidents.csv")
    m = RunManifest("did", cfg.config_hash, cfg.seed)
    m.record_inputs(inputs)
    with StageTimer() as timer:
        employment = ingest.parse_employment(inputs["employment"])
        incidents = hazard.read_incidents(inputs["incidents"])
        treatment: dict[str, set[int]] = {}
        for inc in incidents:
            treatment.setdefault(inc.entity_id, set()).add(inc.impact_month)
        ownership = str(cfg.ownership)
        for sector in _sector_list(cfg):
            outcome = {
                (e, month): math.log10(v)
                for (e, own, sec, month), v in employment.data.items()
                if own == ownership and sec == sector and v > 0
            }
            try:
                result = econometrics.did_event_study(
                    outcome, treatment, n_boot=cfg.bootstrap_resamples, seed=cfg.seed
                )
            except EstimationError as exc:
                _warn(f"did[{sector}]: {exc}")
                continue
            for month in result.skipped_event_months:
                _warn(f"did[{sector}]: no controls for event month {format_month(month)}")
            out_path = os.path.join(outdir, f"did_{sector}.csv")
            _write_csv(
                out_path,
                ["rel_month", "att", "ci_low", "ci_high", "n_treated", "n_control"],
                [
                    [int(r), _fmt(float(a)), _fmt(float(lo)), _fmt(float(hi)),
                     result.n_treated, result.n_control]
                    for r, a, lo, hi in zip(
                        result.rel_months, result.att, result.ci_low, result.ci_high
                    )
                ],
            )
            m.record_output(out_path)
            m.counts[f"event_months_{sector}"] = len(result.event_months)
    m.wall_clock_s = timer.elapsed
    write_manifest(outdir, m)
    print(f"did: {len(m.outputs)} sector files")


def cmd_pca(cfg: RunConfig, args) -> None:
    outdir = cfg.outdir
    table = _load_events(cfg, args)
    m = RunManifest("pca", cfg.config_hash, cfg.seed)
    m.inputs["events.csv"] = _hash_artifact(outdir, "events.csv")
    with StageTimer() as timer:
        model = patterns.pca_on_table(table)
        var_path = os.path.join(outdir, "pca_variance.csv")
        _write_csv(
            var_path,
            ["pc", "eigenvalue", "ratio"],
            [
                [pc + 1, _fmt(float(model.explained_variance[pc])),
                 _fmt(float(model.explained_variance_ratio[pc]))]
                for pc in range(model.n_components)
            ],
        )
        load_path = os.path.join(outdir, "pca_loadings.csv")
        _write_csv(
            load_path,
            ["pc", "feature", "loading"],
            [
                [pc + 1, name, _fmt(float(model.components[j, pc]))]
                for pc in range(model.n_components)
                for j, name in enumerate(model.feature_names)
            ],
        )
        comp_rows, member_rows = [], []
        for pc in range(min(4, model.n_components)):
            low, high = patterns.extreme_composites(model, table, pc)
            for group in (low, high):
                for metric, value in group.metrics.items():
                    comp_rows.append(
                        [pc + 1, group.group, metric, _fmt(value), group.n,
                         "1" if group.small_sample else "0"]
                    )
                for row in group.table_rows:
                    inc = table.rows[row].incident
                    member_rows.append([pc + 1, group.group, inc.storm_id, inc.entity_id])
        comp_path = os.path.join(outdir, "pca_composites.csv")
        _write_csv(comp_path, ["pc", "group", "metric", "mean", "n", "small_sample"], comp_rows)
        member_path = os.path.join(outdir, "pca_membership.csv")
        _write_csv(member_path, ["pc", "group", "storm_id", "entity_id"], member_rows)
    m.counts["rows_used"] = int(model.scores.shape[0])
    m.counts["rows_dropped"] = len(table) - int(model.scores.shape[0])
    m.wall_clock_s = timer.elapsed
    for path in (var_path, load_path, comp_path, member_path):
        m.record_output(path)
    write_manifest(outdir, m)
    print(f"pca: {model.n_components} components on {model.scores.shape[0]} rows")


def _forest_params(cfg: RunConfig, seed: int, threads: int) -> predict.ForestParams:
    return predict.ForestParams(
        n_trees=cfg.n_trees,
        max_depth=cfg.max_depth or None,
        min_samples_leaf=cfg.min_samples_leaf,
        features_per_split=cfg.features_per_split or None,
        seed=seed,
        n_jobs=threads,
    )


def cmd_predict(cfg: RunConfig, args) -> None:
    outdir = cfg.outdir
    table = _load_events(cfg, args)
    cond = named_condition(args.cond, cfg.thresholds())
    stage = f"predict_{args.cond}"
    m = RunManifest(stage, cfg.config_hash, cfg.seed)
    m.inputs["events.csv"] = _hash_artifact(outdir, "events.csv")
    with StageTimer() as timer:
        spec = predict.default_feature_spec(str(cfg.target_sector))
        x_raw, y, ts, _ = predict.design_matrix(table, spec, cond)
        params = _forest_params(cfg, cfg.seed, args.threads)
        fitters = {
            "mlr": lambda xz, yy: predict.fit_mlr(xz, yy, spec.features),
            "rf": lambda xz, yy: predict.fit_forest(xz, yy, params, spec.features),
        }
        report = predict.cross_validate(fitters, x_raw, y, ts, spec.features, k=cfg.k_folds)
        cv_path = os.path.join(outdir, f"cv_{args.cond}.csv")
        cv_rows = []
        for name in sorted(report.metrics):
            met = report.metrics[name]
            for fold in range(report.k):
                r2 = met.r2[fold]
                cv_rows.append(
                    [name, fold + 1, report.fold_sizes[fold],
                     "" if r2 is None else _fmt(r2), _fmt(met.mae[fold])]
                )
            r2_mean, r2_sd = met.r2_mean_sd
            mae_mean, mae_sd = met.mae_mean_sd
            cv_rows.append([name, "mean", y.size, _fmt(r2_mean), _fmt(mae_mean)])
            cv_rows.append([name, "sd", y.size, _fmt(r2_sd), _fmt(mae_sd)])
        _write_csv(cv_path, ["model", "fold", "n", "r2", "mae"], cv_rows)

        mean_imp, sd_imp = predict.feature_importance(report.fold_models["rf"])
        imp_path = os.path.join(outdir, f"importance_{args.cond}.csv")
        _write_csv(
            imp_path,
            ["feature", "importance_mean", "importance_sd"],
            [
                [name, _fmt(float(mean_imp[j])), _fmt(float(sd_imp[j]))]
                for j, name in enumerate(spec.features)
            ],
        )
        trained = predict.train_on_table(table, spec, cond, args.cond, params)
        forest_path = os.path.join(outdir, f"forest_{args.cond}.txt")
        predict.write_forest(trained, forest_path)
    m.counts["rows"] = int(y.size)
    m.counts["folds"] = report.k
    m.wall_clock_s = timer.elapsed
    for path in (cv_path, imp_path, forest_path):
        m.record_output(path)
    write_manifest(outdir, m)
    rf_r2 = report.metrics["rf"].r2_mean_sd[0]
    print(f"predict[{args.cond}]: {y.size} rows, rf mean R2 {rf_r2:.3f}")


def cmd_scenario(cfg: RunConfig, args) -> None:
    outdir = cfg.outdir
    table = _load_events(cfg, args)
    stage_up = f"predict_{args.cond}"
    forest_name = f"forest_{args.cond}.txt"
    if not args.force:
        check_upstream(outdir, stage_up, [forest_name], cfg.config_hash)
    wf = args.wind_factor if args.wind_factor is not None else cfg.scenario_wind_factor
    pf = args.precip_factor if args.precip_factor is not None else cfg.scenario_precip_factor
    tag = f"{args.cond}_w{wf:g}_p{pf:g}"
    m = RunManifest(f"scenario_{tag}", cfg.config_hash, cfg.seed)
    m.inputs[forest_name] = _hash_artifact(outdir, forest_name)
    m.inputs["events.csv"] = _hash_artifact(outdir, "events.csv")
    with StageTimer() as timer:
        trained = predict.read_forest(os.path.join(outdir, forest_name))
        cond = named_condition(args.cond, cfg.thresholds())
        x_raw, _, _, _ = predict.design_matrix(table, trained.spec, cond)
        result = predict.scenario_predict(trained, x_raw, wf, pf)
        summary_path = os.path.join(outdir, f"scenario_{tag}_summary.csv")
        identical = result.identical_to_baseline
        summary_rows = [
            ["wind_factor", _fmt(wf)],
            ["precip_factor", _fmt(pf)],
            ["n", str(result.baseline_pred.size)],
            ["mean_baseline", _fmt(result.mean_baseline)],
            ["mean_scenario", _fmt(result.mean_scenario)],
            ["tail_band_low", _fmt(result.band[0])],
            ["tail_band_high", _fmt(result.band[1])],
            ["tail_mass_baseline", _fmt(result.tail_mass("baseline"))],
            ["tail_mass_scenario", _fmt(result.tail_mass("scenario"))],
            ["tail_ratio", _fmt(result.tail_ratio) if math.isfinite(result.tail_ratio) else "inf"],
            ["identical_to_baseline", "1" if identical else "0"],
            ["note", "lower_bound_estimate"],
        ]
        _write_csv(summary_path, ["metric", "value"], summary_rows)
        pred_path = os.path.join(outdir, f"scenario_{tag}_pred.csv")
        _write_csv(
            pred_path,
            ["row", "baseline", "scenario"],
            [
                [i, _fmt(float(b)), _fmt(float(s))]
                for i, (b, s) in enumerate(zip(result.baseline_pred, result.scenario_pred))
            ],
        )
        hist_path = os.path.join(outdir, f"scenario_{tag}_hist.csv")
        _write_csv(
            hist_path,
            ["bin_low", "bin_high", "baseline_count", "scenario_count"],
            [
                [_fmt(float(result.hist_edges[i])), _fmt(float(result.hist_edges[i + 1])),
                 int(result.hist_baseline[i]), int(result.hist_scenario[i])]
                for i in range(result.hist_edges.size - 1)
            ],
        )
    m.counts["rows"] = int(result.baseline_pred.size)
    m.wall_clock_s = timer.elapsed
    m.record_output(summary_path)
    m.record_output(pred_path)
    m.record_output(hist_path)
    write_manifest(outdir, m)
    if identical:
        print(f"scenario[{tag}]: identical to baseline")
    else:
        print(f"scenario[{tag}]: tail ratio {result.tail_ratio:.2f}")


_COMMANDS = {
    "link": cmd_link,
    "table": cmd_table,
    "composite": cmd_composite,
    "fe": cmd_fe,
    "did": cmd_did,
    "pca": cmd_pca,
    "predict": cmd_predict,
    "scenario": cmd_scenario,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stormpanel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--cond", default="all")
        p.add_argument("--force", action="store_true", help="skip upstream staleness checks")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--allow-small", action="store_true", dest="allow_small")
        if name == "scenario":
            p.add_argument("--wind-factor", type=float, default=None, dest="wind_factor")
            p.add_argument("--precip-factor", type=float, default=None, dest="precip_factor")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is None:
        env = os.environ.get("STORMPANEL_THREADS")
        args.threads = int(env) if env else (os.cpu_count() or 1)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.cond not in CONDITION_NAMES:
            raise ConfigError(f"unknown --cond {args.cond!r}; expected one of {CONDITION_NAMES}")
        cfg = parse_run_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.values["seed"] = args.seed
        os.makedirs(cfg.outdir, exist_ok=True)
        _COMMANDS[args.command](cfg, args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"error [validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, StaleUpstreamError, EstimationError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StormpanelError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
