"""Command-line entry point: ingest, estimate, robustness, montecarlo.

Every run writes a manifest with the fully resolved configuration and seed;
rerunning from the same manifest reproduces output files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import diagnostic_bundle
from .dgp import (
    DGPConfig,
    monte_carlo,
    simulate_dynamic_panel,
)
from .estimators import (
    CONST,
    EstimationError,
    RegressionSpec,
    fit_dynamic_lsdv,
    fit_pooled_ols,
    fit_twoway_fe,
    lagged_name,
    long_run_elasticity,
)
from .gmm import GmmOptions, fit_diff_gmm, fit_sys_gmm
from .ingest import (
    DEFAULT_THETA,
    EmissionFactors,
    LoadError,
    filter_canopy,
    load_panel_csv,
    load_pixel_grid_csv,
    pixel_panel,
    summary_stats,
    write_panel_csv,
)
from .panel import (
    Grid,
    PanelDataset,
    PanelError,
    demean_twoway_values,
    log1_grid,
)

ESTIMATOR_CHOICES = ("pooled", "fe2w", "lsdv", "diffgmm", "sysgmm", "all")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out: Path, subcommand: str, args: argparse.Namespace) -> None:
    # the output directory is where files land, not part of the run
    # configuration, so it stays out of the manifest
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")
    }
    _write_json(
        out / "manifest.json",
        {
            "tool": "forestpanel",
            "version": __version__,
            "subcommand": subcommand,
            "config": config,
            "seed": getattr(args, "seed", None),
        },
    )


def _log_variables(panel: PanelDataset, use_levels: bool) -> tuple[PanelDataset, str, str]:
    """Resolve the (regressor, response) pair, log-transforming levels.

    Panels carrying level variables L and E get log1 counterparts l and e;
    panels that already carry l and e are used as-is. With ``use_levels`` the
    raw L and E columns enter the regressions directly.
    """
    names = set(panel.variables)
    if use_levels:
        if {"L", "E"} <= names:
            return panel, "L", "E"
        raise PanelError("levels pathway needs variables 'L' and 'E'")
    if {"l", "e"} <= names:
        return panel, "l", "e"
    if {"L", "E"} <= names:
        panel = panel.with_variable("l", log1_grid(panel, "L"))
        panel = panel.with_variable("e", log1_grid(panel, "E"))
        return panel, "l", "e"
    raise PanelError("panel must contain variables L/E or l/e")


def _gmm_options(args, level_equations: bool = False) -> GmmOptions:
    return GmmOptions(
        min_lag=args.min_lag,
        max_lag=args.max_lag,
        collapse=args.collapse,
        steps=2 if args.two_step else 1,
        level_equations=level_equations,
    )


def _run_estimators(panel: PanelDataset, x: str, y: str, which: str, args):
    static_spec = RegressionSpec(
        y, (x,), include_region_effects=True, include_time_effects=True
    )
    fits = {}
    if which in ("pooled", "all"):
        fits["pooled"] = fit_pooled_ols(panel, RegressionSpec(y, (CONST, x)))
    if which in ("fe2w", "all"):
        fits["fe2w"] = fit_twoway_fe(panel, static_spec)
    if which in ("lsdv", "all"):
        fits["lsdv"] = fit_dynamic_lsdv(panel, static_spec)
    if which in ("diffgmm", "all"):
        fits["diffgmm"] = fit_diff_gmm(panel, static_spec, _gmm_options(args))
    if which in ("sysgmm", "all"):
        fits["sysgmm"] = fit_sys_gmm(panel, static_spec, _gmm_options(args, True))
    return fits


def _elasticity_rows(fits, x: str, y: str):
    rows = []
    rho_name = lagged_name(y)
    for tag, fit in fits.items():
        if x in fit.coefficients and rho_name in fit.coefficients:
            report = long_run_elasticity(fit, x, rho_name)
            rows.append({"estimator": tag, **report.to_json_dict()})
        elif x in fit.coefficients:
            rows.append(
                {
                    "estimator": tag,
                    "short_run": fit.coefficients[x],
                    "persistence": 0.0,
                    "long_run": fit.coefficients[x],
                    "long_run_se": fit.std_errors()[x],
                }
            )
    return rows


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.panel:
        panel, dropped = load_panel_csv(args.panel)
    elif args.pixels and args.events:
        grid = load_pixel_grid_csv(args.pixels, args.events)
        grid = filter_canopy(grid, args.canopy_threshold)
        years_present = sorted({year for _, year in grid.loss_events})
        if not years_present:
            raise LoadError("pixel grid has no loss events")
        years = range(min(years_present), max(years_present) + 1)
        panel = pixel_panel(grid, EmissionFactors(args.theta), years)
        dropped = []
    else:
        raise LoadError("ingest needs --panel or both --pixels and --events")
    write_panel_csv(panel, out / "panel.csv")
    _write_json(
        out / "summary.json",
        {
            "n_regions": panel.N,
            "n_years": panel.T,
            "dropped_regions": dropped,
            "variables": {name: summary_stats(panel, name) for name in panel.variables},
        },
    )
    _write_manifest(out, "ingest", args)
    print(f"ingest: {panel.N} regions x {panel.T} years, {len(dropped)} dropped")
    return 0


def _scatter_rows(panel: PanelDataset, x: str, y: str):
    gx, gy = panel.var(x), panel.var(y)
    mask = (gx.available & gy.available).all(axis=0)
    dx = demean_twoway_values(gx.values[:, mask])
    dy = demean_twoway_values(gy.values[:, mask])
    years = [panel.years[j] for j in range(panel.T) if mask[j]]
    rows = []
    for i, region in enumerate(panel.regions):
        for j, year in enumerate(years):
            rows.append([region, year, repr(float(dx[i, j])), repr(float(dy[i, j]))])
    return rows


def cmd_estimate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, _ = load_panel_csv(args.panel)
    panel, x, y = _log_variables(panel, args.levels)
    fits = _run_estimators(panel, x, y, args.estimator, args)
    elasticity = _elasticity_rows(fits, x, y)
    report = {
        "fits": {tag: fit.to_json_dict() for tag, fit in fits.items()},
        "diagnostics": {tag: diagnostic_bundle(fit) for tag, fit in fits.items()},
        "elasticity": elasticity,
    }
    _write_json(out / "report.json", report)
    _write_csv(
        out / "elasticity.csv",
        ["estimator", "short_run", "persistence", "long_run", "long_run_se"],
        [
            [r["estimator"], repr(float(r["short_run"])), repr(float(r["persistence"])),
             repr(float(r["long_run"])), repr(float(r["long_run_se"]))]
            for r in elasticity
        ],
    )
    if "fe2w" in fits:
        _write_csv(
            out / "scatter.csv",
            ["region", "year", f"{x}_demeaned", f"{y}_demeaned"],
            _scatter_rows(panel, x, y),
        )
    _write_manifest(out, "estimate", args)
    for tag, fit in fits.items():
        coefs = ", ".join(f"{n}={v:.4f}" for n, v in list(fit.coefficients.items())[:3])
        print(f"{tag}: {coefs} (n={fit.n_obs})")
    return 0


def _mask_years(panel: PanelDataset, excluded: set[int]) -> PanelDataset:
    bad = excluded - set(panel.years)
    if bad:
        raise PanelError(f"excluded years not in panel: {sorted(bad)}")
    cols = [j for j, year in enumerate(panel.years) if year in excluded]
    variables = {}
    for name, grid in panel.variables.items():
        avail = grid.available.copy()
        avail[:, cols] = False
        variables[name] = Grid(grid.values, avail)
    return PanelDataset(panel.regions, panel.years, variables)


def _subset_regions(panel: PanelDataset, keep: list[str]) -> PanelDataset:
    missing = [r for r in keep if r not in panel.regions]
    if missing:
        raise PanelError(f"unknown regions: {missing}")
    if not keep:
        raise PanelError("region subset is empty")
    idx = [panel.regions.index(r) for r in keep]
    variables = {
        name: Grid(grid.values[idx], grid.available[idx])
        for name, grid in panel.variables.items()
    }
    return PanelDataset(tuple(keep), panel.years, variables)


def cmd_robustness(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    excluded = set(args.exclude_years or [])
    regions = args.regions or []
    if not excluded and not regions and not args.levels:
        raise PanelError("robustness needs a filter (--exclude-years, --regions) or --levels")
    base_panel, _ = load_panel_csv(args.panel)
    which = args.estimator if args.estimator != "all" else "fe2w"
    if which in ("diffgmm", "sysgmm") and excluded:
        raise EstimationError("year exclusion breaks the GMM lag chain; use fe2w or lsdv")

    def run(panel, use_levels):
        panel, x, y = _log_variables(panel, use_levels)
        fit = _run_estimators(panel, x, y, which, args)[which]
        return fit

    columns = [("base", run(base_panel, False))]
    if excluded:
        columns.append(
            (f"exclude_years={sorted(excluded)}", run(_mask_years(base_panel, excluded), False))
        )
    if regions:
        columns.append((f"regions={regions}", run(_subset_regions(base_panel, regions), False)))
    if args.levels:
        columns.append(("levels", run(base_panel, True)))

    table = []
    for label, fit in columns:
        table.append(
            {
                "variation": label,
                "estimator": fit.estimator_tag,
                "n_obs": fit.n_obs,
                "coefficients": fit.coefficient_table(),
            }
        )
    _write_json(out / "report.json", {"robustness": table})
    _write_manifest(out, "robustness", args)
    for entry in table:
        lead = entry["coefficients"][0]
        print(f"{entry['variation']}: {lead['name']}={lead['estimate']:.4f}")
    return 0


_PRESETS = {
    "nickell-demo": {
        "dgp": {
            "n_regions": 500,
            "n_years": 6,
            "rho": 0.5,
            "beta": 1.0,
            "sigma_alpha": 1.0,
            "sigma_u": 1.0,
        },
        "estimators": ["lsdv", "diffgmm"],
        "replications": 200,
    }
}


def _mc_estimator(name: str, args):
    spec = RegressionSpec(
        "e", ("l",), include_region_effects=True, include_time_effects=False
    )

    def run(panel):
        if name == "lsdv":
            dyn = RegressionSpec(
                "e", ("l",), include_region_effects=True, include_time_effects=True
            )
            return fit_dynamic_lsdv(panel, dyn)
        if name == "fe2w":
            return fit_twoway_fe(
                panel,
                RegressionSpec(
                    "e", ("l",), include_region_effects=True, include_time_effects=True
                ),
            )
        if name == "pooled":
            return fit_pooled_ols(panel, RegressionSpec("e", (CONST, "l")))
        if name == "diffgmm":
            return fit_diff_gmm(panel, spec, _gmm_options(args))
        if name == "sysgmm":
            return fit_sys_gmm(panel, spec, _gmm_options(args, True))
        raise EstimationError(f"unknown estimator {name!r}")

    return run


def cmd_montecarlo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.preset:
        config = _PRESETS[args.preset]
    elif args.config:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    else:
        raise PanelError("montecarlo needs --config or --preset")
    dgp_fields = dict(config["dgp"])
    dgp_fields.setdefault("seed", args.seed)
    if args.seed is not None:
        dgp_fields["seed"] = args.seed
    dgp = DGPConfig(**dgp_fields)
    reps = args.reps or config.get("replications", 100)
    estimators = config.get("estimators") or [config.get("estimator", "lsdv")]
    dynamic = {"lsdv", "diffgmm", "sysgmm"}
    results = {}
    all_rows = []
    for name in estimators:
        truth = {"l": dgp.beta}
        if name in dynamic:
            truth[lagged_name("e")] = dgp.rho
        study = monte_carlo(dgp, _mc_estimator(name, args), truth, reps)
        results[name] = study.to_json_dict()
        for row in study.per_rep_rows():
            all_rows.append({"estimator": name, **row})
    _write_json(out / "montecarlo.json", {"dgp": sorted(dgp_fields.items()), "results": results})
    value_fields = sorted({k for r in all_rows for k in r} - {"estimator", "rep"})
    fieldnames = ["estimator", "rep"] + value_fields
    _write_csv(
        out / "montecarlo.csv",
        fieldnames,
        [
            [
                repr(float(r[f])) if isinstance(r.get(f), float) else r.get(f, "")
                for f in fieldnames
            ]
            for r in all_rows
        ],
    )
    _write_manifest(out, "montecarlo", args)
    for name, res in results.items():
        agg = res["aggregates"]
        lead = lagged_name("e") if lagged_name("e") in agg else "l"
        print(f"{name}: mean {lead}_hat={agg[lead]['mean']:.4f} (truth {agg[lead]['truth']})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _str_list(text: str) -> list[str]:
    return [part for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forestpanel",
        description="Dynamic panel elasticity toolkit: ingest, estimate, robustness, montecarlo",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-v", "--verbose", action="count", default=0)

    p_ingest = sub.add_parser("ingest", help="build a balanced panel and summary stats")
    p_ingest.add_argument("--panel", help="panel CSV passthrough")
    p_ingest.add_argument("--pixels", help="pixels.csv (pixel,region,biomass,area,canopy)")
    p_ingest.add_argument("--events", help="loss_events.csv (pixel,year)")
    p_ingest.add_argument("--canopy-threshold", type=float, default=30.0)
    p_ingest.add_argument("--theta", type=float, default=DEFAULT_THETA)
    common(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    def estimation_flags(p):
        p.add_argument("--estimator", choices=ESTIMATOR_CHOICES, default="all")
        p.add_argument("--min-lag", type=int, default=2)
        p.add_argument("--max-lag", type=int, default=None)
        p.add_argument("--collapse", action="store_true")
        p.add_argument("--two-step", action="store_true")
        p.add_argument("--levels", action="store_true", help="levels instead of log1")

    p_est = sub.add_parser("estimate", help="run estimators, diagnostics, elasticities")
    p_est.add_argument("--panel", required=True)
    estimation_flags(p_est)
    common(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_rob = sub.add_parser("robustness", help="side-by-side variation table")
    p_rob.add_argument("--panel", required=True)
    estimation_flags(p_rob)
    p_rob.add_argument("--exclude-years", type=_int_list, default=None)
    p_rob.add_argument("--regions", type=_str_list, default=None)
    common(p_rob)
    p_rob.set_defaults(func=cmd_robustness)

    p_mc = sub.add_parser("montecarlo", help="simulation study from a DGP config")
    p_mc.add_argument("--config", help="JSON file with dgp/estimators/replications")
    p_mc.add_argument("--preset", choices=sorted(_PRESETS))
    p_mc.add_argument("--reps", type=int, default=None)
    estimation_flags(p_mc)
    common(p_mc)
    p_mc.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PanelError, LoadError, EstimationError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
