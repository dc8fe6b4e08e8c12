"""Data ingestion: panel CSV loading, pixel-grid aggregation, summary statistics.

Pixel grids stand in for classified satellite rasters: each pixel carries a
region id, biomass carbon density, area, and canopy density, plus a set of
(pixel, year) loss events. Zonal aggregation turns those into the panel's
loss-area and emission variables.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .panel import Grid, PanelDataset, PanelError, build_panel

# CO2/C molecular mass ratio; the conventional carbon-to-CO2e factor.
DEFAULT_THETA = 44.0 / 12.0


class LoadError(ValueError):
    """Malformed input file."""


@dataclass(frozen=True)
class Pixel:
    pixel_id: str
    region: str
    biomass_density: float  # Mg C per hectare
    pixel_area: float       # hectares
    canopy_density: float   # percent, 0..100

    def __post_init__(self):
        if self.biomass_density < 0:
            raise LoadError(f"pixel {self.pixel_id}: negative biomass density")
        if self.pixel_area <= 0:
            raise LoadError(f"pixel {self.pixel_id}: nonpositive area")
        if not 0 <= self.canopy_density <= 100:
            raise LoadError(f"pixel {self.pixel_id}: canopy density outside [0, 100]")


@dataclass(frozen=True)
class PixelGrid:
    """Pixels plus the set of (pixel_id, year) loss events."""

    pixels: tuple[Pixel, ...]
    loss_events: frozenset[tuple[str, int]]

    def __post_init__(self):
        ids = [p.pixel_id for p in self.pixels]
        if len(set(ids)) != len(ids):
            raise LoadError("duplicate pixel ids")
        known = set(ids)
        lost: set[str] = set()
        for pixel_id, _year in sorted(self.loss_events):
            if pixel_id not in known:
                raise LoadError(f"loss event references unknown pixel {pixel_id!r}")
            if pixel_id in lost:
                raise LoadError(f"pixel {pixel_id!r} lost more than once")
            lost.add(pixel_id)

    @property
    def regions(self) -> tuple[str, ...]:
        seen: list[str] = []
        for p in self.pixels:
            if p.region not in seen:
                seen.append(p.region)
        return tuple(seen)


@dataclass(frozen=True)
class EmissionFactors:
    theta: float = DEFAULT_THETA

    def __post_init__(self):
        if self.theta <= 0:
            raise LoadError("theta must be positive")


def filter_canopy(grid: PixelGrid, threshold: float) -> PixelGrid:
    """Keep pixels with canopy density >= threshold (inclusive boundary)."""
    if not 0 <= threshold <= 100:
        raise LoadError("canopy threshold must lie in [0, 100]")
    kept = tuple(p for p in grid.pixels if p.canopy_density >= threshold)
    kept_ids = {p.pixel_id for p in kept}
    events = frozenset(e for e in grid.loss_events if e[0] in kept_ids)
    return PixelGrid(kept, events)


def _aggregate(grid: PixelGrid, years: Sequence[int], per_pixel_mass) -> PanelDataset:
    if not grid.pixels:
        raise LoadError("empty pixel grid")
    years = tuple(int(y) for y in years)
    regions = grid.regions
    region_idx = {r: i for i, r in enumerate(regions)}
    year_idx = {y: j for j, y in enumerate(years)}
    by_id = {p.pixel_id: p for p in grid.pixels}
    totals = np.zeros((len(regions), len(years)))
    # fixed summation order keeps results bit-identical across runs
    for pixel_id, year in sorted(grid.loss_events):
        if year not in year_idx:
            continue
        p = by_id[pixel_id]
        totals[region_idx[p.region], year_idx[year]] += per_pixel_mass(p)
    return PanelDataset(regions, years, {"value": Grid.full(totals)})


def aggregate_loss(grid: PixelGrid, years: Sequence[int]) -> PanelDataset:
    """Annual loss area per region (hectares); zero where nothing was lost."""
    return _aggregate(grid, years, lambda p: p.pixel_area)


def aggregate_emissions(
    grid: PixelGrid, factors: EmissionFactors, years: Sequence[int]
) -> PanelDataset:
    """Annual emissions per region: sum of lost-pixel carbon mass times theta."""
    return _aggregate(
        grid, years, lambda p: p.biomass_density * p.pixel_area * factors.theta
    )


def pixel_panel(
    grid: PixelGrid,
    factors: EmissionFactors,
    years: Sequence[int],
    loss_name: str = "L",
    emissions_name: str = "E",
) -> PanelDataset:
    """Loss and emission variables aggregated into one panel."""
    loss = aggregate_loss(grid, years)
    emis = aggregate_emissions(grid, factors, years)
    return PanelDataset(
        loss.regions,
        loss.years,
        {loss_name: loss.var("value"), emissions_name: emis.var("value")},
    )


# ---------------------------------------------------------------------------
# CSV interfaces

def load_panel_csv(path) -> tuple[PanelDataset, list[str]]:
    """Load a `region,year,<var>,...` CSV into a balanced panel.

    Returns the panel and the list of regions dropped for incompleteness.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "region" or header[1] != "year":
            raise LoadError(f"{path}: header must start with 'region,year,'")
        var_names = header[2:]
        rows: list[tuple[str, int, str, float]] = []
        seen: set[tuple[str, int]] = set()
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise LoadError(f"{path}:{lineno}: expected {len(header)} fields")
            region = record[0]
            try:
                year = int(record[1])
            except ValueError:
                raise LoadError(f"{path}:{lineno}: bad year {record[1]!r}") from None
            if (region, year) in seen:
                raise LoadError(f"{path}:{lineno}: duplicate row for ({region}, {year})")
            seen.add((region, year))
            for name, text in zip(var_names, record[2:]):
                try:
                    value = float(text)
                except ValueError:
                    raise LoadError(
                        f"{path}:{lineno}: malformed number {text!r} for {name}"
                    ) from None
                rows.append((region, year, name, value))
    try:
        return build_panel(rows)
    except PanelError as exc:
        raise LoadError(f"{path}: {exc}") from exc


def write_panel_csv(panel: PanelDataset, path) -> None:
    """Write a fully available panel back to the `region,year,...` layout."""
    names = list(panel.variables)
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["region", "year"] + names)
        for i, region in enumerate(panel.regions):
            for j, year in enumerate(panel.years):
                row = [region, year]
                for name in names:
                    grid = panel.variables[name]
                    if not grid.available[i, j]:
                        raise LoadError(
                            f"variable {name!r} unavailable at ({region}, {year})"
                        )
                    row.append(repr(float(grid.values[i, j])))
                writer.writerow(row)


def load_pixel_grid_csv(pixels_path, events_path) -> PixelGrid:
    """Load the `pixels.csv` / `loss_events.csv` pair."""
    pixels = []
    with Path(pixels_path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"pixel", "region", "biomass", "area", "canopy"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise LoadError(f"{pixels_path}: header must contain {sorted(required)}")
        for lineno, record in enumerate(reader, start=2):
            try:
                pixels.append(
                    Pixel(
                        record["pixel"],
                        record["region"],
                        float(record["biomass"]),
                        float(record["area"]),
                        float(record["canopy"]),
                    )
                )
            except ValueError as exc:
                raise LoadError(f"{pixels_path}:{lineno}: {exc}") from exc
    events = set()
    with Path(events_path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"pixel", "year"} <= set(reader.fieldnames):
            raise LoadError(f"{events_path}: header must contain ['pixel', 'year']")
        for lineno, record in enumerate(reader, start=2):
            try:
                events.add((record["pixel"], int(record["year"])))
            except ValueError as exc:
                raise LoadError(f"{events_path}:{lineno}: {exc}") from exc
    return PixelGrid(tuple(pixels), frozenset(events))


def write_pixel_grid_csv(grid: PixelGrid, pixels_path, events_path) -> None:
    with Path(pixels_path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["pixel", "region", "biomass", "area", "canopy"])
        for p in grid.pixels:
            writer.writerow(
                [p.pixel_id, p.region, repr(p.biomass_density), repr(p.pixel_area), repr(p.canopy_density)]
            )
    with Path(events_path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["pixel", "year"])
        for pixel_id, year in sorted(grid.loss_events):
            writer.writerow([pixel_id, year])


# ---------------------------------------------------------------------------
# summary statistics

def summary_stats(panel: PanelDataset, var: str) -> dict[str, float]:
    """Mean/std/min/median/max over all available cells of one variable."""
    grid = panel.var(var)
    x = grid.values[grid.available]
    return {
        "mean": float(np.mean(x)),
        "std": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
        "min": float(np.min(x)),
        "median": float(np.median(x)),
        "max": float(np.max(x)),
    }


def summary_json(panel: PanelDataset) -> str:
    """Table-style summary statistics for every variable, as JSON text."""
    stats = {name: summary_stats(panel, name) for name in panel.variables}
    return json.dumps(stats, indent=2, sort_keys=True)
