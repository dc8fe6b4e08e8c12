"""Balanced region-by-year panel data model and deterministic transformations.

The panel is the currency every other module trades in: a set of named
N x T variable grids over the same ordered regions and consecutive years.
Derived grids (lags, differences) carry an explicit availability mask so
invalid cells can never leak into an estimation sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np


class PanelError(ValueError):
    """Invalid panel construction or transformation."""


@dataclass(frozen=True)
class Grid:
    """An N x T grid of values with an availability mask.

    Cells with ``available == False`` hold a placeholder value and must be
    dropped (never imputed) by any consumer.
    """

    values: np.ndarray
    available: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        available = np.asarray(self.available, dtype=bool)
        if values.ndim != 2:
            raise PanelError("grid values must be a 2-D (region x year) array")
        if values.shape != available.shape:
            raise PanelError("grid values and availability mask shapes differ")
        if not np.all(np.isfinite(values[available])):
            raise PanelError("grid contains non-finite values in available cells")
        values = values.copy()
        available = available.copy()
        values.setflags(write=False)
        available.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "available", available)

    @classmethod
    def full(cls, values) -> "Grid":
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PanelDataset:
    """Immutable balanced panel: ordered regions, consecutive years, named grids."""

    regions: tuple[str, ...]
    years: tuple[int, ...]
    variables: Mapping[str, Grid] = field(default_factory=dict)

    def __post_init__(self):
        regions = tuple(str(r) for r in self.regions)
        years = tuple(int(y) for y in self.years)
        if len(set(regions)) != len(regions):
            raise PanelError("region identifiers must be unique")
        if not regions or not years:
            raise PanelError("panel needs at least one region and one year")
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise PanelError("years must be strictly consecutive integers")
        variables = dict(self.variables)
        for name, grid in variables.items():
            if grid.shape != (len(regions), len(years)):
                raise PanelError(
                    f"variable {name!r} has shape {grid.shape}, "
                    f"expected {(len(regions), len(years))}"
                )
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "variables", MappingProxyType(variables))

    @property
    def N(self) -> int:
        return len(self.regions)

    @property
    def T(self) -> int:
        return len(self.years)

    def var(self, name: str) -> Grid:
        try:
            return self.variables[name]
        except KeyError:
            raise PanelError(f"unknown variable {name!r}") from None

    def with_variable(self, name: str, grid: Grid) -> "PanelDataset":
        """Return a new panel with one extra variable. Names are write-once."""
        if name in self.variables:
            raise PanelError(f"variable {name!r} already exists (write-once)")
        merged = dict(self.variables)
        merged[name] = grid
        return PanelDataset(self.regions, self.years, merged)


def build_panel(
    rows: Iterable[tuple[str, int, str, float]],
) -> tuple[PanelDataset, list[str]]:
    """Assemble a balanced panel from (region, year, variable, value) rows.

    Regions missing any (year, variable) cell over the observed year span are
    dropped. Returns the panel together with the list of dropped regions.
    """
    cells: dict[tuple[str, int, str], float] = {}
    region_order: list[str] = []
    var_order: list[str] = []
    years_seen: set[int] = set()
    for region, year, var, value in rows:
        region, year, var = str(region), int(year), str(var)
        key = (region, year, var)
        if key in cells:
            raise PanelError(f"duplicate cell for region={region} year={year} variable={var}")
        cells[key] = float(value)
        if region not in region_order:
            region_order.append(region)
        if var not in var_order:
            var_order.append(var)
        years_seen.add(year)
    if not cells:
        raise PanelError("no input rows")

    years = tuple(range(min(years_seen), max(years_seen) + 1))
    kept, dropped = [], []
    for region in region_order:
        complete = all((region, y, v) in cells for y in years for v in var_order)
        (kept if complete else dropped).append(region)
    if not kept:
        raise PanelError("no region has a complete year series over the observed span")

    variables = {}
    for v in var_order:
        values = np.array([[cells[(r, y, v)] for y in years] for r in kept])
        variables[v] = Grid.full(values)
    return PanelDataset(tuple(kept), years, variables), dropped


# ---------------------------------------------------------------------------
# transformations

def log1(x):
    """Natural log of (x + 1); defined for x >= 0 so zero maps to zero."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise PanelError("log1 requires nonnegative input")
    out = np.log1p(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def log1_grid(panel: PanelDataset, var: str) -> Grid:
    grid = panel.var(var)
    values = grid.values.copy()
    values[grid.available] = log1(values[grid.available])
    return Grid(values, grid.available)


def demean_region(panel: PanelDataset, var: str) -> Grid:
    grid = panel.var(var)
    if not grid.available.all():
        raise PanelError("demeaning requires a fully available grid")
    return Grid.full(grid.values - grid.values.mean(axis=1, keepdims=True))


def demean_twoway_values(values: np.ndarray) -> np.ndarray:
    """x_it - xbar_i - xbar_t + xbar, exact for balanced grids."""
    values = np.asarray(values, dtype=float)
    return (
        values
        - values.mean(axis=1, keepdims=True)
        - values.mean(axis=0, keepdims=True)
        + values.mean()
    )


def demean_twoway(panel: PanelDataset, var: str) -> Grid:
    grid = panel.var(var)
    if not grid.available.all():
        raise PanelError("demeaning requires a fully available grid")
    return Grid.full(demean_twoway_values(grid.values))


def lag(panel: PanelDataset, var: str, k: int = 1) -> Grid:
    """Shift a variable k years back; the first k years are flagged unavailable."""
    if k < 1:
        raise PanelError("lag order must be >= 1")
    if k >= panel.T:
        raise PanelError(f"lag order {k} >= panel length T={panel.T}")
    grid = panel.var(var)
    values = np.zeros_like(grid.values)
    available = np.zeros_like(grid.available)
    values[:, k:] = grid.values[:, :-k]
    available[:, k:] = grid.available[:, :-k]
    return Grid(values, available)


def first_difference(panel: PanelDataset, var: str) -> Grid:
    """x_it - x_{i,t-1}; the first year is flagged unavailable."""
    grid = panel.var(var)
    values = np.zeros_like(grid.values)
    available = np.zeros_like(grid.available)
    values[:, 1:] = grid.values[:, 1:] - grid.values[:, :-1]
    available[:, 1:] = grid.available[:, 1:] & grid.available[:, :-1]
    return Grid(values, available)


def interact(panel: PanelDataset, var_a: str, var_b: str) -> Grid:
    """Cellwise product; availability is the intersection of both inputs."""
    a, b = panel.var(var_a), panel.var(var_b)
    available = a.available & b.available
    values = np.where(available, a.values * b.values, 0.0)
    return Grid(values, available)


_TRANSFORM_KINDS = {"log1", "lag", "diff", "demean_region", "demean_twoway", "interact"}


@dataclass(frozen=True)
class TransformSpec:
    """Declarative description of one named transformation."""

    source: str
    target: str
    kind: str
    order: int = 1
    with_var: str | None = None

    def __post_init__(self):
        if self.kind not in _TRANSFORM_KINDS:
            raise PanelError(f"unknown transform kind {self.kind!r}")
        if self.kind == "lag" and self.order < 1:
            raise PanelError("lag order must be >= 1")
        if self.kind == "interact" and self.with_var is None:
            raise PanelError("interact transform needs with_var")


def apply_transform(panel: PanelDataset, spec: TransformSpec) -> PanelDataset:
    """Apply one TransformSpec and return a panel extended with the target."""
    if spec.kind == "log1":
        grid = log1_grid(panel, spec.source)
    elif spec.kind == "lag":
        grid = lag(panel, spec.source, spec.order)
    elif spec.kind == "diff":
        grid = first_difference(panel, spec.source)
    elif spec.kind == "demean_region":
        grid = demean_region(panel, spec.source)
    elif spec.kind == "demean_twoway":
        grid = demean_twoway(panel, spec.source)
    else:
        grid = interact(panel, spec.source, spec.with_var)
    return panel.with_variable(spec.target, grid)
