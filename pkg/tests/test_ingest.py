import numpy as np
import pytest

from forestpanel import (
    EmissionFactors,
    LoadError,
    Pixel,
    PixelGrid,
    aggregate_emissions,
    aggregate_loss,
    filter_canopy,
    load_panel_csv,
    pixel_panel,
    summary_stats,
    write_panel_csv,
)
from forestpanel.ingest import load_pixel_grid_csv, write_pixel_grid_csv


def grid_of(pixel_specs, events):
    pixels = tuple(Pixel(*spec) for spec in pixel_specs)
    return PixelGrid(pixels, frozenset(events))


@pytest.fixture
def toy_grid():
    return grid_of(
        [
            ("p1", "A", 10.0, 1.0, 80.0),
            ("p2", "A", 20.0, 1.0, 50.0),
            ("p3", "B", 30.0, 1.0, 95.0),
        ],
        [("p1", 2001), ("p3", 2001)],
    )


class TestFilterCanopy:
    def test_zero_threshold_is_identity(self, toy_grid):
        assert filter_canopy(toy_grid, 0.0) == toy_grid

    def test_all_below_threshold(self):
        grid = grid_of([("p1", "A", 1.0, 1.0, 20.0), ("p2", "A", 1.0, 1.0, 20.0)], [])
        assert filter_canopy(grid, 30.0).pixels == ()

    def test_boundary_inclusive(self):
        grid = grid_of(
            [("p1", "A", 1, 1, 25.0), ("p2", "A", 1, 1, 30.0), ("p3", "A", 1, 1, 80.0)],
            [],
        )
        kept = {p.pixel_id for p in filter_canopy(grid, 30.0).pixels}
        assert kept == {"p2", "p3"}

    def test_events_of_removed_pixels_removed(self, toy_grid):
        filtered = filter_canopy(toy_grid, 60.0)
        assert filtered.loss_events == {("p1", 2001), ("p3", 2001)}
        filtered = filter_canopy(toy_grid, 90.0)
        assert filtered.loss_events == {("p3", 2001)}


class TestAggregateLoss:
    def test_no_events(self, toy_grid):
        grid = PixelGrid(toy_grid.pixels, frozenset())
        panel = aggregate_loss(grid, [2001, 2002])
        assert np.all(panel.var("value").values == 0.0)

    def test_direct_sum(self):
        grid = grid_of(
            [("p1", "A", 1, 0.09, 80), ("p2", "A", 1, 0.09, 80)],
            [("p1", 2005), ("p2", 2005)],
        )
        panel = aggregate_loss(grid, [2005])
        assert panel.var("value").values[0, 0] == pytest.approx(0.18)

    def test_matches_brute_force_tally(self):
        rng = np.random.default_rng(99)
        pixels = []
        for i in range(200):
            region = f"R{rng.integers(0, 5)}"
            pixels.append((f"p{i}", region, float(rng.uniform(1, 50)),
                           float(rng.uniform(0.05, 0.2)), float(rng.uniform(0, 100))))
        lost = rng.choice(200, size=80, replace=False)
        events = [(f"p{i}", int(2001 + rng.integers(0, 5))) for i in lost]
        grid = grid_of(pixels, events)
        years = list(range(2001, 2006))
        panel = aggregate_loss(grid, years)
        # brute force: iterate pixels, tally independently
        by_id = {p[0]: p for p in pixels}
        for i, region in enumerate(panel.regions):
            for j, year in enumerate(years):
                expected = sum(
                    by_id[pid][3]
                    for pid, yr in events
                    if yr == year and by_id[pid][1] == region
                )
                assert panel.var("value").values[i, j] == pytest.approx(expected, abs=1e-12)


class TestAggregateEmissions:
    def test_direct_evaluation(self):
        grid = grid_of(
            [("p1", "A", 10, 1, 80), ("p2", "A", 20, 1, 80), ("p3", "A", 30, 1, 80)],
            [("p1", 2001), ("p3", 2001)],
        )
        panel = aggregate_emissions(grid, EmissionFactors(theta=1.0), [2001])
        assert panel.var("value").values[0, 0] == pytest.approx(40.0)

    def test_theta_zero_invalid(self):
        with pytest.raises(LoadError):
            EmissionFactors(theta=0.0)

    def test_tiny_theta_scales_to_zero(self):
        grid = grid_of([("p1", "A", 10, 1, 80)], [("p1", 2001)])
        tiny = aggregate_emissions(grid, EmissionFactors(theta=1e-300), [2001])
        assert tiny.var("value").values[0, 0] == pytest.approx(0.0, abs=1e-290)

    def test_molecular_factor_hand_arithmetic(self):
        grid = grid_of(
            [("p1", "A", 100, 1, 80), ("p2", "A", 50, 1, 80)],
            [("p1", 2001), ("p2", 2001)],
        )
        panel = aggregate_emissions(grid, EmissionFactors(theta=44 / 12), [2001])
        assert panel.var("value").values[0, 0] == pytest.approx(550.0)

    def test_theta_scaling(self):
        rng = np.random.default_rng(4)
        pixels = [(f"p{i}", f"R{i % 3}", float(rng.uniform(1, 99)), 0.09, 80.0) for i in range(30)]
        events = [(f"p{i}", 2001 + i % 4) for i in range(0, 30, 2)]
        grid = grid_of(pixels, events)
        years = range(2001, 2005)
        base = aggregate_emissions(grid, EmissionFactors(theta=1.0), years)
        scaled = aggregate_emissions(grid, EmissionFactors(theta=3.5), years)
        assert np.abs(scaled.var("value").values - 3.5 * base.var("value").values).max() < 1e-10

    def test_partition_additivity(self):
        rng = np.random.default_rng(5)
        pixels = [(f"p{i}", f"R{i % 2}", float(rng.uniform(1, 99)), 0.09, 80.0) for i in range(40)]
        events = [(f"p{i}", 2001 + i % 3) for i in range(0, 40, 3)]
        half_a, half_b = pixels[:20], pixels[20:]
        ids_a = {p[0] for p in half_a}
        years = range(2001, 2004)
        factors = EmissionFactors()
        full = aggregate_emissions(grid_of(pixels, events), factors, years)
        part_a = aggregate_emissions(
            grid_of(half_a, [e for e in events if e[0] in ids_a]), factors, years
        )
        part_b = aggregate_emissions(
            grid_of(half_b, [e for e in events if e[0] not in ids_a]), factors, years
        )
        combined = np.zeros_like(full.var("value").values)
        for part in (part_a, part_b):
            for i, region in enumerate(part.regions):
                combined[full.regions.index(region)] += part.var("value").values[i]
        assert np.abs(full.var("value").values - combined).max() < 1e-10

    def test_support_agreement(self):
        rng = np.random.default_rng(6)
        pixels = [(f"p{i}", f"R{i % 3}", float(rng.uniform(1, 99)), 0.09, 80.0) for i in range(30)]
        events = [(f"p{i}", 2001 + i % 4) for i in range(0, 30, 2)]
        grid = grid_of(pixels, events)
        years = range(2001, 2005)
        panel = pixel_panel(grid, EmissionFactors(), years)
        E = panel.var("E").values
        L = panel.var("L").values
        assert np.all(L[E > 0] > 0)


class TestPixelGridInvariants:
    def test_pixel_lost_at_most_once(self):
        with pytest.raises(LoadError):
            grid_of([("p1", "A", 1, 1, 80)], [("p1", 2001), ("p1", 2002)])

    def test_unknown_pixel_event(self):
        with pytest.raises(LoadError):
            grid_of([("p1", "A", 1, 1, 80)], [("p2", 2001)])

    def test_bad_pixel_fields(self):
        with pytest.raises(LoadError):
            Pixel("p", "A", -1.0, 1.0, 50.0)
        with pytest.raises(LoadError):
            Pixel("p", "A", 1.0, 0.0, 50.0)
        with pytest.raises(LoadError):
            Pixel("p", "A", 1.0, 1.0, 101.0)


class TestPanelCsv:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "panel.csv"
        path.write_text(
            "region,year,L\nA,2001,1.5\nA,2002,2.5\nB,2001,3.5\nB,2002,4.5\n"
        )
        panel, dropped = load_panel_csv(path)
        assert (panel.N, panel.T) == (2, 2)
        assert dropped == []

    def test_duplicate_row_names_line(self, tmp_path):
        path = tmp_path / "panel.csv"
        path.write_text("region,year,L\nA,2001,1\nA,2001,2\n")
        with pytest.raises(LoadError, match=":3"):
            load_panel_csv(path)

    def test_malformed_number_names_line(self, tmp_path):
        path = tmp_path / "panel.csv"
        path.write_text("region,year,L\nA,2001,abc\n")
        with pytest.raises(LoadError, match=":2"):
            load_panel_csv(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "panel.csv"
        path.write_text("county,yr,L\nA,2001,1\n")
        with pytest.raises(LoadError, match="header"):
            load_panel_csv(path)

    def test_drop_report(self, tmp_path):
        path = tmp_path / "panel.csv"
        path.write_text(
            "region,year,L\nA,2001,1\nA,2002,2\nB,2001,3\nB,2002,4\nC,2001,5\n"
        )
        panel, dropped = load_panel_csv(path)
        assert dropped == ["C"]
        assert set(panel.regions) == {"A", "B"}

    def test_round_trip_bit_equal(self, tmp_path):
        rng = np.random.default_rng(11)
        path = tmp_path / "panel.csv"
        rows = "region,year,L,E\n" + "".join(
            f"R{i},{2001 + j},{rng.uniform(0, 1e6)!r},{rng.uniform(0, 1e8)!r}\n"
            for i in range(4)
            for j in range(5)
        )
        path.write_text(rows)
        panel, _ = load_panel_csv(path)
        out = tmp_path / "copy.csv"
        write_panel_csv(panel, out)
        reloaded, _ = load_panel_csv(out)
        for name in panel.variables:
            assert np.array_equal(
                panel.var(name).values, reloaded.var(name).values
            )

    def test_pixel_grid_csv_round_trip(self, tmp_path, toy_grid=None):
        grid = grid_of(
            [("p1", "A", 10.5, 0.09, 80.0), ("p2", "B", 20.25, 0.09, 45.0)],
            [("p1", 2003)],
        )
        write_pixel_grid_csv(grid, tmp_path / "pixels.csv", tmp_path / "events.csv")
        reloaded = load_pixel_grid_csv(tmp_path / "pixels.csv", tmp_path / "events.csv")
        assert reloaded == grid


class TestSummaryStats:
    def make(self, values):
        from forestpanel import Grid, PanelDataset

        arr = np.asarray(values, float).reshape(1, -1)
        return PanelDataset(("A",), tuple(range(2001, 2001 + arr.shape[1])),
                            {"x": Grid.full(arr)})

    def test_constant(self):
        stats = summary_stats(self.make([7, 7, 7]), "x")
        assert stats == {"mean": 7.0, "std": 0.0, "min": 7.0, "median": 7.0, "max": 7.0}

    def test_median_odd(self):
        assert summary_stats(self.make([0, 75, 100]), "x")["median"] == 75.0

    def test_hand_computation(self):
        stats = summary_stats(self.make([1, 2, 3, 4]), "x")
        assert stats["mean"] == 2.5
        assert stats["std"] == pytest.approx(np.sqrt(5 / 3), abs=1e-12)
        assert stats["median"] == 2.5
        assert (stats["min"], stats["max"]) == (1.0, 4.0)
