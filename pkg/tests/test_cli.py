import json

import numpy as np
import pytest

from forestpanel import (
    DGPConfig,
    Grid,
    PanelDataset,
    simulate_dynamic_panel,
    write_panel_csv,
)
from forestpanel.cli import main


def write_log_panel(path, N=30, T=10, rho=0.3, beta=1.0, sigma_u=0.5, seed=80):
    cfg = DGPConfig(n_regions=N, n_years=T, rho=rho, beta=beta,
                    sigma_alpha=1.0, sigma_u=sigma_u, seed=seed)
    panel, _ = simulate_dynamic_panel(cfg)
    write_panel_csv(panel, path)
    return panel


def read_all_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestIngest:
    def test_toy_pixel_grid(self, tmp_path):
        (tmp_path / "pixels.csv").write_text(
            "pixel,region,biomass,area,canopy\n"
            "p1,A,10.0,1.0,80\np2,A,20.0,1.0,80\np3,A,30.0,1.0,80\n"
        )
        (tmp_path / "events.csv").write_text("pixel,year\np1,2001\np3,2001\n")
        out = tmp_path / "out"
        code = main([
            "ingest", "--pixels", str(tmp_path / "pixels.csv"),
            "--events", str(tmp_path / "events.csv"),
            "--theta", "1.0", "--out", str(out),
        ])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        # hand sums: L = 2 ha, E = 10 + 30 = 40
        assert summary["variables"]["L"]["max"] == 2.0
        assert summary["variables"]["E"]["max"] == 40.0
        assert (out / "panel.csv").exists()
        assert (out / "manifest.json").exists()

    def test_panel_passthrough_round_trip(self, tmp_path):
        src = tmp_path / "panel.csv"
        write_log_panel(src)
        out = tmp_path / "out"
        assert main(["ingest", "--panel", str(src), "--out", str(out)]) == 0
        assert (out / "panel.csv").read_bytes() == src.read_bytes()

    def test_bad_input_exits_nonzero(self, tmp_path):
        bad = tmp_path / "panel.csv"
        bad.write_text("region,year,L\nA,2001,not-a-number\n")
        assert main(["ingest", "--panel", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_simulated_grid_skewness(self, tmp_path):
        from forestpanel import GridDGPConfig, simulate_disturbance_grid
        from forestpanel.ingest import write_pixel_grid_csv

        grid = simulate_disturbance_grid(
            GridDGPConfig(n_regions=60, pixels_per_region=200, n_years=10, seed=81)
        )
        write_pixel_grid_csv(grid, tmp_path / "pixels.csv", tmp_path / "events.csv")
        out = tmp_path / "out"
        assert main([
            "ingest", "--pixels", str(tmp_path / "pixels.csv"),
            "--events", str(tmp_path / "events.csv"), "--out", str(out),
        ]) == 0
        stats = json.loads((out / "summary.json").read_text())["variables"]["L"]
        assert stats["max"] > 10 * stats["median"]


class TestEstimate:
    def test_noise_free_fe2w(self, tmp_path):
        rng = np.random.default_rng(82)
        x = rng.normal(size=(8, 6))
        alpha = rng.normal(size=(8, 1))
        panel = PanelDataset(
            tuple(f"r{i}" for i in range(8)), tuple(range(2001, 2007)),
            {"l": Grid.full(x), "e": Grid.full(alpha + 2.0 * x)},
        )
        src = tmp_path / "panel.csv"
        write_panel_csv(panel, src)
        out = tmp_path / "out"
        code = main(["estimate", "--panel", str(src), "--estimator", "fe2w",
                     "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        coef = report["fits"]["fe2w"]["coefficients"][0]
        assert coef["name"] == "l"
        assert coef["estimate"] == pytest.approx(2.0, abs=1e-8)

    def test_all_estimators_with_diagnostics(self, tmp_path):
        src = tmp_path / "panel.csv"
        write_log_panel(src, N=60, T=9, seed=83)
        out = tmp_path / "out"
        code = main(["estimate", "--panel", str(src), "--estimator", "all",
                     "--two-step", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["fits"]) == {"pooled", "fe2w", "lsdv", "diffgmm", "sysgmm"}
        assert "hansen_j" in report["diagnostics"]["diffgmm"]
        assert "within_r2" in report["diagnostics"]["fe2w"]
        tags = {row["estimator"] for row in report["elasticity"]}
        assert {"lsdv", "diffgmm", "sysgmm", "fe2w"} <= tags

    def test_scatter_rows_equal_n_obs(self, tmp_path):
        src = tmp_path / "panel.csv"
        write_log_panel(src, N=20, T=8, seed=84)
        out = tmp_path / "out"
        assert main(["estimate", "--panel", str(src), "--estimator", "fe2w",
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        n_obs = report["fits"]["fe2w"]["n_obs"]
        lines = (out / "scatter.csv").read_text().strip().splitlines()
        assert len(lines) - 1 == n_obs

    def test_levels_pathway(self, tmp_path):
        rng = np.random.default_rng(85)
        L = rng.uniform(0, 100, size=(10, 6))
        E = 3.0 * L + rng.uniform(0, 1, size=(10, 6))
        panel = PanelDataset(
            tuple(f"r{i}" for i in range(10)), tuple(range(2001, 2007)),
            {"L": Grid.full(L), "E": Grid.full(E)},
        )
        src = tmp_path / "panel.csv"
        write_panel_csv(panel, src)
        for flag, out_name in ((["--levels"], "lev"), ([], "log")):
            out = tmp_path / out_name
            assert main(["estimate", "--panel", str(src), "--estimator", "fe2w",
                         *flag, "--out", str(out)]) == 0
        lev = json.loads((tmp_path / "lev" / "report.json").read_text())
        log = json.loads((tmp_path / "log" / "report.json").read_text())
        b_lev = lev["fits"]["fe2w"]["coefficients"][0]["estimate"]
        b_log = log["fits"]["fe2w"]["coefficients"][0]["estimate"]
        assert b_lev == pytest.approx(3.0, abs=0.05)
        assert b_lev != b_log


class TestRobustness:
    def test_full_region_subset_is_noop(self, tmp_path):
        src = tmp_path / "panel.csv"
        panel = write_log_panel(src, N=15, T=8, seed=86)
        out = tmp_path / "out"
        code = main(["robustness", "--panel", str(src), "--estimator", "fe2w",
                     "--regions", ",".join(panel.regions), "--out", str(out)])
        assert code == 0
        table = json.loads((out / "report.json").read_text())["robustness"]
        base = table[0]["coefficients"][0]["estimate"]
        subset = table[1]["coefficients"][0]["estimate"]
        assert subset == pytest.approx(base, abs=1e-12)

    def test_year_exclusion(self, tmp_path):
        src = tmp_path / "panel.csv"
        write_log_panel(src, N=25, T=10, seed=87)
        out = tmp_path / "out"
        code = main(["robustness", "--panel", str(src), "--estimator", "fe2w",
                     "--exclude-years", "2004,2007", "--out", str(out)])
        assert code == 0
        table = json.loads((out / "report.json").read_text())["robustness"]
        assert table[0]["n_obs"] > table[1]["n_obs"]

    def test_no_filter_is_an_error(self, tmp_path):
        src = tmp_path / "panel.csv"
        write_log_panel(src, seed=88)
        assert main(["robustness", "--panel", str(src),
                     "--out", str(tmp_path / "out")]) == 1

    def test_emptying_filter_is_an_error(self, tmp_path):
        src = tmp_path / "panel.csv"
        write_log_panel(src, seed=89)
        assert main(["robustness", "--panel", str(src), "--regions", "nope",
                     "--out", str(tmp_path / "out")]) == 1


class TestMonteCarloCommand:
    def test_smoke_run_two_reps(self, tmp_path):
        config = {
            "dgp": {"n_regions": 20, "n_years": 6, "rho": 0.2, "beta": 1.0,
                    "sigma_alpha": 1.0, "sigma_u": 1.0},
            "estimator": "lsdv",
            "replications": 2,
        }
        (tmp_path / "mc.json").write_text(json.dumps(config))
        out = tmp_path / "out"
        code = main(["montecarlo", "--config", str(tmp_path / "mc.json"),
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        lines = (out / "montecarlo.csv").read_text().strip().splitlines()
        assert len(lines) - 1 == 2

    def test_nickell_preset_signs(self, tmp_path):
        out = tmp_path / "out"
        code = main(["montecarlo", "--preset", "nickell-demo", "--reps", "25",
                     "--seed", "2", "--out", str(out)])
        assert code == 0
        results = json.loads((out / "montecarlo.json").read_text())["results"]
        lsdv_rho = results["lsdv"]["aggregates"]["e_l1"]["mean"]
        gmm_rho = results["diffgmm"]["aggregates"]["e_l1"]["mean"]
        assert lsdv_rho < 0.45
        assert abs(gmm_rho - 0.5) < abs(lsdv_rho - 0.5)

    def test_same_seed_byte_identical(self, tmp_path):
        config = {
            "dgp": {"n_regions": 15, "n_years": 6, "rho": 0.2, "beta": 1.0,
                    "sigma_u": 1.0},
            "estimator": "fe2w",
            "replications": 3,
        }
        (tmp_path / "mc.json").write_text(json.dumps(config))
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["montecarlo", "--config", str(tmp_path / "mc.json"),
                         "--seed", "7", "--out", str(out)]) == 0
            outputs.append(read_all_bytes(out))
        assert outputs[0] == outputs[1]
