"""Tests for the figure-regeneration package.

These run against synthetic CSVs in the harness formats; nothing here
imports the primary package.
"""

import csv

import matplotlib.pyplot as plt
import numpy as np
import pytest

from figplots import (ResultsTable, plot_multistep_rmse, plot_rmse_vs_gamma,
                      project_representations, render_selection_table)
from figplots.cli import main as cli_main

FIELDS = ["gamma_c", "gamma_r", "model", "seed", "tau", "metric", "value"]


def write_results(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=FIELDS)
        w.writeheader()
        w.writerows(rows)


def sweep_rows():
    rows = []
    rng = np.random.default_rng(0)
    for g in (0.0, 4.0, 8.0):
        for model in ("crn", "msm"):
            for seed in (0, 1, 2):
                for tau in (1, 3, 5):
                    rows.append({"gamma_c": g, "gamma_r": g, "model": model,
                                 "seed": seed, "tau": tau, "metric": "rmse",
                                 "value": round(1 + g * 0.3
                                                + rng.random(), 6)})
                    rows.append({"gamma_c": g, "gamma_r": g, "model": model,
                                 "seed": seed, "tau": tau,
                                 "metric": "treatment_accuracy",
                                 "value": round(rng.uniform(0.5, 1.0), 6)})
    return rows


@pytest.fixture
def results_csv(tmp_path):
    path = tmp_path / "results.csv"
    write_results(path, sweep_rows())
    return path


class TestResultsTable:
    def test_aggregates_seeds_by_median(self, tmp_path):
        path = tmp_path / "r.csv"
        base = {"gamma_c": 1.0, "gamma_r": 1.0, "model": "m", "tau": 1,
                "metric": "rmse"}
        write_results(path, [{**base, "seed": s, "value": v}
                             for s, v in ((0, 1.0), (1, 9.0), (2, 2.0))])
        t = ResultsTable.from_csv(path)
        assert t.value(1.0, 1.0, "m", 1, "rmse") == 2.0

    def test_rejects_empty(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [])
        with pytest.raises(ValueError, match="no result rows"):
            ResultsTable.from_csv(path)

    def test_rejects_missing_model_column(self, tmp_path):
        path = tmp_path / "r.csv"
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["gamma_c", "value"])
            w.writeheader()
            w.writerow({"gamma_c": 0, "value": 1})
        with pytest.raises(ValueError, match="model"):
            ResultsTable.from_csv(path)

    def test_rejects_duplicate_keys(self):
        row = {"gamma_c": 0.0, "gamma_r": 0.0, "model": "m", "tau": 1,
               "metric": "rmse", "value": 1.0}
        with pytest.raises(ValueError, match="duplicate"):
            ResultsTable([row, dict(row)], [])

    def test_keeps_error_rows_separate(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [
            {"gamma_c": 0, "gamma_r": 0, "model": "a", "seed": 0, "tau": 1,
             "metric": "rmse", "value": 1.0},
            {"gamma_c": 0, "gamma_r": 0, "model": "b", "seed": 0, "tau": "",
             "metric": "error", "value": "ValueError: boom"}])
        t = ResultsTable.from_csv(path)
        assert len(t.rows) == 1
        assert len(t.errors) == 1


class TestRmseVsGamma:
    def test_annotations_equal_csv_values(self, results_csv, tmp_path):
        out = tmp_path / "fig.png"
        plt.close("all")
        # re-plot on a live figure to inspect annotation texts
        plot_rmse_vs_gamma(results_csv, out, tau=1)
        assert out.exists()
        table = ResultsTable.from_csv(results_csv)
        expected = set()
        for model in table.models():
            for g in table.symmetric_gammas():
                v = table.value(g, g, model, 1, "rmse")
                expected.add(repr(v))
        # parse the saved figure's annotation strings via a fresh render
        from figplots import plots as P
        texts = []
        orig = P._annotate

        def spy(ax, x, y, value):
            texts.append(repr(value))
            orig(ax, x, y, value)

        P._annotate = spy
        try:
            plot_rmse_vs_gamma(results_csv, tmp_path / "fig2.png", tau=1)
        finally:
            P._annotate = orig
        assert set(texts) == expected
        for t in texts:
            assert float(t) == float(repr(float(t)))  # lossless roundtrip

    def test_requires_two_gammas(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [{"gamma_c": 0.0, "gamma_r": 0.0, "model": "m",
                              "seed": 0, "tau": 1, "metric": "rmse",
                              "value": 1.0}])
        with pytest.raises(ValueError, match="gamma"):
            plot_rmse_vs_gamma(path, tmp_path / "f.png")
        assert not (tmp_path / "f.png").exists()

    def test_empty_csv_writes_nothing(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [])
        with pytest.raises(ValueError):
            plot_rmse_vs_gamma(path, tmp_path / "f.png")
        assert not (tmp_path / "f.png").exists()

    def test_single_model_three_points(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [{"gamma_c": g, "gamma_r": g, "model": "m",
                              "seed": 0, "tau": 1, "metric": "rmse",
                              "value": 1.0 + g}
                             for g in (0.0, 4.0, 8.0)])
        out = tmp_path / "f.png"
        plot_rmse_vs_gamma(path, out)
        assert out.exists()


class TestMultistep:
    def test_writes_panels(self, results_csv, tmp_path):
        out = tmp_path / "panels.png"
        plot_multistep_rmse(results_csv, out)
        assert out.exists()


class TestSelectionTable:
    def test_missing_cells_render_as_dash(self, tmp_path):
        path = tmp_path / "r.csv"
        rows = [{"gamma_c": 5.0, "gamma_r": 5.0, "model": "crn", "seed": 0,
                 "tau": t, "metric": "treatment_accuracy", "value": 0.9}
                for t in (3, 4)]
        rows.append({"gamma_c": 5.0, "gamma_r": 5.0, "model": "msm",
                     "seed": 0, "tau": 3, "metric": "treatment_accuracy",
                     "value": 0.5})
        write_results(path, rows)
        text = render_selection_table(path, tmp_path / "t.txt")
        assert "—" in text          # msm has no tau=4 cell
        assert "0.900" in text and "0.500" in text
        assert (tmp_path / "t.txt").read_text() == text

    def test_block_structure(self, results_csv, tmp_path):
        text = render_selection_table(results_csv)
        assert "== treatment_accuracy ==" in text
        for g in (0, 4, 8):
            assert f"gamma_c={g}, gamma_r={g}" in text


@pytest.fixture
def repr_csv(tmp_path):
    rng = np.random.default_rng(7)
    path = tmp_path / "phi.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["patient_id", "t", "treatment", "subgroup",
                    "phi_0", "phi_1", "phi_2"])
        for i in range(120):
            w.writerow([i // 10, i % 10 + 1, i % 4, i % 3]
                       + list(rng.normal(size=3)))
    return path


class TestProjection:
    def test_seed_fixed_embedding_is_deterministic(self, repr_csv, tmp_path):
        a = project_representations(repr_csv, tmp_path / "a.png", seed=3)
        b = project_representations(repr_csv, tmp_path / "b.png", seed=3)
        assert np.array_equal(a, b)
        assert (tmp_path / "a.png").exists()

    def test_rejects_short_input(self, tmp_path):
        path = tmp_path / "phi.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["patient_id", "t", "treatment", "subgroup", "phi_0"])
            w.writerow([0, 1, 0, 1, 0.5])
        with pytest.raises(ValueError, match="50"):
            project_representations(path, tmp_path / "f.png")

    def test_constant_representations_warn_but_plot(self, tmp_path):
        path = tmp_path / "phi.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["patient_id", "t", "treatment", "subgroup",
                        "phi_0", "phi_1"])
            for i in range(80):
                w.writerow([i, 1, i % 4, 0, 1.0, 2.0])
        out = tmp_path / "f.png"
        with pytest.warns(UserWarning, match="constant"):
            project_representations(path, out, seed=0)
        assert out.exists()


class TestCli:
    def test_subcommands(self, results_csv, repr_csv, tmp_path):
        assert cli_main(["rmse-vs-gamma", str(results_csv),
                         str(tmp_path / "a.png")]) == 0
        assert cli_main(["selection-table", str(results_csv),
                         str(tmp_path / "t.txt")]) == 0
        assert cli_main(["project", str(repr_csv),
                         str(tmp_path / "p.png"), "--seed", "1"]) == 0

    def test_error_exit(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [])
        assert cli_main(["rmse-vs-gamma", str(path),
                         str(tmp_path / "x.png")]) == 1
