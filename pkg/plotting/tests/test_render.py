"""Plot contract tests over handcrafted fixture CSVs (no simulator import)."""

import os

import pytest

from fedrec_plots.cli import main
from fedrec_plots.render import PlotJob, SchemaError, render

ROUNDS_HEADER = ("round,selected,reward,staleness,val_hr,val_ndcg,test_hr,test_ndcg,"
                 "unique_clients,bytes_up,bytes_down,wall_ms,contrib_ms")


def write_rounds(path, rows):
    lines = [ROUNDS_HEADER]
    for t, selected, hr, ndcg, ms in rows:
        sel = ";".join(str(c) for c in selected)
        lines.append(f"{t},{sel},0.1,0.05,{hr},{ndcg},,,{len(selected)},10,20,{ms},1.0")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_bias(path, selector, counts):
    lines = ["selector,client_id,count"]
    for cid, count in enumerate(counts):
        lines.append(f"{selector},{cid},{count}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_summary(path, rows):
    lines = ["selector,ablation,lambda,seed,clients_per_round,rounds_run,best_round,"
             "best_val_hr,test_hr,test_ndcg"]
    for lam, seed, hr, ndcg in rows:
        lines.append(f"proxyrl,none,{lam},{seed},5,10,8,0.2,{hr},{ndcg}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestConvergence:
    def test_three_round_log(self, tmp_path):
        csv = write_rounds(tmp_path / "rounds.csv",
                           [(1, [0, 1], 0.10, 0.05, 900.0),
                            (2, [1, 2], 0.15, 0.08, 850.0),
                            (3, [0, 2], 0.18, 0.09, 820.0)])
        out = tmp_path / "conv.png"
        stats = render(PlotJob("convergence", [csv], str(out)))
        assert out.exists() and out.stat().st_size > 0
        assert stats["x_max"] == 3.0
        assert stats["series"] == 1

    def test_time_axis_and_overlay(self, tmp_path):
        a = write_rounds(tmp_path / "a.csv", [(1, [0], 0.1, 0.05, 1000.0),
                                              (2, [1], 0.2, 0.06, 1000.0)])
        b = write_rounds(tmp_path / "b.csv", [(1, [0], 0.1, 0.05, 500.0),
                                              (2, [1], 0.2, 0.06, 500.0)])
        out = tmp_path / "conv.png"
        stats = render(PlotJob("convergence", [a, b], str(out), labels=["one", "two"],
                               x_axis="time"))
        assert stats["series"] == 2
        assert abs(stats["x_max"] - 2.0) < 1e-9  # 2 x 1000 ms = 2 s

    def test_missing_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("round,val_hr\n1,0.5\n")
        with pytest.raises(SchemaError, match="val_ndcg"):
            render(PlotJob("convergence", [str(bad)], str(tmp_path / "x.png")))


class TestUniqueClients:
    def test_bar_per_selector(self, tmp_path):
        a = write_bias(tmp_path / "a.csv", "random", [1, 0, 2, 0])
        b = write_bias(tmp_path / "b.csv", "proxyrl", [1, 1, 1, 1])
        out = tmp_path / "uniq.png"
        stats = render(PlotJob("unique_clients", [a, b], str(out)))
        assert out.exists()
        assert stats["bars"] == 2
        assert stats["values"] == [2, 4]


class TestHeatmap:
    def test_nonzero_cells_equal_total_selections(self, tmp_path):
        rows = [(1, [0, 3, 4], 0.1, 0.05, 10.0),
                (2, [1, 3, 5], 0.2, 0.06, 10.0)]
        csv = write_rounds(tmp_path / "rounds.csv", rows)
        out = tmp_path / "heat.png"
        stats = render(PlotJob("heatmap", [csv], str(out)))
        assert out.exists()
        assert stats["nonzero_cells"] == 6  # sum of per-round K
        assert stats["rounds"] == 2
        assert stats["clients"] == 6

    def test_single_round_k_cells(self, tmp_path):
        csv = write_rounds(tmp_path / "rounds.csv", [(1, [2, 5, 7, 9], 0.1, 0.05, 10.0)])
        stats = render(PlotJob("heatmap", [csv], str(tmp_path / "h.png"), num_clients=12))
        assert stats["nonzero_cells"] == 4
        assert stats["clients"] == 12

    def test_two_inputs_rejected(self, tmp_path):
        csv = write_rounds(tmp_path / "rounds.csv", [(1, [0], 0.1, 0.05, 1.0)])
        with pytest.raises(SchemaError):
            render(PlotJob("heatmap", [csv, csv], str(tmp_path / "h.png")))


class TestSweep:
    def test_one_group_per_lambda(self, tmp_path):
        lams = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        inputs = [write_summary(tmp_path / f"s{i}.csv", [(lam, 1, 0.1 + lam / 10, 0.05)])
                  for i, lam in enumerate(lams)]
        out = tmp_path / "sweep.png"
        stats = render(PlotJob("sweep", inputs, str(out)))
        assert out.exists()
        assert stats["groups"] == 6
        assert stats["lambdas"] == lams

    def test_replicates_grouped(self, tmp_path):
        path = write_summary(tmp_path / "s.csv",
                             [(0.2, 1, 0.1, 0.05), (0.2, 2, 0.2, 0.06), (0.8, 1, 0.3, 0.07)])
        stats = render(PlotJob("sweep", [path], str(tmp_path / "sweep.png")))
        assert stats["groups"] == 2

    def test_missing_lambda_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("selector,test_hr,test_ndcg\nx,0.1,0.2\n")
        with pytest.raises(SchemaError, match="lambda"):
            render(PlotJob("sweep", [str(bad)], str(tmp_path / "x.png")))


class TestGeneral:
    def test_unknown_kind(self, tmp_path):
        with pytest.raises(SchemaError):
            render(PlotJob("pie", ["x.csv"], str(tmp_path / "x.png")))

    def test_missing_input(self, tmp_path):
        with pytest.raises(SchemaError):
            render(PlotJob("convergence", [str(tmp_path / "none.csv")],
                           str(tmp_path / "x.png")))

    def test_rerender_is_idempotent(self, tmp_path):
        csv = write_rounds(tmp_path / "r.csv", [(1, [0, 1], 0.1, 0.05, 10.0)])
        out = tmp_path / "conv.png"
        render(PlotJob("convergence", [csv], str(out)))
        first = out.read_bytes()
        render(PlotJob("convergence", [csv], str(out)))
        assert out.read_bytes() == first

    def test_inputs_not_mutated(self, tmp_path):
        csv_path = tmp_path / "r.csv"
        write_rounds(csv_path, [(1, [0, 1], 0.1, 0.05, 10.0)])
        before = csv_path.read_bytes()
        render(PlotJob("heatmap", [str(csv_path)], str(tmp_path / "h.png")))
        assert csv_path.read_bytes() == before


class TestCli:
    def test_plot_command(self, tmp_path, capsys):
        csv = write_rounds(tmp_path / "rounds.csv", [(1, [0, 2], 0.1, 0.04, 5.0),
                                                     (2, [1, 2], 0.2, 0.05, 5.0)])
        out = tmp_path / "heat.png"
        rc = main(["plot", "--kind", "heatmap", "--in", csv, "--out", str(out)])
        assert rc == 0
        assert out.exists()
        assert "nonzero_cells=4" in capsys.readouterr().out
