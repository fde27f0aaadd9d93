import os

import numpy as np
import pytest

from pfkde import cli


def run_cli(*args):
    return cli.main(list(args))


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        comment = fh.readline()
        assert comment.startswith("# schema_version=1 ")
        trailing = []
        rows = []
        header = None
        for line in fh:
            if line.startswith("#"):
                trailing.append(line.strip())
                continue
            if header is None:
                header = line.strip().split(",")
            else:
                rows.append(line.rstrip("\n").split(","))
    return comment.strip(), header, rows, trailing


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "model.cfg"
    path.write_text(
        "A=0.50,-0.35,0.39,-0.45\nB=0.50,0.30,-0.80,0.20\nT=10\nseed=3\n",
        encoding="utf-8",
    )
    return str(path)


class TestSimulate:
    def test_writes_trajectory(self, tmp_path, config_file):
        out = tmp_path / "traj.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "simulate", "--out", str(out))
        assert code == 0
        comment, header, rows, _ = read_csv(out)
        assert header == ["t", "x1", "x2", "y1", "y2"]
        assert len(rows) == 11
        assert rows[0][3] == ""  # no observation at t=0
        assert rows[1][3] != ""
        assert "seed=3" in comment


class TestFilter:
    def test_cloud_csv_schema(self, tmp_path, config_file):
        out = tmp_path / "cloud.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "filter", "--n", "200", "--dump-cloud", str(out))
        assert code == 0
        _, header, rows, _ = read_csv(out)
        assert header == ["t", "n", "x1", "x2"]
        assert len(rows) == 200
        assert all(r[0] == "10" for r in rows)
        assert [int(r[1]) for r in rows] == list(range(200))

    def test_kalman_dump(self, tmp_path, config_file):
        out = tmp_path / "cloud.csv"
        kal = tmp_path / "kalman.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "filter", "--n", "50", "--dump-cloud", str(out),
                       "--dump-kalman", str(kal))
        assert code == 0
        _, header, rows, _ = read_csv(kal)
        assert header == ["t", "mean1", "mean2", "cov11", "cov12", "cov21",
                          "cov22", "entropy_nats"]
        assert len(rows) == 10
        assert float(rows[-1][-1]) == pytest.approx(2.5998, abs=1e-3)

    def test_memory_guard_refuses_huge_cloud(self, tmp_path, config_file):
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "filter", "--n", str(10**11), "--dump-cloud",
                       str(tmp_path / "c.csv"))
        assert code == 2
        assert not (tmp_path / "c.csv").exists()


class TestDensityGrid:
    def test_grid_csv(self, tmp_path, config_file):
        out = tmp_path / "grid.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "density-grid", "--k", "3", "--kernel", "epanechnikov",
                       "--grid-step", "0.2", "--grid-count", "10",
                       "--out", str(out))
        assert code == 0
        comment, header, rows, _ = read_csv(out)
        assert header == ["x1", "x2", "p_hat", "p_true", "abs_err"]
        assert len(rows) == 100
        for r in rows[:5]:
            assert abs(float(r[2]) - float(r[3])) == pytest.approx(float(r[4]),
                                                                   rel=1e-12)
        assert "kernel=epanechnikov" in comment

    def test_explicit_offset(self, tmp_path, config_file):
        out = tmp_path / "grid.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "density-grid", "--k", "3", "--grid-offset", "-1.0,-1.0",
                       "--grid-count", "5", "--out", str(out))
        assert code == 0
        _, _, rows, _ = read_csv(out)
        assert float(rows[0][0]) == -1.0 and float(rows[0][1]) == -1.0


class TestMap:
    def test_trace_csv(self, tmp_path, config_file):
        out = tmp_path / "trace.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "map", "--k", "3", "--kernel", "gaussian",
                       "--x0", "-2,-2", "--step", "0.1", "--out", str(out))
        assert code == 0
        comment, header, rows, _ = read_csv(out)
        assert header == ["i", "x1", "x2", "value", "grad_norm"]
        assert [int(r[0]) for r in rows[:3]] == [0, 1, 2]
        assert float(rows[0][1]) == -2.0
        assert "stop=" in comment


class TestEntropy:
    def test_entropy_csv(self, tmp_path, config_file):
        out = tmp_path / "entropy.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "entropy", "--k", "3", "--out", str(out))
        assert code == 0
        _, header, rows, _ = read_csv(out)
        assert header == ["k", "n", "entropy_est", "entropy_true", "abs_err",
                          "floored_terms"]
        assert len(rows) == 1
        assert int(rows[0][1]) == 729
        assert float(rows[0][4]) == pytest.approx(
            abs(float(rows[0][2]) - float(rows[0][3])), rel=1e-12)


class TestConvergence:
    def test_report_and_slope_comment(self, tmp_path, config_file):
        out = tmp_path / "report.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "convergence", "--k-list", "2,3", "--replicates", "3",
                       "--metric", "sup", "--grid-count", "20",
                       "--out", str(out))
        assert code == 0
        _, header, rows, trailing = read_csv(out)
        assert header == list(cli.analysis.ErrorReport.FIELDS)
        assert len(rows) == 6
        sup_col = header.index("sup_error")
        assert all(r[sup_col] != "" for r in rows)
        ent_col = header.index("entropy_est")
        assert all(r[ent_col] == "" for r in rows)
        assert any("slope metric=sup" in c for c in trailing)

    def test_entropy_metric_rows(self, tmp_path, config_file):
        out = tmp_path / "report.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "convergence", "--k-list", "2,3", "--replicates", "2",
                       "--metric", "entropy", "--out", str(out))
        assert code == 0
        _, header, rows, _ = read_csv(out)
        ent_col = header.index("entropy_abs_err")
        assert all(float(r[ent_col]) >= 0 for r in rows)

    def test_empty_k_list_is_usage_error(self, tmp_path, config_file):
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "convergence", "--k-list", "", "--out",
                       str(tmp_path / "r.csv"))
        assert code == 2

    def test_bad_k_list_is_usage_error(self, tmp_path, config_file):
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "convergence", "--k-list", "3,x", "--out",
                       str(tmp_path / "r.csv"))
        assert code == 2


class TestFigure1:
    def test_restricted_k_list_emits_two_files(self, tmp_path, config_file):
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "figure1", "--k-list", "3", "--grid-count", "12")
        assert code == 0
        files = sorted(os.listdir(tmp_path))
        csvs = [f for f in files if f.startswith("figure1")]
        assert csvs == ["figure1_exact.csv", "figure1_k3.csv"]
        _, header, rows, _ = read_csv(tmp_path / "figure1_exact.csv")
        assert len(rows) == 144
        assert all(r[2] == r[3] for r in rows)  # exact grid: p_hat == p_true


class TestTables:
    def test_table1_rows(self, tmp_path, config_file):
        out = tmp_path / "t1.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "table1", "--k-list", "3", "--replicates", "2",
                       "--out", str(out))
        assert code == 0
        _, header, rows, _ = read_csv(out)
        assert header == ["k", "seed", "p_true_max", "gap_grad", "gap_particle"]
        assert len(rows) == 2
        assert all(float(r[3]) > -1e-12 for r in rows)

    def test_table2_rows_and_summary(self, tmp_path, config_file):
        out = tmp_path / "t2.csv"
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "table2", "--k-list", "2,3", "--replicates", "3",
                       "--out", str(out))
        assert code == 0
        _, header, rows, _ = read_csv(out)
        assert header == ["k", "seed", "entropy_est", "entropy_true", "abs_err"]
        data = [r for r in rows if r[1] not in ("mean", "std")]
        summary = [r for r in rows if r[1] in ("mean", "std")]
        assert len(data) == 6
        assert len(summary) == 4
        k2_errs = [float(r[4]) for r in data if r[0] == "2"]
        k2_mean = [float(r[4]) for r in summary if r[0] == "2" and r[1] == "mean"]
        assert k2_mean[0] == pytest.approx(np.mean(k2_errs), rel=1e-12)


class TestGlobalBehaviour:
    def test_missing_config_mentions_path(self, tmp_path, capsys):
        code = run_cli("--config", str(tmp_path / "absent.cfg"), "simulate")
        assert code == 2
        assert "absent.cfg" in capsys.readouterr().err

    def test_reruns_are_byte_identical(self, tmp_path, config_file):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        for out in (a, b):
            assert run_cli("--config", config_file, "--out-dir", str(tmp_path),
                           "density-grid", "--k", "3", "--grid-count", "8",
                           "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_thread_flag_does_not_change_output(self, tmp_path, config_file):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run_cli("--config", config_file, "--threads", "1", "--out-dir",
                       str(tmp_path), "density-grid", "--k", "3",
                       "--grid-count", "8", "--out", str(a)) == 0
        assert run_cli("--config", config_file, "--threads", "4", "--out-dir",
                       str(tmp_path), "density-grid", "--k", "3",
                       "--grid-count", "8", "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_partial_outputs_removed_on_failure(self, tmp_path, config_file,
                                                monkeypatch):
        # figure1 writes one file per k; failing the second evaluation must
        # remove the file already written for the first k
        calls = {"n": 0}
        original = cli.kde.estimate_density

        def failing(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] > 1:
                raise RuntimeError("boom")
            return original(*args, **kwargs)

        monkeypatch.setattr(cli.kde, "estimate_density", failing)
        code = run_cli("--config", config_file, "--out-dir", str(tmp_path),
                       "figure1", "--k-list", "2,3", "--grid-count", "8")
        assert code == 1
        assert not [f for f in os.listdir(tmp_path) if f.startswith("figure1")]

    def test_invalid_threads_rejected(self, config_file):
        assert run_cli("--config", config_file, "--threads", "0", "simulate") == 2

    def test_global_flags_accepted_after_subcommand(self, tmp_path, config_file):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run_cli("--config", config_file, "--seed", "9", "--out-dir",
                       str(tmp_path), "filter", "--n", "40",
                       "--dump-cloud", str(a)) == 0
        assert run_cli("filter", "--config", config_file, "--seed", "9",
                       "--out-dir", str(tmp_path), "--n", "40",
                       "--dump-cloud", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_float_formatting_round_trips(self, tmp_path, config_file):
        out = tmp_path / "grid.csv"
        run_cli("--config", config_file, "--out-dir", str(tmp_path),
                "density-grid", "--k", "2", "--grid-count", "6",
                "--out", str(out))
        _, _, rows, _ = read_csv(out)
        val = float(rows[0][2])
        assert repr(val) == rows[0][2]
