import json

import numpy as np
import pytest

from rankirl import io
from rankirl.cli import main
from rankirl.mdp import random_mdp


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def k2_csv(tmp_path):
    # label 1 = best, so the higher-scoring point carries label 1
    path = tmp_path / "k2.csv"
    path.write_text("source_id,rank,mu_0\nlow,2,0.0\nhigh,1,1.0\n")
    return path


class TestHiddenPenaltyCommand:
    def test_default_passes(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "prop1", "--out", tmp_path)
        assert code == 0
        assert json.loads(out)["passed"]
        assert io.read_json(tmp_path / "prop1.json")["values"]["pi1_true"] == pytest.approx(-9.0)

    def test_zero_gamma_flagged(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "prop1", "--gamma", "0", "--out", tmp_path)
        assert code == 0
        assert io.read_json(tmp_path / "prop1.json")["degenerate_gamma_zero"]

    def test_negative_delta(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "prop1", "--delta=-1", "--out", tmp_path)
        assert code == 1 and "delta" in err

    @pytest.mark.parametrize("gamma", ["1.0", "-0.1"])
    def test_gamma_out_of_range(self, tmp_path, capsys, gamma):
        assert run_cli(capsys, "prop1", f"--gamma={gamma}", "--out", tmp_path)[0] == 1

    def test_missing_out_dir(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "prop1", "--out", tmp_path / "nowhere")
        assert code == 2 and "does not exist" in err

    def test_unknown_flag(self, capsys):
        assert run_cli(capsys, "prop1", "--bogus")[0] == 1


class TestRankSolve:
    def test_k2_example(self, tmp_path, capsys, k2_csv):
        code, out, _ = run_cli(capsys, "rank-solve", k2_csv, "--out", tmp_path)
        assert code == 0
        assert json.loads(out)["objective"] == pytest.approx(-1.0, abs=1e-9)
        doc = io.read_json(tmp_path / "solution.json")
        assert doc["objective"] == pytest.approx(-1.0, abs=1e-9)
        assert doc["w"] == pytest.approx([1.0])
        assert doc["rank_labels"]["label_to_internal"] == {"1": 2, "2": 1}

    def test_empty_rank(self, tmp_path, capsys):
        path = tmp_path / "gap.csv"
        path.write_text("source_id,rank,mu_0\na,1,1.0\nb,3,0.0\n")
        code, _, err = run_cli(capsys, "rank-solve", path, "--out", tmp_path)
        assert code == 1 and "rank 2 empty" in err

    def test_conflicted_is_degenerate(self, tmp_path, capsys):
        path = tmp_path / "conflict.csv"
        path.write_text("source_id,rank,mu_0\na,2,0.0\nb,2,1.0\nc,1,0.5\n")
        code, out, _ = run_cli(capsys, "rank-solve", path, "--out", tmp_path)
        summary = json.loads(out)
        assert code == 0 and summary["degenerate"] is True
        assert summary["objective"] == pytest.approx(0.0, abs=1e-9)

    def test_unbounded_price(self, tmp_path, capsys, k2_csv):
        code, _, err = run_cli(capsys, "rank-solve", k2_csv, "--c", "0.5", "--out", tmp_path)
        assert code == 1 and "unbounded" in err.lower()

    def test_solution_round_trips(self, tmp_path, capsys, k2_csv):
        run_cli(capsys, "rank-solve", k2_csv, "--out", tmp_path)
        sol = io.read_solution(tmp_path / "solution.json")
        assert io.dumps(io.solution_to_dict(sol, {1: 2, 2: 1})) == (tmp_path / "solution.json").read_text()


class TestMu:
    def test_single_trajectory(self, tmp_path, capsys):
        traj = tmp_path / "tr.txt"
        traj.write_text("0 2 2\n")
        code, _, _ = run_cli(capsys, "mu", traj, "--lossless", "--n-states", 4, "--gamma", 0.5,
                             "--out", tmp_path)
        assert code == 0
        assert (tmp_path / "mu.csv").read_text() == "source_id,rank,mu_0,mu_1,mu_2,mu_3\ntr,1,1.0,0.0,0.75,0.0\n"

    def test_lossless_dimension_from_mdp(self, tmp_path, capsys):
        io.write_mdp(tmp_path / "m.json", random_mdp(7, 2, 0.9, np.random.default_rng(0)))
        traj = tmp_path / "t.txt"
        traj.write_text("0 1 6\n3\n")
        code, out, _ = run_cli(capsys, "mu", traj, "--lossless", "--mdp", tmp_path / "m.json",
                               "--gamma", 0.9, "--out", tmp_path)
        assert code == 0 and json.loads(out)["d"] == 7

    def test_feature_file(self, tmp_path, capsys):
        (tmp_path / "f.csv").write_text("state,phi_0,phi_1\n0,1.0,0.0\n1,0.0,1.0\n")
        traj = tmp_path / "t.txt"
        traj.write_text("0 1\n")
        code, _, _ = run_cli(capsys, "mu", traj, "--features", tmp_path / "f.csv", "--gamma", 0.5,
                             "--rank", 2, "--source-id", "x", "--out", tmp_path)
        assert code == 0
        assert (tmp_path / "mu.csv").read_text().splitlines()[1] == "x,2,1.0,0.5"

    def test_malformed_line(self, tmp_path, capsys):
        traj = tmp_path / "bad.txt"
        traj.write_text("0 1\n0 one\n")
        code, _, err = run_cli(capsys, "mu", traj, "--lossless", "--n-states", 2, "--gamma", 0.5,
                               "--out", tmp_path)
        assert code == 1 and "bad.txt:2" in err

    def test_needs_gamma(self, tmp_path, capsys):
        traj = tmp_path / "t.txt"
        traj.write_text("0\n")
        assert run_cli(capsys, "mu", traj, "--lossless", "--n-states", 1, "--out", tmp_path)[0] == 1

    def test_missing_trajectory_file(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "mu", tmp_path / "none.txt", "--lossless", "--n-states", 1,
                             "--gamma", 0.5, "--out", tmp_path)
        assert code == 2


class TestValidateMdp:
    def test_valid(self, tmp_path, capsys):
        io.write_mdp(tmp_path / "m.json", random_mdp(4, 2, 0.9, np.random.default_rng(1)))
        code, _, _ = run_cli(capsys, "validate-mdp", tmp_path / "m.json", "--out", tmp_path)
        assert code == 0 and io.read_json(tmp_path / "validation.json")["valid"]

    def test_rows_not_stochastic(self, tmp_path, capsys):
        doc = json.loads(io.dumps(io.mdp_to_dict(random_mdp(3, 2, 0.9, np.random.default_rng(2)))))
        doc["transition"][0][0][0] += 0.5
        io.write_json(tmp_path / "m.json", doc)
        code, _, _ = run_cli(capsys, "validate-mdp", tmp_path / "m.json", "--out", tmp_path)
        assert code == 1
        assert io.read_json(tmp_path / "validation.json")["violations"]


class TestManifest:
    def test_config_written(self, tmp_path, capsys):
        run_cli(capsys, "prop1", "--delta", 2, "--out", tmp_path)
        config = io.read_json(tmp_path / "config.json")
        assert config["command"] == "prop1"
        assert "--delta" in config["argv"] and "--gamma" in config["argv"]

    def test_replay_is_byte_identical(self, tmp_path, capsys, k2_csv):
        first, second = tmp_path / "a", tmp_path / "b"
        first.mkdir()
        second.mkdir()
        run_cli(capsys, "rank-solve", k2_csv, "--out", first)
        assert run_cli(capsys, "replay", first, "--out", second)[0] == 0
        for name in ("solution.json", "config.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()


class TestCity:
    def test_small_city(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "city", "--segments", 80, "--drivers", 9, "--per-rank", 3,
                               "--max-dim", 60, "--shift-length", 400, "--seed", 2, "--out", tmp_path)
        assert code == 0
        doc = io.read_json(tmp_path / "solution.json")
        assert doc["max_cluster_size"] <= 60
        assert json.loads(out)["max_cluster_size"] == doc["max_cluster_size"]
        net = io.read_network(tmp_path / "network.json")
        values, flagged = io.read_value_csv(tmp_path / "values.csv")
        assert values.size == net.n_states == 160
        assert len(io.read_driver_csv(tmp_path / "drivers.csv")) == 9

    def test_unreadable_network(self, tmp_path, capsys):
        (tmp_path / "net.json").write_text("not json")
        code, _, _ = run_cli(capsys, "city", "--network", tmp_path / "net.json", "--out", tmp_path)
        assert code == 1
        code, _, _ = run_cli(capsys, "city", "--network", tmp_path / "absent.json", "--out", tmp_path)
        assert code == 2


class TestGridworld:
    def test_small_run(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "gridworld", "--baseline-seeds", 2, "--out", tmp_path)
        assert code == 0
        assert json.loads(out)["advantage"] > 0
        heat = io.read_heatmap_csv(tmp_path / "heatmap_rankirl.csv")
        assert heat.shape == (16, 16)
        assert io.read_heatmap_csv(tmp_path / "heatmap_baseline.csv").shape == (16, 16)
        assert io.read_json(tmp_path / "report.json")["advantage"] == json.loads(out)["advantage"]
