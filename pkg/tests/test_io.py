import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankirl import io
from rankirl.apprenticeship import abbeel_max_margin
from rankirl.features import FeatureMap, Mu, Trajectory, point_mass
from rankirl.mdp import build_prop1_mdp, random_mdp
from rankirl.ordinal import dataset_from_arrays, solve_sum_of_margins
from rankirl.roadnet import generate_network, simulate_drivers

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestMdpCodec:
    def test_round_trip(self, tmp_path):
        mdp = random_mdp(5, 3, 0.93, np.random.default_rng(0))
        io.write_mdp(tmp_path / "m.json", mdp)
        back = io.read_mdp(tmp_path / "m.json")
        assert np.array_equal(back.transition, mdp.transition)
        assert back.gamma == mdp.gamma

    def test_with_reward(self, tmp_path):
        inst = build_prop1_mdp(1.0, 0.9)
        mdp = type(inst.mdp)(inst.mdp.transition, 0.9, inst.true_reward)
        io.write_mdp(tmp_path / "m.json", mdp)
        assert np.array_equal(io.read_mdp(tmp_path / "m.json").reward, inst.true_reward)

    def test_bad_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{\n  oops\n")
        with pytest.raises(io.FormatError, match=":2:"):
            io.read_mdp(tmp_path / "m.json")

    def test_count_mismatch(self, tmp_path):
        doc = io.mdp_to_dict(random_mdp(3, 2, 0.5, np.random.default_rng(1)))
        doc["n_states"] = 4
        io.write_json(tmp_path / "m.json", doc)
        with pytest.raises(io.FormatError, match="n_states"):
            io.read_mdp(tmp_path / "m.json")


class TestTrajectories:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 500), min_size=1, max_size=20), min_size=1, max_size=10))
    def test_round_trip(self, tmp_path_factory, trajs):
        path = tmp_path_factory.mktemp("traj") / "t.txt"
        io.write_trajectories(path, [Trajectory(t) for t in trajs])
        assert [t.states.tolist() for t in io.read_trajectories(path)] == trajs

    def test_line_number_in_error(self, tmp_path):
        (tmp_path / "t.txt").write_text("0 1 2\n0 x 2\n")
        with pytest.raises(io.FormatError, match="t.txt:2: not an integer"):
            io.read_trajectories(tmp_path / "t.txt")


class TestDriverCsv:
    def test_round_trip(self, tmp_path):
        net = generate_network(40, 0)
        logs, _ = simulate_drivers(net, 3, seed=0, shift_length=60)
        io.write_driver_csv(tmp_path / "d.csv", logs)
        back = io.read_driver_csv(tmp_path / "d.csv")
        assert [lg.driver_id for lg in back] == [0, 1, 2]
        for a, b in zip(logs, back):
            for ta, tb in zip(a.trajectories, b.trajectories):
                assert np.array_equal(ta.states, tb.states)
                assert np.array_equal(ta.occupied, tb.occupied)
                assert np.array_equal(ta.times, tb.times)
        assert io.driver_csv_text(back) == io.driver_csv_text(logs)

    def test_time_reset_starts_new_trajectory(self, tmp_path):
        (tmp_path / "d.csv").write_text("driver_id,t,state_id,occupied\n0,0,1,0\n0,1,2,1\n0,0,5,0\n")
        (lg,) = io.read_driver_csv(tmp_path / "d.csv")
        assert [t.states.tolist() for t in lg.trajectories] == [[1, 2], [5]]

    def test_bad_occupancy(self, tmp_path):
        (tmp_path / "d.csv").write_text("driver_id,t,state_id,occupied\n0,0,1,2\n")
        with pytest.raises(io.FormatError, match=":2:"):
            io.read_driver_csv(tmp_path / "d.csv")


class TestFeatures:
    def test_round_trip(self, tmp_path):
        fmap = FeatureMap(np.random.default_rng(0).random((6, 3)))
        io.write_features(tmp_path / "f.csv", fmap)
        assert np.array_equal(io.read_features(tmp_path / "f.csv").phi, fmap.phi)

    def test_normalizes_raw_values(self, tmp_path):
        (tmp_path / "f.csv").write_text("state,phi_0\n0,10\n1,20\n2,15\n")
        np.testing.assert_allclose(io.read_features(tmp_path / "f.csv").phi.ravel(), [0.0, 1.0, 0.5])

    def test_state_order(self, tmp_path):
        (tmp_path / "f.csv").write_text("state,phi_0\n1,0.5\n")
        with pytest.raises(io.FormatError, match="order"):
            io.read_features(tmp_path / "f.csv")


class TestMuCsv:
    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_round_trip(self, tmp_path_factory, data):
        d = data.draw(st.integers(1, 4))
        k = data.draw(st.integers(2, 4))
        labels = data.draw(st.lists(st.integers(1, k), min_size=1, max_size=8)) + list(range(1, k + 1))
        mus = [Mu(np.array(data.draw(st.lists(finite, min_size=d, max_size=d))), k + 1 - label, f"id{i}")
               for i, label in enumerate(labels)]
        path = tmp_path_factory.mktemp("mu") / "mu.csv"
        io.write_mu_csv(path, mus)
        back, mapping = io.read_mu_csv(path)
        assert mapping == {label: k + 1 - label for label in range(1, k + 1)}
        assert [(m.source_id, m.rank, m.vector.tolist()) for m in back] == \
               [(m.source_id, m.rank, m.vector.tolist()) for m in mus]

    def test_labels_inverted(self, tmp_path):
        (tmp_path / "mu.csv").write_text("source_id,rank,mu_0\nexpert,1,1.0\nnovice,2,0.0\n")
        mus, mapping = io.read_mu_csv(tmp_path / "mu.csv")
        assert {m.source_id: m.rank for m in mus} == {"expert": 2, "novice": 1}
        assert mapping == {1: 2, 2: 1}

    def test_empty_rank(self, tmp_path):
        (tmp_path / "mu.csv").write_text("source_id,rank,mu_0\na,1,1.0\nb,3,0.0\n")
        with pytest.raises(io.FormatError, match="rank 2 empty"):
            io.read_mu_csv(tmp_path / "mu.csv")

    def test_bad_header(self, tmp_path):
        (tmp_path / "mu.csv").write_text("id,rank,x\na,1,1.0\n")
        with pytest.raises(io.FormatError):
            io.read_mu_csv(tmp_path / "mu.csv")


class TestSolutionCodec:
    @pytest.mark.parametrize("ids", [None, ["a", "b", "c", "d"]])
    def test_round_trip(self, tmp_path, ids):
        data = dataset_from_arrays([[0.0, 1.0], [1.0, 0.2], [2.0, 0.1], [0.5, 0.4]], [1, 2, 3, 2], ids=ids)
        sol = solve_sum_of_margins(data)
        io.write_solution(tmp_path / "s.json", sol, {1: 3, 2: 2, 3: 1})
        back = io.read_solution(tmp_path / "s.json")
        assert np.array_equal(back.w, sol.w)
        assert back.eps == sol.eps and back.sig == sol.sig
        assert back.objective == sol.objective
        assert io.dumps(io.solution_to_dict(back)) == io.dumps(io.solution_to_dict(sol))
        doc = io.read_json(tmp_path / "s.json")
        assert doc["rank_labels"]["label_to_internal"] == {"1": 3, "2": 2, "3": 1}

    def test_trace_round_trip(self):
        inst = build_prop1_mdp(1.0, 0.9)
        trace = abbeel_max_margin(inst.mdp, FeatureMap.lossless(4), point_mass(4, 0), [1, 0, 9, 0], 0.1,
                                  initial_policy=inst.pi2)
        back = io.trace_from_dict(json.loads(io.dumps(io.trace_to_dict(trace))))
        assert np.array_equal(back.final_w, trace.final_w)
        assert [it.t for it in back.iterations] == [it.t for it in trace.iterations]


class TestNetworkAndValues:
    def test_network_round_trip(self, tmp_path):
        net = generate_network(60, 5)
        io.write_network(tmp_path / "n.json", net)
        back = io.read_network(tmp_path / "n.json")
        assert np.array_equal(back.segments, net.segments)
        assert np.array_equal(back.positions, net.positions)
        assert np.array_equal(back.lengths, net.lengths)

    def test_bad_network(self, tmp_path):
        io.write_json(tmp_path / "n.json", {"nodes": [[0, 0]], "segments": [{"id": 3}]})
        with pytest.raises(io.FormatError):
            io.read_network(tmp_path / "n.json")

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(finite, st.booleans()), min_size=1, max_size=20).map(
        lambda rows: rows + rows[:1] if len(rows) % 2 else rows))
    def test_values_round_trip(self, tmp_path_factory, rows):
        values = np.array([r[0] for r in rows])
        flagged = np.array([r[1] for r in rows])
        path = tmp_path_factory.mktemp("v") / "values.csv"
        io.write_value_csv(path, values, flagged)
        v, f = io.read_value_csv(path)
        assert np.array_equal(v, values) and np.array_equal(f, flagged)

    def test_heatmap_round_trip(self, tmp_path):
        grid = np.random.default_rng(2).normal(size=(4, 5))
        io.write_heatmap_csv(tmp_path / "h.csv", grid)
        assert np.array_equal(io.read_heatmap_csv(tmp_path / "h.csv"), grid)


class TestJson:
    def test_numpy_scalars(self):
        text = io.dumps({"a": np.float64(0.1), "b": np.int64(3), "c": np.array([True, False]), 4: np.nan})
        assert io.dumps(json.loads(text)) == text
        assert '"4": "nan"' in text
