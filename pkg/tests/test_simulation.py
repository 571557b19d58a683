import numpy as np
import pandas as pd
import pytest

from automaton import build_switcher, find_accepting_fragment
from constants import get_config_path
from errors import ConfigError, TubeViolationError
from plants import collapse_word, trace_frame, trace_monitor
from tubes import verify_stt
from tubesynth_run import load_experiment, robustness_sweep, run_experiment
from conftest import write_experiment


def monitor_frame(points, indices=None):
    points = np.asarray(points, dtype=float)
    return pd.DataFrame({"t": 0.1 * np.arange(len(points)), "y_1": points[:, 0], "y_2": points[:, 1],
                         "triplet_index": indices if indices is not None else [0] * len(points)})


class TestClosedLoop:

    def test_integrator_run_satisfies_the_word(self, integrator_config):
        exp = load_experiment(integrator_config)
        trace, monitor, cause = run_experiment(exp)
        assert cause is None
        assert len(trace) == 2001
        assert monitor["passed"]
        assert monitor["visits"]["a"] >= 2 and monitor["visits"]["b"] >= 2
        assert monitor["unsafe_occurrence"] is None
        assert monitor["sup_abs_e"]["stage1"] < 1.0

    def test_default_switch_core(self, tmp_path):
        exp = load_experiment(write_experiment(str(tmp_path), tube={"t_c": 4.0, "width_policy": 0.9}))
        trace, monitor, cause = run_experiment(exp)
        assert cause is None
        assert monitor["passed"]
        assert len(trace.events) >= 3

    def test_switch_times_increase_along_the_cycle(self, integrator_config):
        exp = load_experiment(integrator_config)
        trace, _, _ = run_experiment(exp)
        times = [e["time"] for e in trace.events]
        assert len(times) >= 3
        assert all(a < b for a, b in zip(times, times[1:]))
        index = 0
        for event in trace.events:
            assert event["from_index"] == index
            index = exp.switcher.next_index(index)
            assert event["to_index"] == index

    def test_tubes_synthesized_at_switches_verify(self, integrator_config):
        trace = run_experiment(load_experiment(integrator_config))[0]
        assert_tubes_verify(trace)

    def test_trace_frame_layout(self, integrator_config):
        exp = load_experiment(integrator_config)
        trace = run_experiment(exp)[0]
        frame = trace_frame(trace)
        assert list(frame.columns) == ["t", "x1_1", "x1_2", "y_1", "y_2", "u_1", "u_2", "w_1", "w_2",
                                       "gamma_L_1", "gamma_L_2", "gamma_U_1", "gamma_U_2",
                                       "triplet_index", "max_abs_e_stage1"]
        assert np.allclose(np.diff(frame["t"]), exp.dt)
        changes = int((frame["triplet_index"].diff().fillna(0) != 0).sum())
        assert changes == len(trace.events)

    def test_zero_horizon_records_initial_sample(self, tmp_path):
        exp = load_experiment(write_experiment(str(tmp_path), horizon=0.0))
        trace, monitor, cause = run_experiment(exp)
        assert cause is None
        assert len(trace) == 1
        assert trace.times == [0.0]
        assert monitor["word"] == ["a"]

    def test_tiny_gain_leaves_the_tube(self, tmp_path):
        exp = load_experiment(write_experiment(str(tmp_path), controller={"kappa": [1e-4]}))
        trace, _, cause = run_experiment(exp)
        assert isinstance(cause, TubeViolationError)
        assert cause.stage == 1
        assert 0 < len(trace) < 2001

    def test_seeded_disturbance_is_reproducible(self, tmp_path):
        config = write_experiment(str(tmp_path), horizon=5.0)
        block = {"kind": "uniform", "amplitude": 0.05, "seed": 17}
        first = trace_frame(run_experiment(load_experiment(config), block)[0])
        second = trace_frame(run_experiment(load_experiment(config), block)[0])
        pd.testing.assert_frame_equal(first, second)
        w = first[["w_1", "w_2"]].to_numpy()
        assert np.max(np.abs(w)) <= 0.05
        assert np.any(w != 0.0)

    def test_robustness_sweep(self, tmp_path):
        exp = load_experiment(write_experiment(str(tmp_path), horizon=6.0, required_visits=1))
        sweep = robustness_sweep(exp, seeds=[1, 2], amplitudes=[0.05, 0.0], parallel_calls=2)
        assert len(sweep["runs"]) == 4
        assert [r["amplitude"] for r in sweep["runs"]] == [0.0, 0.0, 0.05, 0.05]
        assert sweep["largest_passing_amplitude"] == 0.05
        assert sweep["first_failing_amplitude"] is None

    def test_wrong_state_size(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment(write_experiment(str(tmp_path), initial_state=[1.5, 1.5, 0.0]))


class TestTraceMonitor:

    def test_word_collapses_repeats(self):
        assert collapse_word(["a", "a", "free", "free", "b"]) == [("a", 0), ("free", 2), ("b", 4)]

    def test_never_leaving_free_space(self, plane_workspace, alternating_nba):
        switcher = build_switcher(alternating_nba, find_accepting_fragment(alternating_nba, "a"))
        report = trace_monitor(monitor_frame([(5.0, 3.0)] * 10), plane_workspace, switcher)
        assert report["visits"] == {"a": 0, "b": 0}
        assert report["order_consistent"]
        assert not report["passed"]

    def test_unsafe_label_is_flagged_at_first_sample(self, plane_workspace, alternating_nba):
        switcher = build_switcher(alternating_nba, find_accepting_fragment(alternating_nba, "a"))
        points = [(1.5, 1.5), (3.0, 4.0), (5.0, 7.0), (5.0, 7.5), (3.0, 4.0)]
        report = trace_monitor(monitor_frame(points), plane_workspace, switcher)
        assert report["unsafe_occurrence"] == {"time": pytest.approx(0.2), "sample": 2, "label": "wall"}
        assert report["word"] == ["a", "free", "wall", "free"]
        assert not report["passed"]

    def test_skipped_triplet_is_a_bad_switch(self, plane_workspace, alternating_nba):
        switcher = build_switcher(alternating_nba, find_accepting_fragment(alternating_nba, "a"))
        points = [(1.5, 1.5), (4.0, 1.5), (7.5, 1.5), (7.5, 1.5)]
        report = trace_monitor(monitor_frame(points, [0, 0, 0, 2]), plane_workspace, switcher)
        assert report["bad_switch"]["to_index"] == 2
        assert not report["order_consistent"]


@pytest.fixture(scope="module")
def manipulator_run():
    return run_experiment(load_experiment(get_config_path("2r_experiment.json")))


@pytest.fixture(scope="module")
def omni_run():
    return run_experiment(load_experiment(get_config_path("omni_experiment.json")))


def assert_tubes_verify(trace):
    assert trace.tubes
    assert len(trace.tubes) == len(trace.events) + 1
    for tube in trace.tubes:
        for dt in (tube.reach_time / 1e4, tube.reach_time / 1e5):
            report = verify_stt(tube, tube.task, dt, 1e-6)
            assert report.passed, report.violations


@pytest.mark.slow
class TestCaseStudies:

    def test_manipulator_alternates_between_targets(self, manipulator_run):
        trace, monitor, cause = manipulator_run
        assert cause is None
        assert monitor["passed"]
        assert monitor["visits"]["p1"] >= 3 and monitor["visits"]["p2"] >= 3
        assert "p0" not in monitor["word"]
        assert monitor["sup_abs_e"]["stage1"] <= 0.999

    def test_omni_robot_follows_the_patrol_order(self, omni_run):
        trace, monitor, cause = omni_run
        assert cause is None
        assert monitor["passed"]
        assert monitor["order_consistent"]
        assert monitor["unsafe_occurrence"] is None
        assert "p4" not in monitor["word"]
        assert monitor["visits"]["p1"] >= 1 and monitor["visits"]["p2"] >= 1
        targets = [label for label in monitor["word"] if label in ("p1", "p2", "p3")]
        for a, b in zip(targets, targets[1:]):
            assert {a, b} != {"p1", "p2"}

    def test_manipulator_tubes_verify(self, manipulator_run):
        assert_tubes_verify(manipulator_run[0])

    def test_omni_tubes_verify(self, omni_run):
        assert_tubes_verify(omni_run[0])

    def test_manipulator_run_is_deterministic(self, manipulator_run):
        again = run_experiment(load_experiment(get_config_path("2r_experiment.json")))[0]
        assert trace_frame(again).to_csv(index=False) == trace_frame(manipulator_run[0]).to_csv(index=False)

    def test_omni_run_is_deterministic(self, omni_run):
        again = run_experiment(load_experiment(get_config_path("omni_experiment.json")))[0]
        assert trace_frame(again).to_csv(index=False) == trace_frame(omni_run[0]).to_csv(index=False)

    def test_manipulator_tolerates_bounded_disturbance(self):
        exp = load_experiment(get_config_path("2r_experiment.json"))
        sweep = robustness_sweep(exp, seeds=list(range(10)), amplitudes=[0.05], parallel_calls=4)
        passed = [r for r in sweep["runs"] if r["passed"]]
        assert len(passed) >= 9
        assert all(r["sup_abs_e_stage1"] <= 0.999 for r in passed)
