import numpy as np
import pytest

from selectdpc.controller import (ClosedLoopTrace, FullDeePC, OuterLoopSettings, SelectDPC, TimeWindowedDeePC,
                                  active_count, combination_profile, init_prediction, prediction_change,
                                  run_closed_loop)
from selectdpc.deepc import DeePCController, DPCConfig
from selectdpc.plants import LTIPlant, random_lti
from selectdpc.selection import SelectionMethod
from selectdpc.trajectory_data import Trajectory, blocks_from, extract_trajectories

from test_deepc import mpc_oracle

T_P, T_F = 6, 15


@pytest.fixture(scope="module")
def lti():
    A, B, C, D = random_lti(4, 1, 1, seed=3)
    rng = np.random.default_rng(0)
    pl = LTIPlant(A, B, C, D)
    u = rng.uniform(-1, 1, (300, 1))
    y = np.array([pl.step(v) for v in u])
    ds = extract_trajectories([(u, y)], T_P, T_F)
    cfg = DPCConfig(T_P, T_F, np.eye(1), 0.1 * np.eye(1), y_ref=[1.0], slack_weight=0, affine=False)
    return (A, B, C, D), ds, cfg


def test_init_prediction_hold():
    tau = init_prediction(np.full(3, 2.0), np.full(3, 5.0), 3, 4)
    assert np.all(tau.u_seq == 2.0) and np.all(tau.y_seq == 5.0)


def test_init_prediction_shift():
    prev = Trajectory(np.arange(7.0), 10 + np.arange(7.0), 3, 4)
    tau = init_prediction(np.zeros(3), np.zeros(3), 3, 4, prev)
    np.testing.assert_array_equal(tau.u_f, [4, 5, 6, 6])
    np.testing.assert_array_equal(tau.y_f, [14, 15, 16, 16])
    np.testing.assert_array_equal(tau.u_p, 0)
    off = init_prediction(np.ones(3), np.ones(3), 3, 4, prev, warm_shift=False)
    np.testing.assert_array_equal(off.u_f, 1)


def test_prediction_change_metric():
    a = Trajectory(np.zeros(4), np.zeros(4), 2, 2)
    b = Trajectory(np.ones(4), np.zeros(4), 2, 2)
    assert prediction_change(a, a) == 0.0 and prediction_change(a, b) == 2.0


def _query(lti, seed=1):
    (A, B, C, D), _, _ = lti
    rng = np.random.default_rng(seed)
    pl = LTIPlant(A, B, C, D, x0=rng.standard_normal(4))
    pl.reset()
    u = rng.uniform(-1, 1, (T_P, 1))
    return u.ravel(), np.array([pl.step(v) for v in u]).ravel()


def test_full_selection_matches_plain_deepc(lti):
    _, ds, cfg = lti
    u_p, y_p = _query(lti)
    ctl = SelectDPC(ds, cfg, OuterLoopSettings(n_cols=ds.n_d, selection=SelectionMethod(kind="full")))
    u, diag = ctl.step(u_p, y_p)
    ref = DeePCController(cfg).compute_action(blocks_from(ds), u_p, y_p)
    assert diag.converged and diag.iterations <= 2
    np.testing.assert_allclose(u, ref.u_f[:1], atol=1e-8)


def test_stable_patch_converges_fast(lti):
    _, ds, cfg = lti
    u_p, y_p = _query(lti, seed=2)
    # every window of a linear system is "near": n_cols = n_d makes the selected set trivially stable
    ctl = SelectDPC(ds, cfg, OuterLoopSettings(n_cols=ds.n_d))
    _, diag = ctl.step(u_p, y_p)
    assert diag.converged and diag.iterations <= 2


def test_one_outer_iteration(lti):
    _, ds, cfg = lti
    u_p, y_p = _query(lti)
    ctl = SelectDPC(ds, cfg, OuterLoopSettings(n_cols=40, max_outer_iters=1))
    u, diag = ctl.step(u_p, y_p)
    tau = init_prediction(u_p, y_p, T_P, T_F)
    idx = ctl.selector.select(tau, 40).indices
    ref = DeePCController(cfg).compute_action(blocks_from(ds, idx), u_p, y_p)
    assert diag.iterations == 1
    np.testing.assert_allclose(u, ref.u_f[:1], atol=1e-8)


def test_state_past_matches_measurement(lti):
    _, ds, cfg = lti
    u_p, y_p = _query(lti)
    ctl = SelectDPC(ds, cfg, OuterLoopSettings(n_cols=60))
    ctl.step(u_p, y_p)
    np.testing.assert_array_equal(ctl.state.tau_tilde.u_p, u_p)
    np.testing.assert_array_equal(ctl.state.tau_tilde.y_p, y_p)


def test_degraded_hold_on_infeasible(lti):
    _, ds, _ = lti
    cfg = DPCConfig(T_P, T_F, np.eye(1), np.eye(1), slack_weight=0, affine=False)
    u_p, y_p = _query(lti)
    # one column cannot match an unrelated past exactly
    ctl = SelectDPC(ds, cfg, OuterLoopSettings(n_cols=1))
    u, diag = ctl.step(u_p, y_p)
    assert diag.degraded
    assert u[0] == u_p[-1]


def test_dataset_dimension_check(lti):
    _, ds, _ = lti
    with pytest.raises(ValueError):
        SelectDPC(ds, DPCConfig(T_P + 1, T_F, np.eye(1), np.eye(1)))


def test_time_windowed_matches_mpc(lti):
    (A, B, C, D), _, cfg = lti
    oracle = mpc_oracle(A, B, C, D, cfg.Q, cfg.R, cfg.y_ref, T_F)
    rng = np.random.default_rng(5)
    pl = LTIPlant(A, B, C, D)
    hu = rng.uniform(-1, 1, (200, 1))
    hy = np.array([pl.step(v) for v in hu])
    ctl = TimeWindowedDeePC(cfg, W=200, history=(hu, hy))
    twin = LTIPlant(A, B, C, D, x0=pl.x.copy())
    twin.reset()
    us, ys = list(hu[-T_P:]), list(hy[-T_P:])
    for _ in range(30):
        u, diag = ctl.act(np.concatenate(us[-T_P:]), np.concatenate(ys[-T_P:]))
        assert not diag.degraded
        o = oracle(twin.x)
        assert np.max(np.abs(u - o)) < 1e-3
        y = pl.step(u)
        twin.step(o)
        ctl.observe(u, y)
        us.append(u)
        ys.append(y)


def test_time_window_constant_data_rank():
    cfg = DPCConfig(2, 3, np.eye(1), np.eye(1), lambda_pi=1.0)
    hist = (np.ones((20, 1)), np.full((20, 1), 2.0))
    ctl = TimeWindowedDeePC(cfg, W=20, history=hist)
    u, diag = ctl.act(np.ones(2), np.full(2, 2.0))
    assert diag.rank == 1 and not diag.degraded


def test_time_window_single_column_and_short_buffer():
    cfg = DPCConfig(2, 3, np.eye(1), np.eye(1))
    rng = np.random.default_rng(0)
    ctl = TimeWindowedDeePC(cfg, W=5, history=(rng.standard_normal((5, 1)), rng.standard_normal((5, 1))))
    assert ctl.window_blocks().n_cols == 1
    empty = TimeWindowedDeePC(cfg, W=5)
    u, diag = empty.act(np.array([0.5, 0.25]), np.zeros(2))
    assert diag.degraded and u[0] == 0.25
    with pytest.raises(ValueError):
        TimeWindowedDeePC(cfg, W=4)


def test_closed_loop_at_equilibrium(lti):
    (A, B, C, D), ds, _ = lti
    cfg = DPCConfig(T_P, T_F, np.eye(1), np.eye(1), y_ref=[0.0], lambda_pi=1.0, affine=False)
    pl = LTIPlant(A, B, C, D)
    pl.reset()
    tr = run_closed_loop(pl, FullDeePC(ds, cfg), 20, warmup_inputs=np.zeros((T_P, 1)))
    assert tr.cost < 1e-10 and not tr.diverged


def test_divergence_guard():
    A = np.array([[1.5]])
    pl = LTIPlant(A, [[1.0]], [[1.0]], x0=[1.0])
    pl.reset()

    class Push:
        cfg = DPCConfig(1, 1, np.eye(1), np.eye(1))

        def reset(self):
            pass

        def act(self, u_p, y_p):
            from selectdpc.controller import StepDiagnostics
            return np.array([1.0]), StepDiagnostics()

        def observe(self, u, y):
            pass

    tr = run_closed_loop(pl, Push(), 200, blowup=1e3)
    assert tr.diverged and tr.cost == np.inf and tr.steps < 200


def test_combination_profile():
    tr = ClosedLoopTrace(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3), np.ones(3, int), np.zeros(3),
                         np.zeros(3), np.ones(3, bool), np.zeros(3, bool),
                         [np.eye(5)[2], np.full(5, 0.2), None], [None] * 3, np.zeros((1, 1)), np.zeros((1, 1)))
    np.testing.assert_array_equal(combination_profile(tr), [1, 5, 0])
    assert active_count([1.0, 1e-9, -0.5]) == 2


def test_trace_csv(tmp_path, lti):
    (A, B, C, D), ds, cfg = lti
    pl = LTIPlant(A, B, C, D)
    pl.reset()
    tr = run_closed_loop(pl, FullDeePC(ds, cfg), 10)
    path = tr.to_csv(tmp_path / "trace.csv", snapshot_steps=[2, 5])
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["step", "u_0", "y_0"] and len(lines) == 11
    snaps = (tmp_path / "trace_predictions.csv").read_text().splitlines()
    assert len(snaps) == 1 + 2 * T_F


def test_settings_validation():
    with pytest.raises(ValueError):
        OuterLoopSettings(eps_conv=0)
    with pytest.raises(ValueError):
        OuterLoopSettings(max_outer_iters=0)
    with pytest.raises(ValueError):
        OuterLoopSettings(n_cols=0)
