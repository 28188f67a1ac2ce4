import numpy as np
import pytest
import scipy.linalg as la

from mpr_estimation.channel import Action, ChannelParams, arrival_distribution
from mpr_estimation.estimator import SystemModel
from mpr_estimation.policy import SolverConfig, discretize_states, finite_horizon_dp, lookup
from mpr_estimation.policy import value_iteration
from mpr_estimation.simulator import (FiniteHorizonPolicy, FixedPolicy, GreedyPolicy,
                                      SimConfig, SimpleRcPolicy, SimpleTxPolicy, TablePolicy,
                                      run, simulate, sweep_mu)
from mpr_estimation.stability import scalar_model

SMALL = SolverConfig(D=30, n_paths=6, path_length=120, seed=3)


def stable_model():
    A = np.array([[0.8, 0.2], [0.0, 0.5]])
    sensors = ((np.array([[1.0, 0.0]]), np.eye(1)), (np.array([[0.0, 1.0]]), np.eye(1)))
    return SystemModel(A, 0.1 * np.eye(2), sensors)


def test_silent_policy_reaches_lyapunov_trace(drone_channel):
    model = stable_model()
    m = run(model, drone_channel, SimConfig(horizon=400, n_runs=2,
                                            policy=FixedPolicy(Action((0.0, 0.0)))))
    X = la.solve_discrete_lyapunov(model.A, model.Q)
    assert m.mean_trace_cov == pytest.approx(np.trace(X), rel=1e-6)
    assert m.mean_power == 0.0 and np.all(m.arrival_rate == 0)


def test_reliable_single_sensor_reaches_dare():
    model = scalar_model(1.5, 1)
    ch = ChannelParams((1.0,), ((0.0, 1.0),), 0.0, 0.5)
    m = run(model, ch, SimConfig(horizon=300, n_runs=1, policy=FixedPolicy(Action((1.0,)))))
    X = la.solve_discrete_are(model.A.T, model.C.T, model.Q, model.R)
    assert m.arrival_rate[0] == 1.0
    assert m.mean_trace_cov == pytest.approx(float(X[0, 0]), rel=1e-9)


def test_full_power_counts_two(drones, drone_channel):
    m = run(drones, drone_channel, SimConfig(horizon=50, n_runs=2,
                                             policy=FixedPolicy(Action((1.0, 1.0)))))
    assert m.mean_power == 2.0


def test_arrival_frequencies_match_channel(drones, drone_channel):
    u = Action((1.0, 2 / 3))
    sim = SimConfig(horizon=20_000, n_runs=4, burn_in=0.0, track_state=False,
                    policy=FixedPolicy(u))
    m = run(drones, drone_channel, sim)
    dist = arrival_distribution(u, drone_channel)
    n = sim.horizon * sim.n_runs
    for i, p in enumerate([dist.probs[1] + dist.probs[3], dist.probs[2] + dist.probs[3]]):
        assert abs(m.arrival_rate[i] - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_reproducible(drones, drone_channel):
    sim = SimConfig(horizon=500, n_runs=3, seed=11)
    a = simulate(drones, drone_channel, GreedyPolicy(drones, drone_channel, [0.1, 1.0]), sim)
    b = simulate(drones, drone_channel, GreedyPolicy(drones, drone_channel, [0.1, 1.0]), sim)
    for x, y in zip(a, b):
        assert x.as_dict() == y.as_dict()
        np.testing.assert_array_equal(x.run_trace, y.run_trace)
    c = simulate(drones, drone_channel, GreedyPolicy(drones, drone_channel, [0.1, 1.0]),
                 SimConfig(horizon=500, n_runs=3, seed=12))
    assert c[0].mean_trace_cov != a[0].mean_trace_cov


def test_lanes_match_single_runs(drones, drone_channel):
    sim = SimConfig(horizon=300, n_runs=2, seed=4)
    both = simulate(drones, drone_channel, GreedyPolicy(drones, drone_channel, [0.1, 1.0]), sim)
    one = simulate(drones, drone_channel, GreedyPolicy(drones, drone_channel, [1.0]), sim)
    assert one[0].as_dict() == both[1].as_dict()


@pytest.mark.parametrize("fixture", ["drones", "pendulums"])
def test_estimator_consistency(request, fixture, drone_channel):
    model = request.getfixturevalue(fixture)
    m = run(model, drone_channel, SimConfig(horizon=20_000, n_runs=4, seed=2,
                                            policy=GreedyPolicy(model, drone_channel, 0.3)))
    assert m.mean_error_sq == pytest.approx(m.mean_trace_pred, rel=0.1)


def test_divergence_flagged(drone_channel):
    ch = ChannelParams((1.0, 1.0), ((0.0, 1.0),) * 2, 0.1, 0.75)
    m = run(scalar_model(3.0), ch, SimConfig(horizon=200, n_runs=1, track_state=False,
                                             policy=FixedPolicy(Action((0.0, 0.0)))))
    assert m.divergent
    assert np.isfinite(m.mean_trace_cov)


def test_setup_rejects_bad_policies(drones, drone_channel):
    with pytest.raises(ValueError):
        run(drones, drone_channel, SimConfig(horizon=5, policy=FixedPolicy(Action((2.0, 0.0)))))
    with pytest.raises(ValueError):
        run(drones, drone_channel, SimConfig(horizon=5, policy=FixedPolicy(Action((1.0,)))))
    with pytest.raises(ValueError):
        run(drones, drone_channel, SimConfig(horizon=5, policy=GreedyPolicy(
            drones, drone_channel, [0.1, 0.2])))
    with pytest.raises(ValueError):
        SimConfig(horizon=0)


def test_trace_recording(drones, drone_channel):
    m = run(drones, drone_channel, SimConfig(horizon=40, n_runs=2, record_trace=True,
                                             policy=GreedyPolicy(drones, drone_channel, 0.1)))
    assert m.trace["trace_P"].shape == (40,)
    assert m.trace["gamma"].shape == (40, 2)
    assert set(np.unique(m.trace["total_power"])) <= {0, 1 / 3, 2 / 3, 1, 4 / 3, 5 / 3, 2}


def test_baseline_policies(pendulums, drone_channel):
    sim = SimConfig(horizon=2000, n_runs=2, track_state=False)
    tx = simulate(pendulums, drone_channel, SimpleTxPolicy(pendulums, drone_channel, [0.0]), sim)
    rc = simulate(pendulums, drone_channel, SimpleRcPolicy(pendulums, drone_channel, [0.0]), sim)
    assert tx[0].mean_power <= 1.0 + 1e-12
    assert rc[0].mean_power <= 1.02


def test_table_and_plan_policies(drones, drone_channel):
    X_d = discretize_states(drones, drone_channel, SMALL).centroids
    table = value_iteration(X_d, drones, drone_channel, SMALL)
    pol = TablePolicy(table)
    idx = pol.act(X_d, None, 0, np.zeros(len(X_d), dtype=int))
    assert [pol.actions[k] for k in idx] == [lookup(table, P) for P in X_d]
    plan = finite_horizon_dp(X_d, 1, drones, drone_channel, SMALL)
    fh = FiniteHorizonPolicy(plan)
    greedy = GreedyPolicy(drones, drone_channel, SMALL.mu)
    from mpr_estimation.estimator import successor_covariances
    traces = np.trace(successor_covariances(X_d, drones), axis1=-2, axis2=-1)
    lanes = np.zeros(len(X_d), dtype=int)
    assert [fh.actions[k] for k in fh.act(X_d, traces, 0, lanes)] == \
        [greedy.actions[k] for k in greedy.act(X_d, traces, 0, lanes)]
    m = run(drones, drone_channel, SimConfig(horizon=300, n_runs=2, discount=0.9, policy=pol))
    assert m.discounted_cost.shape == (2,)


def test_sweep(pendulums, drone_channel):
    sim = SimConfig(horizon=1500, n_runs=2, track_state=False)
    pts = sweep_mu(pendulums, drone_channel, [1e15, 0.0, 1.0, 10.0], "greedy", sim)
    powers = [p.mean_power for p in pts]
    assert powers == sorted(powers)
    assert pts[0].mu == 1e15 and pts[0].mean_power == 0.0
    assert pts[-1].mu == 0.0 and pts[-1].mean_power > 1.9
    # trace falls as power rises
    traces = [p.mean_trace for p in pts]
    assert all(b <= a * 1.05 for a, b in zip(traces, traces[1:]))


def test_sweep_reports_failed_points(monkeypatch, drones, drone_channel):
    import mpr_estimation.policy.dp as dp
    real = dp.value_iteration

    def flaky(X_d, model, channel, cfg, **kw):
        if cfg.mu == 0.5:
            raise RuntimeError("boom")
        return real(X_d, model, channel, cfg, **kw)
    monkeypatch.setattr(dp, "value_iteration", flaky)
    pts = sweep_mu(drones, drone_channel, [0.1, 0.5], "table",
                   SimConfig(horizon=200, n_runs=1), solver=SMALL)
    assert len(pts) == 2
    bad = [p for p in pts if p.error]
    assert len(bad) == 1 and bad[0].mu == 0.5 and "boom" in bad[0].error


def test_growing_error_flagged(drones, drone_channel):
    # the drone blocks are double integrators: never transmitting lets the
    # covariance grow polynomially, far below the overflow cap
    idle = run(drones, drone_channel, SimConfig(horizon=2000, n_runs=2, track_state=False,
                                                policy=FixedPolicy(Action((0.0, 0.0)))))
    assert idle.growing and not idle.divergent
    busy = run(drones, drone_channel, SimConfig(horizon=2000, n_runs=2, track_state=False,
                                                policy=FixedPolicy(Action((1.0, 1.0)))))
    assert not busy.growing
