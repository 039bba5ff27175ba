import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpps.privacy import privacy_budget, real_sensitivity
from dpps.protocol import ProtocolError, dpps_round, initial_states, network_mean, synchronize
from dpps.rng import NOISE, stream
from dpps.topology import WeightMatrix, build_d_out_schedule, build_exp_schedule, weight_matrix

C_PRIME, LAM = 0.78, 0.55


def run_round(states, w, eps, budget=None, noise=False, seed=0, **kw):
    budget = budget or privacy_budget(5.0, 0.1)
    streams = [stream(seed, i, NOISE) for i in range(len(states))]
    return dpps_round(states, w, eps, budget, noise, streams, c_prime=C_PRIME, lam=LAM, **kw)


def test_two_node_average():
    w = WeightMatrix(np.full((2, 2), 0.5), 0)
    states = initial_states([np.array([2.0, 0.0]), np.zeros(2)])
    out = run_round(states, w, np.zeros((2, 2)))
    for st_ in out.states:
        np.testing.assert_array_equal(st_.shared, [1.0, 0.0])
        np.testing.assert_array_equal(st_.corrected, [1.0, 0.0])
        assert st_.norm_scalar == 1.0


def test_single_node_identity_mixing():
    w = WeightMatrix(np.ones((1, 1)), 0)
    states = initial_states([np.array([1.25])])
    out = run_round(states, w, np.array([[0.3]]))
    assert out.states[0].shared[0] == 1.25 + 0.3


def test_rejects_shape_mismatch():
    w = weight_matrix(build_d_out_schedule(3, 2), 0)
    states = initial_states([np.zeros(2)] * 3)
    with pytest.raises(ValueError):
        run_round(states, w, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        run_round(states[:2], w, np.zeros((2, 2)))


def test_rejects_nonpositive_scalar():
    w = WeightMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]), 0)
    states = initial_states([np.zeros(2)] * 2)
    states[1] = states[1].__class__(**{**states[1].__dict__, "norm_scalar": -1.0})
    with pytest.raises(ProtocolError):
        run_round(states, w, np.zeros((2, 2)))


def test_mean_identity_three_nodes():
    rng = np.random.default_rng(4)
    w = weight_matrix(build_d_out_schedule(3, 2), 0)
    gamma_n = 0.1
    states = initial_states(list(rng.normal(size=(3, 5))))
    eps = -0.1 * rng.normal(size=(3, 5))
    out = run_round(states, w, eps, privacy_budget(5.0, gamma_n), noise=True, seed=9)
    noise = np.stack([d.vector for d in out.noise_draws])
    assert np.abs(noise).sum() > 0
    # both sides built from the logged terms, summed in a different order
    lhs = sum(s.shared for s in out.states) / 3
    rhs = sum(s.shared for s in states) / 3 + eps.sum(axis=0) / 3 + gamma_n * noise.sum(axis=0) / 3
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_sensitivity_used_is_max_estimate():
    rng = np.random.default_rng(5)
    w = weight_matrix(build_exp_schedule(6), 0)
    states = initial_states(list(rng.normal(size=(6, 4))))
    out = run_round(states, w, rng.normal(size=(6, 4)), noise=True)
    assert out.sensitivity_used == max(s.estimate.value for s in out.states)
    assert out.sensitivity_used == out.esti_sensitivity
    for st_, draw in zip(out.states, out.noise_draws):
        assert st_.estimate.last_noise_l1 == draw.l1_norm
        assert draw.scale == pytest.approx(out.sensitivity_used / 5.0)


def test_real_mode_scales_noise_by_true_distance():
    rng = np.random.default_rng(6)
    w = weight_matrix(build_exp_schedule(4), 0)
    states = initial_states(list(rng.normal(size=(4, 3))))
    eps = rng.normal(size=(4, 3))
    out = run_round(states, w, eps, noise=True, sensitivity_mode="real")
    expected = real_sensitivity(np.stack([s.shared for s in states]) + eps)
    assert out.sensitivity_used == expected == out.real_sensitivity


def test_noise_skipped_when_disabled():
    rng = np.random.default_rng(2)
    w = weight_matrix(build_exp_schedule(4), 0)
    states = initial_states(list(rng.normal(size=(4, 3))))
    out = run_round(states, w, rng.normal(size=(4, 3)), noise=False)
    assert out.esti_sensitivity > 0
    assert all(d.l1_norm == 0 for d in out.noise_draws)


def test_network_mean_examples():
    one = initial_states([np.array([3.0, -1.0])])
    np.testing.assert_array_equal(network_mean(one), [3.0, -1.0])
    two = initial_states([np.array([2.0, 0.0]), np.array([0.0, 2.0])])
    np.testing.assert_array_equal(network_mean(two), [1.0, 1.0])


def test_network_mean_matches_oracle():
    vecs = np.random.default_rng(8).normal(size=(7, 9))
    states = initial_states(list(vecs))
    oracle = [sum(vecs[i][k] for i in reversed(range(7))) / 7 for k in range(9)]
    np.testing.assert_allclose(network_mean(states), oracle, rtol=0, atol=1e-12)


def test_phase_atomicity_with_sentinels():
    """Aggregation must read the fully noised buffer, never the pre-noise one."""
    rng = np.random.default_rng(10)
    w = weight_matrix(build_d_out_schedule(5, 3), 0)
    states = initial_states(list(rng.normal(size=(5, 4))))
    seen = {}

    def hook(phase, buffers):
        if phase == "noise":
            seen["noised"] = buffers["noised"].copy()
            # poison the pre-noise buffer; a correct phase 4 never touches it
            buffers["perturbed"][:] = np.nan
        if phase == "aggregate":
            seen["shared"] = buffers["shared"].copy()

    out = run_round(states, w, rng.normal(size=(5, 4)), noise=True, hook=hook)
    assert np.isfinite(seen["shared"]).all()
    np.testing.assert_allclose(seen["shared"], w.entries @ seen["noised"], rtol=0, atol=1e-14)
    np.testing.assert_array_equal(out.states[0].shared, seen["shared"][0])


def test_sync_makes_nodes_identical():
    rng = np.random.default_rng(12)
    w = weight_matrix(build_exp_schedule(5), 0)
    states = initial_states(list(rng.normal(size=(5, 3))))
    out = run_round(states, w, rng.normal(size=(5, 3)), noise=True)
    synced = synchronize(out.states)
    assert real_sensitivity(np.stack([s.shared for s in synced])) == 0.0
    np.testing.assert_allclose(synced[0].shared, network_mean(out.states), atol=0)
    assert all(s.norm_scalar == 1.0 and s.estimate is None for s in synced)


def test_zeroed_sync_then_zero_perturbation_skips_noise():
    rng = np.random.default_rng(13)
    w = weight_matrix(build_exp_schedule(5), 0)
    states = synchronize(initial_states(list(rng.normal(size=(5, 3)))), "zeroed")
    out = run_round(states, w, np.zeros((5, 3)), noise=True)
    assert out.esti_sensitivity == 0.0
    assert all(d.l1_norm == 0.0 for d in out.noise_draws)


def test_zeroed_sync_keeps_only_perturbation_term():
    rng = np.random.default_rng(14)
    w = weight_matrix(build_exp_schedule(5), 0)
    states = synchronize(initial_states(list(rng.normal(size=(5, 3)))), "zeroed")
    eps = rng.normal(size=(5, 3))
    out = run_round(states, w, eps)
    assert out.esti_sensitivity == pytest.approx(2 * C_PRIME * np.abs(eps).sum(axis=1).max(), rel=1e-15)


def test_conservative_sync_baseline():
    states = initial_states([np.array([1.0, -1.0]), np.array([3.0, -3.0])])
    synced = synchronize(states, "conservative")
    # synced vector (2, -2) has L1 norm 4
    eps = np.array([[0.1, 0.0], [0.0, 0.0]])
    w = WeightMatrix(np.full((2, 2), 0.5), 0)
    out = run_round(synced, w, eps)
    assert out.states[1].estimate.value == pytest.approx(2 * 0.78 * 4, rel=1e-15)
    assert out.states[0].estimate.value == pytest.approx(2 * 0.78 * 4.1, rel=1e-15)


def test_sync_rejects_unknown_mode():
    with pytest.raises(ValueError):
        synchronize(initial_states([np.zeros(1)]), "partial")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(1, 5), st.booleans(), st.integers(0, 2**31))
def test_invariants_over_rounds(n, d, use_exp, seed):
    rng = np.random.default_rng(seed)
    sched = build_exp_schedule(n) if use_exp else build_d_out_schedule(n, min(n, 2 + seed % (n - 1)))
    gamma_n = 0.05
    budget = privacy_budget(2.0, gamma_n)
    states = initial_states(list(rng.normal(size=(n, d))))
    streams = [stream(seed, i, NOISE) for i in range(n)]
    for t in range(15):
        eps = 0.05 * rng.normal(size=(n, d))
        out = dpps_round(states, weight_matrix(sched, t), eps, budget, True, streams, c_prime=C_PRIME, lam=LAM)
        noise = np.stack([dr.vector for dr in out.noise_draws])
        expected = network_mean(states) + eps.mean(axis=0) + gamma_n * noise.mean(axis=0)
        assert np.abs(network_mean(out.states) - expected).max() < 1e-10
        assert max(abs(s.norm_scalar - 1) for s in out.states) < 1e-12
        for s in out.states:
            np.testing.assert_array_equal(s.corrected, s.shared / s.norm_scalar)
        states = out.states


def _contract(sched, rounds):
    n = sched.n_nodes
    states = initial_states(list(np.random.default_rng(1).normal(size=(n, 6))))
    start = real_sensitivity(np.stack([s.shared for s in states]))
    prev = start
    for t in range(rounds):
        states = run_round(states, weight_matrix(sched, t), np.zeros((n, 6))).states
        cur = real_sensitivity(np.stack([s.shared for s in states]))
        assert cur <= prev * (1 + 1e-12)
        prev = cur
    return start, prev


@pytest.mark.parametrize(
    "sched",
    [
        build_exp_schedule(10),
        build_exp_schedule(32),
        build_d_out_schedule(10, 4),
        build_d_out_schedule(7, 3),
        build_d_out_schedule(3, 2),
        pytest.param(
            build_d_out_schedule(10, 2),
            # second eigenvalue cos(pi/10) ~ 0.951 needs ~276 rounds for 1e-6, budget is 100
            marks=pytest.mark.xfail(strict=True, reason="ring mixing too slow for a 10*N*period budget"),
        ),
    ],
)
def test_noiseless_consensus_within_budget(sched):
    start, end = _contract(sched, 10 * sched.n_nodes * sched.period)
    assert end < 1e-6 * start


@pytest.mark.parametrize("n,d", [(10, 2), (5, 2), (10, 3)])
def test_noiseless_consensus_matches_spectral_rate(n, d):
    sched = build_d_out_schedule(n, d)
    second = sorted(np.abs(np.linalg.eigvals(weight_matrix(sched, 0).entries)))[-2]
    rounds = int(np.ceil(np.log(1e-6) / np.log(second))) + 2 * n
    start, end = _contract(sched, rounds)
    assert end < 1e-6 * start
