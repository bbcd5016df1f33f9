import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsac import qsim
from qsac.errors import ConfigurationError, StructuralError
from qsac.policy import (GaussianMLPPolicy, PolicyParams, QuantumPolicy, ReuploadingPolicyConfig,
                         build_reuploading_circuit, init_policy_params, load_checkpoint, log_prob,
                         param_count, policy_forward, policy_gradient, sample_action,
                         save_checkpoint)
from qsac.qsim import DataFeature, TrainableParam

import oracles
from test_qsim import oracle_expectations


def enumerate_trainables(spec):
    """Count distinct trainable indices by walking the emitted gate list."""
    seen = set()
    for g in spec.gates:
        src = g.angle_source
        if isinstance(src, TrainableParam):
            seen.add(src.index)
        elif isinstance(src, DataFeature) and src.scale_param is not None:
            seen.add(src.scale_param)
    return len(seen)


# ---------------------------------------------------------------- circuit builder

def test_walker_sized_circuit_counts():
    cfg = ReuploadingPolicyConfig(obs_dim=17, act_dim=6, n_qubits=17, n_layers=2)
    spec = build_reuploading_circuit(cfg)
    assert spec.n_trainable == enumerate_trainables(spec) == 34
    assert spec.n_features == 17
    assert sum(g.kind == "CZ" for g in spec.gates) == 2 * 17


def test_smallest_circuit():
    spec = build_reuploading_circuit(ReuploadingPolicyConfig(1, 1, n_layers=1, n_qubits=1))
    assert [(g.kind, g.target, g.angle_source) for g in spec.gates] == [
        ("RX", 0, DataFeature(0)), ("RY", 0, TrainableParam(0))]


def test_scaled_three_qubit_two_layer():
    spec = build_reuploading_circuit(ReuploadingPolicyConfig(3, 1, n_layers=2, use_input_scaling=True))
    assert spec.n_trainable == enumerate_trainables(spec) == 12


def test_two_qubit_ring_has_one_cz():
    spec = build_reuploading_circuit(ReuploadingPolicyConfig(2, 1, n_layers=1))
    assert sum(g.kind == "CZ" for g in spec.gates) == 1


def test_config_guards():
    with pytest.raises(ConfigurationError):
        ReuploadingPolicyConfig(0, 1)
    with pytest.raises(ConfigurationError):
        ReuploadingPolicyConfig(4, 1, n_qubits=3)
    with pytest.raises(ConfigurationError):
        ReuploadingPolicyConfig(21, 1)
    with pytest.raises(ConfigurationError):
        ReuploadingPolicyConfig(3, 1, n_layers=0)


# ---------------------------------------------------------------- forward

def _params(cfg, seed=0):
    return init_policy_params(cfg, np.random.default_rng(seed))


def test_zero_head_gives_standard_normal():
    cfg = ReuploadingPolicyConfig(3, 2)
    p = _params(cfg)
    p.head_weights[:] = 0
    p.head_bias[:] = 0
    mu, sigma = policy_forward(cfg, p, np.array([0.3, -2.0, 5.0]))
    np.testing.assert_array_equal(mu, 0.0)
    np.testing.assert_array_equal(sigma, 1.0)


def test_walker_dims():
    cfg = ReuploadingPolicyConfig(17, 6)
    mu, sigma = policy_forward(cfg, _params(cfg), np.linspace(-3, 3, 17))
    assert mu.shape == sigma.shape == (6,)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.integers(0, 1000))
def test_sigma_respects_bounds(obs, seed):
    cfg = ReuploadingPolicyConfig(3, 2, log_std_bounds=(-5, 2))
    p = _params(cfg, seed)
    p.head_weights *= 50  # push log_std towards both clamps
    _, sigma = policy_forward(cfg, p, np.array(obs))
    assert np.all(sigma >= math.exp(-5)) and np.all(sigma <= math.exp(2))


def test_forward_dimension_mismatch():
    cfg = ReuploadingPolicyConfig(3, 2)
    with pytest.raises(StructuralError):
        policy_forward(cfg, _params(cfg), np.zeros(4))


def test_head_inputs_are_expectations_in_range():
    cfg = ReuploadingPolicyConfig(3, 1, use_input_scaling=True)
    pol = QuantumPolicy(cfg, np.random.default_rng(3))
    _, _, cache = pol.distribution(np.random.default_rng(4).normal(scale=10, size=(50, 3)))
    assert np.all(np.abs(cache.z) <= 1)


def test_batched_forward_matches_single():
    cfg = ReuploadingPolicyConfig(3, 2)
    p = _params(cfg, 2)
    obs = np.random.default_rng(1).normal(size=(4, 3))
    mu_b, sig_b = policy_forward(cfg, p, obs)
    for i in range(4):
        mu, sig = policy_forward(cfg, p, obs[i])
        np.testing.assert_allclose(mu, mu_b[i], rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(sig, sig_b[i], rtol=1e-14)


@pytest.mark.parametrize("n_qubits", [2, 3, 4])
def test_sign_blindness_up_to_two_layers(n_qubits):
    """With at most two RX/RY/CZ blocks every <Z> is even in each feature separately.

    In the Heisenberg picture the last block maps Z_i to cos(t)cos(x) Z_i + cos(t)sin(x) Y_i + sin(t) X_i,
    and on the first block's CZ-entangled product state <Y_i ...> carries a second factor of sin(x_i).
    A third block breaks this, so flipping a feature's sign becomes visible.
    """
    rng = np.random.default_rng(n_qubits)
    for layers, blind in ((1, True), (2, True), (3, False)):
        spec = build_reuploading_circuit(ReuploadingPolicyConfig(n_qubits, 1, n_layers=layers))
        worst = 0.0
        for _ in range(10):
            p = rng.uniform(-np.pi, np.pi, spec.n_trainable)
            x = rng.uniform(-1.5, 1.5, n_qubits)
            for i in range(n_qubits):
                y = x.copy()
                y[i] = -y[i]
                worst = max(worst, np.abs(oracle_expectations(spec, p, x) - oracle_expectations(spec, p, y)).max())
        assert (worst < 1e-12) == blind


# ---------------------------------------------------------------- sampling / log-prob

def test_zero_noise_is_tanh_mu():
    mu = np.array([0.3, -1.2])
    out = sample_action(mu, np.array([0.5, 2.0]), np.zeros(2))
    np.testing.assert_array_equal(out.action, np.tanh(mu))


def test_log_prob_at_mode():
    out = sample_action(np.zeros(1), np.ones(1), np.zeros(1))
    # the 1e-6 floor inside the tanh correction contributes -log(1 + 1e-6) at u = 0
    assert out.log_prob == pytest.approx(-0.5 * math.log(2 * math.pi) - math.log1p(1e-6), abs=1e-12)
    assert out.log_prob == pytest.approx(-0.9189385, abs=2e-6)


def test_log_prob_unit_noise_high_precision():
    mpmath.mp.dps = 40
    t = mpmath.tanh(1)
    expected = -mpmath.log(2 * mpmath.pi) / 2 - mpmath.mpf(1) / 2 - mpmath.log(1 - t * t + mpmath.mpf("1e-6"))
    out = sample_action(np.zeros(1), np.ones(1), np.ones(1))
    assert out.log_prob == pytest.approx(float(expected), abs=1e-12)
    assert out.log_prob == pytest.approx(-0.55138, abs=1e-5)


def test_log_prob_at_mean_closed_form():
    mu = np.array([0.4, -1.1, 2.0])
    expected = -3 * 0.5 * math.log(2 * math.pi) - sum(math.log(1 - math.tanh(m) ** 2 + 1e-6) for m in mu)
    assert log_prob(mu, np.ones(3), mu) == pytest.approx(expected, abs=1e-12)


def test_log_prob_finite_for_large_pre_squash():
    assert np.isfinite(log_prob(np.zeros(1), np.ones(1), np.array([20.0])))
    assert np.isfinite(log_prob(np.zeros(1), np.ones(1), np.array([-20.0])))


def test_log_prob_matches_monte_carlo_histogram():
    rng = np.random.default_rng(0)
    mu, sigma = 0.2, 0.7
    actions = np.tanh(mu + sigma * rng.standard_normal(1_000_000))
    for centre in (-0.5, 0.0, 0.3, 0.8):
        width = 0.02
        frac = np.mean(np.abs(actions - centre) < width / 2)
        density = math.exp(log_prob(np.array([mu]), np.array([sigma]), np.array([math.atanh(centre)])))
        assert frac == pytest.approx(density * width, rel=0.05)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.floats(0.01, 5), min_size=2, max_size=2),
       st.lists(st.floats(-4, 4), min_size=2, max_size=2))
def test_sample_log_prob_consistency(mu, sigma, noise):
    out = sample_action(np.array(mu), np.array(sigma), np.array(noise))
    assert out.log_prob == log_prob(out.mu, out.sigma, out.pre_squash_sample)
    assert np.all(np.abs(out.action) <= 1)
    np.testing.assert_array_equal(out.action, np.tanh(out.pre_squash_sample))


# ---------------------------------------------------------------- gradients

def _loss_fn(cfg, obs, w_mu, w_ls):
    """Scalar loss: 0.5*|mu|^2 weighted + linear in log_std, via forward only."""
    def loss(flat):
        p = PolicyParams.from_flat(cfg, flat)
        mu, sigma = policy_forward(cfg, p, obs)
        return float(np.sum(0.5 * w_mu * mu ** 2) + np.sum(w_ls * np.log(sigma)))
    return loss


def test_zero_upstream_zero_gradient():
    cfg = ReuploadingPolicyConfig(3, 2)
    g = policy_gradient(cfg, _params(cfg), np.ones(3), np.zeros(4))
    assert not g.flat().any()


@pytest.mark.parametrize("scaling", [False, True])
def test_policy_gradient_half_mu_squared_vs_fd(scaling):
    cfg = ReuploadingPolicyConfig(3, 2, n_layers=2, use_input_scaling=scaling)
    p = _params(cfg, 7)
    obs = np.array([0.4, -1.3, 2.2])
    mu, _ = policy_forward(cfg, p, obs)
    grad = policy_gradient(cfg, p, obs, np.concatenate([mu, np.zeros(2)])).flat()
    fd = oracles.central_difference(_loss_fn(cfg, obs, 1.0, 0.0), p.flat(), 1e-5)[0]
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-9)


def test_saturated_log_std_passes_no_gradient():
    cfg = ReuploadingPolicyConfig(3, 2, log_std_bounds=(-5, 2))
    p = _params(cfg, 1)
    p.head_bias[2] = 100.0  # first log_std pinned at the upper bound
    g = policy_gradient(cfg, p, np.ones(3), np.array([0, 0, 1.0, 0])).flat()
    assert not g.any()


def test_batched_gradient_sums_rows():
    cfg = ReuploadingPolicyConfig(3, 1, use_input_scaling=True)
    p = _params(cfg, 5)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(3, 3))
    up = rng.normal(size=(3, 2))
    total = policy_gradient(cfg, p, obs, up).flat()
    parts = sum(policy_gradient(cfg, p, obs[i], up[i]).flat() for i in range(3))
    np.testing.assert_allclose(total, parts, rtol=0, atol=1e-13)


def test_backend_backward_matches_policy_gradient():
    cfg = ReuploadingPolicyConfig(3, 2, use_input_scaling=True)
    pol = QuantumPolicy(cfg, np.random.default_rng(8))
    obs = np.random.default_rng(9).normal(size=(5, 3))
    up = np.random.default_rng(10).normal(size=(5, 4))
    _, _, cache = pol.distribution(obs)
    a = pol.backward(cache, up[:, :2], up[:, 2:])
    b = policy_gradient(cfg, pol.structured, obs, up, spec=pol.spec).flat()
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_classical_backend_gradient_vs_fd():
    pol = GaussianMLPPolicy(3, 2, hidden=(8, 8), rng=np.random.default_rng(0))
    obs = np.random.default_rng(1).normal(size=(4, 3))
    up = np.random.default_rng(2).normal(size=(4, 4))

    def loss(flat):
        q = GaussianMLPPolicy(3, 2, hidden=(8, 8), params=flat)
        mu, ls, _ = q.distribution(obs)
        return float(np.sum(mu * up[:, :2]) + np.sum(ls * up[:, 2:]))

    _, _, cache = pol.distribution(obs)
    g = pol.backward(cache, up[:, :2], up[:, 2:])
    np.testing.assert_allclose(g, oracles.central_difference(loss, pol.params, 1e-6)[0], rtol=1e-6, atol=1e-8)


# ---------------------------------------------------------------- parameter counts

def _enumerated_quantum_count(cfg):
    spec = build_reuploading_circuit(cfg)
    head = 0
    for _out in range(2 * cfg.act_dim):
        head += cfg.n_qubits + 1  # one weight per qubit expectation plus a bias
    return enumerate_trainables(spec) + head


def _enumerated_mlp_count(sizes):
    total = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        for _unit in range(b):
            total += a + 1
    return total


def test_param_count_walker():
    cfg = ReuploadingPolicyConfig(17, 6, n_layers=2)
    q, c = param_count(cfg)
    assert q == _enumerated_quantum_count(cfg) == 250
    assert c == _enumerated_mlp_count((17, 64, 64, 12)) == 6092
    assert QuantumPolicy(cfg, np.random.default_rng(0)).n_params == q


def test_param_count_smallest():
    assert param_count(ReuploadingPolicyConfig(1, 1, n_layers=1))[0] == 5


@pytest.mark.parametrize("layers", [1, 2, 3, 4])
@pytest.mark.parametrize("dims", [(1, 1), (3, 1), (4, 2), (17, 6), (20, 8)])
@pytest.mark.parametrize("scaling", [False, True])
def test_quantum_smaller_than_baseline(layers, dims, scaling):
    q, c = param_count(ReuploadingPolicyConfig(*dims, n_layers=layers, use_input_scaling=scaling))
    assert q < c


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    cfg = ReuploadingPolicyConfig(3, 2, use_input_scaling=True)
    pol = QuantumPolicy(cfg, np.random.default_rng(0))
    path = tmp_path / "policy.json"
    save_checkpoint(pol, path)
    again = load_checkpoint(path, expected_config=cfg)
    assert again.params.tobytes() == pol.params.tobytes()
    assert again.spec == pol.spec


def test_checkpoint_config_mismatch(tmp_path):
    cfg = ReuploadingPolicyConfig(3, 2)
    path = tmp_path / "policy.json"
    save_checkpoint(QuantumPolicy(cfg, np.random.default_rng(0)), path)
    with pytest.raises(ConfigurationError):
        load_checkpoint(path, expected_config=ReuploadingPolicyConfig(3, 2, n_layers=3))


def test_classical_checkpoint_round_trip(tmp_path):
    pol = GaussianMLPPolicy(3, 1, rng=np.random.default_rng(0))
    save_checkpoint(pol, tmp_path / "c.json")
    assert load_checkpoint(tmp_path / "c.json").params.tobytes() == pol.params.tobytes()
