import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgexit.nn import MlpParams, init_mlp, mlp_forward
from pgexit.policy import (GaussianPolicy, SoftmaxPolicy, gaussian_sample, gaussian_score,
                           load_checkpoint, sample_action, save_checkpoint, softmax_probs, softmax_score)
from pgexit.rng import RngStream


def const_net(value, n_in=3):
    """Net with zero weights whose output is the constant `value`."""
    return MlpParams([n_in, 1], [np.zeros((1, n_in))], [np.array([float(value)])])


def random_policy(seed, n_actions=2, n_in=3, hidden=(5,)):
    rng = RngStream(seed)
    pol = SoftmaxPolicy.create(n_in, list(hidden), list(range(n_actions)), rng, output_scale=1.0)
    pol.set_flat(pol.flat() + 0.3 * rng.normal(pol.n_params))
    return pol


def test_identical_nets_give_uniform():
    net = init_mlp([3, 4, 1], RngStream(0))
    pol = SoftmaxPolicy([net, net.copy(), net.copy()], [0.0, 1.0, 2.0])
    np.testing.assert_allclose(softmax_probs(pol, 0.3, [1.0, -2.0]), np.full(3, 1 / 3), atol=1e-15)


def test_untrained_policy_is_symmetric():
    pol = SoftmaxPolicy.create(4, [8, 8], [0.0, 25.2], RngStream(1))
    p = pol.probs(RngStream(2).normal(40).reshape(10, 4))
    np.testing.assert_array_equal(p, 0.5)


def test_logits_ln3_and_0():
    pol = SoftmaxPolicy([const_net(np.log(3.0)), const_net(0.0)], [0.0, 1.0])
    np.testing.assert_allclose(softmax_probs(pol, 0.0, [0.0, 0.0]), [0.75, 0.25], rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.floats(-50, 50))
def test_probs_normalized_and_translation_invariant(seed, shift):
    pol = random_policy(seed, n_actions=3)
    f = RngStream(seed + 1).normal(3)
    p = pol.probs(f)
    assert abs(p.sum() - 1.0) < 1e-12 and np.all(p > 0)
    shifted = pol.copy()
    for net in shifted.nets:
        net.biases[-1] = net.biases[-1] + shift
    shifted.nets = shifted.nets
    np.testing.assert_allclose(shifted.probs(f), p, atol=1e-12)


def test_non_finite_logits_raise():
    pol = SoftmaxPolicy([const_net(np.nan), const_net(0.0)], [0.0, 1.0])
    with pytest.raises(FloatingPointError):
        pol.probs(np.zeros(3))


def test_score_equal_logits():
    nets = [init_mlp([3, 4, 1], RngStream(5))] * 2
    pol = SoftmaxPolicy([n.copy() for n in nets], [0.0, 1.0])
    f = np.array([0.2, 0.5, -0.1])
    s = pol.score(f, 0)
    from pgexit.nn import mlp_backward
    g = mlp_backward(pol.nets[0], f, np.array([1.0])).flat()
    P = pol.nets[0].n_params
    np.testing.assert_allclose(s[:P], 0.5 * g)
    np.testing.assert_allclose(s[P:], -0.5 * g)


def test_score_vanishes_for_dominant_action():
    pol = SoftmaxPolicy([const_net(40.0), const_net(0.0)], [0.0, 1.0])
    assert np.max(np.abs(pol.score(np.zeros(3), 0))) < 1e-15


def test_score_index_out_of_range():
    pol = random_policy(0)
    with pytest.raises(IndexError):
        pol.score(np.zeros(3), 2)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_score_matches_finite_difference_of_log_prob(seed):
    pol = random_policy(seed, n_actions=3)
    f = RngStream(seed + 7).normal(3)
    m = seed % 3
    theta = pol.flat()
    probe = pol.copy()
    fd = np.zeros_like(theta)
    h = 1e-6
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        probe.set_flat(theta + e)
        up = np.log(probe.probs(f)[m])
        probe.set_flat(theta - e)
        dn = np.log(probe.probs(f)[m])
        fd[j] = (up - dn) / (2 * h)
    s = pol.score(f, m)
    assert np.max(np.abs(s - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_zero_mean_score_identity_batch():
    pol = random_policy(3, n_actions=3)
    f = RngStream(4).normal(30).reshape(10, 3)
    p = pol.probs(f)
    total = sum(pol.score(f, np.full(10, m), per_sample=True) * p[:, [m]] for m in range(3))
    assert np.max(np.abs(total)) < 1e-12


def test_sample_degenerate_policy():
    pol = SoftmaxPolicy([const_net(30.0), const_net(0.0)], [0.0, 1.0])
    idx, a = pol.sample(np.zeros((10_000, 3)), RngStream(0))
    assert np.mean(idx == 0) > 0.999
    np.testing.assert_array_equal(a, pol.actions[idx])


def test_sample_uniform_frequency():
    pol = SoftmaxPolicy([const_net(0.0), const_net(0.0)], [0.0, 1.0])
    idx, _ = pol.sample(np.zeros((100_000, 3)), RngStream(1))
    assert 0.48 <= np.mean(idx == 0) <= 0.52


def test_sample_deterministic_given_seed():
    pol = random_policy(2)
    a = [sample_action(pol, 0.1, [0.2, 0.3], RngStream(9)) for _ in range(2)]
    assert a[0] == a[1]
    f = RngStream(5).normal(300).reshape(100, 3)
    np.testing.assert_array_equal(pol.sample(f, RngStream(3))[0], pol.sample(f, RngStream(3))[0])


def test_softmax_wrappers_use_time_and_state():
    pol = random_policy(8)
    np.testing.assert_array_equal(softmax_probs(pol, 0.5, [1.0, 2.0]), pol.probs(np.array([0.5, 1.0, 2.0])))
    np.testing.assert_array_equal(softmax_score(pol, 0.5, [1.0, 2.0], 1),
                                  pol.score(np.array([0.5, 1.0, 2.0]), 1))


# --- Gaussian ---------------------------------------------------------------

def gaussian(seed, m=1, sigma=0.01):
    net = init_mlp([3, 5, m], RngStream(seed))
    net = net.with_flat(net.flat() + 0.2 * RngStream(seed + 1).normal(net.n_params))
    return GaussianPolicy(net, sigma)


def test_gaussian_score_zero_at_mean():
    pol = gaussian(0)
    f = np.array([0.1, 0.2, 0.3])
    assert not np.any(pol.score(f, pol.mean(f)))


def test_gaussian_scalar_score_formula():
    pol = gaussian(1, sigma=0.04)
    f = np.array([0.3, -0.2, 0.5])
    a = pol.mean(f) + 0.07
    from pgexit.nn import mlp_backward
    expected = (0.07 / 0.04) * mlp_backward(pol.mean_net, f, np.array([1.0])).flat()
    np.testing.assert_allclose(gaussian_score(pol, 0.3, [-0.2, 0.5], a), expected, rtol=1e-10)


def test_gaussian_covariance_validation():
    net = init_mlp([3, 2], RngStream(0))
    with pytest.raises(ValueError):
        GaussianPolicy(net, np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValueError):
        GaussianPolicy(net, np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_gaussian_sample_moments():
    sig = np.array([[0.04, 0.01], [0.01, 0.09]])
    pol = gaussian(2, m=2, sigma=sig)
    f = np.tile([0.1, 0.4, -0.3], (100_000, 1))
    a = pol.draw(f, RngStream(4))
    np.testing.assert_allclose(a.mean(axis=0), pol.mean(f[0]), atol=4 * np.sqrt(0.09 / 1e5))
    np.testing.assert_allclose(np.cov(a.T), sig, atol=3e-3)
    assert gaussian_sample(pol, 0.1, [0.4, -0.3], RngStream(1)).shape == (2,)


# --- checkpoints ------------------------------------------------------------

def test_checkpoint_roundtrip_exact(tmp_path):
    pol = random_policy(6, n_actions=3, hidden=(8, 8))
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, pol)
    back = load_checkpoint(path)
    np.testing.assert_array_equal(back.flat(), pol.flat())
    np.testing.assert_array_equal(back.actions, pol.actions)
    assert path.read_text().startswith("pgexit-checkpoint 1\nkind softmax\n")


def test_checkpoint_critic_and_bad_header(tmp_path):
    net = init_mlp([4, 8, 1], RngStream(0))
    save_checkpoint(tmp_path / "c.ckpt", net)
    np.testing.assert_array_equal(load_checkpoint(tmp_path / "c.ckpt").flat(), net.flat())
    (tmp_path / "bad.ckpt").write_text("something else 3\n")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
    x = np.ones(4)
    assert mlp_forward(load_checkpoint(tmp_path / "c.ckpt"), x) == pytest.approx(mlp_forward(net, x))
