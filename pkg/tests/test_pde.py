import numpy as np
import pytest

from pgexit.pde import (GridSpec, PdePolicy, ValueGrid, bang_bang_transport, diffuse, exit_surface,
                        extract_policy, load_solution, make_nodes, save_solution, solve_hjb, transport_step)
from pgexit.srp import SrpConfig

SMALL = GridSpec(n_s=31, n_v=41, n_q=21)


@pytest.fixture(scope="module")
def default_solution():
    return solve_hjb(SrpConfig(a_max=25.2))


def grid_for(cfg, spec, fn):
    s, v, q = make_nodes(cfg, spec)
    S, Vv, Qq = np.meshgrid(s, v, q, indexing="ij")
    return ValueGrid(s, v, q, fn(S, Vv, Qq), cfg.dt)


def test_q_grid_aligned_with_trading_step():
    cfg = SrpConfig(a_max=5.04)
    s, v, q = make_nodes(cfg, GridSpec())
    step = cfg.a_max * cfg.dt
    ratio = step / (q[1] - q[0])
    assert ratio == pytest.approx(round(ratio), abs=1e-9)
    assert q[-1] >= cfg.b and q[-2] < cfg.b
    assert np.all(np.diff(s) > 0) and np.all(np.diff(v) > 0)


def test_transport_reproduces_linear_functions():
    cfg = SrpConfig()
    g = grid_for(cfg, SMALL, lambda S, V, Q: 0.3 + 1.7 * V - 0.9 * Q + 0.0 * S)
    t = 10 * cfg.dt
    out, _ = transport_step(g, t, np.zeros(g.values.shape), cfg)
    v_dst = g.v_nodes[None, :] + (g.s_nodes[:, None] - g.v_nodes[None, :]) * cfg.dt / t
    expected = 0.3 + 1.7 * v_dst[:, :, None] - 0.9 * g.q_nodes[None, None, :]
    np.testing.assert_allclose(out.values[:, :, :-1], expected[:, :, :-1], atol=1e-12)


def test_transport_v_equal_s_only_advects_q():
    cfg = SrpConfig(a_max=25.2)
    s, v, q = make_nodes(cfg, SMALL)
    g = ValueGrid(s, v, q, np.broadcast_to(np.sin(3 * q), (len(s), len(v), len(q))).copy(), cfg.dt)
    g.s_nodes = v.copy()   # one s node per v node, so v = s on the diagonal
    g.values = np.broadcast_to(np.sin(3 * q), (len(v), len(v), len(q))).copy()
    out, _ = transport_step(g, 5 * cfg.dt, np.full(g.values.shape, cfg.a_max), cfg)
    k = int(round(cfg.a_max * cfg.dt / (q[1] - q[0])))
    d = np.arange(len(v))
    inside = q + cfg.a_max * cfg.dt < cfg.b * (1 - 1e-13)
    np.testing.assert_allclose(out.values[d, d][:, inside], np.sin(3 * q[k:][: inside.sum()])[None, :]
                               * np.ones((len(v), 1)), atol=1e-12)


def test_transport_constant_is_unchanged_off_the_barrier():
    cfg = SrpConfig()
    g = grid_for(cfg, SMALL, lambda S, V, Q: np.full(S.shape, 0.42))
    out, _ = transport_step(g, 3 * cfg.dt, np.zeros(g.values.shape), cfg)
    np.testing.assert_allclose(out.values[:, :, :-1], 0.42, atol=1e-13)
    with pytest.raises(ValueError):
        transport_step(g, 0.0, np.zeros(g.values.shape), cfg)


def test_transport_reads_exit_surface():
    cfg = SrpConfig(a_max=25.2)
    g = grid_for(cfg, SMALL, lambda S, V, Q: np.full(S.shape, 7.0))
    out, _ = transport_step(g, 0.1, np.full(g.values.shape, cfg.a_max), cfg)
    np.testing.assert_array_equal(out.values[:, :, -1], exit_surface(cfg, g.s_nodes, g.v_nodes))
    # the node one trading step below B lands on the barrier
    k = int(round(cfg.a_max * cfg.dt / (g.q_nodes[1] - g.q_nodes[0])))
    assert np.all(out.values[:, :, -1 - k] != 7.0)


def test_tie_rule_buys():
    cfg = SrpConfig(a_max=25.2)
    g = grid_for(cfg, SMALL, lambda S, V, Q: 0.1 * V + 0.0 * Q)
    _, buy, _ = bang_bang_transport(g, 0.1, cfg)
    # away from the barrier both candidates read the same q-constant slice
    free = g.q_nodes + cfg.a_max * cfg.dt < cfg.b * (1 - 1e-9)
    assert buy[:, :, free].all()


def test_uncontrolled_value_is_minus_lambda():
    with pytest.warns(UserWarning):
        cfg = SrpConfig(a_max=0.0, allow_unreachable=True)
    sol = solve_hjb(cfg, GridSpec(n_s=51, n_v=41, n_q=11))
    assert sol.value == pytest.approx(-5.0, abs=1e-2)
    assert not sol.buy.any()


def test_zero_vol_value_nonnegative():
    sol = solve_hjb(SrpConfig(sigma=0.0, a_max=10.0), SMALL)
    assert sol.value >= -1e-12


def test_rejects_impact_and_costs():
    with pytest.raises(ValueError):
        solve_hjb(SrpConfig(gamma=0.1))
    with pytest.raises(ValueError):
        solve_hjb(SrpConfig(beta=0.1))


def test_diffusion_preserves_linear_and_boundary():
    s = np.exp(np.linspace(np.log(1 / 3), np.log(3), 41))
    lin = 2.0 - 0.5 * s
    np.testing.assert_allclose(diffuse(lin, s, 0.3, 0.01, n_steps=5), lin, atol=1e-12)
    payoff = np.maximum(s - 1.0, 0.0)
    out = diffuse(payoff, s, 0.3, 0.01, n_steps=5)
    assert out[0] == payoff[0] and out[-1] == pytest.approx(payoff[-1])
    assert np.all(out >= payoff - 1e-12)


def test_solution_invariants(default_solution):
    sol = default_solution
    g = sol.grid0
    np.testing.assert_allclose(g.values[:, :, -1], exit_surface(sol.cfg, g.s_nodes, g.v_nodes), atol=1e-12)
    assert sol.value > 0
    assert sol.extrapolated_fraction < 0.05
    assert sol.buy.shape[0] == sol.cfg.n_steps


def test_policy_buys_near_horizon(default_solution):
    sol = default_solution
    g = sol.grid0
    j = int(np.argmin(np.abs(g.s_nodes - 1.0)))
    last = sol.buy[-1, j][:, g.q_nodes < sol.cfg.b]
    assert last.mean() > 0.95


def test_policy_waits_when_vwap_below_spot(default_solution):
    sol = default_solution
    i = sol.cfg.n_steps // 2
    x = np.array([[1.0, v, 0.1, 0.0] for v in (0.6, 0.7, 0.75)])
    a, n_clamped = extract_policy(sol, i, x)
    np.testing.assert_array_equal(a, 0.0)
    assert n_clamped == 0
    _, n_clamped = extract_policy(sol, i, np.array([[50.0, 1.0, 0.0, 0.0]]))
    assert n_clamped == 1


def test_pde_policy_protocol(default_solution):
    pol = PdePolicy(default_solution)
    idx, a = pol.act(0, np.array([[1.0, 1.0, 0.0, 0.0], [1.0, 0.3, 0.0, 0.0]]), None)
    np.testing.assert_array_equal(idx, (a > 0).astype(int))
    assert set(a.tolist()) <= {0.0, 25.2}


def test_save_load_roundtrip(tmp_path):
    sol = solve_hjb(SrpConfig(a_max=10.0), SMALL)
    path = tmp_path / "sol.npz"
    save_solution(path, sol)
    back = load_solution(path)
    assert back.value == sol.value and back.cfg == sol.cfg and back.spec == sol.spec
    np.testing.assert_array_equal(back.buy, sol.buy)
    np.testing.assert_array_equal(back.grid0.values, sol.grid0.values)


def test_strang_is_close_to_lie_trotter():
    cfg = SrpConfig(a_max=10.0)
    a = solve_hjb(cfg, SMALL)
    b = solve_hjb(cfg, GridSpec(n_s=31, n_v=41, n_q=21, strang=True))
    assert np.isfinite(b.value)
    assert abs(a.value_bp - b.value_bp) < 10.0


def test_interpolate_reproduces_nodes():
    cfg = SrpConfig()
    g = grid_for(cfg, SMALL, lambda S, V, Q: np.log(S) + V * V + Q)
    assert g.interpolate(g.s_nodes[4], g.v_nodes[7], g.q_nodes[3]) == pytest.approx(g.values[4, 7, 3])
