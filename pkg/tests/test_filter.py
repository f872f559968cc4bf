import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conditional_law_recursion
from pomc import filter as flt
from pomc import fixtures
from pomc import model as M
from pomc.controls import PiecewiseConstantControl
from pomc.grid import constant_table

U0 = PiecewiseConstantControl.constant(0)


def belief_a(w1):
    return flt.Belief("a", np.array([w1, 1.0 - w1, 0.0]))


BELIEF_B = flt.Belief("b", np.array([0.0, 0.0, 1.0]))


@st.composite
def face_a_beliefs(draw):
    w = draw(st.floats(0.0, 1.0, allow_nan=False))
    return belief_a(w)


# ---------------------------------------------------------------- h_jump

def test_h_jump_restricts_and_renormalizes(fixture_model):
    b = flt.h_jump(fixture_model, np.array([0.2, 0.3, 0.5]), "a")
    assert b.face == "a"
    np.testing.assert_allclose(b.weights, [0.4, 0.6, 0.0], atol=1e-15)


def test_h_jump_degenerate_uniform(fixture_model):
    b = flt.h_jump(fixture_model, np.array([0.0, 0.0, 1.0]), "a")
    np.testing.assert_allclose(b.weights, [0.5, 0.5, 0.0])


def test_h_jump_already_supported(fixture_model):
    b = flt.h_jump(fixture_model, np.array([0.0, 0.0, 1.0]), "b")
    np.testing.assert_allclose(b.weights, [0.0, 0.0, 1.0])


def test_h_jump_unknown_observation(fixture_model):
    with pytest.raises(KeyError):
        flt.h_jump(fixture_model, np.array([1.0, 0.0, 0.0]), "zz")


# ---------------------------------------------------------------- vector field

def test_vector_field_vertex_example(fixture_model):
    out = flt.vector_field(fixture_model, belief_a(1.0), "u0")
    np.testing.assert_allclose(out, [-1.0, 1.0, 0.0], atol=1e-14)


def test_vector_field_single_state_face(fixture_model):
    out = flt.vector_field(fixture_model, BELIEF_B, "u05")
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


@given(face_a_beliefs(), st.integers(0, 2))
@settings(max_examples=60, deadline=None)
def test_vector_field_sums_to_zero(nu, action):
    m = fixtures.three_state_model()
    out = flt.vector_field(m, nu, action)
    assert abs(out.sum()) <= 1e-14
    assert out[2] == 0.0


# ---------------------------------------------------------------- jump rate / kernel

def test_jump_rate_examples(fixture_model):
    assert flt.jump_rate(fixture_model, belief_a(1.0), "u0") == pytest.approx(0.5, abs=1e-14)
    assert flt.jump_rate(fixture_model, BELIEF_B, "u0") == pytest.approx(1.5, abs=1e-14)


def test_jump_rate_zero_matrix(frozen_model):
    assert flt.jump_rate(frozen_model, belief_a(0.7), 0) == 0.0


def test_jump_kernel_vertex_example(fixture_model):
    kern = flt.jump_kernel(fixture_model, belief_a(1.0), "u0")
    assert len(kern) == 1
    target, prob = kern[0]
    assert target.face == "b"
    np.testing.assert_allclose(target.weights, [0.0, 0.0, 1.0])
    assert prob == pytest.approx(1.0, abs=1e-12)


def test_jump_kernel_degenerate_convention(frozen_model):
    kern = flt.jump_kernel(frozen_model, belief_a(0.3), 0)
    assert len(kern) == 1
    target, prob = kern[0]
    assert prob == 1.0
    np.testing.assert_allclose(target.weights, [0.0, 0.0, 1.0])  # uniform on face b


@given(face_a_beliefs(), st.integers(0, 2))
@settings(max_examples=60, deadline=None)
def test_jump_kernel_normalized_off_face(nu, action):
    m = fixtures.three_state_model()
    kern = flt.jump_kernel(m, nu, action)
    total = sum(p for _, p in kern)
    assert total == pytest.approx(1.0, abs=1e-12)
    for target, p in kern:
        assert p >= 0
        assert target.face != nu.face
        flt.validate_belief(m, target)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2))
@settings(max_examples=60, deadline=None)
def test_jump_rate_lipschitz_same_face(w1, w2, action):
    m = fixtures.three_state_model()
    r1 = flt.jump_rate(m, belief_a(w1), action)
    r2 = flt.jump_rate(m, belief_a(w2), action)
    dist = np.linalg.norm(belief_a(w1).weights - belief_a(w2).weights)
    assert abs(r1 - r2) <= m.lip_r * dist + 1e-12
    assert r1 >= -1e-14


# ---------------------------------------------------------------- flow

def test_flow_single_state_face_exact_exponential(fixture_model):
    res = flt.integrate_flow(fixture_model, BELIEF_B, U0, 1.0, 1e-3)
    assert abs(res.survival[-1] - math.exp(-1.5)) <= 1e-10
    np.testing.assert_allclose(res.weights[-1], [0.0, 0.0, 1.0])


def test_flow_zero_dynamics(frozen_model):
    nu = belief_a(0.3)
    res = flt.integrate_flow(frozen_model, nu, U0, 2.0, 1e-2)
    np.testing.assert_allclose(res.weights, np.tile(nu.weights, (len(res.times), 1)), atol=1e-15)
    np.testing.assert_allclose(res.survival, 1.0, atol=1e-15)


def test_flow_order_probe(fixture_model):
    # Richardson: halving the step should cut the endpoint error ~16x (>= 3.5
    # observed order); measured against an 8x-finer reference
    errs = []
    ref = flt.integrate_flow(fixture_model, belief_a(1.0), U0, 1.0, 0.00625)
    for h in (0.1, 0.05):
        res = flt.integrate_flow(fixture_model, belief_a(1.0), U0, 1.0, h)
        errs.append(np.abs(res.weights[-1] - ref.weights[-1]).max()
                    + abs(res.survival[-1] - ref.survival[-1]))
    order = math.log2(errs[0] / errs[1])
    assert order >= 3.5


def test_flow_survival_monotone_and_on_face(fixture_model):
    res = flt.integrate_flow(fixture_model, belief_a(0.25), U0, 5.0, 1e-3)
    assert res.survival[0] == 1.0
    assert np.all(np.diff(res.survival) <= 1e-15)
    assert np.all(res.survival > 0)
    sums = res.weights.sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    assert np.all(res.weights[:, 2] == 0.0)
    assert res.max_drift <= flt.DRIFT_TOL * 5.0


@given(face_a_beliefs(), st.integers(0, 2), st.floats(0.1, 5.0))
@settings(max_examples=12, deadline=None)
def test_flow_simplex_preservation(nu, action, horizon):
    m = fixtures.three_state_model()
    ctrl = PiecewiseConstantControl.constant(action)
    res = flt.integrate_flow(m, nu, ctrl, horizon, 1e-2)
    final = res.final_belief()
    flt.validate_belief(m, final)


# ---------------------------------------------------------------- replay

def _obs_path():
    return [(0.0, "a"), (0.8, "b"), (1.4, "a")]


def test_replay_perfect_observation(perfect_model):
    mu = M.InitialLaw(np.array([1.0, 0.0, 0.0]))
    path = [(0.0, "a"), (0.5, "b"), (1.2, "c")]
    traj = flt.replay_filter(perfect_model, mu, path, U0, 2.0)
    for k in range(len(traj.times)):
        w = traj.weights[k]
        assert w.max() == pytest.approx(1.0, abs=1e-12)


def test_replay_matches_conditional_law_oracle(fixture_model, fixture_mu):
    ctrl = PiecewiseConstantControl(np.array([0.0, 0.5, 1.1]), (1, 0, 2))
    traj = flt.replay_filter(fixture_model, fixture_mu, _obs_path(), ctrl, 2.0, step=1e-3)
    times, laws = conditional_law_recursion(
        fixture_model, fixture_mu.mu, _obs_path(), ctrl, 2.0, dt=1e-4)
    # compare on the common 1e-3 grid (both grids contain it exactly)
    sup = 0.0
    for t in np.arange(0.0, 2.0 + 1e-9, 0.01):
        mine = traj.belief_at(t).weights
        k = int(np.searchsorted(times, t + 1e-12)) - 1
        sup = max(sup, np.abs(mine - laws[max(k, 0)]).max())
    assert sup <= 1e-3


def test_replay_no_jump_segment_matches_oracle_tightly(fixture_model, fixture_mu):
    path = [(0.0, "a")]
    traj = flt.replay_filter(fixture_model, fixture_mu, path, U0, 1.0, step=1e-3)
    times, laws = conditional_law_recursion(fixture_model, fixture_mu.mu, path, U0, 1.0, dt=1e-4)
    np.testing.assert_allclose(traj.weights[-1], laws[-1], atol=1e-4)


def test_replay_jump_update_definition(fixture_model, fixture_mu):
    ctrl = PiecewiseConstantControl.constant(2)
    traj = flt.replay_filter(fixture_model, fixture_mu, _obs_path(), ctrl, 2.0)
    k = int(np.searchsorted(traj.times, 0.8, side="left"))
    pre = traj.weights[k]          # pre-jump sample sits first at the jump time
    expected = flt.h_jump(fixture_model, pre @ fixture_model.rates[2], "b")
    post = traj.weights[k + 1]
    np.testing.assert_allclose(post, expected.weights, atol=1e-12)


def test_replay_rejects_unchanged_face(fixture_model, fixture_mu):
    with pytest.raises(flt.InconsistentPathError):
        flt.replay_filter(fixture_model, fixture_mu, [(0.0, "a"), (0.5, "a")], U0, 1.0)
    with pytest.raises(flt.InconsistentPathError):
        flt.replay_filter(fixture_model, fixture_mu, [(0.5, "a")], U0, 1.0)


# ---------------------------------------------------------------- continuity probe

def test_continuity_probe_constant_table(fixture_model, grid16):
    c = 3.0
    w = constant_table(grid16, c)
    rho = belief_a(0.6)
    rows = flt.continuity_probe(fixture_model, w, rho, [0.1, 0.05, 0.01], seed=5)
    for row in rows:
        # with a constant table the deviation is max_u |r' - r| * c
        assert row["deviation"] <= fixture_model.lip_r * row["delta"] * c + 1e-12


def test_continuity_probe_zero_radius(fixture_model, grid16):
    w = constant_table(grid16, 1.0)
    rows = flt.continuity_probe(fixture_model, w, belief_a(0.5), [0.0])
    assert rows[0]["deviation"] == 0.0


def test_continuity_probe_shrinks_near_vertex(fixture_model, grid16):
    rng = np.random.default_rng(3)
    w = constant_table(grid16, 0.0)
    w.values[:] = rng.normal(size=grid16.n_nodes)
    rho = belief_a(0.9)   # near the first vertex: one component nearly vanishes
    rows = flt.continuity_probe(fixture_model, w, rho, [0.1, 0.05, 0.01], seed=7)
    devs = [r["deviation"] for r in rows]
    assert devs[0] >= devs[1] >= devs[2]
