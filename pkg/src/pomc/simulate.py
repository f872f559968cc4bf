"""Seeded Monte Carlo: the controlled chain with its induced observation
process and discounted cost, the direct belief-process simulator, and the
statistics closing the loop between the two formulations.

Scalar simulators return full trajectory records; the batch estimators in
``engines`` carry the large-replicate workloads.  Everything is deterministic
given (inputs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.stats as st

from . import engines
from . import filter as flt
from .controls import FeedbackPolicy, PiecewiseConstantControl
from .engines import ExplosionError, N_MAX_JUMPS
from .model import InitialLaw, ModelSpec

DEFAULT_DWELL = 0.01
TAIL_BUDGET = 1e-4


def default_horizon(model: ModelSpec, tail: float = TAIL_BUDGET) -> float:
    """Smallest horizon with truncation tail C_f e^{-bT}/b <= tail * C_f."""

    return -math.log(tail * model.beta) / model.beta


def truncation_tail(model: ModelSpec, horizon: float) -> float:
    return model.c_f * math.exp(-model.beta * horizon) / model.beta


@dataclass(eq=False)
class ChainTrajectory:
    """Marked-point record of one chain run with its observation process.

    ``y_jumps`` is the subsequence of ``x_jumps`` where the observation class
    changes; the discounted cost is accrued in closed form per constant piece
    and lies in [-c_f/beta, c_f/beta].
    """

    x_jumps: list[tuple[float, str]]
    y_jumps: list[tuple[float, str]]
    discounted_cost: float


@dataclass(eq=False)
class PdpTrajectory:
    """Jump chain of one belief-process run.

    ``stage_costs`` holds the expected one-stage costs (survival-weighted
    stage integrals) and ``discounted_sum`` their discount-weighted total;
    ``realized_cost`` is the pathwise discounted running cost up to the
    horizon, an unbiased estimate of the same quantity.
    """

    jump_chain: list[tuple[float, flt.Belief]]
    stage_costs: list[float]
    discounted_sum: float
    realized_cost: float


def _scalar_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _draw_state(model: ModelSpec, mu: InitialLaw, rng) -> int:
    pick = np.searchsorted(np.cumsum(mu.mu), rng.random(), side="right")
    return int(min(pick, model.n_states - 1))


def _draw_row(row: np.ndarray, rng) -> int:
    cum = np.cumsum(row)
    return int(min((cum < rng.random() * cum[-1]).sum(), len(row) - 1))


def simulate_chain(model: ModelSpec, mu: InitialLaw, policy, horizon: float,
                   seed: int = 0, dwell: float = DEFAULT_DWELL,
                   flow_step: float = flt.DEFAULT_STEP,
                   rng=None) -> ChainTrajectory:
    """One chain trajectory under a fixed control or a dwell-executed policy.

    Holding times are exact exponentials (rates constant between control
    changes).  Under a FeedbackPolicy the action for each dwell window comes
    from the filtered belief at the window start, so the realized control is
    predictable for the observation filtration.
    """

    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = rng if rng is not None else _scalar_rng(seed)
    beta = model.beta
    lam = np.array([model.exit_rates(a) for a in range(model.n_actions)])
    off_diag = model.rates.copy()
    off_diag[:, np.arange(model.n_states), np.arange(model.n_states)] = 0.0
    off_diag = np.clip(off_diag, 0.0, None)

    x = _draw_state(model, mu, rng)
    face = int(model.state_face[x])
    x_jumps = [(0.0, model.states[x])]
    y_jumps = [(0.0, model.observations[face])]
    cost = 0.0
    jumps = 0

    feedback = isinstance(policy, FeedbackPolicy)
    if feedback:
        belief = flt.h_jump(model, mu.mu, face)
        z = belief.weights[list(model.faces[face])].copy()
        cuts = list(np.arange(0.0, horizon, dwell)) + [horizon]
    else:
        z = None
        cuts = [0.0] + [float(b) for b in policy.breakpoints[1:] if 0 < b < horizon]
        cuts.append(horizon)

    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        if t1 <= t0:
            continue
        if feedback:
            full = np.zeros(model.n_states)
            full[list(model.faces[face])] = z
            action = policy.action_for(face, full)
            bclock = t0
        else:
            action = policy.action_at(0.5 * (t0 + t1))
        t = t0
        while True:
            rate = lam[action, x]
            dt = rng.exponential() / rate if rate > 0 else math.inf
            t_event = min(t + dt, t1)
            cost += model.cost[action, x] * (
                math.exp(-beta * t) - math.exp(-beta * t_event)) / beta
            if t + dt >= t1:
                break
            target = _draw_row(off_diag[action, x], rng)
            jumps += 1
            if jumps > N_MAX_JUMPS:
                raise ExplosionError(f"more than {N_MAX_JUMPS} jumps before t={horizon}")
            new_face = int(model.state_face[target])
            if new_face != face:
                if feedback:
                    if t_event > bclock:
                        for _, z, _, _ in flt._rk4_flow(model, face, z, 1.0, bclock,
                                                        t_event, action, flow_step):
                            pass
                    pre = np.zeros(model.n_states)
                    pre[list(model.faces[face])] = z
                    nxt = flt.h_jump(model, pre @ model.rates[action], new_face)
                    z = nxt.weights[list(model.faces[new_face])].copy()
                    bclock = t_event
                face = new_face
                y_jumps.append((t_event, model.observations[face]))
            x = target
            x_jumps.append((t_event, model.states[x]))
            t = t_event
        if feedback and t1 > bclock:
            for _, z, _, _ in flt._rk4_flow(model, face, z, 1.0, bclock, t1,
                                            action, flow_step):
                pass
    return ChainTrajectory(x_jumps=x_jumps, y_jumps=y_jumps, discounted_cost=cost)


def _window_action(model: ModelSpec, policy, face: int, z_members: np.ndarray,
                   t_abs: float) -> int:
    if isinstance(policy, FeedbackPolicy):
        full = np.zeros(model.n_states)
        full[list(model.faces[face])] = z_members
        return policy.action_for(face, full)
    return policy.action_at(t_abs)


def simulate_pdp(model: ModelSpec, nu: flt.Belief, policy, horizon: float,
                 seed: int = 0, dwell: float = DEFAULT_DWELL,
                 flow_step: float = flt.DEFAULT_STEP, g_tail: float = 1e-12,
                 rng=None) -> PdpTrajectory:
    """One belief-process trajectory with expected one-stage cost accounting.

    Sojourns invert the survival function: an Exp(1) threshold against the
    accumulated hazard, located by bisection inside the flow step.  Each
    stage's expected cost integrates the survival-weighted running cost until
    the discounted weight falls below ``g_tail``; the pathwise discounted cost
    up to the horizon accumulates alongside and stops at the realized jump.
    """

    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = rng if rng is not None else _scalar_rng(seed)
    beta = model.beta
    tail_scale = max(model.c_f, 1e-9)
    tau = 0.0
    belief = nu
    jump_chain = [(0.0, belief)]
    stage_costs: list[float] = []
    discounted_sum = 0.0
    realized = 0.0
    n_jumps = 0

    while True:
        threshold = rng.exponential()
        face = belief.face_index(model)
        members = list(model.faces[face])
        sub_r = model.rates[..., members, :][..., :, members]   # (A, d, d)
        sub_f = model.cost[:, members]
        z = belief.weights[members].copy()
        s, hz, g, c = 0.0, 0.0, 0.0, 0.0
        crossed_at = None
        z_cross = None
        action_at_cross = None
        s_gmax = math.log(tail_scale / g_tail + 1.0) / beta + 1.0
        s_cap = max(horizon - tau, 0.0) + s_gmax

        def rk4(z0, hz0, g0, c0, s0, h, action, accrue_c):
            rmat, fvec = sub_r[action], sub_f[action]

            def deriv(zz, hzv, ds):
                q = zz @ rmat
                run = float(zz @ fvec)
                dg = math.exp(-beta * (s0 + ds) - hzv) * run
                dc = math.exp(-beta * (tau + s0 + ds)) * run if accrue_c else 0.0
                return q - q.sum() * zz, -q.sum(), dg, dc

            k1 = deriv(z0, hz0, 0.0)
            k2 = deriv(z0 + 0.5 * h * k1[0], hz0 + 0.5 * h * k1[1], 0.5 * h)
            k3 = deriv(z0 + 0.5 * h * k2[0], hz0 + 0.5 * h * k2[1], 0.5 * h)
            k4 = deriv(z0 + h * k3[0], hz0 + h * k3[1], h)
            zn = z0 + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            zn = np.clip(zn, 0.0, None)
            zn /= zn.sum()
            return (zn,
                    hz0 + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
                    g0 + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
                    c0 + (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]))

        while True:
            need_g = math.exp(-beta * s - hz) * tail_scale > g_tail
            need_jump = crossed_at is None and tau + s < horizon
            if (not (need_g or need_jump)) or s >= s_cap:
                break
            t_abs = tau + s
            action = _window_action(model, policy, face, z, t_abs)
            next_cut = (math.floor(t_abs / dwell + 1e-9) + 1) * dwell
            if not isinstance(policy, FeedbackPolicy):
                k = policy.segment_at(t_abs)
                if k + 1 < len(policy.breakpoints):
                    next_cut = min(next_cut, float(policy.breakpoints[k + 1]))
            if t_abs < horizon:
                next_cut = min(next_cut, horizon)
            h = min(flow_step, next_cut - t_abs)
            if h <= 1e-14:
                s = next_cut - tau
                continue
            accrue_c = crossed_at is None and t_abs < horizon
            zn, hn, gn, cn = rk4(z, hz, g, c, s, h, action, accrue_c)
            if crossed_at is None and hn >= threshold:
                lo, hi = 0.0, h
                state_hi = (zn, hn, gn, cn)
                for _ in range(64):
                    mid = 0.5 * (lo + hi)
                    zm, hm, gm, cm = rk4(z, hz, g, c, s, mid, action, accrue_c)
                    if hm < threshold:
                        lo = mid
                    else:
                        hi = mid
                        state_hi = (zm, hm, gm, cm)
                    if hi - lo < 1e-13 and abs(hm - threshold) < engines.HAZARD_TOL:
                        break
                zm, hm, gm, cm = state_hi
                crossed_at = s + hi
                z_cross = zm.copy()
                action_at_cross = action
                # restart the tail-of-stage march from the crossing point;
                # the pathwise accrual is frozen from here on
                z, hz, g, c = zm, hm, gm, cm
                s = crossed_at
                continue
            z, hz, g, c = zn, hn, gn, cn
            s += h

        stage_costs.append(g)
        discounted_sum += math.exp(-beta * tau) * g
        realized += c
        if crossed_at is None or tau + crossed_at >= horizon:
            break
        tau += crossed_at
        full = np.zeros(model.n_states)
        full[members] = z_cross
        pre = flt.Belief(model.observations[face], full)
        targets = flt.jump_kernel(model, pre, action_at_cross)
        probs = np.cumsum([p for _, p in targets])
        pick = int(min((probs < rng.random()).sum(), len(targets) - 1))
        belief = targets[pick][0]
        jump_chain.append((tau, belief))
        n_jumps += 1
        if n_jumps > N_MAX_JUMPS:
            raise ExplosionError(f"more than {N_MAX_JUMPS} jumps before t={horizon}")

    return PdpTrajectory(
        jump_chain=jump_chain,
        stage_costs=stage_costs,
        discounted_sum=discounted_sum,
        realized_cost=realized,
    )


def _batch_chain(model: ModelSpec, mu: InitialLaw, policy, horizon: float,
                 n: int, seed: int, dwell: float) -> engines.BatchStats:
    if isinstance(policy, FeedbackPolicy):
        return engines.chain_batch_feedback(model, mu, policy, horizon, n, seed, dwell)
    return engines.chain_batch_fixed(model, mu, policy, horizon, n, seed)


def estimate_cost(model: ModelSpec, mu: InitialLaw, policy, replicates: int,
                  horizon: float | None = None, seed: int = 0,
                  dwell: float = DEFAULT_DWELL) -> dict:
    """Mean discounted cost over seeded replicates with its standard error.

    The horizon defaults to the tail-budget rule; the truncation bound is
    reported, never silently absorbed.
    """

    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    horizon = default_horizon(model) if horizon is None else horizon
    stats = _batch_chain(model, mu, policy, horizon, replicates, seed, dwell)
    mean = float(stats.cost.mean())
    se = float(stats.cost.std(ddof=1) / math.sqrt(replicates))
    return {
        "mean": mean,
        "std_error": se,
        "ci95": [mean - 1.96 * se, mean + 1.96 * se],
        "truncation_tail": truncation_tail(model, horizon),
        "replicates": replicates,
        "horizon": horizon,
    }


def compare_laws(model: ModelSpec, mu: InitialLaw, policy, n: int, seed: int = 0,
                 horizon: float | None = None, dwell: float = DEFAULT_DWELL,
                 max_step: float = 0.01) -> dict:
    """Two-sample agreement between the chain-side and belief-side simulators.

    Chain side: n chain replicates (first observation-change time, first
    post-change class, discounted cost).  Belief side: n direct belief-process
    runs started from the restricted initial law mixed by class mass.
    Reports a two-sample KS test on the first jump time (no-jump runs censored
    at the horizon), a contingency chi-square on the first post-jump class,
    and the difference of mean discounted costs.
    """

    horizon = default_horizon(model) if horizon is None else horizon
    chain = _batch_chain(model, mu, policy, horizon, n, seed, dwell)
    faces0, pi0 = engines.initial_pdp_batch(model, mu, n, seed)
    pdp = engines.pdp_batch(model, faces0, pi0, policy, horizon, seed,
                            dwell=dwell, max_step=max_step)

    sentinel = horizon + 1.0
    tau_chain = np.where(np.isnan(chain.tau1), sentinel, chain.tau1)
    tau_pdp = np.where(np.isnan(pdp.tau1), sentinel, pdp.tau1)
    if np.array_equal(tau_chain, tau_pdp):
        ks_stat, ks_p = 0.0, 1.0
    else:
        ks = st.ks_2samp(tau_chain, tau_pdp)
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)

    f_chain = chain.face1[chain.face1 >= 0]
    f_pdp = pdp.face1[pdp.face1 >= 0]
    observed = np.union1d(np.unique(f_chain), np.unique(f_pdp))
    if observed.size <= 1 or f_chain.size == 0 or f_pdp.size == 0:
        chi_stat, chi_p = 0.0, 1.0
    else:
        table = np.array([
            [(f_chain == f).sum() for f in observed],
            [(f_pdp == f).sum() for f in observed],
        ])
        res = st.chi2_contingency(table, correction=False)
        chi_stat, chi_p = float(res[0]), float(res[1])

    mean_chain = float(chain.cost.mean())
    mean_pdp = float(pdp.cost.mean())
    pooled_se = math.sqrt(chain.cost.var(ddof=1) / n + pdp.cost.var(ddof=1) / n)
    return {
        "ks_tau1": {"statistic": ks_stat, "pvalue": ks_p},
        "face_chi2": {"statistic": chi_stat, "pvalue": chi_p},
        "mean_cost_delta": mean_chain - mean_pdp,
        "pooled_se": pooled_se,
        "mean_cost_chain": mean_chain,
        "mean_cost_pdp": mean_pdp,
        "replicates": n,
        "horizon": horizon,
        "truncation_tail": truncation_tail(model, horizon),
    }
