"""Vectorized batch simulators behind the Monte Carlo estimators.

Randomness is counter-based: every draw is a pure function of
(seed, round key, replicate lane), realized as fresh PCG64 streams keyed by
SeedSequence(entropy=seed, spawn_key=round_key) whose k-th variate belongs to
replicate k.  Results are therefore bit-reproducible and independent of
execution interleaving.

The chain engines sample holding times as exact exponentials (rates are
constant between control changes); the belief engine integrates the flow with
a classical 4th-order step and inverts the accumulated hazard by bisection
inside the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import FeedbackPolicy, PiecewiseConstantControl
from .model import InitialLaw, ModelSpec

N_MAX_JUMPS = 1_000_000
MASS_EPS = 1e-12
HAZARD_TOL = 1e-9


class ExplosionError(RuntimeError):
    """A replicate exceeded the jump budget before the horizon."""


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _exp_draws(seed: int, *key: int, size: int) -> np.ndarray:
    return -np.log1p(-_rng(seed, *key).random(size))


@dataclass(eq=False)
class BatchStats:
    """Per-replicate outcomes of a batch run."""

    cost: np.ndarray
    tau1: np.ndarray          # NaN where no observation jump before the horizon
    face1: np.ndarray         # first post-jump face index, -1 where none
    jumps: np.ndarray


def _sample_categorical(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One index per row from unnormalized nonnegative row weights."""

    cums = np.cumsum(rows, axis=1)
    draws = u * cums[:, -1]
    return np.minimum((cums < draws[:, None]).sum(axis=1), rows.shape[1] - 1)


def _face_masks(model: ModelSpec) -> np.ndarray:
    masks = np.zeros((len(model.faces), model.n_states))
    for f, members in enumerate(model.faces):
        masks[f, list(members)] = 1.0
    return masks


def _sample_initial_states(model: ModelSpec, mu: InitialLaw, n: int, seed: int) -> np.ndarray:
    u = _rng(seed, 0).random(n)
    cum = np.cumsum(mu.mu)
    return np.searchsorted(cum, u, side="right").clip(0, model.n_states - 1)


# ---------------------------------------------------------------------------
# chain under a fixed open-loop control
# ---------------------------------------------------------------------------

def chain_batch_fixed(model: ModelSpec, mu: InitialLaw, control: PiecewiseConstantControl,
                      horizon: float, n: int, seed: int) -> BatchStats:
    beta = model.beta
    lam = np.array([model.exit_rates(a) for a in range(model.n_actions)])  # (A, S)
    seg_actions = np.asarray(control.actions)
    seg_ends = np.append(control.breakpoints[1:], np.inf)
    off_diag = model.rates.copy()
    off_diag[:, np.arange(model.n_states), np.arange(model.n_states)] = 0.0
    off_diag = np.clip(off_diag, 0.0, None)
    state_face = model.state_face

    x = _sample_initial_states(model, mu, n, seed)
    t = np.zeros(n)
    seg = np.zeros(n, dtype=int)
    cost = np.zeros(n)
    jumps = np.zeros(n, dtype=int)
    tau1 = np.full(n, np.nan)
    face1 = np.full(n, -1, dtype=int)
    done = np.zeros(n, dtype=bool)

    rnd = 0
    while not done.all():
        ex = _exp_draws(seed, 1, rnd, 0, size=n)
        u_tgt = _rng(seed, 1, rnd, 1).random(n)
        rnd += 1

        act = seg_actions[seg]
        rate = lam[act, x]
        dt = np.where(rate > 0, ex / np.where(rate > 0, rate, 1.0), np.inf)
        t_jump = t + dt
        t_seg = seg_ends[seg]
        t_event = np.minimum(np.minimum(t_jump, t_seg), horizon)

        live = ~done
        cost[live] += model.cost[act[live], x[live]] * (
            np.exp(-beta * t[live]) - np.exp(-beta * t_event[live])
        ) / beta

        is_end = live & (horizon <= np.minimum(t_jump, t_seg))
        is_seg = live & ~is_end & (t_seg <= t_jump)
        is_jump = live & ~is_end & ~is_seg

        if is_jump.any():
            idx = np.where(is_jump)[0]
            rows = off_diag[act[idx], x[idx]]
            targets = _sample_categorical(rows, u_tgt[idx])
            changed = state_face[targets] != state_face[x[idx]]
            first = changed & np.isnan(tau1[idx])
            tau1[idx[first]] = t_event[idx[first]]
            face1[idx[first]] = state_face[targets[first]]
            x[idx] = targets
            jumps[idx] += 1
            if jumps.max() > N_MAX_JUMPS:
                raise ExplosionError(f"more than {N_MAX_JUMPS} jumps before t={horizon}")
        seg[is_seg] += 1
        t[live] = t_event[live]
        done |= is_end
    return BatchStats(cost=cost, tau1=tau1, face1=face1, jumps=jumps)


# ---------------------------------------------------------------------------
# shared flow stepping for belief vectors
# ---------------------------------------------------------------------------

def _hstack_rates(model: ModelSpec) -> np.ndarray:
    """(S, A*S) layout so one matmul evaluates every action's flux at once."""

    return np.hstack(list(model.rates))


def _flux(rates_h: np.ndarray, pi: np.ndarray, act: np.ndarray,
          rows=None) -> np.ndarray:
    """Row-wise pi @ rates[act]: single stacked matmul plus one gather."""

    m, n_states = pi.shape
    qall = pi @ rates_h
    if rows is None or len(rows) != m:
        rows = np.arange(m)
    return qall.reshape(m, -1, n_states)[rows, act]


def _drift(rates_h: np.ndarray, pi: np.ndarray, act: np.ndarray, mask_rows: np.ndarray,
           rows=None):
    q = _flux(rates_h, pi, act, rows)
    s = np.einsum("mj,mj->m", q, mask_rows)
    q -= s[:, None] * pi
    q *= mask_rows
    return q, -s                                   # (drift, jump rate)


def _rk4_beliefs_numpy(rates_h: np.ndarray, pi: np.ndarray, act: np.ndarray,
                       mask_rows: np.ndarray, h: np.ndarray) -> np.ndarray:
    hcol = h[:, None]
    rows = np.arange(len(act))

    def f(p):
        return _drift(rates_h, p, act, mask_rows, rows)[0]

    k1 = f(pi)
    k2 = f(pi + 0.5 * hcol * k1)
    k3 = f(pi + 0.5 * hcol * k2)
    k4 = f(pi + hcol * k3)
    k2 += k3
    k2 *= 2.0
    k1 += k4
    k1 += k2
    k1 *= hcol / 6.0
    k1 += pi
    out = np.clip(k1, 0.0, None, out=k1)
    out *= mask_rows
    out /= out.sum(axis=1, keepdims=True)
    return out


try:
    import numba as _nb

    @_nb.njit(parallel=True, cache=True)
    def _rk4_rows_jit(rates, pi, act, mask_rows, h):        # pragma: no cover
        m, n_states = pi.shape
        out = np.empty_like(pi)
        for r in _nb.prange(m):
            a = act[r]
            z = pi[r].copy()
            k = np.empty((4, n_states))
            stage = np.empty(n_states)
            for stg in range(4):
                if stg == 0:
                    for j in range(n_states):
                        stage[j] = z[j]
                else:
                    scale = 0.5 * h[r] if stg < 3 else h[r]
                    for j in range(n_states):
                        stage[j] = z[j] + scale * k[stg - 1, j]
                s = 0.0
                for j in range(n_states):
                    q = 0.0
                    for i in range(n_states):
                        q += stage[i] * rates[a, i, j]
                    k[stg, j] = q
                    s += q * mask_rows[r, j]
                for j in range(n_states):
                    k[stg, j] = (k[stg, j] - s * stage[j]) * mask_rows[r, j]
            total = 0.0
            for j in range(n_states):
                v = z[j] + (h[r] / 6.0) * (k[0, j] + 2.0 * k[1, j] + 2.0 * k[2, j] + k[3, j])
                if v < 0.0:
                    v = 0.0
                v *= mask_rows[r, j]
                out[r, j] = v
                total += v
            for j in range(n_states):
                out[r, j] /= total
        return out

    _HAVE_NUMBA = True
except Exception:                                           # pragma: no cover
    _HAVE_NUMBA = False


def _rk4_beliefs(rates_h: np.ndarray, pi: np.ndarray, act: np.ndarray,
                 mask_rows: np.ndarray, h: np.ndarray, rates=None) -> np.ndarray:
    """One flow step of per-row length h; renormalizes onto the face."""

    if _HAVE_NUMBA and rates is not None and len(act) >= 512:
        return _rk4_rows_jit(rates, pi, np.ascontiguousarray(act),
                             mask_rows, np.ascontiguousarray(h))
    return _rk4_beliefs_numpy(rates_h, pi, act, mask_rows, h)


def _rk4_pdp(model: ModelSpec, rates_h, pi, hz, cs, act, mask_rows, h, t0):
    """One step of (belief, hazard, discounted running cost)."""

    beta = model.beta
    fvec = model.cost[act]
    hcol = h[:, None]

    def rhs(p, s):
        drift, rate = _drift(rates_h, p, act, mask_rows)
        dc = np.exp(-beta * (t0 + s)) * np.sum(p * fvec, axis=1)
        return drift, rate, dc

    zero = np.zeros_like(h)
    f1, r1, c1 = rhs(pi, zero)
    f2, r2, c2 = rhs(pi + 0.5 * hcol * f1, 0.5 * h)
    f3, r3, c3 = rhs(pi + 0.5 * hcol * f2, 0.5 * h)
    f4, r4, c4 = rhs(pi + hcol * f3, h)
    pi_new = pi + (hcol / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
    hz_new = hz + (h / 6.0) * (r1 + 2 * r2 + 2 * r3 + r4)
    cs_new = cs + (h / 6.0) * (c1 + 2 * c2 + 2 * c3 + c4)
    pi_new = np.clip(pi_new, 0.0, None) * mask_rows
    pi_new /= pi_new.sum(axis=1, keepdims=True)
    return pi_new, hz_new, cs_new


def _restrict_rows(model: ModelSpec, vec: np.ndarray, faces: np.ndarray,
                   masks: np.ndarray) -> np.ndarray:
    """Row-wise conditional-law restriction with the uniform fallback."""

    m = masks[faces]
    cut = np.clip(vec, 0.0, None) * m
    mass = cut.sum(axis=1, keepdims=True)
    degenerate = mass[:, 0] <= MASS_EPS
    if degenerate.any():
        cut[degenerate] = m[degenerate]
        mass = cut.sum(axis=1, keepdims=True)
    return cut / mass


def _jump_rows(model: ModelSpec, rates_h: np.ndarray, pi: np.ndarray, act: np.ndarray,
               faces: np.ndarray, masks: np.ndarray, u: np.ndarray):
    """Vectorized post-jump sampling: new faces and beliefs per row."""

    q = _flux(rates_h, pi, act)
    per_face = np.clip(q, 0.0, None) @ masks.T          # off-face flux is >= 0
    per_face[np.arange(len(faces)), faces] = 0.0
    total = per_face.sum(axis=1)
    degenerate = total <= MASS_EPS
    if degenerate.any():
        rows = np.where(degenerate)[0]
        per_face[rows] = 1.0
        per_face[rows, faces[rows]] = 0.0
    new_faces = _sample_categorical(per_face, u)
    new_pi = _restrict_rows(model, q, new_faces, masks)
    return new_faces, new_pi


# ---------------------------------------------------------------------------
# chain under a dwell-executed feedback policy (with on-line filtering)
# ---------------------------------------------------------------------------

def chain_batch_feedback(model: ModelSpec, mu: InitialLaw, policy: FeedbackPolicy,
                         horizon: float, n: int, seed: int,
                         dwell: float = 0.01) -> BatchStats:
    beta = model.beta
    masks = _face_masks(model)
    lam = np.array([model.exit_rates(a) for a in range(model.n_actions)])
    off_diag = model.rates.copy()
    off_diag[:, np.arange(model.n_states), np.arange(model.n_states)] = 0.0
    off_diag = np.clip(off_diag, 0.0, None)
    state_face = model.state_face

    rates_h = _hstack_rates(model)
    x = _sample_initial_states(model, mu, n, seed)
    faces = state_face[x].copy()
    pi = _restrict_rows(model, np.tile(mu.mu, (n, 1)), faces, masks)
    cost = np.zeros(n)
    jumps = np.zeros(n, dtype=int)
    tau1 = np.full(n, np.nan)
    face1 = np.full(n, -1, dtype=int)

    n_windows = int(np.ceil(horizon / dwell - 1e-12))
    for w in range(n_windows):
        t0 = w * dwell
        t1 = min(horizon, (w + 1) * dwell)
        act = policy.actions_for_batch(faces, pi)

        t_cur = np.full(n, t0)
        belief_clock = np.full(n, t0)
        active = np.ones(n, dtype=bool)
        rnd = 0
        while active.any():
            ex = _exp_draws(seed, 2, w, rnd, 0, size=n)
            u_tgt = _rng(seed, 2, w, rnd, 1).random(n)
            rnd += 1
            idx = np.where(active)[0]
            rate = lam[act[idx], x[idx]]
            dt = np.where(rate > 0, ex[idx] / np.where(rate > 0, rate, 1.0), np.inf)
            t_event = np.minimum(t_cur[idx] + dt, t1)
            cost[idx] += model.cost[act[idx], x[idx]] * (
                np.exp(-beta * t_cur[idx]) - np.exp(-beta * t_event)
            ) / beta
            jump_mask = (t_cur[idx] + dt) < t1
            jidx = idx[jump_mask]
            if jidx.size:
                rows = off_diag[act[jidx], x[jidx]]
                targets = _sample_categorical(rows, u_tgt[jidx])
                tj = t_event[jump_mask]
                changed = state_face[targets] != faces[jidx]
                cidx = jidx[changed]
                if cidx.size:
                    # advance the filter to the observation change, then apply
                    # the conditional-law jump update at the frozen action
                    hstep = tj[changed] - belief_clock[cidx]
                    pi[cidx] = _rk4_beliefs(rates_h, pi[cidx], act[cidx],
                                            masks[faces[cidx]], hstep, model.rates)
                    q = _flux(rates_h, pi[cidx], act[cidx])
                    new_faces = state_face[targets[changed]]
                    pi[cidx] = _restrict_rows(model, q, new_faces, masks)
                    first = np.isnan(tau1[cidx])
                    tau1[cidx[first]] = tj[changed][first]
                    face1[cidx[first]] = new_faces[first]
                    faces[cidx] = new_faces
                    belief_clock[cidx] = tj[changed]
                x[jidx] = targets
                jumps[jidx] += 1
                if jumps.max() > N_MAX_JUMPS:
                    raise ExplosionError(f"more than {N_MAX_JUMPS} jumps before t={horizon}")
            t_cur[idx] = t_event
            active[idx] = jump_mask
        hstep = t1 - belief_clock
        move = hstep > 1e-15
        if move.any():
            pi[move] = _rk4_beliefs(rates_h, pi[move], act[move],
                                    masks[faces[move]], hstep[move], model.rates)
    return BatchStats(cost=cost, tau1=tau1, face1=face1, jumps=jumps)


# ---------------------------------------------------------------------------
# belief process simulated directly from its local characteristics
# ---------------------------------------------------------------------------

def pdp_batch(model: ModelSpec, init_faces: np.ndarray, init_pi: np.ndarray,
              policy, horizon: float, seed: int, dwell: float = 0.01,
              max_step: float = 0.01) -> BatchStats:
    """Simulate the belief process from (flow, jump rate, jump kernel).

    ``policy`` is a PiecewiseConstantControl on the absolute clock (shared by
    all rows) or a FeedbackPolicy refreshed at dwell boundaries.  Sojourns end
    when the accumulated hazard hits an Exp(1) threshold (bisection inside the
    step); running cost accrues pathwise as e^{-bt} <belief, f(action)>.
    """

    n = len(init_faces)
    masks = _face_masks(model)
    rates_h = _hstack_rates(model)
    feedback = isinstance(policy, FeedbackPolicy)

    faces = init_faces.copy()
    pi = init_pi.copy()
    hz = np.zeros(n)
    thresh = _exp_draws(seed, 3, size=n)
    cost = np.zeros(n)
    jumps = np.zeros(n, dtype=int)
    tau1 = np.full(n, np.nan)
    face1 = np.full(n, -1, dtype=int)

    cuts = {0.0, float(horizon)}
    k = 1
    while k * dwell < horizon - 1e-12:
        cuts.add(k * dwell)
        k += 1
    if not feedback:
        for b in policy.breakpoints[1:]:
            if 0.0 < b < horizon:
                cuts.add(float(b))
    boundaries = np.array(sorted(cuts))

    act = np.zeros(n, dtype=int)
    for w in range(len(boundaries) - 1):
        t0w, t1w = boundaries[w], boundaries[w + 1]
        if feedback:
            act = policy.actions_for_batch(faces, pi)
        else:
            act[:] = policy.action_at(0.5 * (t0w + t1w))
        n_sub = max(1, int(np.ceil((t1w - t0w) / max_step - 1e-12)))
        h = (t1w - t0w) / n_sub
        for s in range(n_sub):
            # active rows still have time left inside this sub-step
            sel = np.arange(n)
            start = np.full(n, t0w + s * h)
            remaining = np.full(n, h)
            crossing_round = 0
            while sel.size:
                pi0, hz0, cs0 = pi[sel], hz[sel], cost[sel]
                pi_n, hz_n, cs_n = _rk4_pdp(model, rates_h, pi0, hz0, cs0, act[sel],
                                            masks[faces[sel]], remaining[sel], start[sel])
                crossed = hz_n >= thresh[sel]
                ok = sel[~crossed]
                pi[ok], hz[ok], cost[ok] = pi_n[~crossed], hz_n[~crossed], cs_n[~crossed]
                if not crossed.any():
                    break
                idx = sel[crossed]
                pj, hj, cj = pi[idx], hz[idx], cost[idx]
                lo = np.zeros(idx.size)
                hi = remaining[idx].copy()
                for _ in range(64):
                    mid = 0.5 * (lo + hi)
                    _, hm, _ = _rk4_pdp(model, rates_h, pj, hj, cj, act[idx],
                                        masks[faces[idx]], mid, start[idx])
                    below = hm < thresh[idx]
                    lo[below] = mid[below]
                    hi[~below] = mid[~below]
                    if np.max(hi - lo) < 1e-13 and np.max(np.abs(hm - thresh[idx])) < HAZARD_TOL:
                        break
                s_star = 0.5 * (lo + hi)
                pm, _, cm = _rk4_pdp(model, rates_h, pj, hj, cj, act[idx],
                                     masks[faces[idx]], s_star, start[idx])
                tau = start[idx] + s_star
                u_draw = _rng(seed, 4, w, s, 0, crossing_round).random(n)[idx]
                e_draw = _exp_draws(seed, 4, w, s, 1, crossing_round, size=n)[idx]
                new_faces, new_pi = _jump_rows(model, rates_h, pm, act[idx], faces[idx], masks, u_draw)
                first = np.isnan(tau1[idx])
                tau1[idx[first]] = tau[first]
                face1[idx[first]] = new_faces[first]
                faces[idx] = new_faces
                pi[idx] = new_pi
                cost[idx] = cm
                hz[idx] = 0.0
                thresh[idx] = e_draw
                jumps[idx] += 1
                if jumps.max() > N_MAX_JUMPS:
                    raise ExplosionError(f"more than {N_MAX_JUMPS} jumps before t={horizon}")
                start[idx] = tau
                remaining[idx] = remaining[idx] - s_star
                sel = idx[remaining[idx] > 1e-14]
                crossing_round += 1
    return BatchStats(cost=cost, tau1=tau1, face1=face1, jumps=jumps)


def initial_pdp_batch(model: ModelSpec, mu: InitialLaw, n: int, seed: int):
    """Draw the belief process start: the restricted law of the class drawn
    with the class masses of the initial law."""

    masks = _face_masks(model)
    face_mass = np.array([mu.mu[list(m)].sum() for m in model.faces])
    u = _rng(seed, 5).random(n)
    faces = np.searchsorted(np.cumsum(face_mass), u, side="right").clip(
        0, len(model.faces) - 1
    )
    pi = _restrict_rows(model, np.tile(mu.mu, (n, 1)), faces, masks)
    return faces, pi
