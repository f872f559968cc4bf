"""Independent reference computations the tests check the package against.

These deliberately use different numerics than the package: matrix
exponentials and dense linear solves instead of explicit flow stepping, plain
fine-step quadrature instead of Simpson-on-RK4.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def resolvent_cost(model, action: int) -> np.ndarray:
    """Expected discounted cost per start state for one frozen action:
    the solution of (beta I - Lambda) c = f."""

    return np.linalg.solve(
        model.beta * np.eye(model.n_states) - model.rates[action],
        model.cost[action],
    )


def conditional_law_recursion(model, mu, obs_path, control, horizon, dt=1e-4):
    """Discrete-time conditional-law recursion at step dt.

    Between observation jumps the law is propagated by the exact one-step
    killed-semigroup factor expm(dt * Lambda[face, face]) and renormalized
    (conditioning on no class change); at a jump to class b the unnormalized
    update mu * Lambda followed by restriction to b applies.  Returns sampled
    (times, full weight vectors).
    """

    n = model.n_states

    def restrict(vec, face):
        members = list(model.faces[face])
        out = np.zeros(n)
        mass = vec[members].sum()
        if mass <= 0:
            out[members] = 1.0 / len(members)
        else:
            out[members] = vec[members] / mass
        return out

    face = model.observation_index(obs_path[0][1])
    p = restrict(np.asarray(mu, dtype=float), face)
    times = [0.0]
    laws = [p.copy()]

    # cache per (face, action) one-step propagators
    props: dict = {}

    def propagator(face, action):
        key = (face, action)
        if key not in props:
            members = list(model.faces[face])
            props[key] = sla.expm(dt * model.rates[action][np.ix_(members, members)])
        return props[key]

    jumps = [(t, model.observation_index(o)) for t, o in obs_path[1:] if t < horizon]
    jump_iter = iter(jumps + [(horizon, None)])
    next_jump, next_face = next(jump_iter)

    t = 0.0
    members = list(model.faces[face])
    z = p[members]
    k = 0
    while t < horizon - dt / 2:
        action = control.action_at(t + dt / 2)
        if t + dt > next_jump - dt / 2 and next_face is not None:
            # land exactly on the jump: one partial step, then the jump update
            members_old = members
            step = next_jump - t
            if step > 1e-15:
                sub = sla.expm(step * model.rates[action][np.ix_(members_old, members_old)])
                z = z @ sub
                z = z / z.sum()
            full = np.zeros(n)
            full[members_old] = z
            action_pre = control.action_before(next_jump)
            p = restrict(full @ model.rates[action_pre], next_face)
            t = next_jump
            face = next_face
            members = list(model.faces[face])
            z = p[members]
            times.append(t)
            laws.append(p.copy())
            next_jump, next_face = next(jump_iter)
            continue
        z = z @ propagator(face, action)
        z = z / z.sum()
        t += dt
        k += 1
        full = np.zeros(n)
        full[members] = z
        times.append(t)
        laws.append(full)
    return np.array(times), np.array(laws)


def fine_quadrature_stage(model, nu_weights, face, action, w_func, horizon, dt=1e-5):
    """Plain left-endpoint-free trapezoid quadrature of the discounted stage
    integrand along an expm-propagated flow (independent of the RK4 path)."""

    members = list(model.faces[face])
    sub = model.rates[action][np.ix_(members, members)]
    prop = sla.expm(dt * sub)
    fvec = model.cost[action][members]
    z = nu_weights[members].copy()
    raw = z.copy()
    total = 0.0
    t = 0.0
    beta = model.beta

    def integrand(t, raw_vec):
        chi = raw_vec.sum()
        z = raw_vec / chi
        full = np.zeros(model.n_states)
        full[members] = z
        from pomc import filter as flt
        belief = flt.Belief(model.observations[face], full)
        val = float(z @ fvec) + flt._kernel_value(model, w_func, belief, action)
        return np.exp(-beta * t) * chi * val

    prev = integrand(0.0, raw)
    steps = int(round(horizon / dt))
    for k in range(steps):
        raw = raw @ prop
        t = (k + 1) * dt
        cur = integrand(t, raw)
        total += 0.5 * dt * (prev + cur)
        prev = cur
    return total
