"""Exact conditional-law filter for the noise-free observation structure.

A belief lives on one observation class (face) of the effective simplex.  The
filter follows a deterministic field between observation jumps, and at a jump
to class ``b`` it is re-initialized by the restriction map ``h_jump``.  The
triple (vector_field, jump_rate, jump_kernel) gives the belief process its
piecewise-deterministic characterization used by the solver and simulators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ValueTable
from .model import InitialLaw, ModelSpec

MASS_EPS = 1e-12
BELIEF_TOL = 1e-9
DRIFT_TOL = 1e-6
DEFAULT_STEP = 1e-3


class InconsistentPathError(ValueError):
    """Observation path whose class does not change at a jump."""


class IntegrationAccuracyError(RuntimeError):
    """Face drift exceeded tolerance; retry with a smaller step."""


@dataclass(frozen=True, eq=False)
class Belief:
    """A point of the effective simplex: face label plus weight vector.

    Weights are a full probability vector over the states, exactly zero off
    the face.
    """

    face: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def face_index(self, model: ModelSpec) -> int:
        return model.observation_index(self.face)


def validate_belief(model: ModelSpec, belief: Belief, tol: float = BELIEF_TOL) -> None:
    face = belief.face_index(model)
    members = model.faces[face]
    w = belief.weights
    if w.shape != (model.n_states,):
        raise ValueError("weight vector has wrong length")
    off = np.setdiff1d(np.arange(model.n_states), members)
    if off.size and np.any(w[off] != 0.0):
        raise ValueError(f"weights not exactly zero off face {belief.face!r}")
    if np.any(w < 0):
        raise ValueError("negative weights")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"weights sum to {w.sum()!r}")


def _action_index(model: ModelSpec, action) -> int:
    return action if isinstance(action, (int, np.integer)) else model.action_index(action)


def uniform_on_face(model: ModelSpec, face: int) -> np.ndarray:
    members = list(model.faces[face])
    w = np.zeros(model.n_states)
    w[members] = 1.0 / len(members)
    return w


def h_jump(model: ModelSpec, mu: np.ndarray, obs: str | int) -> Belief:
    """Restrict a nonnegative vector to the class of ``obs`` and renormalize.

    If the restricted mass is below MASS_EPS the result is the uniform
    distribution on the class (the degenerate-branch convention).
    """

    face = obs if isinstance(obs, (int, np.integer)) else model.observation_index(obs)
    mu = np.asarray(mu, dtype=float)
    members = list(model.faces[face])
    mass = mu[members].sum()
    w = np.zeros(model.n_states)
    if mass <= MASS_EPS:
        w = uniform_on_face(model, face)
    else:
        w[members] = mu[members] / mass
    return Belief(model.observations[face], w)


def vector_field(model: ModelSpec, nu: Belief, action) -> np.ndarray:
    """Drift of the belief on its face; components sum to zero over the face."""

    a = _action_index(model, action)
    face = nu.face_index(model)
    members = list(model.faces[face])
    q = nu.weights @ model.rates[a]
    s = q[members].sum()
    out = np.zeros(model.n_states)
    out[members] = q[members] - s * nu.weights[members]
    return out


def jump_rate(model: ModelSpec, rho: Belief, action) -> float:
    """Intensity of the next observation change from belief ``rho``."""

    a = _action_index(model, action)
    members = list(model.faces[rho.face_index(model)])
    return float(-(rho.weights @ model.rates[a])[members].sum())


def jump_kernel(model: ModelSpec, rho: Belief, action) -> list[tuple[Belief, float]]:
    """Post-jump belief distribution: (target, probability) per reachable face.

    Probabilities normalize to 1.  When the jump intensity vanishes the
    degenerate convention applies: uniform over the other faces.
    """

    a = _action_index(model, action)
    face = rho.face_index(model)
    q = rho.weights @ model.rates[a]
    masses = np.array([
        q[list(model.faces[b])].sum() if b != face else 0.0
        for b in range(len(model.observations))
    ])
    total = masses.sum()
    out = []
    if total <= MASS_EPS:
        others = [b for b in range(len(model.observations)) if b != face]
        p = 1.0 / len(others)
        return [(h_jump(model, q, b), p) for b in others]
    for b in range(len(model.observations)):
        if b == face or masses[b] <= 0.0:
            continue
        out.append((h_jump(model, q, b), float(masses[b] / total)))
    return out


@dataclass(eq=False)
class FlowResult:
    """Sampled deterministic flow with its no-jump survival function."""

    face: str
    times: np.ndarray
    weights: np.ndarray          # (k, n_states)
    survival: np.ndarray
    step: float
    max_drift: float

    def final_belief(self) -> Belief:
        return Belief(self.face, self.weights[-1].copy())


def _face_rhs(model: ModelSpec, face: int):
    members = list(model.faces[face])
    sub = model.rates[:, members][:, :, members]   # (A, d, d)

    def rhs(z: np.ndarray, a: int) -> tuple[np.ndarray, float]:
        q = z @ sub[a]
        s = q.sum()
        return q - s * z, -s                       # (drift, jump rate r = -sum)

    return members, rhs


def _rk4_flow(model: ModelSpec, face: int, z0: np.ndarray, chi0: float,
              t0: float, t1: float, action: int, max_step: float):
    """March (belief-on-face, survival) from t0 to t1 under one action.

    Yields (t, z, chi, drift) after every internal step; z is renormalized
    onto the face each step and drift is the L1 size of that correction.
    """

    members, rhs = _face_rhs(model, face)
    length = t1 - t0
    n_sub = max(1, math.ceil(length / max_step - 1e-12))
    dt = length / n_sub
    z, chi = z0.copy(), chi0
    for k in range(n_sub):
        t = t0 + k * dt

        def f(state):
            zz, cc = state[:-1], state[-1]
            dz, rate = rhs(zz, action)
            return np.append(dz, -cc * rate)

        y = np.append(z, chi)
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        raw = y[:-1]
        clipped = np.clip(raw, 0.0, None)
        total = clipped.sum()
        z = clipped / total if total > 0 else np.full(len(members), 1.0 / len(members))
        drift = float(np.abs(raw - z).sum())
        chi = float(y[-1])
        yield t + dt, z, chi, drift


def integrate_flow(model: ModelSpec, nu: Belief, alpha, horizon: float,
                   step: float = DEFAULT_STEP) -> FlowResult:
    """Integrate the belief flow and survival on [0, horizon].

    ``alpha`` is a PiecewiseConstantControl on the relative clock; its
    breakpoints are forced sample points.  Classical fourth-order fixed-step
    scheme with per-step face renormalization; raises if the accumulated
    renormalization drift exceeds DRIFT_TOL per unit time.
    """

    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if step <= 0:
        raise ValueError("step must be > 0")
    face = nu.face_index(model)
    members = list(model.faces[face])
    z = nu.weights[members].copy()

    cuts = [0.0]
    for b in alpha.breakpoints[1:]:
        if 0.0 < b < horizon:
            cuts.append(float(b))
    cuts.append(horizon)

    times = [0.0]
    zs = [z.copy()]
    chis = [1.0]
    chi = 1.0
    total_drift = 0.0
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        if t1 <= t0:
            continue
        action = alpha.action_at(0.5 * (t0 + t1))
        for t, z, chi, drift in _rk4_flow(model, face, z, chi, t0, t1, action, step):
            times.append(t)
            zs.append(z.copy())
            chis.append(chi)
            total_drift += drift

    if horizon > 0 and total_drift > DRIFT_TOL * horizon:
        raise IntegrationAccuracyError(
            f"face drift {total_drift:.2e} over horizon {horizon} exceeds "
            f"{DRIFT_TOL}/unit time; use a smaller step than {step}"
        )

    weights = np.zeros((len(times), model.n_states))
    weights[:, members] = np.array(zs)
    return FlowResult(
        face=model.observations[face],
        times=np.array(times),
        weights=weights,
        survival=np.array(chis),
        step=step,
        max_drift=total_drift,
    )


@dataclass(eq=False)
class FilterTrajectory:
    """Replayed conditional law on [0, horizon].

    ``survival`` restarts at 1 after each observation jump (it is the no-jump
    survival along the current inter-jump segment).  Jump times appear twice:
    pre-jump state first, post-jump state second.
    """

    times: np.ndarray
    faces: list[str]
    weights: np.ndarray
    survival: np.ndarray
    jumps: list[tuple[float, str]]

    def belief_at_index(self, k: int) -> Belief:
        return Belief(self.faces[k], self.weights[k].copy())

    def belief_at(self, t: float) -> Belief:
        """Belief at the latest sample time <= t (post-jump at jump times).

        A One-ulp-scale slack absorbs accumulated float drift between the
        caller's grid and the sample times.
        """

        k = int(np.searchsorted(self.times, t + 1e-9 * max(1.0, abs(t)),
                                side="right")) - 1
        return self.belief_at_index(max(k, 0))


def replay_filter(model: ModelSpec, mu: InitialLaw, obs_path, control,
                  horizon: float, step: float = DEFAULT_STEP) -> FilterTrajectory:
    """Run the exact filter along a given observation path.

    ``obs_path`` lists (time, observation id) with the time-0 value first and
    strictly increasing times; the observation class must change at every
    jump.  ``control`` is an open-loop PiecewiseConstantControl on absolute
    time; the jump update uses the action in force just before each jump.
    """

    if not obs_path or obs_path[0][0] != 0.0:
        raise InconsistentPathError("observation path must start at time 0")
    times_obs = [t for t, _ in obs_path]
    if np.any(np.diff(times_obs) <= 0):
        raise InconsistentPathError("observation times must be strictly increasing")
    for (_, o1), (_, o2) in zip(obs_path[:-1], obs_path[1:]):
        if o1 == o2:
            raise InconsistentPathError(
                f"observation class must change at a jump (got {o1!r} twice)"
            )

    belief = h_jump(model, mu.mu, obs_path[0][1])
    out_t, out_f, out_w, out_chi = [0.0], [belief.face], [belief.weights.copy()], [1.0]
    jumps: list[tuple[float, str]] = []

    segments = [(t, o) for t, o in obs_path if t < horizon]
    for n, (t0, _) in enumerate(segments):
        t1 = segments[n + 1][0] if n + 1 < len(segments) else horizon
        face = belief.face_index(model)
        members = list(model.faces[face])
        z = belief.weights[members].copy()
        chi = 1.0
        cuts = [t0]
        for b in control.breakpoints[1:]:
            if t0 < b < t1:
                cuts.append(float(b))
        cuts.append(t1)
        for s0, s1 in zip(cuts[:-1], cuts[1:]):
            if s1 <= s0:
                continue
            action = control.action_at(0.5 * (s0 + s1))
            for t, z, chi, _ in _rk4_flow(model, face, z, chi, s0, s1, action, step):
                w = np.zeros(model.n_states)
                w[members] = z
                out_t.append(t)
                out_f.append(belief.face)
                out_w.append(w)
                out_chi.append(chi)
        if n + 1 < len(segments):
            tau, obs_new = segments[n + 1]
            pre = np.zeros(model.n_states)
            pre[members] = z
            action = control.action_before(tau)
            belief = h_jump(model, pre @ model.rates[action], obs_new)
            jumps.append((tau, belief.face))
            out_t.append(tau)
            out_f.append(belief.face)
            out_w.append(belief.weights.copy())
            out_chi.append(1.0)

    return FilterTrajectory(
        times=np.array(out_t),
        faces=out_f,
        weights=np.array(out_w),
        survival=np.array(out_chi),
        jumps=jumps,
    )


def _kernel_value(model: ModelSpec, w: ValueTable, rho: Belief, action: int) -> float:
    """r(rho,u) * integral of w against the post-jump distribution."""

    r = jump_rate(model, rho, action)
    if r <= 0.0:
        return 0.0
    return r * sum(p * w.interpolate(target) for target, p in jump_kernel(model, rho, action))


def continuity_probe(model: ModelSpec, w: ValueTable, rho: Belief, deltas,
                     n_dirs: int = 24, seed: int = 0) -> list[dict]:
    """Empirical modulus of continuity of rho -> r(rho,u) * int w dR, sup over u.

    For each radius, samples same-face points within that distance of ``rho``
    and reports the largest deviation over the action grid.
    """

    face = rho.face_index(model)
    members = list(model.faces[face])
    d = len(members)
    base = np.array([_kernel_value(model, w, rho, a) for a in range(model.n_actions)])

    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, d))
    dirs -= dirs.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(dirs, axis=1)
    dirs = dirs[norms > 1e-12] / norms[norms > 1e-12, None]

    rows = []
    for delta in deltas:
        worst = 0.0
        for direction in dirs:
            stepmax = delta
            neg = direction < 0
            if np.any(neg):
                stepmax = min(stepmax, float(np.min(rho.weights[members][neg] / -direction[neg])))
            if stepmax <= 0:
                continue
            pt = rho.weights[members] + stepmax * direction
            pt = np.clip(pt, 0.0, None)
            pt /= pt.sum()
            wfull = np.zeros(model.n_states)
            wfull[members] = pt
            cand = Belief(model.observations[face], wfull)
            vals = np.array([_kernel_value(model, w, cand, a) for a in range(model.n_actions)])
            worst = max(worst, float(np.max(np.abs(vals - base))))
        rows.append({"delta": float(delta), "deviation": worst})
    return rows
