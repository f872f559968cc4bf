"""Controlled finite-state model: state/observation spaces, observation map,
action grid, per-action rate matrices and cost vectors, discount factor.

The model document is a single JSON object (see ``load_model``).  All other
modules consume the validated, immutable :class:`ModelSpec`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12
LAW_TOL = 1e-12


class ModelError(ValueError):
    """Base class for invalid model documents."""


class SchemaError(ModelError):
    """Document does not match the expected JSON layout."""


class QMatrixError(ModelError):
    """A rate matrix violates the generator conditions."""


class ObservationMapError(ModelError):
    """The observation map is constant or not surjective."""


@dataclass(frozen=True)
class Action:
    """One point of the control grid; ``coord`` is its optional scalar in [0,1]."""

    id: str
    coord: float | None = None


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Validated model with derived constants.

    rates has shape (n_actions, n_states, n_states); cost has shape
    (n_actions, n_states).  ``faces`` lists, per observation, the tuple of
    state indices mapped to it; ``state_face`` gives each state's face index.
    ``c_f`` bounds |cost|, ``c_r`` bounds the belief jump intensity (attained
    at a face vertex because the intensity is affine on each face), and
    ``lip_r`` = sum_i max_u lambda_i(u) is its Lipschitz constant.

    Instances are immutable after load and safe for concurrent reads.
    """

    states: tuple[str, ...]
    observations: tuple[str, ...]
    h: tuple[str, ...]              # per state, the observation id
    actions: tuple[Action, ...]
    rates: np.ndarray
    cost: np.ndarray
    beta: float
    faces: tuple[tuple[int, ...], ...]
    state_face: np.ndarray
    c_f: float
    c_r: float
    lip_r: float

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def state_index(self, state_id: str) -> int:
        return self.states.index(state_id)

    def observation_index(self, obs_id: str) -> int:
        try:
            return self.observations.index(obs_id)
        except ValueError:
            raise KeyError(f"unknown observation id {obs_id!r}") from None

    def action_index(self, action_id: str) -> int:
        for k, act in enumerate(self.actions):
            if act.id == action_id:
                return k
        raise KeyError(f"unknown action id {action_id!r}")

    def face_members(self, face: int) -> tuple[int, ...]:
        return self.faces[face]

    def face_indicator(self, face: int) -> np.ndarray:
        ind = np.zeros(self.n_states)
        ind[list(self.faces[face])] = 1.0
        return ind

    def exit_rates(self, action: int) -> np.ndarray:
        """lambda_i(u) = -lambda_ii(u) for every state i."""
        return -np.diag(self.rates[action])


@dataclass(frozen=True)
class InitialLaw:
    """Probability vector over the states (the chain's time-0 law)."""

    mu: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim != 1:
            raise SchemaError("initial law must be a flat vector")
        if np.any(mu < 0):
            raise SchemaError("initial law has negative entries")
        if abs(mu.sum() - 1.0) > LAW_TOL:
            raise SchemaError(f"initial law sums to {mu.sum()!r}, not 1")
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class ConvexityReport:
    """Structural probe for the optimal-ordinary-control sufficient conditions.

    Fields are None ("unknown") when actions carry no scalar coordinates.
    """

    interval_u: bool | None
    rates_linear: bool | None
    cost_convex: bool | None


def _require(doc: dict, key: str, types) -> object:
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, types):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def _parse_matrix(raw, n: int, action_id: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape == (n * n,):
        arr = arr.reshape(n, n)
    if arr.shape != (n, n):
        raise SchemaError(
            f"rates[{action_id!r}] must be a row-major {n}x{n} array, got shape {arr.shape}"
        )
    return arr


def model_from_dict(doc: dict) -> ModelSpec:
    """Validate a parsed model document and attach derived constants."""

    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")

    states = tuple(str(s) for s in _require(doc, "states", list))
    observations = tuple(str(o) for o in _require(doc, "observations", list))
    if len(states) < 2:
        raise SchemaError("need at least 2 states")
    if len(set(states)) != len(states):
        raise SchemaError("duplicate state ids")
    if len(observations) < 2:
        raise SchemaError("need at least 2 observations")
    if len(set(observations)) != len(observations):
        raise SchemaError("duplicate observation ids")

    h_doc = _require(doc, "h", dict)
    h = []
    for s in states:
        if s not in h_doc:
            raise SchemaError(f"h is missing state {s!r}")
        if h_doc[s] not in observations:
            raise SchemaError(f"h[{s!r}] = {h_doc[s]!r} is not an observation id")
        h.append(h_doc[s])
    h = tuple(h)
    reached = set(h)
    if len(reached) == 1:
        raise ObservationMapError("h is constant: every state maps to one observation")
    if reached != set(observations):
        missing = sorted(set(observations) - reached)
        raise ObservationMapError(f"h is not surjective: observations {missing} unreached")

    actions_doc = _require(doc, "actions", list)
    if not actions_doc:
        raise SchemaError("actions must be non-empty")
    actions = []
    for entry in actions_doc:
        if not isinstance(entry, dict) or "id" not in entry:
            raise SchemaError("each action must be an object with an 'id'")
        coord = entry.get("coord")
        if coord is not None:
            coord = float(coord)
            if not 0.0 <= coord <= 1.0:
                raise SchemaError(f"action {entry['id']!r} coord {coord} outside [0,1]")
        actions.append(Action(id=str(entry["id"]), coord=coord))
    if len({a.id for a in actions}) != len(actions):
        raise SchemaError("duplicate action ids")
    actions = tuple(actions)

    n = len(states)
    rates_doc = _require(doc, "rates", dict)
    cost_doc = _require(doc, "cost", dict)
    rates = np.empty((len(actions), n, n))
    cost = np.empty((len(actions), n))
    for k, act in enumerate(actions):
        if act.id not in rates_doc:
            raise SchemaError(f"rates is missing action {act.id!r}")
        if act.id not in cost_doc:
            raise SchemaError(f"cost is missing action {act.id!r}")
        rates[k] = _parse_matrix(rates_doc[act.id], n, act.id)
        cvec = np.asarray(cost_doc[act.id], dtype=float)
        if cvec.shape != (n,):
            raise SchemaError(f"cost[{act.id!r}] must have {n} entries")
        cost[k] = cvec

    beta = float(_require(doc, "beta", (int, float)))
    if not beta > 0:
        raise SchemaError(f"beta must be positive, got {beta}")

    for k, act in enumerate(actions):
        mat = rates[k]
        off = mat - np.diag(np.diag(mat))
        bad = np.argwhere(off < 0)
        if bad.size:
            i, j = bad[0]
            raise QMatrixError(
                f"rates[{act.id!r}] entry ({states[i]!r},{states[j]!r}) = {mat[i, j]} is negative"
            )
        sums = mat.sum(axis=1)
        bad_rows = np.where(np.abs(sums) > ROW_SUM_TOL)[0]
        if bad_rows.size:
            i = bad_rows[0]
            raise QMatrixError(
                f"rates[{act.id!r}] row {states[i]!r} sums to {sums[i]:.3e} (|sum| > {ROW_SUM_TOL})"
            )

    faces = tuple(
        tuple(i for i, hi in enumerate(h) if hi == obs) for obs in observations
    )
    state_face = np.array([observations.index(hi) for hi in h])

    c_f = float(np.max(np.abs(cost)))
    # jump intensity at a face vertex e_i is -sum_{j in face} lambda_ij(u);
    # affine in the belief, so the vertex max is the face max.
    c_r = 0.0
    for members in faces:
        idx = list(members)
        block = rates[:, idx][:, :, idx]              # (A, |face|, |face|)
        c_r = max(c_r, float(np.max(-block.sum(axis=2))))
    lip_r = float(np.sum(np.max(-rates[:, np.arange(n), np.arange(n)], axis=0)))

    rates.flags.writeable = False
    cost.flags.writeable = False
    state_face.flags.writeable = False
    return ModelSpec(
        states=states,
        observations=observations,
        h=h,
        actions=actions,
        rates=rates,
        cost=cost,
        beta=beta,
        faces=faces,
        state_face=state_face,
        c_f=c_f,
        c_r=c_r,
        lip_r=lip_r,
    )


def load_model(path: str | Path) -> ModelSpec:
    """Load and validate a JSON model document from ``path``."""

    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def check_convexity_conditions(model: ModelSpec, tol: float = 1e-9) -> ConvexityReport:
    """Probe the action grid for interval structure, affine rates, convex costs.

    Affinity is judged on divided differences across the grid (exact on 3+
    collinear points up to ``tol``); convexity asks for nonnegative second
    divided differences.  Without scalar coordinates all fields are unknown.
    """

    coords = [a.coord for a in model.actions]
    if any(c is None for c in coords):
        return ConvexityReport(None, None, None)
    x = np.asarray(coords, dtype=float)

    interval_u = bool(np.all(np.diff(x) > 0)) and bool(x[0] >= 0.0 and x[-1] <= 1.0)

    def affine(y: np.ndarray) -> bool:
        if len(x) < 3:
            return True
        slopes = np.diff(y) / np.diff(x)
        return bool(np.all(np.abs(np.diff(slopes)) <= tol))

    def convex(y: np.ndarray) -> bool:
        if len(x) < 3:
            return True
        slopes = np.diff(y) / np.diff(x)
        return bool(np.all(np.diff(slopes) >= -tol))

    n = model.n_states
    rates_linear = all(
        affine(model.rates[:, i, j]) for i in range(n) for j in range(n)
    )
    cost_convex = all(convex(model.cost[:, i]) for i in range(n))
    return ConvexityReport(interval_u, rates_linear, cost_convex)
