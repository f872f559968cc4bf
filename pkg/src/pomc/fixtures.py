"""Reference model documents used by tests, scripts, and the shipped example.

``three_state_model_dict`` is the repository's canonical model: three states,
two observation classes ({1,2} observed together, {3} alone), a 3-point
action grid on [0,1], rates affine in the action coordinate, costs convex in
it, unit discount.
"""

from __future__ import annotations

from .model import ModelSpec, model_from_dict


def three_state_model_dict() -> dict:
    def lam(u: float) -> list[float]:
        l12, l13 = 1.0 + u, 0.5
        l21, l23 = 0.5 * u, 1.0
        l31, l32 = 0.5 + 0.5 * u, 1.0
        return [
            -(l12 + l13), l12, l13,
            l21, -(l21 + l23), l23,
            l31, l32, -(l31 + l32),
        ]

    def cost(u: float) -> list[float]:
        return [u * u, 1.0, 2.0 - u]

    grid = [0.0, 0.5, 1.0]
    ids = ["u0", "u05", "u1"]
    return {
        "states": ["1", "2", "3"],
        "observations": ["a", "b"],
        "h": {"1": "a", "2": "a", "3": "b"},
        "actions": [{"id": i, "coord": u} for i, u in zip(ids, grid)],
        "rates": {i: lam(u) for i, u in zip(ids, grid)},
        "cost": {i: cost(u) for i, u in zip(ids, grid)},
        "beta": 1.0,
    }


def three_state_model() -> ModelSpec:
    return model_from_dict(three_state_model_dict())


def frozen_model_dict(n_actions: int = 1) -> dict:
    """All rates zero: the chain never moves, the filter flow is constant."""

    ids = [f"u{k}" for k in range(n_actions)]
    return {
        "states": ["1", "2", "3"],
        "observations": ["a", "b"],
        "h": {"1": "a", "2": "a", "3": "b"},
        "actions": [{"id": i, "coord": k / max(n_actions - 1, 1)} for k, i in enumerate(ids)],
        "rates": {i: [0.0] * 9 for i in ids},
        "cost": {i: [0.0, 1.0, 2.0] for i in ids},
        "beta": 1.0,
    }


def frozen_model(n_actions: int = 1) -> ModelSpec:
    return model_from_dict(frozen_model_dict(n_actions))


def constant_cost_model_dict(c: float = 1.0) -> dict:
    """Canonical rates but cost identically ``c``; the value is c/beta."""

    doc = three_state_model_dict()
    doc["cost"] = {aid: [c, c, c] for aid in doc["rates"]}
    return doc


def perfect_observation_model_dict() -> dict:
    """Injective observation map, single action: uncontrolled, fully observed."""

    base = three_state_model_dict()
    return {
        "states": ["1", "2", "3"],
        "observations": ["a", "b", "c"],
        "h": {"1": "a", "2": "b", "3": "c"},
        "actions": [{"id": "u0", "coord": 0.0}],
        "rates": {"u0": base["rates"]["u0"]},
        "cost": {"u0": base["cost"]["u0"]},
        "beta": 1.0,
    }


def perfect_observation_model() -> ModelSpec:
    return model_from_dict(perfect_observation_model_dict())
