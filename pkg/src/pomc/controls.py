"""Control representations: open-loop piecewise-constant controls on absolute
time, and stationary belief-feedback policies tabulated on a value grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import SimplexGrid
from .model import ModelSpec


@dataclass(frozen=True, eq=False)
class PiecewiseConstantControl:
    """Open-loop control: one action index per segment, last segment unbounded.

    ``breakpoints`` starts at 0 and is strictly increasing; segment k covers
    [breakpoints[k], breakpoints[k+1]).
    """

    breakpoints: np.ndarray
    actions: tuple[int, ...]

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or len(bp) == 0 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.actions) != len(bp):
            raise ValueError("need exactly one action per segment")
        bp.flags.writeable = False
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    @classmethod
    def constant(cls, action: int) -> "PiecewiseConstantControl":
        return cls(np.array([0.0]), (int(action),))

    @classmethod
    def from_ids(cls, model: ModelSpec, breakpoints, action_ids) -> "PiecewiseConstantControl":
        return cls(np.asarray(breakpoints, dtype=float),
                   tuple(model.action_index(a) for a in action_ids))

    def segment_at(self, t: float) -> int:
        return int(np.searchsorted(self.breakpoints, t, side="right")) - 1

    def action_at(self, t: float) -> int:
        return self.actions[max(self.segment_at(t), 0)]

    def action_before(self, t: float) -> int:
        """Action on the segment containing t-, i.e. just before time t."""

        k = int(np.searchsorted(self.breakpoints, t, side="left")) - 1
        return self.actions[max(k, 0)]

    def shifted(self, t0: float) -> "PiecewiseConstantControl":
        """Control as seen from absolute time t0 onward (relative clock)."""

        k = max(self.segment_at(t0), 0)
        bp = np.concatenate(([0.0], self.breakpoints[k + 1:] - t0))
        return PiecewiseConstantControl(bp, self.actions[k:])


@dataclass(eq=False)
class FeedbackPolicy:
    """Stationary belief-feedback: one action index per grid node.

    Executed with a dwell: the action chosen at each dwell boundary (from the
    nearest grid node to the current belief) is held through the window, which
    keeps the realized control predictable and piecewise constant.
    """

    grid: SimplexGrid
    node_actions: np.ndarray

    def __post_init__(self):
        acts = np.asarray(self.node_actions, dtype=int)
        if acts.shape != (self.grid.n_nodes,):
            raise ValueError("need one action per grid node")
        if np.any(acts < 0) or np.any(acts >= self.grid.model.n_actions):
            raise ValueError("action index outside the model's grid")
        self.node_actions = acts

    def action_at_node(self, node: int) -> int:
        return int(self.node_actions[node])

    def action_for(self, face: int, weights: np.ndarray) -> int:
        return int(self.node_actions[self.grid.nearest_node(face, weights)])

    def actions_for_batch(self, faces: np.ndarray, weight_rows: np.ndarray) -> np.ndarray:
        return self.node_actions[self.grid.nearest_nodes_batch(faces, weight_rows)]
