"""Stationarity check for a computed value table.

At interior grid nodes the table should make the discounted stationarity
residual  beta*v + sup_u { -F.grad v - running cost - jump coupling }  small;
residuals shrink with the grid spacing and the sweep step.  Gradients are
central differences along the face's lattice directions, embedded with zero
mean over the face (only the tangential part matters since the drift sums to
zero over the face).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import filter as flt
from .grid import ValueTable
from .model import ModelSpec


def hamiltonian(model: ModelSpec, nu: flt.Belief, grad: np.ndarray, w: ValueTable) -> float:
    """sup over the action grid of -F.grad - nu.f(u) - r * int [w(p)-w(nu)] dR."""

    w_here = w.interpolate(nu)
    best = -np.inf
    for a in range(model.n_actions):
        drift = flt.vector_field(model, nu, a)
        r = flt.jump_rate(model, nu, a)
        coupling = 0.0
        if r > 0.0:
            coupling = r * sum(
                p * (w.interpolate(target) - w_here)
                for target, p in flt.jump_kernel(model, nu, a)
            )
        cand = -float(drift @ grad) - float(nu.weights @ model.cost[a]) - coupling
        best = max(best, cand)
    return best


def face_gradient(v: ValueTable, node: int, one_sided: bool = False) -> np.ndarray:
    """Finite-difference gradient of the table at a grid node, tangent to its face.

    Central differences along the d-1 lattice directions; zero components off
    the face and zero mean over it.  Raises unless the node is interior (all
    lattice coordinates >= 1), except when ``one_sided`` permits falling back
    to one-sided differences for informational boundary reports.
    """

    grid = v.grid
    model = grid.model
    face = int(grid.node_face[node])
    members = list(model.faces[face])
    d = len(members)
    out = np.zeros(model.n_states)
    if d == 1:
        return out

    local = node - grid.face_offsets[face]
    comp = grid.face_comps[face][local]
    interior = np.all(comp >= 1)
    if not interior and not one_sided:
        raise ValueError(f"node {node} is not interior on face {model.observations[face]!r}")

    n = grid.resolution
    dirs = np.empty(d - 1)
    for s in range(1, d):
        plus = comp.copy(); plus[s] += 1; plus[0] -= 1
        minus = comp.copy(); minus[s] -= 1; minus[0] += 1
        has_p = grid.has_node(face, tuple(plus))
        has_m = grid.has_node(face, tuple(minus))
        here = float(v.values[node])
        if has_p and has_m:
            vp = float(v.values[grid.node_id(face, tuple(plus))])
            vm = float(v.values[grid.node_id(face, tuple(minus))])
            dirs[s - 1] = (vp - vm) * n / 2.0
        elif has_p:
            vp = float(v.values[grid.node_id(face, tuple(plus))])
            dirs[s - 1] = (vp - here) * n
        elif has_m:
            vm = float(v.values[grid.node_id(face, tuple(minus))])
            dirs[s - 1] = (here - vm) * n
        else:
            dirs[s - 1] = 0.0

    g0 = -dirs.sum() / d
    out[members[0]] = g0
    for s in range(1, d):
        out[members[s]] = dirs[s - 1] + g0
    return out


@dataclass(eq=False)
class HjbReport:
    """Residuals beta*v + H at interior nodes, plus informational boundary rows."""

    faces: dict                 # face id -> {max_residual, mean_residual, nodes: [...]}
    boundary: list              # informational rows with one-sided gradients
    gradient_method: str
    max_residual: float

    def to_json_dict(self) -> dict:
        doc = {face: dict(stats) for face, stats in self.faces.items()}
        doc["_boundary_informational"] = self.boundary
        doc["_gradient_method"] = self.gradient_method
        doc["_max_residual"] = self.max_residual
        return doc


def residual_at(model: ModelSpec, v: ValueTable, node: int, one_sided: bool = False) -> float:
    nu = v.grid.node_belief(node)
    grad = face_gradient(v, node, one_sided=one_sided)
    return model.beta * float(v.values[node]) + hamiltonian(model, nu, grad, v)


def check_hjb(model: ModelSpec, v: ValueTable) -> HjbReport:
    """Residual report over all interior nodes of the table's grid."""

    grid = v.grid
    faces: dict = {}
    boundary = []
    overall = 0.0
    for face in range(len(model.observations)):
        rows = []
        for node in grid.interior_nodes(face):
            res = residual_at(model, v, int(node))
            rows.append({"node": int(node), "residual": float(res)})
        face_id = model.observations[face]
        if rows:
            absres = np.array([abs(r["residual"]) for r in rows])
            faces[face_id] = {
                "max_residual": float(absres.max()),
                "mean_residual": float(absres.mean()),
                "nodes": rows,
            }
            overall = max(overall, float(absres.max()))
        else:
            faces[face_id] = {"max_residual": 0.0, "mean_residual": 0.0, "nodes": []}
        interior = set(int(x) for x in grid.interior_nodes(face))
        for local in range(grid.face_node_count(face)):
            node = grid.face_offsets[face] + local
            if node in interior:
                continue
            res = residual_at(model, v, node, one_sided=True)
            boundary.append({"node": node, "face": face_id, "residual": float(res)})
    return HjbReport(
        faces=faces,
        boundary=boundary,
        gradient_method="central differences on lattice neighbors (one-sided only "
                        "in informational boundary rows)",
        max_residual=overall,
    )
