"""Per-face simplex lattices with piecewise-linear barycentric interpolation.

Each observation class gets the lattice {k/n : k nonnegative integers summing
to n} over its member states.  Interpolation uses the standard Kuhn
triangulation in cumulative coordinates: weights are nonnegative, sum to one,
and reproduce nodal values exactly at nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` nonnegative ints summing to ``total``, lex ascending."""

    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


@dataclass(eq=False)
class SimplexGrid:
    """Lattice discretization of the union of per-observation sub-simplices."""

    model: ModelSpec
    resolution: int
    node_face: np.ndarray                 # (n_nodes,) face index
    node_weights: np.ndarray              # (n_nodes, n_states)
    face_offsets: tuple[int, ...]         # start of each face's node block
    face_comps: tuple[np.ndarray, ...]    # per face: (n_face_nodes, d) int lattice coords
    _comp_index: tuple[dict, ...] = field(repr=False, default=())
    _op_cache: dict = field(repr=False, default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_face)

    def face_node_count(self, face: int) -> int:
        return len(self.face_comps[face])

    def node_id(self, face: int, comp: tuple[int, ...]) -> int:
        return self.face_offsets[face] + self._comp_index[face][comp]

    def has_node(self, face: int, comp: tuple[int, ...]) -> bool:
        return comp in self._comp_index[face]

    def node_belief(self, node: int):
        from .filter import Belief

        face = int(self.node_face[node])
        return Belief(self.model.observations[face], self.node_weights[node].copy())

    def interior_nodes(self, face: int) -> np.ndarray:
        """Global ids of nodes with every lattice coordinate >= 1 (single-state
        faces count their one node as interior)."""

        comps = self.face_comps[face]
        if comps.shape[1] == 1:
            mask = np.ones(len(comps), dtype=bool)
        else:
            mask = np.all(comps >= 1, axis=1)
        return self.face_offsets[face] + np.where(mask)[0]

    def locate(self, face: int, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Containing-simplex node ids and barycentric weights for a face point.

        ``weights`` is the full state-space vector of a belief on ``face``.
        """

        members = self.model.faces[face]
        d = len(members)
        rho = np.clip(np.asarray(weights, dtype=float)[list(members)], 0.0, None)
        s = rho.sum()
        if s <= 0:
            raise ValueError("cannot locate a zero-mass point")
        rho = rho / s
        n = self.resolution
        if d == 1:
            return np.array([self.face_offsets[face]]), np.array([1.0])

        z = np.clip(n * np.cumsum(rho[:-1]), 0.0, float(n))
        base = np.minimum(np.floor(z).astype(int), n - 1)
        frac = z - base
        # descending fractional parts; ties broken toward the later coordinate
        # so every walk vertex stays inside the ordered cone
        order = np.lexsort((-np.arange(d - 1), -frac))

        cube = [base.copy()]
        cur = base.copy()
        for j in order:
            cur = cur.copy()
            cur[j] += 1
            cube.append(cur)
        lams = np.empty(d)
        lams[0] = 1.0 - frac[order[0]]
        for t in range(d - 2):
            lams[t + 1] = frac[order[t]] - frac[order[t + 1]]
        lams[d - 1] = frac[order[-1]]

        nodes = np.empty(d, dtype=int)
        index = self._comp_index[face]
        for k, c in enumerate(cube):
            comp = np.empty(d, dtype=int)
            comp[0] = c[0]
            comp[1:-1] = np.diff(c)
            comp[-1] = n - c[-1]
            nodes[k] = self.face_offsets[face] + index[tuple(comp)]
        return nodes, np.clip(lams, 0.0, None)

    def locate_belief(self, belief) -> tuple[np.ndarray, np.ndarray]:
        face = self.model.observation_index(belief.face)
        return self.locate(face, belief.weights)

    def nearest_node(self, face: int, weights: np.ndarray) -> int:
        """Closest lattice node: round coordinates, repair the sum by largest
        remainder (ties toward the lowest member index)."""

        members = self.model.faces[face]
        n = self.resolution
        x = n * np.clip(np.asarray(weights, dtype=float)[list(members)], 0.0, None)
        total = x.sum()
        x = x * (n / total) if total > 0 else np.full(len(members), n / len(members))
        k = np.rint(x).astype(int)
        k = np.clip(k, 0, n)
        while k.sum() != n:
            if k.sum() < n:
                k[np.argmax(x - k)] += 1
            else:
                resid = np.where(k > 0, k - x, -np.inf)
                k[np.argmax(resid)] -= 1
        return self.face_offsets[face] + self._comp_index[face][tuple(k)]

    def nearest_nodes_batch(self, faces: np.ndarray, weight_rows: np.ndarray) -> np.ndarray:
        """Vectorized nearest-node lookup; one global node id per row."""

        n = self.resolution
        out = np.empty(len(faces), dtype=int)
        for face in np.unique(faces):
            rows = np.where(faces == face)[0]
            members = list(self.model.faces[face])
            d = len(members)
            if d == 1:
                out[rows] = self.face_offsets[face]
                continue
            x = n * np.clip(weight_rows[rows][:, members], 0.0, None)
            x *= (n / x.sum(axis=1, keepdims=True))
            k = np.clip(np.rint(x).astype(int), 0, n)
            deficit = n - k.sum(axis=1)
            while np.any(deficit != 0):
                under = deficit > 0
                if np.any(under):
                    j = np.argmax((x - k)[under], axis=1)
                    k[np.where(under)[0], j] += 1
                over = deficit < 0
                if np.any(over):
                    resid = np.where(k[over] > 0, k[over] - x[over], -np.inf)
                    j = np.argmax(resid, axis=1)
                    k[np.where(over)[0], j] -= 1
                deficit = n - k.sum(axis=1)
            keys = self._keys[face]
            enc = k @ self._key_powers[face]
            pos = np.searchsorted(keys, enc)
            out[rows] = self.face_offsets[face] + self._key_order[face][pos]
        return out

    def __post_init__(self):
        # composition -> local index maps plus encoded-key tables for batch lookup
        index_maps = []
        keys, orders, powers = [], [], []
        n = self.resolution
        for comps in self.face_comps:
            d = comps.shape[1]
            index_maps.append({tuple(c): i for i, c in enumerate(comps)})
            pw = (n + 1) ** np.arange(d)
            enc = comps @ pw
            order = np.argsort(enc)
            keys.append(enc[order])
            orders.append(order)
            powers.append(pw)
        self._comp_index = tuple(index_maps)
        self._keys = keys
        self._key_order = orders
        self._key_powers = powers


def build_grid(model: ModelSpec, n_grid: int) -> SimplexGrid:
    """Lattice at ``n_grid`` subdivisions per face; single-state faces get one node."""

    if n_grid < 1:
        raise ValueError("n_grid must be >= 1")
    node_face, node_weights, offsets, face_comps = [], [], [], []
    offset = 0
    for face, members in enumerate(model.faces):
        offsets.append(offset)
        comps = np.array(list(_compositions(n_grid, len(members))), dtype=int)
        face_comps.append(comps)
        for comp in comps:
            w = np.zeros(model.n_states)
            w[list(members)] = np.asarray(comp, dtype=float) / n_grid
            node_face.append(face)
            node_weights.append(w)
        offset += len(comps)
    return SimplexGrid(
        model=model,
        resolution=n_grid,
        node_face=np.array(node_face, dtype=int),
        node_weights=np.array(node_weights),
        face_offsets=tuple(offsets),
        face_comps=tuple(face_comps),
    )


@dataclass(eq=False)
class ValueTable:
    """Nodal values on a SimplexGrid with piecewise-linear evaluation."""

    grid: SimplexGrid
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def interpolate_face(self, face: int, weights: np.ndarray) -> float:
        nodes, lams = self.grid.locate(face, weights)
        return float(self.values[nodes] @ lams)

    def interpolate(self, belief) -> float:
        face = self.grid.model.observation_index(belief.face)
        return self.interpolate_face(face, belief.weights)

    def with_values(self, values: np.ndarray, **meta) -> "ValueTable":
        md = dict(self.metadata)
        md.update(meta)
        return ValueTable(self.grid, np.asarray(values, dtype=float), md)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def constant_table(grid: SimplexGrid, value: float = 0.0) -> ValueTable:
    return ValueTable(grid, np.full(grid.n_nodes, float(value)), {})
