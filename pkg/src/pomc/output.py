"""File emitters shared by the CLI and the experiment scripts.

Every emitted file carries a header block echoing the run's config hash, so
reruns with identical (config, seed) are byte-identical and mismatched
artifacts are detectable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .controls import FeedbackPolicy
from .filter import FilterTrajectory
from .grid import ValueTable
from .model import ModelSpec
from .simulate import ChainTrajectory, PdpTrajectory


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _csv_header(chash: str, extra: dict | None = None) -> str:
    lines = [f"# config_hash={chash}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    return "\n".join(lines) + "\n"


def write_json(path: Path, payload: dict, chash: str) -> None:
    doc = {"config_hash": chash}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_value_table_csv(path: Path, model: ModelSpec, table: ValueTable, chash: str) -> None:
    cols = ["face"] + [f"w_{s}" for s in model.states] + ["value"]
    rows = [_csv_header(chash), ",".join(cols) + "\n"]
    for m in range(table.grid.n_nodes):
        face = model.observations[int(table.grid.node_face[m])]
        w = table.grid.node_weights[m]
        rows.append(",".join([face] + [f"{x:.17g}" for x in w] + [f"{table.values[m]:.17g}"]) + "\n")
    path.write_text("".join(rows))


def write_policy_csv(path: Path, model: ModelSpec, policy: FeedbackPolicy, chash: str) -> None:
    cols = ["face"] + [f"w_{s}" for s in model.states] + ["action"]
    rows = [_csv_header(chash), ",".join(cols) + "\n"]
    grid = policy.grid
    for m in range(grid.n_nodes):
        face = model.observations[int(grid.node_face[m])]
        w = grid.node_weights[m]
        act = model.actions[int(policy.node_actions[m])].id
        rows.append(",".join([face] + [f"{x:.17g}" for x in w] + [act]) + "\n")
    path.write_text("".join(rows))


def read_value_table_csv(path: Path, model: ModelSpec, grid) -> ValueTable:
    """Rebuild a table from its CSV export (values matched by node order)."""

    values = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or line.startswith("face,") or not line.strip():
            continue
        values.append(float(line.split(",")[-1]))
    arr = np.array(values)
    if len(arr) != grid.n_nodes:
        raise ValueError(f"value table has {len(arr)} rows, grid has {grid.n_nodes} nodes")
    return ValueTable(grid, arr, {})


def read_policy_csv(path: Path, model: ModelSpec, grid) -> FeedbackPolicy:
    actions = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or line.startswith("face,") or not line.strip():
            continue
        actions.append(model.action_index(line.split(",")[-1]))
    return FeedbackPolicy(grid, np.array(actions, dtype=int))


def write_belief_trajectory_csv(path: Path, model: ModelSpec,
                                traj: FilterTrajectory, chash: str) -> None:
    cols = ["t", "face"] + [f"w_{s}" for s in model.states] + ["chi"]
    rows = [_csv_header(chash), ",".join(cols) + "\n"]
    for k in range(len(traj.times)):
        rows.append(",".join(
            [f"{traj.times[k]:.17g}", traj.faces[k]]
            + [f"{x:.17g}" for x in traj.weights[k]]
            + [f"{traj.survival[k]:.17g}"]) + "\n")
    path.write_text("".join(rows))


def write_chain_trajectory_csv(path: Path, traj: ChainTrajectory, chash: str) -> None:
    rows = [_csv_header(chash), "t,event,state_or_face,detail\n"]
    rows.append(f"0,init,{traj.x_jumps[0][1]},\n")
    for t, s in traj.x_jumps[1:]:
        rows.append(f"{t:.17g},x_jump,{s},\n")
    for t, o in traj.y_jumps[1:]:
        rows.append(f"{t:.17g},y_jump,{o},\n")
    rows.append(f",end,,discounted_cost={traj.discounted_cost:.17g}\n")
    path.write_text("".join(rows))


def write_pdp_trajectory_csv(path: Path, traj: PdpTrajectory, chash: str) -> None:
    rows = [_csv_header(chash), "t,event,state_or_face,detail\n"]
    for k, (t, belief) in enumerate(traj.jump_chain):
        kind = "init" if k == 0 else "jump"
        g = traj.stage_costs[k] if k < len(traj.stage_costs) else ""
        detail = f"stage_cost={g:.17g}" if g != "" else ""
        rows.append(f"{t:.17g},{kind},{belief.face},{detail}\n")
    rows.append(f",end,,discounted_sum={traj.discounted_sum:.17g}\n")
    path.write_text("".join(rows))
