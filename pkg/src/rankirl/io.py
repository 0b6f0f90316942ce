"""File codecs: MDPs, trajectories, feature maps, ranked mus, solutions, traces and reports.

Everything is JSON or CSV. Floats are written with ``repr`` so a file read
back gives the identical value. In mu files rank label 1 is the best
demonstrator; internally the best rank has the highest index, and the
conversion happens only here.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .apprenticeship import AlIteration, AlTrace
from .features import FeatureMap, Mu, Trajectory
from .mdp import Mdp
from .ordinal import RankedDataset, RankSolution
from .roadnet import DriverLog, RoadNetwork


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:" if path is not None else ""
        where += f"{line}: " if line is not None else (" " if where else "")
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


# --- generic helpers ----------------------------------------------------------

def jsonable(obj):
    """Convert numpy containers and scalars into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isnan(value) or math.isinf(value):
            return repr(value)  # JSON has no literal for these
        return value
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def _float(text: str, path, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"not a number: {text!r}", path, line) from None


def _int(text: str, path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise FormatError(f"not an integer: {text!r}", path, line) from None


def _csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


# --- MDP ----------------------------------------------------------------------

def mdp_to_dict(mdp: Mdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "transition": mdp.transition,
        "reward": None if mdp.reward is None else mdp.reward,
    }


def mdp_from_dict(data: dict, path=None) -> Mdp:
    try:
        P = np.asarray(data["transition"], dtype=float)
        mdp = Mdp(P, float(data["gamma"]), None if data.get("reward") is None else data["reward"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad MDP description: {exc}", path) from exc
    for key, value in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
        if key in data and int(data[key]) != value:
            raise FormatError(f"{key}={data[key]} does not match the transition table", path)
    return mdp


def write_mdp(path, mdp: Mdp) -> None:
    write_json(path, mdp_to_dict(mdp))


def read_mdp(path) -> Mdp:
    return mdp_from_dict(read_json(path), path)


# --- trajectories -------------------------------------------------------------

def read_trajectories(path) -> list[Trajectory]:
    """One trajectory per non-blank line of whitespace-separated state ids."""
    trajs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        states = [_int(f, path, lineno) for f in fields]
        if min(states) < 0:
            raise FormatError("negative state id", path, lineno)
        trajs.append(Trajectory(np.array(states)))
    if not trajs:
        raise FormatError("no trajectories", path)
    return trajs


def write_trajectories(path, trajs) -> None:
    lines = [" ".join(str(int(s)) for s in getattr(t, "states", t)) for t in trajs]
    Path(path).write_text("\n".join(lines) + "\n")


DRIVER_HEADER = ["driver_id", "t", "state_id", "occupied"]


def driver_csv_text(logs) -> str:
    """Extended trajectory CSV; a trajectory restarts whenever ``t`` does not increase."""
    rows = []
    for lg in logs:
        for traj in lg.trajectories:
            times = traj.times if traj.times is not None else np.arange(len(traj))
            occ = traj.occupied if traj.occupied is not None else np.zeros(len(traj), dtype=bool)
            rows.extend((lg.driver_id, int(t), int(s), int(bool(o))) for t, s, o in zip(times, traj.states, occ))
    return csv_text(DRIVER_HEADER, rows)


def write_driver_csv(path, logs) -> None:
    Path(path).write_text(driver_csv_text(logs))


def read_driver_csv(path) -> list[DriverLog]:
    rows = _csv_rows(path)
    if not rows or [h.strip() for h in rows[0]] != DRIVER_HEADER:
        raise FormatError(f"header must be {','.join(DRIVER_HEADER)}", path, 1)
    per_driver: dict[int, list] = {}
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"expected 4 fields, got {len(row)}", path, lineno)
        driver, t, state, occ = (_int(x, path, lineno) for x in row)
        if occ not in (0, 1):
            raise FormatError("occupied must be 0 or 1", path, lineno)
        per_driver.setdefault(driver, []).append((t, state, occ))
    logs = []
    for driver, entries in per_driver.items():
        trajs, current = [], []
        for t, state, occ in entries:
            if current and t <= current[-1][0]:
                trajs.append(current)
                current = []
            current.append((t, state, occ))
        trajs.append(current)
        logs.append(DriverLog(driver, tuple(
            Trajectory(np.array([e[1] for e in tr]), np.array([bool(e[2]) for e in tr]), np.array([e[0] for e in tr]))
            for tr in trajs
        )))
    return logs


# --- feature maps and mus -----------------------------------------------------

def read_features(path) -> FeatureMap:
    """CSV with header ``state,phi_0,...`` and one row per state in order; raw values are normalized."""
    rows = _csv_rows(path)
    if not rows or not rows[0] or rows[0][0].strip() != "state":
        raise FormatError("header must start with 'state'", path, 1)
    d = len(rows[0]) - 1
    table = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != d + 1:
            raise FormatError(f"expected {d + 1} fields, got {len(row)}", path, lineno)
        if _int(row[0], path, lineno) != len(table):
            raise FormatError("states must be listed in order from 0", path, lineno)
        table.append([_float(x, path, lineno) for x in row[1:]])
    raw = np.array(table, dtype=float).reshape(len(table), d)
    if raw.size and (raw.min() < 0 or raw.max() > 1):
        return FeatureMap.normalized(raw)
    return FeatureMap(raw)


def write_features(path, fmap: FeatureMap) -> None:
    header = ["state"] + [f"phi_{j}" for j in range(fmap.d)]
    Path(path).write_text(csv_text(header, ([s, *map(float, row)] for s, row in enumerate(fmap.phi))))


def mu_header(d: int) -> list[str]:
    return ["source_id", "rank"] + [f"mu_{j}" for j in range(d)]


def mu_rows_text(rows) -> str:
    """Mu CSV from ``(source_id, label, vector)`` rows, labels as given."""
    rows = list(rows)
    d = np.asarray(rows[0][2]).size
    return csv_text(mu_header(d), ([sid, int(label), *map(float, v)] for sid, label, v in rows))


def mu_csv_text(mus, k: int | None = None) -> str:
    """Mus with internal ranks written as user labels ``k + 1 - rank`` (label 1 = best)."""
    mus = list(mus)
    k = max(m.rank for m in mus) if k is None else k
    return mu_rows_text((m.source_id, k + 1 - m.rank, m.vector) for m in mus)


def write_mu_csv(path, mus, k: int | None = None) -> None:
    Path(path).write_text(mu_csv_text(mus, k))


def read_mu_csv(path) -> tuple[list[Mu], dict]:
    """Read a mu file; returns the mus (internal ranks) and the label -> rank mapping.

    Rank labels must run contiguously from 1 (best); a missing label is
    reported as ``rank r empty``.
    """
    rows = _csv_rows(path)
    if not rows:
        raise FormatError("empty file", path)
    header = [h.strip() for h in rows[0]]
    d = len(header) - 2
    if d < 1 or header != mu_header(d):
        raise FormatError("header must be source_id,rank,mu_0,...,mu_{d-1}", path, 1)
    entries = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != d + 2:
            raise FormatError(f"expected {d + 2} fields, got {len(row)}", path, lineno)
        label = _int(row[1], path, lineno)
        if label < 1:
            raise FormatError("rank labels start at 1", path, lineno)
        entries.append((row[0], label, [_float(x, path, lineno) for x in row[2:]]))
    if not entries:
        raise FormatError("no mu rows", path)
    k = max(e[1] for e in entries)
    present = {e[1] for e in entries}
    for label in range(1, k + 1):
        if label not in present:
            raise FormatError(f"rank {label} empty", path)
    mapping = {label: k + 1 - label for label in range(1, k + 1)}
    return [Mu(np.array(v), mapping[label], sid) for sid, label, v in entries], mapping


def read_ranked_dataset(path, C: float = 1.0) -> tuple[RankedDataset, dict]:
    mus, mapping = read_mu_csv(path)
    try:
        return RankedDataset(tuple(mus), C), mapping
    except ValueError as exc:
        raise FormatError(str(exc), path) from exc


# --- solutions, traces, reports -----------------------------------------------

def solution_to_dict(sol: RankSolution, label_map: dict | None = None) -> dict:
    out = {
        "w": sol.w,
        "a": sol.a,
        "b": sol.b,
        "eps": {str(s): v for s, v in sol.eps.items()},
        "sig": {str(s): v for s, v in sol.sig.items()},
        "objective": sol.objective,
        "margins": sol.margins,
        "feasibility_residual": sol.feasibility_residual,
        "degenerate": sol.degenerate,
        "duality_gap": sol.duality_gap,
        "C": sol.C,
        "n_iter": sol.n_iter,
        "source_ids": list(sol.source_ids),
    }
    if label_map is not None:
        out["rank_labels"] = {
            "convention": "file label 1 = best; internal rank = k + 1 - label",
            "label_to_internal": {str(k): v for k, v in sorted(label_map.items())},
        }
    return out


def solution_from_dict(data: dict) -> RankSolution:
    ids = data["source_ids"]
    by_text = {str(s): s for s in ids}
    return RankSolution(
        w=np.asarray(data["w"], dtype=float),
        a=np.asarray(data["a"], dtype=float),
        b=np.asarray(data["b"], dtype=float),
        eps={by_text[k]: float(v) for k, v in data["eps"].items()},
        sig={by_text[k]: float(v) for k, v in data["sig"].items()},
        objective=float(data["objective"]),
        margins=np.asarray(data["margins"], dtype=float),
        feasibility_residual=float(data["feasibility_residual"]),
        degenerate=bool(data["degenerate"]),
        duality_gap=float(data["duality_gap"]),
        C=float(data["C"]),
        n_iter=int(data["n_iter"]),
        source_ids=list(ids),
    )


def write_solution(path, sol: RankSolution, label_map: dict | None = None) -> None:
    write_json(path, solution_to_dict(sol, label_map))


def read_solution(path) -> RankSolution:
    return solution_from_dict(read_json(path))


def trace_to_dict(trace: AlTrace) -> dict:
    return {
        "seed": trace.seed,
        "iterations": [{"t": it.t, "w": it.w} for it in trace.iterations],
        "final_w": trace.final_w,
        "converged": trace.converged,
    }


def trace_from_dict(data: dict) -> AlTrace:
    """Rebuild a trace; policies and mus are not stored and come back as ``None``."""
    return AlTrace(
        seed=int(data["seed"]),
        iterations=[AlIteration(np.asarray(it["w"], dtype=float), float(it["t"]), None, None)
                    for it in data["iterations"]],
        final_w=None if data["final_w"] is None else np.asarray(data["final_w"], dtype=float),
        converged=bool(data["converged"]),
    )


def network_to_dict(net: RoadNetwork) -> dict:
    return {
        "nodes": net.positions,
        "segments": [{"id": i, "a": int(a), "b": int(b), "length": float(l)}
                     for i, ((a, b), l) in enumerate(zip(net.segments, net.lengths))],
    }


def network_from_dict(data: dict, path=None) -> RoadNetwork:
    try:
        segs = sorted(data["segments"], key=lambda s: s["id"])
        if [s["id"] for s in segs] != list(range(len(segs))):
            raise ValueError("segment ids must be 0..n-1")
        return RoadNetwork(
            np.asarray(data["nodes"], dtype=float).reshape(-1, 2),
            np.array([[s["a"], s["b"]] for s in segs], dtype=np.int64).reshape(-1, 2),
            np.array([s["length"] for s in segs], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad network description: {exc}", path) from exc


def write_network(path, net: RoadNetwork) -> None:
    write_json(path, network_to_dict(net))


def read_network(path) -> RoadNetwork:
    return network_from_dict(read_json(path), path)


VALUE_HEADER = ["segment_id", "orientation", "value", "flagged"]


def value_csv_text(values, flagged) -> str:
    """Per oriented segment: orientation 0 is a -> b, 1 is b -> a."""
    values = np.asarray(values, dtype=float)
    rows = ((s // 2, s % 2, float(values[s]), int(bool(flagged[s]))) for s in range(values.size))
    return csv_text(VALUE_HEADER, rows)


def write_value_csv(path, values, flagged) -> None:
    Path(path).write_text(value_csv_text(values, flagged))


def read_value_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _csv_rows(path)
    if not rows or rows[0] != VALUE_HEADER:
        raise FormatError(f"header must be {','.join(VALUE_HEADER)}", path, 1)
    values, flagged = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != 4:
            raise FormatError("expected 4 fields", path, lineno)
        if 2 * _int(row[0], path, lineno) + _int(row[1], path, lineno) != len(values):
            raise FormatError("rows must be in state order", path, lineno)
        values.append(_float(row[2], path, lineno))
        flagged.append(bool(_int(row[3], path, lineno)))
    return np.array(values), np.array(flagged)


def heatmap_csv_text(grid_values) -> str:
    """A 2-d table of floats, no header."""
    return csv_text(None, ([float(x) for x in row] for row in np.atleast_2d(grid_values)))


def write_heatmap_csv(path, grid_values) -> None:
    Path(path).write_text(heatmap_csv_text(grid_values))


def read_heatmap_csv(path) -> np.ndarray:
    rows = [r for r in _csv_rows(path) if r]
    return np.array([[_float(x, path, i) for x in r] for i, r in enumerate(rows, 1)])
