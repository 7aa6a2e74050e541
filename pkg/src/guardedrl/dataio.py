"""Trajectory CSV and metadata JSON serialization.

Schema
------
One row per step, columns::

    traj_id, step, s_0..s_{n-1}, a_0..a_{m-1}, reward, c_0..c_{l-1}, terminal, dead [, split]

A trajectory with T transitions occupies T+1 rows: rows 0..T-1 hold the acting
steps, row T holds the arrival state with zero-padded action/reward/cost
columns, and the 0/1 terminal/dead flags describe the state on their own row
(so death lands on the final arrival row).  Floats are written with ``repr``
so a load/save round trip is byte-identical.

The companion metadata JSON records dimensions, signal bounds, split counts
and the train-split standardization.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .core import (
    DataError,
    OfflineDataset,
    Standardization,
    Trajectory,
    TransitionSample,
)

__all__ = [
    "dataset_columns",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_dataset_metadata",
    "dataset_to_csv_text",
    "file_sha256",
    "canonical_json",
]


def canonical_json(obj) -> str:
    """Deterministic JSON text (sorted keys, tight separators, repr floats)."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def _plain(obj):
    if isinstance(obj, (bool, np.bool_)):   # before int: bool subclasses int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    return obj


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_columns(n: int, m: int, n_costs: int, with_split: bool = True) -> list[str]:
    cols = ["traj_id", "step"]
    cols += [f"s_{i}" for i in range(n)]
    cols += [f"a_{j}" for j in range(m)]
    cols += ["reward"]
    cols += [f"c_{k}" for k in range(n_costs)]
    cols += ["terminal", "dead"]
    if with_split:
        cols.append("split")
    return cols


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_to_csv_text(dataset: OfflineDataset) -> str:
    """Render a dataset to CSV text (deterministic)."""
    with_split = any(t.split is not None for t in dataset.trajectories)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(dataset_columns(dataset.n, dataset.m, dataset.n_costs, with_split))
    zero_a = ["0.0"] * dataset.m
    zero_c = ["0.0"] * dataset.n_costs
    for traj in dataset.trajectories:
        split = traj.split if traj.split is not None else ""
        for t, smp in enumerate(traj.samples):
            row = [traj.traj_id, str(t)]
            row += [_fmt(x) for x in smp.state]
            row += [_fmt(x) for x in smp.action]
            row += [_fmt(smp.reward)]
            row += [_fmt(x) for x in smp.costs]
            row += ["0", "0"]
            if with_split:
                row.append(split)
            writer.writerow(row)
        last = traj.samples[-1]
        row = [traj.traj_id, str(len(traj.samples))]
        row += [_fmt(x) for x in last.next_state]
        row += zero_a + ["0.0"] + zero_c
        row += ["1" if last.terminal else "0", "1" if last.dead else "0"]
        if with_split:
            row.append(split)
        writer.writerow(row)
    return buf.getvalue()


def write_dataset_csv(dataset: OfflineDataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv_text(dataset))


def write_dataset_metadata(dataset: OfflineDataset, path: str | Path, extra: dict | None = None) -> None:
    meta = {
        "n": dataset.n,
        "m": dataset.m,
        "n_costs": dataset.n_costs,
        "r_max": dataset.r_max,
        "c_max": dataset.c_max,
        "n_trajectories": len(dataset.trajectories),
        "n_transitions": dataset.n_samples(),
        "split_counts": {s: len(dataset.select(s)) for s in ("train", "val", "test")},
        "standardization": dataset.standardization.to_dict(),
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(canonical_json(meta) + "\n")


def read_dataset_csv(path: str | Path, r_max: float | None = None,
                     c_max=None) -> OfflineDataset:
    """Load a trajectory CSV written by :func:`write_dataset_csv`.

    When ``r_max``/``c_max`` are omitted they are inferred as the observed
    maxima (so integrity checks still run).  Raises :class:`DataError` on any
    structural problem.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except (OSError, csv.Error, StopIteration) as exc:
        raise DataError(f"cannot read dataset CSV {path}: {exc}") from None

    try:
        n = sum(1 for c in header if c.startswith("s_"))
        m = sum(1 for c in header if c.startswith("a_"))
        n_costs = sum(1 for c in header if c.startswith("c_"))
        expected = dataset_columns(n, m, n_costs, with_split="split" in header)
        if header != expected or n == 0 or m == 0:
            raise DataError(f"unexpected CSV header in {path}: {header}")
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"malformed CSV header in {path}: {exc}") from None

    has_split = "split" in header
    col = {name: i for i, name in enumerate(header)}

    # Group rows by traj_id preserving file order.
    groups: dict[str, list[list[str]]] = {}
    order: list[str] = []
    for row in rows:
        if len(row) != len(header):
            raise DataError(f"row width mismatch in {path}")
        tid = row[col["traj_id"]]
        if tid not in groups:
            groups[tid] = []
            order.append(tid)
        groups[tid].append(row)

    def _floats(row, names):
        return np.array([float(row[col[c]]) for c in names])

    s_cols = [f"s_{i}" for i in range(n)]
    a_cols = [f"a_{j}" for j in range(m)]
    c_cols = [f"c_{k}" for k in range(n_costs)]

    trajectories = []
    for tid in order:
        block = groups[tid]
        try:
            steps = [int(r[col["step"]]) for r in block]
        except ValueError as exc:
            raise DataError(f"non-integer step index in trajectory {tid!r}: {exc}") from None
        if steps != list(range(len(block))):
            raise DataError(f"trajectory {tid!r}: step indices not contiguous from 0")
        if len(block) < 2:
            raise DataError(f"trajectory {tid!r}: needs at least one transition (2 rows)")
        try:
            samples = []
            for t in range(len(block) - 1):
                row, nxt = block[t], block[t + 1]
                if row[col["terminal"]] != "0" or row[col["dead"]] != "0":
                    raise DataError(f"trajectory {tid!r}: interior row {t} flagged terminal/dead")
                samples.append(TransitionSample(
                    state=_floats(row, s_cols),
                    action=_floats(row, a_cols),
                    next_state=_floats(nxt, s_cols),
                    reward=float(row[col["reward"]]),
                    costs=_floats(row, c_cols),
                    terminal=nxt[col["terminal"]] == "1",
                    dead=nxt[col["dead"]] == "1",
                ))
            split = block[0][col["split"]] if has_split else ""
            trajectories.append(Trajectory(tid, samples, split=split or None))
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"malformed trajectory {tid!r} in {path}: {exc}") from None

    if r_max is None:
        r_max = max(abs(s.reward) for t in trajectories for s in t.samples)
    if c_max is None:
        all_costs = np.stack([s.costs for t in trajectories for s in t.samples])
        c_max = all_costs.max(axis=0)
    try:
        return OfflineDataset(trajectories, r_max=r_max, c_max=c_max)
    except Exception as exc:
        raise DataError(f"dataset integrity check failed for {path}: {exc}") from None
