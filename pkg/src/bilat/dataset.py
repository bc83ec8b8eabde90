"""Paired master/slave training dataset: assembly and CSV persistence.

One CSV row per (trial, time, role); the sidecar ``*.stats.csv`` carries
per-channel normalization statistics. Floats are serialized with
round-trip precision so save/load is lossless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, SchemaError

CHANNELS = (
    "theta1",
    "theta2",
    "theta3",
    "dtheta1",
    "dtheta2",
    "dtheta3",
    "tau1",
    "tau2",
    "tau3",
)
DATASET_HEADER = ("trial", "height_mm", "t_ms", "role") + CHANNELS
STATS_HEADER = ("role", "channel", "mean", "std")
STD_FLOOR = 1e-6


@dataclass
class DatasetTrial:
    height_mm: float
    t_ms: np.ndarray
    S: np.ndarray
    M: np.ndarray


@dataclass
class Dataset:
    trials: list[DatasetTrial]
    s_mean: np.ndarray
    s_std: np.ndarray
    m_mean: np.ndarray
    m_std: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_rows(self) -> int:
        return sum(t.S.shape[0] for t in self.trials)

    def master_t0_mean(self) -> np.ndarray:
        """Mean initial master state across trials (virtual-master seed)."""
        return np.mean([t.M[0] for t in self.trials], axis=0)


def build_dataset(trials: list[DatasetTrial], heights_mm: list[float] | None = None) -> Dataset:
    """Compute per-channel statistics over all rows of all trials."""
    if not trials or any(t.S.shape[0] == 0 for t in trials):
        raise EmptyDataset("no trials or empty trial supplied")
    if heights_mm is not None:
        present = {round(t.height_mm, 6) for t in trials}
        missing = [h for h in heights_mm if round(h, 6) not in present]
        if missing:
            raise EmptyDataset(f"no trials for heights {missing}")
    s_all = np.vstack([t.S for t in trials])
    m_all = np.vstack([t.M for t in trials])
    return Dataset(
        trials=list(trials),
        s_mean=s_all.mean(axis=0),
        s_std=np.maximum(s_all.std(axis=0), STD_FLOOR),
        m_mean=m_all.mean(axis=0),
        m_std=np.maximum(m_all.std(axis=0), STD_FLOOR),
    )


def _meta_line(meta: dict) -> str:
    return "# " + json.dumps(meta, sort_keys=True)


def _parse_meta(line: str) -> dict:
    try:
        return json.loads(line.lstrip("#").strip())
    except json.JSONDecodeError:
        return {}


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if dataset.meta:
            fh.write(_meta_line(dataset.meta) + "\n")
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for trial_idx, trial in enumerate(dataset.trials):
            for i in range(trial.S.shape[0]):
                base = [trial_idx, repr(float(trial.height_mm)), repr(float(trial.t_ms[i]))]
                w.writerow(base + ["master"] + [repr(float(v)) for v in trial.M[i]])
                w.writerow(base + ["slave"] + [repr(float(v)) for v in trial.S[i]])
    stats = stats_path(path)
    with open(stats, "w", newline="") as fh:
        if dataset.meta:
            fh.write(_meta_line(dataset.meta) + "\n")
        w = csv.writer(fh)
        w.writerow(STATS_HEADER)
        for role, mean, std in (("master", dataset.m_mean, dataset.m_std), ("slave", dataset.s_mean, dataset.s_std)):
            for c, channel in enumerate(CHANNELS):
                w.writerow([role, channel, repr(float(mean[c])), repr(float(std[c]))])


def stats_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".stats.csv") if path.suffix != ".csv" else path.with_name(
        path.stem + ".stats.csv"
    )


def _read_rows(path: Path, expected_header: tuple[str, ...]) -> tuple[dict, list[list[str]]]:
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    meta: dict = {}
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            meta = _parse_meta(first)
            header_line = fh.readline()
        else:
            header_line = first
        header = tuple(next(csv.reader([header_line])))
        if header != expected_header:
            missing = [c for c in expected_header if c not in header]
            extra = [c for c in header if c not in expected_header]
            raise SchemaError(f"{path}: bad header; missing columns {missing}, unexpected columns {extra}")
        rows = []
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise SchemaError(f"{path}: row {lineno} has {len(row)} fields, expected {len(expected_header)}")
            rows.append(row)
    return meta, rows


def load_dataset(path: str | Path) -> Dataset:
    """Strict-schema load; statistics come from the sidecar, not recomputed."""
    path = Path(path)
    meta, rows = _read_rows(path, DATASET_HEADER)
    by_trial: dict[int, dict] = {}
    for row in rows:
        trial = int(row[0])
        entry = by_trial.setdefault(trial, {"height_mm": float(row[1]), "t_ms": [], "master": [], "slave": []})
        role = row[3]
        if role not in ("master", "slave"):
            raise SchemaError(f"{path}: unknown role {role!r}")
        vec = [float(v) for v in row[4:]]
        if role == "master":
            entry["t_ms"].append(float(row[2]))
            entry["master"].append(vec)
        else:
            entry["slave"].append(vec)
    trials = []
    for trial in sorted(by_trial):
        e = by_trial[trial]
        if len(e["master"]) != len(e["slave"]):
            raise SchemaError(f"{path}: trial {trial} has unpaired master/slave rows")
        trials.append(
            DatasetTrial(
                height_mm=e["height_mm"],
                t_ms=np.asarray(e["t_ms"]),
                S=np.asarray(e["slave"]),
                M=np.asarray(e["master"]),
            )
        )
    if not trials:
        raise EmptyDataset(f"{path}: no data rows")

    _, srows = _read_rows(stats_path(path), STATS_HEADER)
    means = {"master": np.zeros(9), "slave": np.zeros(9)}
    stds = {"master": np.zeros(9), "slave": np.zeros(9)}
    seen = set()
    for row in srows:
        role, channel = row[0], row[1]
        if role not in means or channel not in CHANNELS:
            raise SchemaError(f"stats: unknown role/channel {role}/{channel}")
        c = CHANNELS.index(channel)
        means[role][c] = float(row[2])
        stds[role][c] = float(row[3])
        seen.add((role, channel))
    if len(seen) != 18:
        raise SchemaError("stats: missing role/channel entries")
    return Dataset(
        trials=trials,
        s_mean=means["slave"],
        s_std=stds["slave"],
        m_mean=means["master"],
        m_std=stds["master"],
        meta=meta,
    )
