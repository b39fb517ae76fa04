"""File formats: trajectory JSON Lines and comment-headed CSV tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .engine import Action, EngineConfig, EngineState, Trajectory

TRAJECTORY_FIELDS = ("t", "action", "V", "T", "P", "dW", "dQ", "dQ_in", "cumW", "cumQin",
                     "eta", "W_budget", "Q_budget")
_FLOAT_FIELDS = ("V", "T", "P", "dW", "dQ", "dQ_in", "cumW", "cumQin", "eta", "W_budget", "Q_budget")


def format_float(x: Optional[float]) -> str:
    """17 significant digits, so parsing the text restores the exact double."""
    if x is None:
        return "null"
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    return format(x, ".17g")


def trajectory_rows(config: EngineConfig, trajectory: Trajectory) -> Iterable[dict]:
    for i, (_, action, out) in enumerate(trajectory.records):
        s = out.next
        yield {
            "t": s.t,
            "action": action.label,
            "V": s.V,
            "T": s.T,
            "P": config.pressure(s),
            "dW": out.dW,
            "dQ": out.dQ,
            "dQ_in": out.dQ_in,
            "cumW": trajectory.cumW[i],
            "cumQin": trajectory.cumQin[i],
            "eta": trajectory.eta_by_step[i],
            "W_budget": s.W_budget,
            "Q_budget": s.Q_budget,
        }


def _encode(row: dict) -> str:
    parts = []
    for key in TRAJECTORY_FIELDS:
        v = row[key]
        if key == "t":
            text = str(int(v))
        elif key == "action":
            text = json.dumps(v)
        else:
            text = format_float(v)
        parts.append(f"{json.dumps(key)}: {text}")
    return "{" + ", ".join(parts) + "}"


def export_trajectory(config: EngineConfig, trajectory: Trajectory, path: Union[str, Path]) -> None:
    """One JSON object per step; an empty trajectory gives an empty file."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for row in trajectory_rows(config, trajectory):
                fh.write(_encode(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trajectory {path}: {exc}") from exc


def load_trajectory(path: Union[str, Path]) -> list[dict]:
    """Parse a trajectory file back into step dicts with float fields as floats."""
    path = Path(path)
    rows = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read trajectory {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
        missing = set(TRAJECTORY_FIELDS) - set(row)
        if missing:
            raise ValueError(f"{path}:{n}: missing fields {sorted(missing)}")
        for key in _FLOAT_FIELDS:
            if row[key] is not None:
                row[key] = float(row[key])
        row["action"] = Action.parse(row["action"])
        rows.append(row)
    return rows


def rows_match_replay(config: EngineConfig, rows: Sequence[dict], trajectory: Trajectory) -> bool:
    """True when a loaded file agrees bit-for-bit with a replay of its actions."""
    fresh = list(trajectory_rows(config, trajectory))
    if len(fresh) != len(rows):
        return False
    for a, b in zip(rows, fresh):
        for key in TRAJECTORY_FIELDS:
            va, vb = a[key], b[key]
            if key == "action":
                vb = Action.parse(vb)
            if va != vb:
                return False
    return True


class CsvLog:
    """Append-only CSV with a ``# config_hash=... seed=...`` comment line before the header."""

    def __init__(self, path: Union[str, Path], columns: Sequence[str], config_hash: str, seed: int):
        self.path = Path(path)
        self.columns = list(columns)
        try:
            self._fh = open(self.path, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise OSError(f"cannot write {self.path}: {exc}") from exc
        self._fh.write(f"# config_hash={config_hash} seed={seed}\n")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)

    def write(self, row: dict) -> None:
        self._writer.writerow([_cell(row[c]) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def read_csv(path: Union[str, Path]) -> tuple[str, list[dict]]:
    """Return the comment line and the data rows (all values as strings)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    comment = lines[0] if lines and lines[0].startswith("#") else ""
    body = lines[1:] if comment else lines
    return comment, list(csv.DictReader(body))


def state_from_row(row: dict) -> EngineState:
    return EngineState(row["V"], row["T"], row["t"], row["W_budget"], row["Q_budget"])
