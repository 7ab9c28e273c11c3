"""Piecewise-linear stochastic hybrid systems with binary reset maps.

The discrete state is a finite CTMC on ``0 .. num_states-1``; the continuous
state is a row vector of ``age_dim`` ages that grow at unit rate and are
mapped to ``x' = x @ A_l`` when transition ``l`` fires.

Model files are JSON documents::

    {
      "num_states": 3,
      "age_dim": 3,
      "transitions": [
        {"id": 1, "source": 0, "target": 1, "rate": 0.5, "reset": [null, 1, 2]},
        ...
      ]
    }

``reset[j]`` is the row index carrying the single 1 of column ``j`` (so
``x'_j = x_{reset[j]}``) or ``null`` for a zero column (``x'_j = 0``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .errors import ModelError


@dataclass(frozen=True, eq=False)
class ResetMap:
    """Binary ``n x n`` reset matrix ``A``; ``x' = x @ A``."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.int64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelError(f"reset matrix must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_columns(cls, columns: Sequence[Optional[int]]) -> "ResetMap":
        n = len(columns)
        m = np.zeros((n, n), dtype=np.int64)
        for j, src in enumerate(columns):
            if src is not None:
                if not 0 <= int(src) < n:
                    raise ModelError(f"reset column {j} points at row {src}, outside 0..{n - 1}")
                m[int(src), j] = 1
        return cls(m)

    @classmethod
    def identity(cls, n: int) -> "ResetMap":
        return cls(np.eye(n, dtype=np.int64))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def problems(self) -> list[str]:
        out = []
        if not np.isin(self.matrix, (0, 1)).all():
            out.append("reset matrix has entries other than 0 and 1")
        for j in np.flatnonzero(self.matrix.sum(axis=0) > 1):
            out.append(f"column {j} of the reset matrix has more than one 1")
        return out

    def columns(self) -> tuple[Optional[int], ...]:
        """Source row per column (``None`` for a zero column)."""
        bad = self.problems()
        if bad:
            raise ModelError("; ".join(bad))
        cols = []
        for j in range(self.dim):
            rows = np.flatnonzero(self.matrix[:, j])
            cols.append(int(rows[0]) if rows.size else None)
        return tuple(cols)

    def source_index(self) -> np.ndarray:
        """Integer array of column sources with ``-1`` marking zero columns."""
        return np.array([-1 if c is None else c for c in self.columns()], dtype=np.int64)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.matrix

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ResetMap) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self) -> int:
        return hash(self.matrix.tobytes())

    def __repr__(self) -> str:
        try:
            return f"ResetMap(columns={list(self.columns())})"
        except ModelError:
            return f"ResetMap(matrix={self.matrix.tolist()})"


@dataclass(frozen=True)
class Transition:
    id: int
    source: int
    target: int
    rate: float
    reset: ResetMap


@dataclass(frozen=True)
class Violation:
    transition_id: Optional[int]
    reason: str

    def __str__(self) -> str:
        where = "model" if self.transition_id is None else f"transition {self.transition_id}"
        return f"{where}: {self.reason}"


@dataclass(frozen=True)
class ShsModel:
    num_states: int
    age_dim: int
    transitions: tuple[Transition, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", tuple(self.transitions))

    def validate(self) -> list[Violation]:
        """Every structural violation; an empty list means the model is valid."""
        out: list[Violation] = []
        if self.num_states < 1:
            out.append(Violation(None, f"num_states must be >= 1, got {self.num_states}"))
        if self.age_dim < 1:
            out.append(Violation(None, f"age_dim must be >= 1, got {self.age_dim}"))
        seen: set[int] = set()
        for t in self.transitions:
            if t.id in seen:
                out.append(Violation(t.id, "duplicate transition id"))
            seen.add(t.id)
            if not (isinstance(t.rate, (int, float)) and math.isfinite(t.rate) and t.rate > 0):
                out.append(Violation(t.id, f"non-positive rate {t.rate!r}"))
            for name, q in (("source", t.source), ("target", t.target)):
                if not 0 <= q < self.num_states:
                    out.append(Violation(t.id, f"{name} state {q} outside 0..{self.num_states - 1}"))
            if t.reset.dim != self.age_dim:
                out.append(
                    Violation(t.id, f"reset matrix is {t.reset.dim}x{t.reset.dim}, age_dim is {self.age_dim}")
                )
            out.extend(Violation(t.id, p) for p in t.reset.problems())
        return out

    def require_valid(self) -> "ShsModel":
        problems = self.validate()
        if problems:
            raise ModelError("invalid model: " + "; ".join(str(p) for p in problems))
        return self

    def _check_state(self, q: int) -> None:
        if not 0 <= q < self.num_states:
            raise ModelError(f"state {q} outside 0..{self.num_states - 1}")

    def outgoing(self, q: int) -> list[Transition]:
        self._check_state(q)
        return [t for t in self.transitions if t.source == q]

    def incoming(self, q: int) -> list[Transition]:
        self._check_state(q)
        return [t for t in self.transitions if t.target == q]

    def exit_rates(self) -> np.ndarray:
        """Total outgoing rate per state, self-transitions included."""
        d = np.zeros(self.num_states)
        for t in self.transitions:
            d[t.source] += t.rate
        return d

    def generator(self) -> np.ndarray:
        """CTMC generator matrix; self-transitions cancel out."""
        g = np.zeros((self.num_states, self.num_states))
        for t in self.transitions:
            g[t.source, t.target] += t.rate
            g[t.source, t.source] -= t.rate
        return g

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_states": self.num_states,
            "age_dim": self.age_dim,
            "transitions": [
                {
                    "id": t.id,
                    "source": t.source,
                    "target": t.target,
                    "rate": t.rate,
                    "reset": list(t.reset.columns()),
                }
                for t in self.transitions
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ShsModel":
        try:
            num_states = _as_int(doc["num_states"], "num_states")
            age_dim = _as_int(doc["age_dim"], "age_dim")
            raw = doc["transitions"]
        except KeyError as exc:
            raise ModelError(f"model file is missing field {exc.args[0]!r}") from None
        if not isinstance(raw, list):
            raise ModelError("'transitions' must be an array")
        transitions = []
        for i, rec in enumerate(raw):
            try:
                reset = rec["reset"]
                if not isinstance(reset, list) or len(reset) != age_dim:
                    raise ModelError(f"transitions[{i}].reset must list {age_dim} columns")
                cols = [None if c is None else _as_int(c, f"transitions[{i}].reset") for c in reset]
                transitions.append(
                    Transition(
                        id=_as_int(rec["id"], f"transitions[{i}].id"),
                        source=_as_int(rec["source"], f"transitions[{i}].source"),
                        target=_as_int(rec["target"], f"transitions[{i}].target"),
                        rate=float(rec["rate"]),
                        reset=ResetMap.from_columns(cols),
                    )
                )
            except KeyError as exc:
                raise ModelError(f"transitions[{i}] is missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise ModelError(f"transitions[{i}]: {exc}") from None
        return cls(num_states, age_dim, tuple(transitions))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ShsModel):
            return NotImplemented
        return (
            self.num_states == other.num_states
            and self.age_dim == other.age_dim
            and self.transitions == other.transitions
        )

    __hash__ = None  # type: ignore[assignment]


def _as_int(value: Any, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ModelError(f"{field} must be an integer, got {value!r}")
    return value


def outgoing(model: ShsModel, q: int) -> list[Transition]:
    return model.outgoing(q)


def incoming(model: ShsModel, q: int) -> list[Transition]:
    return model.incoming(q)


def validate(model: ShsModel) -> list[Violation]:
    return model.validate()


def dumps_model(model: ShsModel) -> str:
    return json.dumps(model.to_dict(), indent=2)


def loads_model(text: str) -> ShsModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelError("model file must contain a JSON object")
    return ShsModel.from_dict(doc)


def save_model(model: ShsModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ShsModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from None
    return loads_model(text)


def build(num_states: int, age_dim: int, rows: Iterable[tuple]) -> ShsModel:
    """Convenience constructor from ``(id, source, target, rate, columns)`` rows."""
    return ShsModel(
        num_states,
        age_dim,
        tuple(Transition(i, s, t, float(r), ResetMap.from_columns(c)) for i, s, t, r, c in rows),
    )
