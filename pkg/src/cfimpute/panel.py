"""Longitudinal panel data: storage, CSV round-trip and validation.

Data are held as dense ``(n, T)`` arrays, one per role, with ``NaN`` marking a
missing cell. Time indices are 1-based in files and reports and 0-based in the
arrays. Within each time step variables are ordered
``A(t), C1(t), C2(t), M(t), Y(t)``; ``C1``/``C2`` may be absent from a panel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import PanelError

ROLES = ("c1", "c2", "mediator", "outcome")
ORDER = ("exposure",) + ROLES
SHORT = {"exposure": "A", "c1": "C1", "c2": "C2", "mediator": "M", "outcome": "Y"}


@dataclass(frozen=True)
class Schema:
    """Column mapping from role to CSV header. ``None`` marks an absent role."""

    baseline: tuple[str, ...]
    exposure: str = "A"
    c1: str | None = "C1"
    c2: str | None = "C2"
    mediator: str = "M"
    outcome: str = "Y"
    subject_id: str = "subject_id"
    time: str = "time"
    n_times: int | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "Schema":
        m = dict(mapping)
        base = m.pop("baseline", ())
        if isinstance(base, str):
            base = (base,)
        unknown = set(m) - {"exposure", "c1", "c2", "mediator", "outcome", "subject_id", "time", "n_times"}
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        return cls(baseline=tuple(base), **m)

    def to_dict(self):
        return {
            "baseline": list(self.baseline), "exposure": self.exposure, "c1": self.c1, "c2": self.c2,
            "mediator": self.mediator, "outcome": self.outcome, "subject_id": self.subject_id,
            "time": self.time, "n_times": self.n_times,
        }

    def column(self, role):
        return getattr(self, role)


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    baseline: np.ndarray
    exposure: np.ndarray
    c1: np.ndarray | None
    c2: np.ndarray | None
    mediator: np.ndarray
    outcome: np.ndarray


@dataclass(frozen=True)
class ExposureProfile:
    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ValueError("exposure profile must be non-empty")
        if any(v not in (0, 1) for v in vals):
            raise ValueError(f"exposure profile entries must be 0/1, got {self.values}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def parse(cls, text: str) -> "ExposureProfile":
        """``"101"`` or ``"1,0,1"`` -> profile."""
        text = text.strip().replace(",", "").replace(" ", "")
        if not text or any(ch not in "01" for ch in text):
            raise ValueError(f"cannot parse exposure profile {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @classmethod
    def constant(cls, value: int, length: int) -> "ExposureProfile":
        return cls((value,) * length)

    def __len__(self):
        return len(self.values)

    def __str__(self):
        return "".join(map(str, self.values))

    def as_array(self):
        return np.array(self.values, dtype=np.float64)


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    ids: tuple[str, ...]
    baseline_names: tuple[str, ...]
    V: np.ndarray  # (n, q)
    A: np.ndarray  # (n, T)
    M: np.ndarray
    Y: np.ndarray
    C1: np.ndarray | None = None
    C2: np.ndarray | None = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for name in ("V", "A", "M", "Y", "C1", "C2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, T = self.A.shape
        if self.V.ndim != 2 or self.V.shape != (n, len(self.baseline_names)):
            raise ValueError(f"baseline block has shape {self.V.shape}, expected {(n, len(self.baseline_names))}")
        for name in ("M", "Y", "C1", "C2"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n, T):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, T)}")
        if len(self.ids) != n:
            raise ValueError("one id per subject required")
        if len(set(self.ids)) != n:
            raise ValueError("subject identifiers must be unique")
        a = self.A[~np.isnan(self.A)]
        if a.size and not np.all((a == 0) | (a == 1)):
            raise ValueError("non-binary exposure")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_times(self) -> int:
        return self.A.shape[1]

    @property
    def roles(self) -> tuple[str, ...]:
        """Non-exposure roles present, in temporal order."""
        return tuple(r for r in ROLES if self.block(r) is not None)

    def block(self, role: str) -> np.ndarray | None:
        return {"exposure": self.A, "c1": self.C1, "c2": self.C2, "mediator": self.M, "outcome": self.Y}[role]

    @property
    def subjects(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(
                self.ids[i], self.V[i], self.A[i],
                None if self.C1 is None else self.C1[i],
                None if self.C2 is None else self.C2[i],
                self.M[i], self.Y[i],
            )
            for i in range(self.n)
        ]

    def missing_exposure(self) -> np.ndarray:
        return np.isnan(self.A)

    def replace(self, **changes) -> "PanelDataset":
        fields = dict(ids=self.ids, baseline_names=self.baseline_names, V=self.V, A=self.A, M=self.M,
                      Y=self.Y, C1=self.C1, C2=self.C2, meta=self.meta)
        fields.update(changes)
        return PanelDataset(**fields)

    def take(self, idx) -> "PanelDataset":
        """Subjects ``idx`` (repeats allowed, as in a bootstrap); ids are made unique."""
        idx = np.asarray(idx)
        ids = tuple(f"{self.ids[i]}#{r}" for r, i in enumerate(idx))
        sub = lambda a: None if a is None else a[idx]
        return PanelDataset(ids, self.baseline_names, self.V[idx], self.A[idx], self.M[idx], self.Y[idx],
                            sub(self.C1), sub(self.C2), self.meta)

    def horizon(self, T: int) -> "PanelDataset":
        """First ``T`` time steps."""
        if not 1 <= T <= self.n_times:
            raise ValueError(f"horizon {T} outside 1..{self.n_times}")
        cut = lambda a: None if a is None else a[:, :T]
        return PanelDataset(self.ids, self.baseline_names, self.V, self.A[:, :T], self.M[:, :T],
                            self.Y[:, :T], cut(self.C1), cut(self.C2), self.meta)

    def equals(self, other: "PanelDataset") -> bool:
        """Field-by-field equality (NaN == NaN)."""
        if self.ids != other.ids or self.baseline_names != other.baseline_names:
            return False
        for name in ("V", "A", "M", "Y", "C1", "C2"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b, equal_nan=True):
                return False
        return True

    def require_complete(self, T: int | None = None, what="analysis") -> None:
        """Raise unless every cell up to ``T`` is observed."""
        T = self.n_times if T is None else T
        for role in ORDER:
            arr = self.block(role)
            if arr is None:
                continue
            miss = np.argwhere(np.isnan(arr[:, :T]))
            if miss.size:
                i, t = miss[0]
                if role == "exposure":
                    msg = (f"{what} needs complete exposures; subject {self.ids[i]!r} is missing A({t + 1}); "
                           "apply a missing-exposure scenario first")
                else:
                    msg = (f"{what} does not impute missing {SHORT[role]} values; subject {self.ids[i]!r} "
                           f"is missing {SHORT[role]}({t + 1})")
                raise PanelError(msg)


def _parse_float(text: str, row: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise PanelError(f"not a number: {text!r}", row, column) from None
    if not math.isfinite(value):
        raise PanelError(f"non-finite value {text!r}", row, column)
    return value


def load_panel(path, schema: Schema | Mapping) -> PanelDataset:
    """Read a long-format CSV (one row per subject and time) into a :class:`PanelDataset`.

    Baseline covariates are taken from each subject's first time row and must
    not vary across that subject's rows.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [schema.subject_id, schema.time, schema.exposure, schema.mediator, schema.outcome,
                    *schema.baseline, *(c for c in (schema.c1, schema.c2) if c)]
        for col in required:
            if col not in header:
                raise PanelError("missing required column", 1, col)
        records: dict[str, dict[int, tuple[int, dict]]] = {}
        order: list[str] = []
        for rownum, row in enumerate(reader, start=2):
            sid = (row[schema.subject_id] or "").strip()
            if not sid:
                raise PanelError("empty subject id", rownum, schema.subject_id)
            raw_t = (row[schema.time] or "").strip()
            try:
                t = int(raw_t)
            except ValueError:
                raise PanelError(f"time index must be an integer, got {raw_t!r}", rownum, schema.time) from None
            if t < 1 or (schema.n_times is not None and t > schema.n_times):
                upper = schema.n_times if schema.n_times is not None else "T"
                raise PanelError(f"time index {t} outside 1..{upper}", rownum, schema.time)
            if sid not in records:
                records[sid] = {}
                order.append(sid)
            if t in records[sid]:
                raise PanelError(f"duplicate (subject, time) = ({sid!r}, {t})", rownum, schema.time)
            records[sid][t] = (rownum, row)

    if not order:
        raise PanelError("no data rows", 1)
    T = schema.n_times or max(max(ts) for ts in records.values())
    n = len(order)
    q = len(schema.baseline)
    V = np.full((n, q), np.nan)
    blocks = {role: np.full((n, T), np.nan) for role in ORDER if schema.column(role)}
    for i, sid in enumerate(order):
        rows = records[sid]
        for t in range(1, T + 1):
            if t not in rows:
                raise PanelError(f"subject {sid!r} has no row for time {t}", None, schema.time)
        first_row = True
        for t in sorted(rows):
            rownum, row = rows[t]
            for j, col in enumerate(schema.baseline):
                v = _parse_float(row[col], rownum, col)
                if first_row:
                    if math.isnan(v):
                        raise PanelError("baseline covariate is missing", rownum, col)
                    V[i, j] = v
                elif not (v == V[i, j] or math.isnan(v)):
                    raise PanelError("baseline covariate changes within subject", rownum, col)
            first_row = False
            for role, arr in blocks.items():
                col = schema.column(role)
                v = _parse_float(row[col], rownum, col)
                if role == "exposure" and not math.isnan(v) and v not in (0.0, 1.0):
                    raise PanelError(f"non-binary exposure value {row[col].strip()!r}", rownum, col)
                arr[i, t - 1] = v
    return PanelDataset(
        tuple(order), tuple(schema.baseline), V, blocks["exposure"], blocks["mediator"], blocks["outcome"],
        blocks.get("c1"), blocks.get("c2"),
    )


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_panel(data: PanelDataset, path, schema: Schema | Mapping | None = None) -> None:
    """Write ``data`` in the long CSV dialect read by :func:`load_panel`."""
    if schema is None:
        schema = default_schema(data)
    elif not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    roles = [r for r in ORDER if schema.column(r) and data.block(r) is not None]
    header = [schema.subject_id, schema.time, *schema.baseline, *(schema.column(r) for r in roles)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            base = [_fmt(v) for v in data.V[i]]
            for t in range(data.n_times):
                w.writerow([data.ids[i], t + 1, *base, *(_fmt(data.block(r)[i, t]) for r in roles)])


def default_schema(data: PanelDataset) -> Schema:
    return Schema(
        baseline=data.baseline_names,
        c1="C1" if data.C1 is not None else None,
        c2="C2" if data.C2 is not None else None,
    )


@dataclass(frozen=True)
class Stratum:
    history: tuple[int, ...]
    count: int
    freq_exposed: float

    @property
    def flagged(self) -> bool:
        return self.freq_exposed in (0.0, 1.0)


@dataclass(frozen=True)
class PositivityReport:
    t: int
    strata: tuple[Stratum, ...]

    @property
    def flagged(self) -> tuple[Stratum, ...]:
        return tuple(s for s in self.strata if s.flagged)

    @property
    def ok(self) -> bool:
        return not self.flagged

    def __str__(self):
        lines = [f"positivity at t={self.t}:"]
        for s in self.strata:
            hist = "".join(map(str, s.history)) or "{}"
            mark = "  VIOLATION" if s.flagged else ""
            lines.append(f"  history {hist}: n={s.count} P(A=1)={s.freq_exposed:.3f}{mark}")
        return "\n".join(lines)


def validate_positivity(data: PanelDataset, t: int) -> PositivityReport:
    """Empirical P(A(t) = 1) within each observed exposure-history stratum ``A(1..t-1)``.

    Strata where the frequency is 0 or 1 are flagged; nothing is raised.
    """
    if not 1 <= t <= data.n_times:
        raise ValueError(f"t={t} outside 1..{data.n_times}")
    A = data.A[:, :t]
    if np.isnan(A).any():
        raise ValueError("positivity diagnostic needs complete exposures up to t; apply a scenario first")
    hist = A[:, : t - 1].astype(int)
    keys = [tuple(h) for h in hist]
    strata = []
    for key in sorted(set(keys)):
        sel = np.array([k == key for k in keys])
        strata.append(Stratum(key, int(sel.sum()), float(A[sel, t - 1].mean())))
    return PositivityReport(t, tuple(strata))
