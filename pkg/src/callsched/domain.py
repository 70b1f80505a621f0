"""Core call-log data model: time slots, call records, ingestion, phase splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import time
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

N_SLOTS = 7
SLOT_IDS = tuple(range(1, N_SLOTS + 1))

PHASE_BASELINE = "baseline"
PHASE_INTERVENTION = "intervention"
PHASES = (PHASE_BASELINE, PHASE_INTERVENTION)
_PHASE_CODE = {PHASE_BASELINE: 0, PHASE_INTERVENTION: 1}

ARM_TREATMENT = "treatment"
ARM_CONTROL = "control"
ARMS = (ARM_TREATMENT, ARM_CONTROL)
_ARM_CODE = {ARM_TREATMENT: 0, ARM_CONTROL: 1}

LOG_COLUMNS = ("user_id", "slot_id", "day", "retry", "attempted", "picked", "phase", "arm")
DROPOUT_COLUMNS = ("user_id", "dropout_day")


class LogValidationError(ValueError):
    """Raised when a call log (or one of its rows) violates an invariant."""


@dataclass(frozen=True)
class SlotTable:
    """Ordered slot-id to time-window table.

    Row order is data, not an artifact: the default production table lists
    slot 3 before slot 2, and windows chain start-to-end in row order.
    """

    rows: tuple[tuple[int, time, time], ...]

    def __post_init__(self) -> None:
        ids = [slot for slot, _, _ in self.rows]
        if sorted(ids) != list(SLOT_IDS):
            raise ValueError(f"slot ids must be exactly 1..{N_SLOTS}, got {ids}")
        prev_end = None
        for slot, start, end in self.rows:
            width = _minutes(end) - _minutes(start)
            if width != 120:
                raise ValueError(f"slot {slot} window is {width} min, expected 120")
            if prev_end is not None and start != prev_end:
                raise ValueError(f"slot {slot} starts at {start}, expected {prev_end}")
            prev_end = end

    def window(self, slot: int) -> tuple[time, time]:
        for slot_id, start, end in self.rows:
            if slot_id == slot:
                return start, end
        raise KeyError(slot)

    @property
    def span(self) -> tuple[time, time]:
        return self.rows[0][1], self.rows[-1][2]


def _minutes(t: time) -> int:
    return t.hour * 60 + t.minute


DEFAULT_SLOT_TABLE = SlotTable(
    rows=(
        (1, time(6, 45), time(8, 45)),
        (3, time(8, 45), time(10, 45)),
        (2, time(10, 45), time(12, 45)),
        (4, time(12, 45), time(14, 45)),
        (5, time(14, 45), time(16, 45)),
        (6, time(16, 45), time(18, 45)),
        (7, time(18, 45), time(20, 45)),
    )
)


@dataclass(frozen=True, slots=True)
class CallRecord:
    """One call attempt: user, slot, trial day, same-day retry index, outcome."""

    user: int | str
    slot: int
    day: int
    retry: int
    attempted: bool
    picked: bool
    phase: str
    arm: str

    def __post_init__(self) -> None:
        if self.slot not in SLOT_IDS:
            raise LogValidationError(f"slot {self.slot} outside 1..{N_SLOTS}")
        if self.day < 0:
            raise LogValidationError(f"day {self.day} is negative")
        if not 0 <= self.retry <= 2:
            raise LogValidationError(f"retry {self.retry} outside 0..2")
        if self.picked and not self.attempted:
            raise LogValidationError("picked call was never attempted")
        if self.phase not in PHASES:
            raise LogValidationError(f"unknown phase {self.phase!r}")
        if self.arm not in ARMS:
            raise LogValidationError(f"unknown arm {self.arm!r}")

    @property
    def key(self) -> tuple[int | str, int, int, int]:
        return (self.user, self.slot, self.day, self.retry)


class CallLog:
    """Immutable, columnar collection of call records.

    Columns are numpy arrays so the statistics layer can vectorize; the
    record view is still available via :meth:`records`. Construction
    validates the log-level invariants (unique keys, picked implies
    attempted, users cover all records).
    """

    __slots__ = (
        "_user_table",
        "_user_code",
        "_slot",
        "_day",
        "_retry",
        "_attempted",
        "_picked",
        "_phase",
        "_arm",
        "_users",
        "_dropout",
    )

    def __init__(
        self,
        records: Iterable[CallRecord] = (),
        users: Iterable[int | str] | None = None,
        dropout_day: dict[int | str, int] | None = None,
    ) -> None:
        records = list(records)
        cols: dict[str, list] = {name: [] for name in LOG_COLUMNS}
        for rec in records:
            cols["user_id"].append(rec.user)
            cols["slot_id"].append(rec.slot)
            cols["day"].append(rec.day)
            cols["retry"].append(rec.retry)
            cols["attempted"].append(rec.attempted)
            cols["picked"].append(rec.picked)
            cols["phase"].append(_PHASE_CODE[rec.phase])
            cols["arm"].append(_ARM_CODE[rec.arm])
        self._init_from_columns(
            cols["user_id"],
            np.asarray(cols["slot_id"], dtype=np.int8),
            np.asarray(cols["day"], dtype=np.int32),
            np.asarray(cols["retry"], dtype=np.int8),
            np.asarray(cols["attempted"], dtype=bool),
            np.asarray(cols["picked"], dtype=bool),
            np.asarray(cols["phase"], dtype=np.int8),
            np.asarray(cols["arm"], dtype=np.int8),
            users,
            dropout_day,
        )

    @classmethod
    def _trusted(
        cls,
        user_table: tuple,
        user_code: np.ndarray,
        slot: np.ndarray,
        day: np.ndarray,
        retry: np.ndarray,
        attempted: np.ndarray,
        picked: np.ndarray,
        phase: np.ndarray,
        arm: np.ndarray,
        dropout: dict | None = None,
    ) -> CallLog:
        """Internal fast path for rows already known to satisfy the invariants
        (e.g. bootstrap resamples of a validated log)."""
        log = cls.__new__(cls)
        log._user_table = user_table
        log._user_code = user_code
        log._slot = slot
        log._day = day
        log._retry = retry
        log._attempted = attempted
        log._picked = picked
        log._phase = phase
        log._arm = arm
        log._users = user_table
        log._dropout = dict(dropout or {})
        return log

    @classmethod
    def from_columns(
        cls,
        user: list,
        slot: np.ndarray,
        day: np.ndarray,
        retry: np.ndarray,
        attempted: np.ndarray,
        picked: np.ndarray,
        phase: np.ndarray,
        arm: np.ndarray,
        users: Iterable[int | str] | None = None,
        dropout_day: dict[int | str, int] | None = None,
    ) -> CallLog:
        log = cls.__new__(cls)
        log._init_from_columns(
            user,
            np.asarray(slot, dtype=np.int8),
            np.asarray(day, dtype=np.int32),
            np.asarray(retry, dtype=np.int8),
            np.asarray(attempted, dtype=bool),
            np.asarray(picked, dtype=bool),
            np.asarray(phase, dtype=np.int8),
            np.asarray(arm, dtype=np.int8),
            users,
            dropout_day,
        )
        return log

    def _init_from_columns(
        self,
        user: list,
        slot: np.ndarray,
        day: np.ndarray,
        retry: np.ndarray,
        attempted: np.ndarray,
        picked: np.ndarray,
        phase: np.ndarray,
        arm: np.ndarray,
        users: Iterable[int | str] | None,
        dropout_day: dict[int | str, int] | None,
    ) -> None:
        n = len(user)
        for name, col in (
            ("slot", slot),
            ("day", day),
            ("retry", retry),
            ("attempted", attempted),
            ("picked", picked),
            ("phase", phase),
            ("arm", arm),
        ):
            if len(col) != n:
                raise LogValidationError(f"column {name} has {len(col)} rows, expected {n}")

        record_users = set(user)
        all_users = record_users | set(users or ())
        table = _sorted_users(all_users)
        code_of = {u: i for i, u in enumerate(table)}

        self._user_table = table
        self._user_code = np.fromiter((code_of[u] for u in user), dtype=np.int32, count=n)
        self._slot = slot
        self._day = day
        self._retry = retry
        self._attempted = attempted
        self._picked = picked
        self._phase = phase
        self._arm = arm
        self._users = table
        self._dropout = dict(dropout_day or {})
        self._validate()

    def _validate(self) -> None:
        if len(self) == 0:
            return
        if self._slot.size and (self._slot.min() < 1 or self._slot.max() > N_SLOTS):
            bad = int(np.argmax((self._slot < 1) | (self._slot > N_SLOTS)))
            raise LogValidationError(f"record {bad}: slot {self._slot[bad]} outside 1..{N_SLOTS}")
        if self._day.min() < 0:
            raise LogValidationError("negative day index")
        if self._retry.min() < 0 or self._retry.max() > 2:
            raise LogValidationError("retry index outside 0..2")
        orphan = self._picked & ~self._attempted
        if orphan.any():
            raise LogValidationError(f"record {int(np.argmax(orphan))}: picked without attempt")
        keys = np.stack(
            [self._user_code, self._slot.astype(np.int32), self._day, self._retry.astype(np.int32)],
            axis=1,
        )
        uniq = np.unique(keys, axis=0)
        if uniq.shape[0] != keys.shape[0]:
            seen: set[tuple] = set()
            for i, k in enumerate(map(tuple, keys)):
                if k in seen:
                    rec = self.record_at(i)
                    raise LogValidationError(
                        f"duplicate key (user={rec.user}, slot={rec.slot}, "
                        f"day={rec.day}, retry={rec.retry})"
                    )
                seen.add(k)

    def __len__(self) -> int:
        return int(self._slot.size)

    @property
    def users(self) -> tuple:
        return self._users

    @property
    def dropout_day(self) -> dict:
        return dict(self._dropout)

    @property
    def user_codes(self) -> np.ndarray:
        return self._user_code

    @property
    def user_table(self) -> tuple:
        return self._user_table

    @property
    def slots(self) -> np.ndarray:
        return self._slot

    @property
    def days(self) -> np.ndarray:
        return self._day

    @property
    def retries(self) -> np.ndarray:
        return self._retry

    @property
    def attempted(self) -> np.ndarray:
        return self._attempted

    @property
    def picked(self) -> np.ndarray:
        return self._picked

    @property
    def phase_codes(self) -> np.ndarray:
        """0 = baseline, 1 = intervention."""
        return self._phase

    @property
    def arm_codes(self) -> np.ndarray:
        """0 = treatment, 1 = control."""
        return self._arm

    def record_at(self, i: int) -> CallRecord:
        return CallRecord(
            user=self._user_table[self._user_code[i]],
            slot=int(self._slot[i]),
            day=int(self._day[i]),
            retry=int(self._retry[i]),
            attempted=bool(self._attempted[i]),
            picked=bool(self._picked[i]),
            phase=PHASES[self._phase[i]],
            arm=ARMS[self._arm[i]],
        )

    def records(self) -> Iterator[CallRecord]:
        for i in range(len(self)):
            yield self.record_at(i)

    def subset(self, mask: np.ndarray) -> CallLog:
        """Order-preserving row subset; user set and dropout map follow the rows."""
        idx = np.flatnonzero(mask)
        users = [self._user_table[c] for c in np.unique(self._user_code[idx])]
        dropout = {u: d for u, d in self._dropout.items() if u in set(users)}
        return CallLog.from_columns(
            [self._user_table[c] for c in self._user_code[idx]],
            self._slot[idx],
            self._day[idx],
            self._retry[idx],
            self._attempted[idx],
            self._picked[idx],
            self._phase[idx],
            self._arm[idx],
            users=users,
            dropout_day=dropout,
        )

    def for_arm(self, arm: str) -> CallLog:
        return self.subset(self._arm == _ARM_CODE[arm])

    def for_phase(self, phase: str) -> CallLog:
        return self.subset(self._phase == _PHASE_CODE[phase])


def _sorted_users(users: set) -> tuple:
    """Sort ids; a mix of ints and strings sorts by (typename, value)."""
    try:
        return tuple(sorted(users))
    except TypeError:
        return tuple(sorted(users, key=lambda u: (type(u).__name__, str(u))))


@dataclass(frozen=True)
class LogFormat:
    """Call-log CSV dialect. The column set is fixed; only the delimiter varies."""

    delimiter: str = ","


def _parse_int(value: str, field: str, line: int) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise LogValidationError(f"line {line}: field {field!r} is not an integer: {value!r}")


def _parse_flag(value: str, field: str, line: int) -> bool:
    if value == "0":
        return False
    if value == "1":
        return True
    raise LogValidationError(f"line {line}: field {field!r} must be 0 or 1, got {value!r}")


def ingest_log(
    path: str | Path,
    fmt: LogFormat = LogFormat(),
    dropout_path: str | Path | None = None,
) -> CallLog:
    """Read and validate a call-log CSV (header required, schema fixed).

    Rows that violate the record invariants are rejected with the offending
    line number. An optional dropout sidecar (``user_id,dropout_day``)
    populates the per-user dropout map.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    user: list = []
    slot: list[int] = []
    day: list[int] = []
    retry: list[int] = []
    attempted: list[bool] = []
    picked: list[bool] = []
    phase: list[int] = []
    arm: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        header = next(reader, None)
        if header is None or tuple(header) != LOG_COLUMNS:
            raise LogValidationError(
                f"{path}: header must be {','.join(LOG_COLUMNS)}, got {header}"
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LOG_COLUMNS):
                raise LogValidationError(f"line {line}: expected {len(LOG_COLUMNS)} fields")
            uid, s, d, r, a, p, ph, am = row
            s_i = _parse_int(s, "slot_id", line)
            d_i = _parse_int(d, "day", line)
            r_i = _parse_int(r, "retry", line)
            a_b = _parse_flag(a, "attempted", line)
            p_b = _parse_flag(p, "picked", line)
            if s_i not in SLOT_IDS:
                raise LogValidationError(f"line {line}: slot_id {s_i} outside 1..{N_SLOTS}")
            if d_i < 0:
                raise LogValidationError(f"line {line}: negative day {d_i}")
            if not 0 <= r_i <= 2:
                raise LogValidationError(f"line {line}: retry {r_i} outside 0..2")
            if p_b and not a_b:
                raise LogValidationError(f"line {line}: picked=1 but attempted=0")
            if ph not in PHASES:
                raise LogValidationError(f"line {line}: unknown phase {ph!r}")
            if am not in ARMS:
                raise LogValidationError(f"line {line}: unknown arm {am!r}")
            user.append(_coerce_user_id(uid))
            slot.append(s_i)
            day.append(d_i)
            retry.append(r_i)
            attempted.append(a_b)
            picked.append(p_b)
            phase.append(_PHASE_CODE[ph])
            arm.append(_ARM_CODE[am])
    dropout = read_dropout(dropout_path) if dropout_path is not None else None
    return CallLog.from_columns(
        user,
        np.asarray(slot, dtype=np.int8),
        np.asarray(day, dtype=np.int32),
        np.asarray(retry, dtype=np.int8),
        np.asarray(attempted, dtype=bool),
        np.asarray(picked, dtype=bool),
        np.asarray(phase, dtype=np.int8),
        np.asarray(arm, dtype=np.int8),
        dropout_day=dropout,
    )


def _coerce_user_id(raw: str) -> int | str:
    """Digit-only ids become ints so simulator output round-trips exactly."""
    return int(raw) if raw.lstrip("-").isdigit() else raw


def export_log(log: CallLog, path: str | Path, fmt: LogFormat = LogFormat()) -> None:
    """Write a log in the canonical CSV form (the inverse of ingest_log)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=fmt.delimiter, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        user_table = log.user_table
        for i in range(len(log)):
            writer.writerow(
                (
                    user_table[log.user_codes[i]],
                    int(log.slots[i]),
                    int(log.days[i]),
                    int(log.retries[i]),
                    int(log.attempted[i]),
                    int(log.picked[i]),
                    PHASES[log.phase_codes[i]],
                    ARMS[log.arm_codes[i]],
                )
            )


def read_dropout(path: str | Path) -> dict[int | str, int]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    dropout: dict[int | str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DROPOUT_COLUMNS:
            raise LogValidationError(f"{path}: header must be {','.join(DROPOUT_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            uid = _coerce_user_id(row[0])
            if uid in dropout:
                raise LogValidationError(f"line {line}: duplicate dropout entry for {uid}")
            dropout[uid] = _parse_int(row[1], "dropout_day", line)
    return dropout


def write_dropout(dropout: dict[int | str, int], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DROPOUT_COLUMNS)
        for uid in _sorted_users(set(dropout)):
            writer.writerow((uid, dropout[uid]))


def read_slot_table(path: str | Path) -> SlotTable:
    """Load a slot-table override CSV: slot_id,start,end with HH:MM:SS times."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ("slot_id", "start", "end"):
            raise LogValidationError(f"{path}: header must be slot_id,start,end")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            slot = _parse_int(row[0], "slot_id", line)
            rows.append((slot, time.fromisoformat(row[1]), time.fromisoformat(row[2])))
    return SlotTable(rows=tuple(rows))


def filter_active(log: CallLog) -> CallLog:
    """Drop every record of users who dropped out during the trial.

    A user is inactive when their dropout day lands strictly inside the
    trial window (after day 0, before the end of the log). Users with no
    dropout entry, or one beyond the log horizon, are retained.
    """
    if len(log) == 0:
        return log
    trial_end = int(log.days.max()) + 1
    dropped = {
        u for u, d in log.dropout_day.items() if 0 < d < trial_end
    }
    if not dropped:
        return log
    codes = {i for i, u in enumerate(log.user_table) if u in dropped}
    mask = ~np.isin(log.user_codes, sorted(codes))
    return log.subset(mask)


def split_by_phase(log: CallLog, baseline_days: int) -> tuple[CallLog, CallLog]:
    """Partition by day index: records with day < baseline_days, then the rest."""
    if baseline_days < 0:
        raise ValueError("baseline_days must be >= 0")
    mask = log.days < baseline_days
    return log.subset(mask), log.subset(~mask)
