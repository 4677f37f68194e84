"""Event ingestion, labeled sessions, filtering, splitting and synthetic data.

A session is the time-ordered list of clicked items, each flagged with
whether the same item was ordered anywhere in that session.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .exceptions import BoundaryOutOfRange, EmptyInput, InvalidSpec, MalformedRecord

ACTIONS = ("click", "order")
CSV_HEADER = ("session_id", "item_id", "timestamp", "action")
DATASET_MAGIC = "PARETOREC-DATASET"
DATASET_VERSION = 1


@dataclass(frozen=True)
class RawEvent:
    session_id: str
    item_id: str
    timestamp: int
    action: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")


@dataclass(frozen=True)
class Session:
    session_id: str
    steps: tuple = ()
    start: int = 0

    @property
    def items(self) -> list:
        return [item for item, _ in self.steps]

    @property
    def ordered(self) -> list[bool]:
        return [flag for _, flag in self.steps]

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class Dataset:
    """Sessions whose items are dense indices into ``vocab``."""

    sessions: tuple = ()
    vocab: tuple = ()
    index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        object.__setattr__(self, "vocab", tuple(self.vocab))
        index = {item_id: i for i, item_id in enumerate(self.vocab)}
        if len(index) != len(self.vocab):
            raise ValueError("vocab contains duplicate item ids")
        object.__setattr__(self, "index", index)
        n = len(self.vocab)
        for s in self.sessions:
            for item, _ in s.steps:
                if not 0 <= item < n:
                    raise ValueError(f"session {s.session_id!r} references item {item} outside vocab")

    @property
    def n_items(self) -> int:
        return len(self.vocab)

    def __len__(self):
        return len(self.sessions)

    def stats(self) -> dict:
        return {
            "sessions": len(self.sessions),
            "click_events": sum(len(s) for s in self.sessions),
            "order_events": sum(len({i for i, o in s.steps if o}) for s in self.sessions),
            "items": self.n_items,
        }


def _parse_timestamp(value, line):
    if isinstance(value, bool):
        raise MalformedRecord(line, "timestamp must be an integer")
    if isinstance(value, int):
        ts = value
    elif isinstance(value, str) and value.strip().lstrip("-").isdigit():
        ts = int(value.strip())
    else:
        raise MalformedRecord(line, f"timestamp {value!r} is not an integer")
    if ts < 0:
        raise MalformedRecord(line, "timestamp must be >= 0")
    return ts


def _make_event(session_id, item_id, timestamp, action, line) -> RawEvent:
    if action not in ACTIONS:
        raise MalformedRecord(line, f"unknown action {action!r}")
    if session_id in (None, "") or item_id in (None, ""):
        raise MalformedRecord(line, "empty session_id or item_id")
    return RawEvent(str(session_id), str(item_id), _parse_timestamp(timestamp, line), action)


def parse_events(stream, format: str = "csv") -> list[RawEvent]:
    """Parse a byte stream (or bytes) of CSV or JSONL records.

    A leading CSV header row is optional.  Blank lines are ignored.  The first
    bad record raises :class:`MalformedRecord` with its 1-based line number.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    raw = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    try:
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    except UnicodeDecodeError as exc:
        raise MalformedRecord(text_line_of(raw, exc.start), "invalid UTF-8") from exc

    events = []
    saw_line = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        saw_line = True
        if format == "csv":
            fields = next(csv.reader([line]))
            if lineno == 1 and tuple(f.strip() for f in fields) == CSV_HEADER:
                continue
            if len(fields) != 4:
                raise MalformedRecord(lineno, f"expected 4 fields, got {len(fields)}")
            sid, item, ts, action = (f.strip() for f in fields)
        else:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, str(exc)) from exc
            if not isinstance(obj, dict) or not all(k in obj for k in CSV_HEADER):
                raise MalformedRecord(lineno, f"object must carry keys {CSV_HEADER}")
            sid, item, ts, action = (obj[k] for k in CSV_HEADER)
        events.append(_make_event(sid, item, ts, action, lineno))

    if saw_line and not events:
        raise EmptyInput("no valid records in input")
    return events


def text_line_of(raw: bytes, offset: int) -> int:
    return raw[:offset].count(b"\n") + 1


def events_to_csv(events: Iterable[RawEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for e in events:
        writer.writerow((e.session_id, e.item_id, e.timestamp, e.action))
    return buf.getvalue()


def build_labeled_sessions(events: Iterable[RawEvent]) -> tuple[list[Session], Counter]:
    """Group events into sessions of ``(item, ordered)`` click steps.

    Returns the sessions (sorted by start time, then id) and a diagnostics
    counter; ``dangling_orders`` counts orders of items never clicked in
    their session.
    """
    grouped = defaultdict(list)
    for e in events:
        grouped[e.session_id].append(e)

    sessions = []
    diagnostics = Counter(dangling_orders=0)
    for sid, evs in grouped.items():
        clicks = sorted((e for e in evs if e.action == "click"), key=lambda e: e.timestamp)
        ordered_items = {e.item_id for e in evs if e.action == "order"}
        clicked_items = {e.item_id for e in clicks}
        diagnostics["dangling_orders"] += len(ordered_items - clicked_items)
        steps = tuple((e.item_id, e.item_id in ordered_items) for e in clicks)
        sessions.append(Session(sid, steps, min(e.timestamp for e in evs)))

    sessions.sort(key=lambda s: (s.start, s.session_id))
    return sessions, diagnostics


def index_sessions(sessions: Iterable[Session]) -> Dataset:
    """Map raw item ids to dense indices in order of first appearance."""
    vocab = {}
    indexed = []
    for s in sessions:
        steps = tuple((vocab.setdefault(item, len(vocab)), flag) for item, flag in s.steps)
        indexed.append(Session(s.session_id, steps, s.start))
    return Dataset(indexed, tuple(vocab))


def _redensify(sessions, vocab) -> Dataset:
    used = sorted({item for s in sessions for item, _ in s.steps})
    remap = {old: new for new, old in enumerate(used)}
    out = [Session(s.session_id, tuple((remap[i], o) for i, o in s.steps), s.start) for s in sessions]
    return Dataset(out, tuple(vocab[i] for i in used))


def filter_dataset(ds: Dataset, min_item_support: int = 5, min_session_clicks: int = 2) -> Dataset:
    """Drop rare items and short sessions, alternating until neither changes."""
    if min_item_support < 1 or min_session_clicks < 1:
        raise ValueError("thresholds must be >= 1")
    sessions = list(ds.sessions)
    while True:
        support = Counter(item for s in sessions for item, _ in s.steps)
        rare = {item for item, n in support.items() if n < min_item_support}
        if rare:
            sessions = [
                Session(s.session_id, tuple(st for st in s.steps if st[0] not in rare), s.start)
                for s in sessions
            ]
        kept = [s for s in sessions if len(s) >= min_session_clicks]
        if not rare and len(kept) == len(sessions):
            break
        sessions = kept
    return _redensify(sessions, ds.vocab)


def temporal_split(ds: Dataset, boundary: int, min_session_clicks: int = 2) -> tuple[Dataset, Dataset]:
    """Sessions starting before ``boundary`` train, the rest test.

    The test side is re-indexed into the train vocabulary; unseen items are
    removed and sessions left shorter than ``min_session_clicks`` dropped.
    """
    if not ds.sessions:
        raise BoundaryOutOfRange("dataset has no sessions to split")
    starts = [s.start for s in ds.sessions]
    if boundary <= min(starts) or boundary > max(starts):
        raise BoundaryOutOfRange(
            f"boundary {boundary} leaves one side empty (starts span {min(starts)}..{max(starts)})"
        )
    train = _redensify([s for s in ds.sessions if s.start < boundary], ds.vocab)
    test_sessions = []
    for s in ds.sessions:
        if s.start < boundary:
            continue
        steps = tuple(
            (train.index[ds.vocab[i]], o) for i, o in s.steps if ds.vocab[i] in train.index
        )
        if len(steps) >= min_session_clicks:
            test_sessions.append(Session(s.session_id, steps, s.start))
    return train, Dataset(test_sessions, train.vocab)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic click/order conflict generator.

    Items come in groups, half "clicky" (likely next clicks, rarely ordered)
    and half "ordery" (unlikely next clicks, often ordered).  ``conflict``
    scales how far the two populations' order probabilities move apart.
    """

    n_sessions: int = 1000
    n_items: int = 200
    conflict: float = 1.0
    seed: int = 0
    group_size: int = 20
    clicky_share: float = 0.8
    min_length: int = 3
    max_length: int = 10

    def validate(self):
        if self.n_items < 4:
            raise InvalidSpec("n_items must be >= 4")
        if self.n_sessions < 1:
            raise InvalidSpec("n_sessions must be >= 1")
        if not 0.0 <= self.conflict <= 1.0:
            raise InvalidSpec("conflict must lie in [0, 1]")
        if self.group_size < 2:
            raise InvalidSpec("group_size must be >= 2")
        if not 0.0 < self.clicky_share < 1.0:
            raise InvalidSpec("clicky_share must lie in (0, 1)")
        if not 2 <= self.min_length <= self.max_length:
            raise InvalidSpec("need 2 <= min_length <= max_length")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")


def synthetic_item_ids(spec: SyntheticSpec) -> list[str]:
    # even positions are clicky, odd positions ordery; the prefix records it
    return [f"{'o' if j % 2 else 'c'}{j:05d}" for j in range(spec.n_items)]


def is_ordery(item_id: str) -> bool:
    return item_id.startswith("o")


def synthetic_events(spec: SyntheticSpec, rng: Optional[np.random.Generator] = None) -> list[RawEvent]:
    spec.validate()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    ids = synthetic_item_ids(spec)
    n_groups = max(1, spec.n_items // spec.group_size)
    # contiguous blocks so every group mixes both populations
    group_of = np.minimum(np.arange(spec.n_items) // spec.group_size, n_groups - 1)
    members = [np.flatnonzero(group_of == g) for g in range(n_groups)]
    p_order_clicky = 0.5 - 0.45 * spec.conflict
    p_order_ordery = 0.5 + 0.45 * spec.conflict

    events = []
    for s in range(spec.n_sessions):
        sid = f"s{s:07d}"
        start = 3600 * s
        group = members[rng.integers(n_groups)]
        clicky = group[group % 2 == 0]
        ordery = group[group % 2 == 1]
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        pick_clicky = rng.random(length) < spec.clicky_share
        u = rng.random(length)
        clicks = [
            int(clicky[int(u[t] * clicky.size)] if pick_clicky[t] else ordery[int(u[t] * ordery.size)])
            for t in range(length)
        ]
        for t, item in enumerate(clicks):
            events.append(RawEvent(sid, ids[item], start + 60 * t, "click"))
        distinct = sorted(set(clicks))
        draws = rng.random(len(distinct))
        for item, d in zip(distinct, draws):
            p = p_order_ordery if item % 2 else p_order_clicky
            if d < p:
                events.append(RawEvent(sid, ids[item], start + 60 * length, "order"))
    return events


def generate_synthetic(spec: SyntheticSpec, rng: Optional[np.random.Generator] = None) -> Dataset:
    """Deterministic synthetic dataset whose vocab covers every generated item."""
    sessions, _ = build_labeled_sessions(synthetic_events(spec, rng))
    return index_sessions(sessions)


def dataset_to_json(ds: Dataset) -> str:
    payload = {
        "magic": DATASET_MAGIC,
        "version": DATASET_VERSION,
        "vocab": list(ds.vocab),
        "sessions": [
            {
                "id": s.session_id,
                "start": int(s.start),
                "items": [int(i) for i, _ in s.steps],
                "ordered": [int(o) for _, o in s.steps],
            }
            for s in ds.sessions
        ],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def dataset_from_json(text: str) -> Dataset:
    payload = json.loads(text)
    if payload.get("magic") != DATASET_MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    if payload.get("version") != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {payload.get('version')}")
    sessions = [
        Session(s["id"], tuple(zip(s["items"], (bool(o) for o in s["ordered"]))), s["start"])
        for s in payload["sessions"]
    ]
    return Dataset(sessions, tuple(payload["vocab"]))


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dataset_to_json(ds))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return dataset_from_json(fh.read())
