"""Front sweeps, dominance, hypervolume and ranking metrics.

Both objectives are losses, so smaller is better and the hypervolume is
measured against an upper-right reference point.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset
from .exceptions import EmptyFront, EmptyTestSet
from .model import Parameters, Tape, candidate_logits, hidden_states, position_losses
from .sampling import PreferenceVector
from .training import SessionBatch, draw_negatives


@dataclass(frozen=True)
class ReferencePoint:
    r_c: float
    r_o: float

    def as_list(self) -> list[float]:
        return [self.r_c, self.r_o]


# loss-space nadirs reported for the three benchmark datasets
REFERENCE_POINTS = {
    "diginetica": ReferencePoint(3.86, 1.12),
    "yoochoose": ReferencePoint(4.03, 0.17),
    "otto": ReferencePoint(3.91, 1.02),
}


@dataclass(frozen=True)
class ParetoPoint:
    l_c: float
    l_o: float
    pi_o: float


@dataclass
class Front:
    points: list = field(default_factory=list)
    reference: Optional[ReferencePoint] = None

    def __post_init__(self):
        pis = [p.pi_o for p in self.points]
        if any(b <= a for a, b in zip(pis, pis[1:])):
            raise ValueError("front points must have strictly increasing pi_o")

    def __len__(self):
        return len(self.points)

    def coordinates(self) -> list[tuple[float, float]]:
        return [(p.l_c, p.l_o) for p in self.points]

    def spread(self) -> float:
        """Range of the order loss across the sweep."""
        l_o = [p.l_o for p in self.points]
        return max(l_o) - min(l_o)

    def hypervolume(self, ref: Optional[ReferencePoint] = None) -> float:
        ref = ref or self.reference or nadir_reference(self.coordinates())
        return hypervolume_2d(self.coordinates(), ref)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("pi_o,l_c,l_o\n")
        for p in self.points:
            buf.write(f"{p.pi_o:.17g},{p.l_c:.17g},{p.l_o:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, reference: Optional[ReferencePoint] = None) -> "Front":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "pi_o,l_c,l_o":
            raise ValueError("front CSV must start with header pi_o,l_c,l_o")
        points = []
        for ln in lines[1:]:
            pi_o, l_c, l_o = (float(v) for v in ln.split(","))
            points.append(ParetoPoint(l_c, l_o, pi_o))
        return cls(points, reference)


def _eval_sessions(test: Dataset):
    sessions = [s for s in test.sessions if len(s) >= 2]
    if not sessions:
        raise EmptyTestSet("test set has no prediction positions")
    return sessions


def evaluate_losses(
    params: Parameters,
    test: Dataset,
    pi: PreferenceVector,
    negatives: Optional[int] = 128,
    seed: int = 0,
    batch_size: int = 256,
) -> tuple[float, float]:
    """Mean click and order loss over every test prediction position.

    ``negatives=None`` scores against the full catalog; otherwise one shared
    negative set is drawn from ``seed``.
    """
    sessions = _eval_sessions(test)
    vocab = params.config.vocab_size
    neg = None if negatives is None else draw_negatives(np.random.default_rng(seed), vocab, negatives)
    sum_c = sum_o = 0.0
    count = 0
    for i in range(0, len(sessions), batch_size):
        batch = SessionBatch.from_sessions(sessions[i : i + batch_size], params.config.max_len)
        pis = np.tile(pi.as_array(), (len(batch), 1))
        tape = Tape(params)
        h = hidden_states(tape, batch.inputs, pis)
        click, order = position_losses(tape, h, batch.targets, batch.labels, neg)
        sum_c += float(click.data[batch.mask].sum())
        sum_o += float(order.data[batch.mask].sum())
        count += int(batch.mask.sum())
    return sum_c / count, sum_o / count


def sweep_front(
    params: Parameters,
    test: Dataset,
    grid: Sequence[PreferenceVector],
    negatives: Optional[int] = 128,
    seed: int = 0,
    reference: Optional[ReferencePoint] = None,
) -> Front:
    """One point per grid preference, all evaluated with the same negatives."""
    points = []
    for pi in grid:
        l_c, l_o = evaluate_losses(params, test, pi, negatives, seed)
        points.append(ParetoPoint(l_c, l_o, pi.pi_o))
    return Front(points, reference)


def dominance_filter(points: Iterable) -> list[tuple[float, float]]:
    """Points not weakly dominated by another (minimization), sorted by x."""
    out = []
    best_y = np.inf
    for x, y in sorted({(float(x), float(y)) for x, y in points}):
        if y < best_y:
            out.append((x, y))
            best_y = y
    return out


def hypervolume_2d(points: Iterable, ref: ReferencePoint) -> float:
    """Area dominated by ``points`` inside the box bounded by ``ref``.

    Points beyond the reference in either coordinate contribute nothing and
    trigger a warning.
    """
    front = dominance_filter(points)
    inside = [(x, y) for x, y in front if x <= ref.r_c and y <= ref.r_o]
    if len(inside) < len(front):
        warnings.warn(
            f"{len(front) - len(inside)} non-dominated point(s) lie outside the reference box",
            RuntimeWarning,
            stacklevel=2,
        )
    area = 0.0
    prev_y = ref.r_o
    for x, y in inside:
        area += (ref.r_c - x) * (prev_y - y)
        prev_y = y
    return area


def nadir_point(points: Iterable) -> tuple[float, float]:
    front = dominance_filter(points)
    if not front:
        raise EmptyFront("cannot take the nadir of an empty point set")
    return max(x for x, _ in front), max(y for _, y in front)


def nadir_reference(points: Iterable) -> ReferencePoint:
    return ReferencePoint(*nadir_point(points))


def worst_point(points: Iterable) -> ReferencePoint:
    """Componentwise maximum over all points, dominated ones included.

    Used as a shared reference when comparing several fronts, where the
    nadir of one front may not bound the others.
    """
    pts = list(points)
    if not pts:
        raise EmptyFront("cannot bound an empty point set")
    return ReferencePoint(max(x for x, _ in pts), max(y for _, y in pts))


def recall_from_logits(logits: np.ndarray, targets: np.ndarray, k: int) -> np.ndarray:
    """Per-row hit indicator for the target among the top ``k`` logits.

    Ties are broken by ascending item index, so an item outranks every
    equal-scored item with a larger index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    target_logit = logits[np.arange(len(targets)), targets][:, None]
    index = np.arange(logits.shape[1])[None, :]
    rank = (logits > target_logit).sum(axis=1) + ((logits == target_logit) & (index < targets[:, None])).sum(axis=1)
    return rank < k


def recall_at_k(
    params: Parameters,
    test: Dataset,
    pi: PreferenceVector = PreferenceVector(1.0, 0.0),
    k: int = 20,
    batch_size: int = 256,
) -> float:
    """Fraction of test positions whose next click is in the full-catalog top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sessions = _eval_sessions(test)
    items = np.arange(params.config.vocab_size)
    hits = 0
    count = 0
    for i in range(0, len(sessions), batch_size):
        batch = SessionBatch.from_sessions(sessions[i : i + batch_size], params.config.max_len)
        pis = np.tile(pi.as_array(), (len(batch), 1))
        tape = Tape(params)
        logits = candidate_logits(tape, hidden_states(tape, batch.inputs, pis), items).data
        hits += int(recall_from_logits(logits[batch.mask], batch.targets[batch.mask], k).sum())
        count += int(batch.mask.sum())
    return hits / count


def popularity_recall(test: Dataset, k: int = 20) -> float:
    """Recall of ranking every position by how often each item is a test target."""
    sessions = _eval_sessions(test)
    targets = np.array([i for s in sessions for i, _ in s.steps[1:]], dtype=np.int64)
    counts = np.bincount(targets, minlength=test.n_items).astype(np.float64)
    return float(recall_from_logits(np.broadcast_to(counts, (len(targets), counts.size)), targets, k).mean())


def metrics_json(front: Front, reference: ReferencePoint, recall: Optional[float] = None, k: int = 20) -> str:
    payload = {
        "hv": hypervolume_2d(front.coordinates(), reference),
        "reference": reference.as_list(),
        "nadir": list(nadir_point(front.coordinates())),
        f"recall_at_{k}": recall,
        "grid_size": len(front),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
