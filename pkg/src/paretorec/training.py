"""Mini-batch training over sampled preferences."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .exceptions import InvalidConfig, NonFiniteLoss, ShapeMismatch
from .losses import G_FUNCTIONS, total_loss_tensor
from .model import Parameters, Tape, backward, hidden_states, position_losses
from .sampling import DirichletParams, sample_preferences

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-4
    epochs: int = 20
    lam: float = 0.5
    beta: tuple = (0.5, 0.5)
    negatives: int = 128
    seed: int = 0
    g: str = "softmax"

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise InvalidConfig("learning_rate must be >= 0")
        if not self.lam >= 0:
            raise InvalidConfig("lambda must be >= 0")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.negatives < 1:
            raise InvalidConfig("negatives must be >= 1")
        if self.g not in G_FUNCTIONS:
            raise InvalidConfig(f"g must be one of {G_FUNCTIONS}")
        DirichletParams(self.beta)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def dirichlet(self) -> DirichletParams:
        return DirichletParams(self.beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        return d


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Parameters, grads: dict, opt: AdamState, lr: float) -> None:
    """Bias-corrected adaptive-moment update, applied in place."""
    for k, g in grads.items():
        if k not in params.tensors or params.tensors[k].shape != g.shape:
            raise ShapeMismatch(f"gradient {k!r} does not match parameter shape")
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for k in sorted(params.tensors):
        g = grads.get(k)
        if g is None:
            continue
        if k not in opt.m:
            opt.m[k] = np.zeros_like(g)
            opt.v[k] = np.zeros_like(g)
        opt.m[k] *= opt.beta1
        opt.m[k] += (1.0 - opt.beta1) * g
        opt.v[k] *= opt.beta2
        opt.v[k] += (1.0 - opt.beta2) * (g * g)
        params.tensors[k] -= lr * (opt.m[k] / bc1) / (np.sqrt(opt.v[k] / bc2) + opt.eps)


@dataclass
class SessionBatch:
    """Right-padded next-click prediction problems for a list of sessions."""

    inputs: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_sessions(cls, sessions, max_len: int) -> "SessionBatch":
        # a session of T clicks yields T - 1 predictions; keep the most recent ones
        trimmed = [s.steps[-(max_len + 1):] for s in sessions]
        length = max(len(t) - 1 for t in trimmed)
        shape = (len(trimmed), length)
        inputs = np.zeros(shape, dtype=np.int64)
        targets = np.zeros(shape, dtype=np.int64)
        labels = np.zeros(shape)
        mask = np.zeros(shape, dtype=bool)
        for b, steps in enumerate(trimmed):
            n = len(steps) - 1
            inputs[b, :n] = [i for i, _ in steps[:-1]]
            targets[b, :n] = [i for i, _ in steps[1:]]
            labels[b, :n] = [o for _, o in steps[1:]]
            mask[b, :n] = True
        return cls(inputs, targets, labels, mask)

    def __len__(self):
        return self.inputs.shape[0]


def draw_negatives(rng: np.random.Generator, vocab_size: int, count: int) -> np.ndarray:
    """Distinct items shared by the whole batch; capped at the vocabulary size."""
    return np.sort(rng.choice(vocab_size, size=min(count, vocab_size), replace=False))


def batch_objective(
    params: Parameters,
    batch: SessionBatch,
    pis: np.ndarray,
    negatives: Optional[np.ndarray],
    lam: float,
    g: str = "softmax",
    rng=None,
):
    """Record the training objective on a fresh tape.

    Click and order losses are first averaged over each session's positions,
    then scalarized and regularized with that session's preference, then
    averaged over sessions.  Returns ``(tape, stats)``; ``tape.output`` is the
    scalar objective.
    """
    tape = Tape(params)
    h = hidden_states(tape, batch.inputs, pis, rng=rng)
    click, order = position_losses(tape, h, batch.targets, batch.labels, negatives)
    weight = batch.mask / batch.mask.sum(axis=1, keepdims=True)
    l_c = (click * weight).sum(axis=1)
    l_o = (order * weight).sum(axis=1)
    total, reg = total_loss_tensor(l_c, l_o, pis, lam, g)
    tape.output = total
    stats = {
        "pi_mean": pis.mean(axis=0).tolist(),
        "l_c": float(l_c.data.mean()),
        "l_o": float(l_o.data.mean()),
        "reg": float(reg.data.mean()) if reg is not None else 0.0,
        "total": float(total.data),
    }
    return tape, stats


def iter_batches(sessions, batch_size: int, rng: np.random.Generator):
    """Sessions bucketed by length, cut into batches, batches shuffled."""
    order = rng.permutation(len(sessions))
    order = sorted(order, key=lambda i: len(sessions[i]))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    for j in rng.permutation(len(chunks)):
        yield [sessions[i] for i in chunks[j]]


@dataclass
class EpochSummary:
    epoch: int
    steps: int
    mean_total: float
    mean_l_c: float
    mean_l_o: float


def train_epoch(
    ds: Dataset,
    params: Parameters,
    opt: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 0,
    log_file=None,
) -> EpochSummary:
    usable = [s for s in ds.sessions if len(s) >= 2]
    if not usable:
        raise ValueError("dataset has no session with at least two clicks")
    max_len = params.config.max_len
    totals, l_cs, l_os = [], [], []
    for chunk in iter_batches(usable, cfg.batch_size, rng):
        batch = SessionBatch.from_sessions(chunk, max_len)
        pis = sample_preferences(rng, cfg.dirichlet, len(batch))
        negatives = draw_negatives(rng, params.config.vocab_size, cfg.negatives)
        tape, stats = batch_objective(params, batch, pis, negatives, cfg.lam, cfg.g, rng=rng)
        step = opt.step + 1
        if not np.isfinite(stats["total"]):
            raise NonFiniteLoss(step, f"epoch {epoch}")
        grads = backward(params, tape)
        adam_step(params, grads, opt, cfg.learning_rate)
        if not params.all_finite():
            raise NonFiniteLoss(step, "parameters became non-finite")
        totals.append(stats["total"])
        l_cs.append(stats["l_c"])
        l_os.append(stats["l_o"])
        if log_file is not None:
            log_file.write(json.dumps({"step": step, "epoch": epoch, **stats}) + "\n")
    summary = EpochSummary(epoch, len(totals), float(np.mean(totals)), float(np.mean(l_cs)), float(np.mean(l_os)))
    logger.info(
        "epoch %d: total=%.5f l_c=%.5f l_o=%.5f (%d steps)",
        epoch, summary.mean_total, summary.mean_l_c, summary.mean_l_o, summary.steps,
    )
    return summary


def train(
    ds: Dataset,
    params: Parameters,
    cfg: TrainConfig,
    opt: Optional[AdamState] = None,
    log_file=None,
    callback=None,
) -> tuple[AdamState, list[EpochSummary]]:
    """Run ``cfg.epochs`` epochs in place on ``params``; deterministic in ``cfg.seed``."""
    opt = AdamState() if opt is None else opt
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        summary = train_epoch(ds, params, opt, cfg, rng, epoch, log_file)
        history.append(summary)
        if callback is not None:
            callback(summary)
    return opt, history
