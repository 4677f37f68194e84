"""Preference-conditioned causal self-attention recommender.

The preference vector is projected into embedding space and added to every
input position.  Logits are dot products of the final hidden states with the
(tied) item embeddings.  All tensors are float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import IndexOutOfVocab, InvalidConfig, PrefixTooLong, TapeMismatch
from .losses import bce_with_logits_tensor, sampled_softmax_tensor
from .sampling import PreferenceVector


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 3
    n_heads: int = 2
    max_len: int = 50
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "max_len"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise InvalidConfig(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Parameters:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def fingerprint(self) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        return h.digest()

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_params(config: ModelConfig) -> Parameters:
    rng = np.random.default_rng(config.seed)
    d, d_ff = config.d_model, 4 * config.d_model
    emb_std = np.sqrt(1.0 / d)
    t = {
        "item_embeddings": rng.normal(0.0, emb_std, size=(config.vocab_size, d)),
        "positional_embeddings": rng.normal(0.0, emb_std, size=(config.max_len, d)),
        "preference_projection": _glorot(rng, 2, d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        t[p + "ln1.scale"] = np.ones(d)
        t[p + "ln1.offset"] = np.zeros(d)
        for w in ("query", "key", "value", "output"):
            t[p + f"attn.{w}"] = _glorot(rng, d, d)
        t[p + "ln2.scale"] = np.ones(d)
        t[p + "ln2.offset"] = np.zeros(d)
        t[p + "ffn.inner"] = _glorot(rng, d, d_ff)
        t[p + "ffn.inner_bias"] = np.zeros(d_ff)
        t[p + "ffn.outer"] = _glorot(rng, d_ff, d)
        t[p + "ffn.outer_bias"] = np.zeros(d)
    t["final_ln.scale"] = np.ones(d)
    t["final_ln.offset"] = np.zeros(d)
    return Parameters(config, t)


class Tape:
    """Records one forward computation over leaf copies of ``params``."""

    def __init__(self, params: Parameters):
        self.params = params
        self.leaves = {k: Tensor(v, name=k) for k, v in params.tensors.items()}
        self.fingerprint = params.fingerprint()
        self.output: Tensor | None = None

    def __getitem__(self, name) -> Tensor:
        return self.leaves[name]


def backward(params: Parameters, tape: Tape, loss_gradient: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of ``tape.output`` (scaled by ``loss_gradient``) for every tensor."""
    if tape.output is None:
        raise TapeMismatch("tape has no recorded output")
    if tape.params is not params or params.fingerprint() != tape.fingerprint:
        raise TapeMismatch("parameters changed since the forward pass")
    for leaf in tape.leaves.values():
        leaf.grad = None
    tape.output.backward(loss_gradient)
    return {
        k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for k, leaf in tape.leaves.items()
    }


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0 or rng is None:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def hidden_states(tape: Tape, items: np.ndarray, pis: np.ndarray, rng=None) -> Tensor:
    """Final hidden states ``(batch, length, d_model)`` for right-padded item ids."""
    cfg = tape.params.config
    batch, length = items.shape
    d, heads = cfg.d_model, cfg.n_heads
    dh = d // heads

    x = ag.gather_rows(tape["item_embeddings"], items)
    x = x + ag.gather_rows(tape["positional_embeddings"], np.arange(length))
    pref = ag.matmul(np.asarray(pis, dtype=np.float64), tape["preference_projection"])
    x = x + pref.reshape(batch, 1, d)
    x = _dropout(x, cfg.dropout, rng)

    causal = np.tril(np.ones((length, length), dtype=bool))
    scale = 1.0 / np.sqrt(dh)

    def split(t):
        return t.reshape(batch, length, heads, dh).transpose(0, 2, 1, 3)

    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = ag.layer_norm(x, tape[p + "ln1.scale"], tape[p + "ln1.offset"])
        q = split(h @ tape[p + "attn.query"])
        k = split(h @ tape[p + "attn.key"])
        v = split(h @ tape[p + "attn.value"])
        att = ag.softmax((q @ k.transpose(0, 1, 3, 2)) * scale, axis=-1, mask=causal)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(batch, length, d)
        x = x + _dropout(o @ tape[p + "attn.output"], cfg.dropout, rng)

        h = ag.layer_norm(x, tape[p + "ln2.scale"], tape[p + "ln2.offset"])
        f = ag.gelu(h @ tape[p + "ffn.inner"] + tape[p + "ffn.inner_bias"])
        f = f @ tape[p + "ffn.outer"] + tape[p + "ffn.outer_bias"]
        x = x + _dropout(f, cfg.dropout, rng)

    return ag.layer_norm(x, tape["final_ln.scale"], tape["final_ln.offset"])


def candidate_logits(tape: Tape, hidden: Tensor, candidates: np.ndarray) -> Tensor:
    """Logits ``(batch, length, n_candidates)`` against a shared candidate list."""
    emb = ag.gather_rows(tape["item_embeddings"], candidates)
    return hidden @ emb.transpose(1, 0)


def target_logits(tape: Tape, hidden: Tensor, targets: np.ndarray) -> Tensor:
    """Logit of each position's own target item, shape ``(batch, length)``."""
    emb = ag.gather_rows(tape["item_embeddings"], targets)
    return (hidden * emb).sum(axis=-1)


def _check_items(items, vocab_size):
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= vocab_size):
        raise IndexOutOfVocab(f"item index outside [0, {vocab_size})")
    return items


def forward_scores(
    params: Parameters,
    prefix,
    pi: PreferenceVector,
    candidates=None,
) -> np.ndarray:
    """Scores of shape ``(len(prefix), n_candidates)``; row ``t`` only sees ``prefix[: t + 1]``."""
    cfg = params.config
    prefix = _check_items(prefix, cfg.vocab_size)
    if prefix.ndim != 1 or not 1 <= prefix.size <= cfg.max_len:
        raise PrefixTooLong(f"prefix length {prefix.size} outside [1, {cfg.max_len}]")
    cands = np.arange(cfg.vocab_size) if candidates is None else _check_items(candidates, cfg.vocab_size)
    tape = Tape(params)
    h = hidden_states(tape, prefix[None, :], pi.as_array()[None, :])
    return candidate_logits(tape, h, cands).data[0]


def position_losses(tape: Tape, hidden: Tensor, targets, labels, negatives=None):
    """Per-position click and order losses, each ``(batch, length)``.

    ``negatives`` is a shared array of negative item ids; a negative equal to
    the position's target is masked out.  ``None`` uses the full catalog.
    """
    batch, length = targets.shape
    if negatives is None:
        negatives = np.arange(tape.params.config.vocab_size)
    pos = target_logits(tape, hidden, targets)
    neg = candidate_logits(tape, hidden, negatives)
    keep = negatives[None, None, :] != targets[..., None]
    n = batch * length
    click = sampled_softmax_tensor(
        pos.reshape(n), neg.reshape(n, negatives.size), keep.reshape(n, negatives.size)
    ).reshape(batch, length)
    order = bce_with_logits_tensor(pos, labels)
    return click, order
