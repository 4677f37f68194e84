"""Click loss, order loss, scalarization and the non-uniformity penalty.

The public scalar functions accept plain floats and return floats.  The
``*_tensor`` variants build on :mod:`paretorec.autograd` so the same
formulas are differentiated during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy.special import expit

from .autograd import Tensor, as_tensor, log, exp
from .exceptions import DegenerateWeighting
from .sampling import PreferenceVector

GFunction = Literal["identity", "softmax"]
G_FUNCTIONS = ("identity", "softmax")


def _check_g(g: str) -> None:
    if g not in G_FUNCTIONS:
        raise ValueError(f"g must be one of {G_FUNCTIONS}, got {g!r}")


def sampled_softmax_tensor(positive: Tensor, negatives: Tensor, mask=None) -> Tensor:
    """Per-row ``-log softmax`` of the positive logit against its negatives.

    ``positive`` has shape ``(n,)``, ``negatives`` ``(n, k)``; ``mask`` marks
    which negatives take part in each row.
    """
    positive, negatives = as_tensor(positive), as_tensor(negatives)
    pos = positive.data
    neg = negatives.data
    keep = np.ones(neg.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    neg_masked = np.where(keep, neg, -np.inf)
    m = np.maximum(pos, neg_masked.max(axis=-1))
    e_pos = np.exp(pos - m)
    e_neg = np.exp(neg_masked - m[..., None])
    neg_sum = e_neg.sum(axis=-1)
    denom = e_pos + neg_sum
    # log1p keeps precision when the positive logit dominates
    out = np.where(pos >= m, np.log1p(neg_sum), np.log(denom) + m - pos)

    def back(g):
        p_pos = e_pos / denom
        p_neg = e_neg / denom[..., None]
        return g * (p_pos - 1.0), g[..., None] * p_neg

    return Tensor(out, (positive, negatives), back)


def bce_with_logits_tensor(logits: Tensor, labels) -> Tensor:
    """Elementwise ``max(x, 0) - x*y + log(1 + exp(-|x|))``."""
    logits = as_tensor(logits)
    x = logits.data
    y = np.asarray(labels, dtype=np.float64)
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        return (g * (expit(x) - y),)

    return Tensor(out, (logits,), back)


def click_loss_sampled_softmax(positive_logit: float, negative_logits) -> float:
    negative_logits = np.asarray(negative_logits, dtype=np.float64)
    if negative_logits.ndim != 1 or negative_logits.size < 1:
        raise ValueError("need at least one negative logit")
    out = sampled_softmax_tensor(np.array([positive_logit]), negative_logits[None, :])
    return float(out.data[0])


def order_loss_bce(positive_logit: float, label: bool) -> float:
    return float(bce_with_logits_tensor(np.float64(positive_logit), float(bool(label))).data)


def scalarized_loss(l_c: float, l_o: float, pi: PreferenceVector) -> float:
    return pi.pi_c * l_c + pi.pi_o * l_o


def penalty_tensor(l_c: Tensor, l_o: Tensor, pi_c, pi_o, g: str = "softmax") -> Tensor:
    """KL(g(pi_hat) || [1/2, 1/2]) elementwise over matching loss/preference arrays."""
    _check_g(g)
    l_c, l_o = as_tensor(l_c), as_tensor(l_o)
    pi_c = np.asarray(pi_c, dtype=np.float64)
    pi_o = np.asarray(pi_o, dtype=np.float64)
    w_c = l_c * pi_c
    w_o = l_o * pi_o
    total = w_c + w_o
    if np.any(total.data <= 0):  # NaN flows on and surfaces as NonFiniteLoss
        raise DegenerateWeighting("weighted loss sum must be > 0")
    hat_c = w_c / total
    hat_o = w_o / total
    if g == "identity":
        if np.any(pi_c == 0) or np.any(pi_o == 0):
            raise DegenerateWeighting("a preference component is exactly 0 with g=identity")
        q_c, q_o = hat_c, hat_o
    else:
        # pi_hat lies in [0, 1], so the plain exponentials cannot overflow
        e_c, e_o = exp(hat_c), exp(hat_o)
        z = e_c + e_o
        q_c, q_o = e_c / z, e_o / z
    return q_c * log(q_c * 2.0) + q_o * log(q_o * 2.0)


def non_uniformity_penalty(l_c: float, l_o: float, pi: PreferenceVector, g: GFunction = "softmax") -> float:
    return float(penalty_tensor(np.float64(l_c), np.float64(l_o), pi.pi_c, pi.pi_o, g).data)


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_o: float
    weighted_c: float
    weighted_o: float
    pi_hat: Optional[tuple[float, float]]
    reg: float
    total: float

    def as_dict(self) -> dict:
        return {
            "l_c": self.l_c,
            "l_o": self.l_o,
            "weighted_c": self.weighted_c,
            "weighted_o": self.weighted_o,
            "pi_hat": list(self.pi_hat) if self.pi_hat is not None else None,
            "reg": self.reg,
            "total": self.total,
        }


def total_loss(
    batch_l_c: float,
    batch_l_o: float,
    pi: PreferenceVector,
    lam: float = 0.0,
    g: GFunction = "softmax",
) -> LossBreakdown:
    """Scalarized loss plus ``lam`` times the non-uniformity penalty.

    With ``lam == 0`` the penalty is not evaluated at all, so degenerate
    weightings only raise when the penalty is actually used.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    _check_g(g)
    weighted_c = pi.pi_c * batch_l_c
    weighted_o = pi.pi_o * batch_l_o
    s = weighted_c + weighted_o
    pi_hat = (weighted_c / s, weighted_o / s) if s > 0 else None
    reg = non_uniformity_penalty(batch_l_c, batch_l_o, pi, g) if lam > 0 else 0.0
    return LossBreakdown(
        l_c=float(batch_l_c),
        l_o=float(batch_l_o),
        weighted_c=weighted_c,
        weighted_o=weighted_o,
        pi_hat=pi_hat,
        reg=reg,
        total=weighted_c + weighted_o + lam * reg,
    )


def total_loss_tensor(l_c: Tensor, l_o: Tensor, pis: np.ndarray, lam: float, g: str = "softmax"):
    """Per-session objective averaged over sessions.

    ``l_c`` and ``l_o`` hold one position-averaged loss per session and
    ``pis`` the matching ``(n, 2)`` preferences.  Returns the scalar total and
    the per-session penalty (``None`` when ``lam == 0``).
    """
    pis = np.asarray(pis, dtype=np.float64)
    scalarized = l_c * pis[:, 0] + l_o * pis[:, 1]
    if lam > 0:
        reg = penalty_tensor(l_c, l_o, pis[:, 0], pis[:, 1], g)
        return (scalarized + reg * lam).mean(), reg
    return scalarized.mean(), None
