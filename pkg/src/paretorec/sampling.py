"""Preference vectors on the two-objective simplex.

Training draws one preference per session from a Dirichlet distribution;
evaluation sweeps a deterministic grid of preferences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidGrid, InvalidSpec

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class PreferenceVector:
    """Weights ``[pi_c, pi_o]`` for the click and order objectives."""

    pi_c: float
    pi_o: float

    def __post_init__(self):
        if not (np.isfinite(self.pi_c) and np.isfinite(self.pi_o)):
            raise ValueError("preference components must be finite")
        if self.pi_c < 0 or self.pi_o < 0:
            raise ValueError(f"preference components must be >= 0, got {self.as_tuple()}")
        if abs(self.pi_c + self.pi_o - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"preference must sum to 1, got {self.as_tuple()}")

    @classmethod
    def from_pi_o(cls, pi_o: float) -> "PreferenceVector":
        pi_o = float(pi_o)
        return cls(1.0 - pi_o, pi_o)

    def as_tuple(self) -> tuple[float, float]:
        return (self.pi_c, self.pi_o)

    def as_array(self) -> np.ndarray:
        return np.array([self.pi_c, self.pi_o], dtype=np.float64)


@dataclass(frozen=True)
class DirichletParams:
    beta: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != 2:
            raise InvalidSpec(f"beta must have two components, got {len(beta)}")
        if not all(np.isfinite(b) and b > 0 for b in beta):
            raise InvalidSpec(f"beta components must be > 0, got {beta}")
        object.__setattr__(self, "beta", beta)


def standard_gamma(rng: np.random.Generator, shape: float, size: int) -> np.ndarray:
    """Gamma(shape, 1) draws by Marsaglia-Tsang rejection.

    For ``shape < 1`` a Gamma(shape + 1) draw is scaled by ``U ** (1 / shape)``.
    Rejected slots are redrawn in rounds, so the stream consumed from ``rng``
    depends only on the seed.
    """
    if shape <= 0:
        raise ValueError("gamma shape must be > 0")
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)

    out = np.empty(size, dtype=np.float64)
    pending = np.arange(size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        v = 1.0 + c * x
        ok = v > 0
        v = np.where(ok, v * v * v, 1.0)
        with np.errstate(divide="ignore"):
            ok &= np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v)
        out[pending[ok]] = d * v[ok]
        pending = pending[~ok]

    if boost:
        out *= rng.random(size) ** (1.0 / shape)
    return out


def sample_preferences(rng: np.random.Generator, params: DirichletParams, n: int) -> np.ndarray:
    """``n`` Dirichlet draws as an ``(n, 2)`` array of ``[pi_c, pi_o]`` rows."""
    g_c = standard_gamma(rng, params.beta[0], n)
    g_o = standard_gamma(rng, params.beta[1], n)
    total = g_c + g_o
    # both gammas can underflow to 0 for tiny shapes; fall back to the mean
    mean_c = params.beta[0] / (params.beta[0] + params.beta[1])
    safe = total > 0
    pi_c = np.where(safe, g_c / np.where(safe, total, 1.0), mean_c)
    return np.column_stack([pi_c, 1.0 - pi_c])


def sample_preference(rng: np.random.Generator, params: DirichletParams) -> PreferenceVector:
    pi_c, pi_o = sample_preferences(rng, params, 1)[0]
    return PreferenceVector(float(pi_c), float(pi_o))


def preference_grid(n: int, clamp: float = 1e-3) -> list[PreferenceVector]:
    """``n`` preferences with ``pi_o`` evenly spaced over ``[clamp, 1 - clamp]``."""
    if n < 2:
        raise InvalidGrid(f"grid needs at least 2 points, got {n}")
    if not 0 <= clamp < 0.5:
        raise InvalidGrid(f"clamp must lie in [0, 0.5), got {clamp}")
    return [PreferenceVector.from_pi_o(p) for p in np.linspace(clamp, 1.0 - clamp, n)]
