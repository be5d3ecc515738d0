"""User-side node selection policies and inverse-CDF sampling."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate
from typing import Sequence

import numpy as np

from .model import QosIndicator

# floor applied to delays and costs before inversion
MIN_DELAY = 0.01

_SUM_TOL = 1e-9


class PolicyError(ValueError):
    pass


class NoEligibleNode:
    """Singleton returned by :func:`dbns_plus_select` when every node is too costly."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoEligibleNode"

    def __bool__(self):
        return False


NO_ELIGIBLE_NODE = NoEligibleNode()


@dataclass(frozen=True)
class PolicyInput:
    reputations: Sequence[float]
    indicators: Sequence[QosIndicator]
    tradeoff_weight: float
    cost_threshold: float

    def __post_init__(self):
        if len(self.indicators) != len(self.reputations):
            raise PolicyError("need one indicator per node")


def _check_reps(reps: Sequence[float]) -> np.ndarray:
    arr = np.asarray(reps, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise PolicyError("need at least one node")
    if np.any(~(arr > 0)):
        raise PolicyError("reputations must be strictly positive")
    return arr


def _normalise(w: np.ndarray) -> np.ndarray:
    return w / w.sum()


def urns_probabilities(n: int) -> np.ndarray:
    if n < 1:
        raise PolicyError("need at least one node")
    return np.full(n, 1.0 / n)


def rbns_probabilities(reps: Sequence[float]) -> np.ndarray:
    return _normalise(_check_reps(reps))


def dbns_probabilities(reps: Sequence[float], delays: Sequence[float]) -> np.ndarray:
    r = _check_reps(reps)
    tau = np.asarray(delays, dtype=float)
    if tau.shape != r.shape:
        raise PolicyError("need one delay per node")
    if np.any(tau < 0):
        raise PolicyError("delays must be >= 0")
    return _normalise(r / np.maximum(tau, MIN_DELAY))


def cost(tau: float, sigma: float, a: float) -> float:
    return a * tau + (1.0 - a) * sigma


def dbns_plus_probabilities(
    reps: Sequence[float],
    delays: Sequence[float],
    fees: Sequence[float],
    a: float,
    c_max: float,
) -> np.ndarray | None:
    """Selection weights over nodes whose cost is within ``c_max``.

    Ineligible nodes get probability 0. Returns None when nothing is eligible.
    """
    r = _check_reps(reps)
    c = a * np.asarray(delays, dtype=float) + (1.0 - a) * np.asarray(fees, dtype=float)
    if c.shape != r.shape:
        raise PolicyError("need one delay and fee per node")
    eligible = c <= c_max
    if not eligible.any():
        return None
    w = np.where(eligible, r / np.maximum(c, MIN_DELAY), 0.0)
    return _normalise(w)


def sample_node(p: Sequence[float], rng) -> int:
    """Inverse-CDF draw from ``p`` using one uniform from ``rng``.

    ``rng`` is anything with a ``random()`` method returning a float in
    [0, 1), or a float itself (useful for checking specific draws).
    """
    u = rng if isinstance(rng, float) else rng.random()
    return inverse_cdf(cumulative(p), u)


def cumulative(p: Sequence[float]) -> list[float]:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise PolicyError("probability vector must be nonempty")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise PolicyError("probabilities must be finite and >= 0")
    if abs(arr.sum() - 1.0) > _SUM_TOL:
        raise PolicyError(f"probabilities sum to {arr.sum()!r}, not 1")
    cdf = list(accumulate(arr.tolist()))
    # rounding can leave the last value a hair under 1; pin it to the last
    # nonzero atom so a draw close to 1 never falls off the end
    last = int(np.flatnonzero(arr)[-1])
    for k in range(last, len(cdf)):
        cdf[k] = 1.0
    return cdf


def inverse_cdf(cdf: list[float], u: float) -> int:
    return bisect_right(cdf, u)


def dbns_plus_select(inp: PolicyInput, rng) -> int | NoEligibleNode:
    p = dbns_plus_probabilities(
        inp.reputations,
        [ind.expected_delay for ind in inp.indicators],
        [ind.fee for ind in inp.indicators],
        inp.tradeoff_weight,
        inp.cost_threshold,
    )
    if p is None:
        return NO_ELIGIBLE_NODE
    return sample_node(p, rng)
