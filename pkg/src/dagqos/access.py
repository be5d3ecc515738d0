"""Access control: per-node AIMD rate setters and the shared
reputation-weighted deficit round robin scheduler."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Sequence

from .model import Transaction


class AimdEvent(str, enum.Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    HOLD = "hold"


@dataclass(slots=True)
class AimdState:
    """Rate setter for one node.

    ``additive_step`` is already scaled by the node's reputation.
    """

    current_rate: float
    additive_step: float
    multiplicative_factor: float = 0.7
    update_interval: float = 0.1
    rate_floor: float = 0.05
    rate_cap: float = float("inf")
    cooldown: float | None = None
    last_decrease_at: float = float("-inf")

    def __post_init__(self):
        if self.cooldown is None:
            self.cooldown = self.update_interval
        self.current_rate = min(max(self.current_rate, self.rate_floor), self.rate_cap)


# slack for float drift between tick instants
_EPS = 1e-9


def aimd_tick(state: AimdState, congested: bool, now: float) -> AimdEvent:
    """Advance the rate setter by one update interval, in place."""
    if not congested:
        state.current_rate = min(state.current_rate + state.additive_step, state.rate_cap)
        return AimdEvent.INCREASE
    if now - state.last_decrease_at + _EPS >= state.cooldown:
        state.current_rate = max(state.current_rate * state.multiplicative_factor, state.rate_floor)
        state.last_decrease_at = now
        return AimdEvent.DECREASE
    return AimdEvent.HOLD


class DrrScheduler:
    """Deficit round robin over per-node inboxes with unit-size transactions.

    Quanta are proportional to reputation and scaled so the largest is one
    transaction per round; small-reputation nodes therefore bank deficit over
    several rounds. Only nodes with a nonempty inbox sit in the active list,
    so the scheduler is work conserving.
    """

    def __init__(
        self,
        reputations: Sequence[float],
        capacity: float,
        backlog_threshold: float = 10,
        scale_threshold: bool = False,
        min_threshold: float = 0.0,
    ):
        if capacity <= 0:
            raise ValueError("scheduler capacity must be positive")
        reps = [float(r) for r in reputations]
        if not reps or min(reps) <= 0:
            raise ValueError("reputations must be positive")
        top = max(reps)
        self.capacity = float(capacity)
        self.backlog_threshold = backlog_threshold
        self.quantum = [r / top for r in reps]
        # per-node congestion thresholds; scaled ones shrink with reputation
        # so every node's congestion point corresponds to the same wait
        self.thresholds = [max(min_threshold, backlog_threshold * q) if scale_threshold
                           else backlog_threshold for q in self.quantum]
        self.deficit = [0.0] * len(reps)
        self.inbox: list[deque[Transaction]] = [deque() for _ in reps]
        self.active: deque[int] = deque()
        self._fresh = True
        self.size = 0

    def __len__(self) -> int:
        return self.size

    @property
    def node_count(self) -> int:
        return len(self.quantum)

    def enqueue(self, node_id: int, tx: Transaction) -> None:
        q = self.inbox[node_id]
        if not q:
            self.active.append(node_id)
        q.append(tx)
        self.size += 1

    def backlog(self, node_id: int) -> int:
        return len(self.inbox[node_id])

    def serve_one(self, now: float) -> tuple[int, Transaction] | None:
        active = self.active
        deficit = self.deficit
        while active:
            i = active[0]
            if self._fresh:
                deficit[i] += self.quantum[i]
                self._fresh = False
            if deficit[i] >= 1.0:
                q = self.inbox[i]
                tx = q.popleft()
                self.size -= 1
                deficit[i] -= 1.0
                if not q:
                    deficit[i] = 0.0
                    active.popleft()
                    self._fresh = True
                tx.issued_at = now
                return i, tx
            active.rotate(-1)
            self._fresh = True
        return None


SchedulerState = DrrScheduler


def congestion_signal(scheduler: DrrScheduler, node_id: int) -> bool:
    return len(scheduler.inbox[node_id]) > scheduler.thresholds[node_id]


def drr_service_step(scheduler: DrrScheduler, now: float, slots: int = 1) -> list[tuple[int, Transaction]]:
    """Serve up to ``slots`` transactions at ``now``; each gets ``issued_at = now``."""
    served = []
    for _ in range(slots):
        item = scheduler.serve_one(now)
        if item is None:
            break
        served.append(item)
    return served
