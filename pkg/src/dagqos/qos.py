"""Node-side QoS estimation: max-min sawtooth filter for the issue rate,
the queue-over-rate delay estimate and the proportional fee controller."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .access import AimdEvent
from .model import QosIndicator


class EstimatorError(ValueError):
    pass


@dataclass(slots=True)
class SawtoothFilterState:
    """Moving average of per-cycle (min + max) / 2 over the last ``window`` cycles.

    A maximum is the rate just before a decrease that follows growth; a
    minimum is the rate at which growth resumes after one or more
    decreases. Back-to-back decreases are one descent, not several cycles.
    """

    window: int = 5
    previous_rate: float | None = None
    pending_min: float | None = None
    cycle_averages: deque = field(default_factory=deque)
    filtered_rate: float | None = None
    descending: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("filter window must be >= 1")
        self.cycle_averages = deque(self.cycle_averages, maxlen=self.window)

    @property
    def cycles(self) -> int:
        return len(self.cycle_averages)


def observe_rate(filt: SawtoothFilterState, rate: float, event: AimdEvent | str) -> SawtoothFilterState:
    """Feed the rate produced by one AIMD tick into the filter (in place)."""
    prev = filt.previous_rate if filt.previous_rate is not None else rate
    if event == AimdEvent.DECREASE:
        if not filt.descending:
            if filt.pending_min is not None:
                filt.cycle_averages.append(0.5 * (filt.pending_min + prev))
                filt.filtered_rate = sum(filt.cycle_averages) / len(filt.cycle_averages)
            filt.descending = True
    elif event == AimdEvent.INCREASE and filt.descending:
        filt.pending_min = prev
        filt.descending = False
    filt.previous_rate = rate
    return filt


def expected_delay(queue_len: int, filtered_rate: float) -> float:
    if filtered_rate <= 0:
        raise EstimatorError(f"service-rate estimate must be positive, got {filtered_rate}")
    if queue_len < 0:
        raise EstimatorError(f"queue length must be >= 0, got {queue_len}")
    return queue_len / filtered_rate


@dataclass(frozen=True, slots=True)
class FeeControllerState:
    gain: float = 0.8
    setpoint: float = 15.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("fee controller gain must be positive")
        if self.setpoint < 0:
            raise ValueError("delay setpoint must be >= 0")


def fee(tau: float, ctrl: FeeControllerState) -> float:
    """Proportional fee: zero up to the delay setpoint, then linear in the excess."""
    return max(0.0, ctrl.gain * (tau - ctrl.setpoint))


def rate_estimate(filt: SawtoothFilterState, current_rate: float) -> float:
    """Filtered rate, or the instantaneous AIMD rate before any cycle completes."""
    return filt.filtered_rate if filt.filtered_rate is not None else current_rate


def publish_indicator(node, now: float, backlog: int = 0) -> QosIndicator:
    """Compute and store the node's advertised (delay, fee) pair.

    ``backlog`` counts the node's transactions that have left its LTP but
    are still waiting in the shared scheduler; they are part of the wait a
    new arrival will see.
    """
    lam = rate_estimate(node.filter, node.aimd.current_rate)
    tau = expected_delay(len(node.ltp) + backlog, lam)
    ind = QosIndicator(expected_delay=tau, fee=fee(tau, node.controller), published_at=now)
    prev = node.indicator
    if prev is not None and prev.published_at > now:
        raise EstimatorError("indicator timestamps must not go backwards")
    node.indicator = ind
    return ind
