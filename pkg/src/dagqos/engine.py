"""Discrete-event simulation of users, node LTPs, AIMD rate setters and the
shared DRR scheduler, plus Monte Carlo orchestration over load scenarios."""

from __future__ import annotations

import heapq
import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .access import AimdState, DrrScheduler, aimd_tick
from .model import (
    NetworkConfig,
    NodeState,
    Policy,
    QosIndicator,
    Scenario,
    Transaction,
    UserState,
    generate_reputation,
)
from .policies import cumulative, dbns_plus_probabilities, dbns_probabilities, rbns_probabilities, urns_probabilities
from .qos import FeeControllerState, SawtoothFilterState, observe_rate, rate_estimate

log = logging.getLogger(__name__)

# event kinds; ties at equal time are broken by insertion sequence only
ARRIVAL, ISSUE, SERVICE, AIMD, PUBLISH, SAMPLE = range(6)
EVENT_NAMES = ("UserArrival", "NodeIssue", "SchedulerService", "AimdUpdate", "QosPublish", "MetricsSample")

# stream families for per-actor random number generators
_USER_STREAM, _NODE_STREAM = 1, 2


class Stream:
    """Buffered draws from an independent PCG64 stream keyed off the master seed."""

    __slots__ = ("_gen", "_exp", "_uni", "_block")

    def __init__(self, seed: int, key: tuple[int, ...], block: int = 512):
        ss = np.random.SeedSequence(seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._exp: list[float] = []
        self._uni: list[float] = []
        self._block = block

    def exponential(self, rate: float) -> float:
        if not self._exp:
            buf = self._gen.standard_exponential(self._block).tolist()
            buf.reverse()
            self._exp = buf
        return self._exp.pop() / rate

    def random(self) -> float:
        if not self._uni:
            buf = self._gen.random(self._block).tolist()
            buf.reverse()
            self._uni = buf
        return self._uni.pop()


TX_FIELDS = ("tx_id", "user_id", "node_id", "created_at", "enqueued_at", "issued_at", "delay", "fee_paid")
SERIES_FIELDS = ("ltp_len", "issue_rate", "filtered_rate", "adv_delay", "fee", "inbox_len")
RATE_FIELDS = ("created", "issued", "ltp_total", "inbox_total", "deferred_pending")


@dataclass
class SimResult:
    """Everything recorded by one seeded run.

    ``transactions`` holds issued transactions only, sorted by
    (issued_at, tx_id). ``series`` arrays are shaped (samples, nodes);
    ``counts`` arrays hold per-sample cumulative totals.
    """

    config: NetworkConfig
    seed: int
    reputations: np.ndarray
    transactions: dict[str, np.ndarray]
    sample_times: np.ndarray
    series: dict[str, np.ndarray]
    counts: dict[str, np.ndarray]
    received: np.ndarray
    received_post_warmup: np.ndarray
    fees_collected: np.ndarray
    created: int
    deferred_tx: int
    pending_at_end: int
    in_ltp_at_end: int
    in_scheduler_at_end: int
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def policy(self) -> Policy:
        return self.config.policy

    @property
    def issued(self) -> int:
        return int(self.transactions["tx_id"].size)

    def post_warmup_mask(self) -> np.ndarray:
        return self.transactions["enqueued_at"] >= self.config.warmup

    def delays(self, post_warmup: bool = True) -> np.ndarray:
        d = self.transactions["delay"]
        return d[self.post_warmup_mask()] if post_warmup else d

    def per_node_mean_delay(self, post_warmup: bool = True) -> np.ndarray:
        tx = self.transactions
        mask = self.post_warmup_mask() if post_warmup else np.ones(self.issued, bool)
        n = self.reputations.size
        sums = np.bincount(tx["node_id"][mask], weights=tx["delay"][mask], minlength=n)
        cnt = np.bincount(tx["node_id"][mask], minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(cnt > 0, sums / np.maximum(cnt, 1), np.nan)

    def demand_rate(self) -> float:
        """Mean user transaction creation rate over the whole run, tx/s."""
        dur = self.config.duration
        return self.created / dur if dur > 0 else 0.0

    def throughput(self, start: float = 0.0) -> float:
        dur = self.config.duration - start
        if dur <= 0:
            return 0.0
        return float(np.count_nonzero(self.transactions["issued_at"] >= start)) / dur


class Simulation:
    """One run of the event loop. Construct, then call :meth:`run` once."""

    def __init__(self, config: NetworkConfig, seed: int | None = None):
        config.validate()
        self.cfg = cfg = config
        self.seed = cfg.rng_seed if seed is None else int(seed)
        self.rep = generate_reputation(cfg.node_count, cfg.zipf_exponent)
        reps = list(self.rep.values)
        rep_sum = math.fsum(reps)
        nu = cfg.scheduling_rate
        a = cfg.aimd

        self.scheduler = DrrScheduler(
            reps, cfg.effective_scheduler_rate, a.backlog_threshold, a.scale_threshold, a.min_threshold
        )
        self.nodes: list[NodeState] = []
        for j, r in enumerate(reps):
            fair = nu * r / rep_sum
            if a.enabled:
                start = a.initial_rate if a.initial_rate is not None else fair
                aimd = AimdState(
                    current_rate=start,
                    additive_step=a.additive_step * r,
                    multiplicative_factor=a.multiplicative_factor,
                    update_interval=a.update_interval,
                    rate_floor=a.rate_floor,
                    rate_cap=nu,
                    cooldown=(a.decrease_cooldown if a.decrease_cooldown is not None
                              else max(a.update_interval, 1.0 / fair)),
                )
            else:
                rate = a.fixed_rate if a.fixed_rate is not None else fair
                aimd = AimdState(current_rate=rate, additive_step=0.0, rate_floor=rate, rate_cap=rate)
            filt = SawtoothFilterState(window=cfg.controller.filter_window, previous_rate=aimd.current_rate)
            ctrl = FeeControllerState(cfg.controller.gain, cfg.controller.setpoint)
            self.nodes.append(NodeState(node_id=j, reputation=r, aimd=aimd, filter=filt, controller=ctrl))

        base_rate = cfg.user_send_rate
        up = cfg.users
        self.users: list[UserState] = []
        for m in range(cfg.user_count):
            ov = up.overrides.get(m)
            self.users.append(UserState(
                user_id=m,
                send_rate=ov.send_rate if ov and ov.send_rate is not None else base_rate,
                tradeoff_weight=ov.tradeoff_weight if ov and ov.tradeoff_weight is not None else up.tradeoff_weight,
                cost_threshold=ov.cost_threshold if ov and ov.cost_threshold is not None else up.cost_threshold,
            ))

        self.user_rng = [Stream(self.seed, (_USER_STREAM, m)) for m in range(cfg.user_count)]
        self.node_rng = [Stream(self.seed, (_NODE_STREAM, j)) for j in range(cfg.node_count)]

        n = cfg.node_count
        self._heap: list[tuple] = []
        self._seq = 0
        self._issue_version = [0] * n
        self._issue_pending = [False] * n
        self._service_pending = False
        self._next_free = 0.0
        self._service_gap = 1.0 / cfg.effective_scheduler_rate
        self._tx_id = 0
        self._created = 0
        self._deferred_tx = 0
        self._pending_total = 0
        self._issued: list[Transaction] = []
        self._received = [0] * n
        self._received_post = [0] * n
        self._taus = [0.0] * n
        self._fees = [0.0] * n
        self._cdf_cache: dict[tuple[float, float], list[float] | None] = {}
        self._static_cdf: list[float] | None = None
        self._dyn_cdf: list[float] | None = None
        self._samples: list[tuple] = []
        self._sample_counts: list[tuple] = []
        self._ran = False

    # ------------------------------------------------------------ scheduling

    def _push(self, t: float, kind: int, a: int = 0, b: int = 0) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, a, b))

    def _schedule_issue(self, j: int, now: float) -> None:
        ver = self._issue_version[j] + 1
        self._issue_version[j] = ver
        self._issue_pending[j] = True
        self._push(now + self.node_rng[j].exponential(self.nodes[j].aimd.current_rate), ISSUE, j, ver)

    def _ensure_service(self, now: float) -> None:
        if not self._service_pending and self.scheduler.size:
            self._service_pending = True
            self._push(max(now, self._next_free), SERVICE)

    # ---------------------------------------------------------- node choice

    def _build_static(self) -> None:
        pol = self.cfg.policy
        if pol is Policy.URNS:
            self._static_cdf = cumulative(urns_probabilities(self.cfg.node_count))
        elif pol is Policy.RBNS:
            self._static_cdf = cumulative(rbns_probabilities(self.rep.values))

    def _cdf_for(self, user: UserState) -> list[float] | None:
        if self._static_cdf is not None:
            return self._static_cdf
        if self.cfg.policy is Policy.DBNS:
            if self._dyn_cdf is None:
                self._dyn_cdf = cumulative(dbns_probabilities(self.rep.values, self._taus))
            return self._dyn_cdf
        key = (user.tradeoff_weight, user.cost_threshold)
        try:
            return self._cdf_cache[key]
        except KeyError:
            p = dbns_plus_probabilities(self.rep.values, self._taus, self._fees, *key)
            cdf = None if p is None else cumulative(p)
            self._cdf_cache[key] = cdf
            return cdf

    def _try_send(self, user: UserState, now: float) -> bool:
        """One send attempt for the head of the user's pending queue."""
        tx = user.pending[0]
        cdf = self._cdf_for(user)
        if cdf is None:
            if not tx.deferred:
                tx.deferred = True
                self._deferred_tx += 1
            return False
        j = bisect_right(cdf, self.user_rng[user.user_id].random())
        user.pending.popleft()
        self._pending_total -= 1
        node = self.nodes[j]
        tx.node_id = j
        tx.enqueued_at = now
        tx.fee_paid = self._fees[j]
        node.ltp.append(tx)
        self._received[j] += 1
        if now >= self.cfg.warmup:
            self._received_post[j] += 1
        if not self._issue_pending[j]:
            self._schedule_issue(j, now)
        return True

    # -------------------------------------------------------------- handlers

    def _on_arrival(self, now: float, m: int) -> None:
        user = self.users[m]
        tx = Transaction(id=self._tx_id, user_id=m, created_at=now)
        self._tx_id += 1
        self._created += 1
        user.pending.append(tx)
        self._pending_total += 1
        self._try_send(user, now)
        self._push(now + self.user_rng[m].exponential(user.send_rate), ARRIVAL, m)

    def _on_issue(self, now: float, j: int, ver: int) -> None:
        if ver != self._issue_version[j]:
            return
        ltp = self.nodes[j].ltp
        if ltp:
            self.scheduler.enqueue(j, ltp.popleft())
            self._ensure_service(now)
        if ltp:
            self._schedule_issue(j, now)
        else:
            self._issue_pending[j] = False

    def _on_service(self, now: float) -> None:
        self._service_pending = False
        item = self.scheduler.serve_one(now)
        if item is not None:
            j, tx = item
            self.nodes[j].cumulative_fees += tx.fee_paid
            self._issued.append(tx)
            self._next_free = now + self._service_gap
        self._ensure_service(now)

    def _on_aimd(self, now: float) -> None:
        sched = self.scheduler
        thr = sched.thresholds
        inbox = sched.inbox
        for j, node in enumerate(self.nodes):
            st = node.aimd
            before = st.current_rate
            ev = aimd_tick(st, len(inbox[j]) > thr[j], now)
            observe_rate(node.filter, st.current_rate, ev)
            # Poisson issue timer: resampling after a rate change is exact
            if st.current_rate != before and self._issue_pending[j]:
                self._schedule_issue(j, now)

    def _on_publish(self, now: float) -> None:
        # same arithmetic as qos.publish_indicator, inlined: this runs for
        # every node at every publication and dominates the profile otherwise
        inbox = self.scheduler.inbox
        extra = 1 if self.cfg.controller.include_arrival else 0
        gain, setpoint = self.cfg.controller.gain, self.cfg.controller.setpoint
        taus, fees = self._taus, self._fees
        for j, node in enumerate(self.nodes):
            lam = node.filter.filtered_rate
            if lam is None:
                lam = node.aimd.current_rate
            tau = (len(node.ltp) + len(inbox[j]) + extra) / lam
            sigma = gain * (tau - setpoint)
            if sigma < 0.0:
                sigma = 0.0
            node.indicator = QosIndicator(tau, sigma, now)
            taus[j] = tau
            fees[j] = sigma
        self._dyn_cdf = None
        self._cdf_cache.clear()
        if self._pending_total and self.cfg.users.retry_on_publish:
            for user in self.users:
                if user.pending:
                    self._try_send(user, now)

    def _on_sample(self, now: float) -> None:
        rows = []
        inbox = self.scheduler.inbox
        for node in self.nodes:
            ind = node.indicator
            rows.append((
                len(node.ltp),
                node.aimd.current_rate,
                rate_estimate(node.filter, node.aimd.current_rate),
                ind.expected_delay,
                ind.fee,
                len(inbox[node.node_id]),
            ))
        ltp_total = sum(len(nd.ltp) for nd in self.nodes)
        self._samples.append((now, rows))
        self._sample_counts.append(
            (self._created, len(self._issued), ltp_total, self.scheduler.size, self._pending_total)
        )

    # ------------------------------------------------------------------ loop

    def run(self) -> SimResult:
        if self._ran:
            raise RuntimeError("a Simulation instance runs once")
        self._ran = True
        cfg = self.cfg
        end = cfg.duration
        self._build_static()
        self._on_publish(0.0)
        for m, user in enumerate(self.users):
            if user.send_rate > 0:
                self._push(self.user_rng[m].exponential(user.send_rate), ARRIVAL, m)

        # periodic events are generated from integer tick counters so their
        # instants do not drift
        periodic = []
        if cfg.aimd.enabled:
            periodic.append((AIMD, cfg.aimd.update_interval))
        periodic.append((PUBLISH, cfg.qos_publish_interval))
        periodic.append((SAMPLE, cfg.sample_interval))
        for kind, dt in periodic:
            self._push(dt, kind, 1)

        heap = self._heap
        pop = heapq.heappop
        dt_of = {kind: dt for kind, dt in periodic}
        while heap:
            t, _, kind, a, b = pop(heap)
            if t > end:
                break
            if kind == ARRIVAL:
                self._on_arrival(t, a)
            elif kind == ISSUE:
                self._on_issue(t, a, b)
            elif kind == SERVICE:
                self._on_service(t)
            else:
                if kind == AIMD:
                    self._on_aimd(t)
                elif kind == PUBLISH:
                    self._on_publish(t)
                else:
                    self._on_sample(t)
                self._push((a + 1) * dt_of[kind], kind, a + 1)
        return self._collect()

    def _collect(self) -> SimResult:
        cfg = self.cfg
        n = cfg.node_count
        txs = sorted(self._issued, key=lambda tx: (tx.issued_at, tx.id))
        tx_cols = {
            "tx_id": np.array([tx.id for tx in txs], dtype=np.int64),
            "user_id": np.array([tx.user_id for tx in txs], dtype=np.int64),
            "node_id": np.array([tx.node_id for tx in txs], dtype=np.int64),
            "created_at": np.array([tx.created_at for tx in txs], dtype=float),
            "enqueued_at": np.array([tx.enqueued_at for tx in txs], dtype=float),
            "issued_at": np.array([tx.issued_at for tx in txs], dtype=float),
            "fee_paid": np.array([tx.fee_paid for tx in txs], dtype=float),
        }
        tx_cols["delay"] = tx_cols["issued_at"] - tx_cols["enqueued_at"]
        tx_cols = {k: tx_cols[k] for k in TX_FIELDS}

        times = np.array([s[0] for s in self._samples], dtype=float)
        if self._samples:
            cube = np.array([s[1] for s in self._samples], dtype=float)
        else:
            cube = np.zeros((0, n, len(SERIES_FIELDS)))
        series = {name: cube[:, :, k] for k, name in enumerate(SERIES_FIELDS)}
        series["ltp_len"] = series["ltp_len"].astype(np.int64)
        series["inbox_len"] = series["inbox_len"].astype(np.int64)
        cnt = np.array(self._sample_counts, dtype=np.int64).reshape(-1, len(RATE_FIELDS))
        counts = {name: cnt[:, k] for k, name in enumerate(RATE_FIELDS)}

        return SimResult(
            config=cfg,
            seed=self.seed,
            reputations=self.rep.as_array(),
            transactions=tx_cols,
            sample_times=times,
            series=series,
            counts=counts,
            received=np.array(self._received, dtype=np.int64),
            received_post_warmup=np.array(self._received_post, dtype=np.int64),
            fees_collected=np.array([nd.cumulative_fees for nd in self.nodes]),
            created=self._created,
            deferred_tx=self._deferred_tx,
            pending_at_end=self._pending_total,
            in_ltp_at_end=sum(len(nd.ltp) for nd in self.nodes),
            in_scheduler_at_end=self.scheduler.size,
            meta={
                "config_hash": cfg.digest(),
                "seed": self.seed,
                "policy": cfg.policy.value,
                "load_fraction": cfg.load_fraction,
                "neighbour_degree": cfg.neighbour_degree,
                "version": __version__,
            },
        )


def run(config: NetworkConfig, seed: int | None = None) -> SimResult:
    return Simulation(config, seed).run()


def run_many(config: NetworkConfig, seeds) -> list[SimResult]:
    out = []
    for s in seeds:
        log.info("run policy=%s load=%.2f seed=%d", config.policy.value, config.load_fraction, s)
        out.append(run(config, s))
    return out


def scenario_config(config: NetworkConfig, scenario: Scenario | str) -> NetworkConfig:
    return config.with_(load_fraction=Scenario.parse(scenario).load_fraction)


def run_scenario(config: NetworkConfig, scenario: Scenario | str) -> list[SimResult]:
    """``mc_runs`` independent runs with seeds ``rng_seed + k`` at the scenario's load."""
    cfg = scenario_config(config, scenario)
    return run_many(cfg, range(cfg.rng_seed, cfg.rng_seed + cfg.mc_runs))
