"""Delay statistics and plot-ready export of simulation results."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .engine import SimResult
from .model import config_to_dict

DEFAULT_BIN_WIDTH = 1.0
PERCENTILES = (50, 90, 95, 99)

TRANSACTION_HEADER = ("policy", "seed", "tx_id", "user_id", "node_id", "created_at",
                      "enqueued_at", "issued_at", "delay", "fee_paid")
NODE_SERIES_HEADER = ("policy", "seed", "time", "node_id", "ltp_len", "issue_rate",
                      "filtered_rate", "adv_delay", "fee", "reputation", "inbox_len")
SENDING_RATE_HEADER = ("policy", "seed", "time", "created", "issued", "send_rate", "issue_rate",
                       "deferred_pending")

_INT_COLUMNS = {"seed", "tx_id", "user_id", "node_id", "ltp_len", "inbox_len",
                "created", "issued", "deferred_pending"}


class ExportError(OSError):
    pass


# ------------------------------------------------------------------ histogram

@dataclass(frozen=True)
class DelayHistogram:
    """Counts of delays in half-open bins ``[k*w, (k+1)*w)`` starting at 0."""

    bin_width: float
    counts: np.ndarray
    total: int

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.counts.size + 1) * self.bin_width

    @property
    def max_delay(self) -> float:
        return float(self.counts.size * self.bin_width)

    def density(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(self.counts.size)
        return self.counts / (self.total * self.bin_width)

    def mode(self) -> float:
        """Lower edge of the fullest bin (nan when empty)."""
        if self.total == 0:
            return math.nan
        return float(np.argmax(self.counts) * self.bin_width)

    def mean(self) -> float:
        """Mean of the binned distribution, taking each bin at its midpoint."""
        if self.total == 0:
            return math.nan
        mids = (np.arange(self.counts.size) + 0.5) * self.bin_width
        return float(np.dot(mids, self.counts) / self.total)


def compute_histogram(delays: Sequence[float] | np.ndarray, bin_width: float = DEFAULT_BIN_WIDTH) -> DelayHistogram:
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    d = np.asarray(delays, dtype=float).ravel()
    if d.size == 0:
        return DelayHistogram(float(bin_width), np.zeros(0, dtype=np.int64), 0)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("delays must be finite and >= 0")
    idx = np.floor(d / bin_width).astype(np.int64)
    return DelayHistogram(float(bin_width), np.bincount(idx), int(d.size))


# -------------------------------------------------------------------- summary

@dataclass
class SummaryStats:
    policy: str
    load_fraction: float
    runs: int
    seeds: list[int]
    transactions: int
    mean_delay: float
    delay_variance: float
    percentiles: dict[str, float]
    per_node_mean_delay: list[float]
    traffic_share: list[float]
    fees_per_node: list[float]
    deferred_fraction: float
    demand_rate: float
    throughput: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def _nan_to_none(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _nan_to_none(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def summarize(results: Sequence[SimResult]) -> SummaryStats:
    """Pool post-warm-up delays over runs that share one policy and load."""
    if not results:
        raise ValueError("nothing to summarize")
    policies = {r.config.policy for r in results}
    loads = {r.config.load_fraction for r in results}
    if len(policies) > 1 or len(loads) > 1:
        raise ValueError("summarize expects runs of a single policy and load")
    first = results[0]
    n = first.reputations.size
    delays = np.concatenate([r.delays() for r in results])
    if delays.size:
        pct = {f"p{q}": float(v) for q, v in zip(PERCENTILES, np.percentile(delays, PERCENTILES))}
        mean, var = float(delays.mean()), float(delays.var())
    else:
        pct = {f"p{q}": math.nan for q in PERCENTILES}
        mean = var = math.nan

    sums = np.zeros(n)
    cnts = np.zeros(n)
    for r in results:
        m = r.post_warmup_mask()
        tx = r.transactions
        sums += np.bincount(tx["node_id"][m], weights=tx["delay"][m], minlength=n)
        cnts += np.bincount(tx["node_id"][m], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_node = np.where(cnts > 0, sums / np.maximum(cnts, 1), np.nan)
    received = np.sum([r.received_post_warmup for r in results], axis=0)
    share = received / received.sum() if received.sum() else np.zeros(n)
    fees = np.mean([r.fees_collected for r in results], axis=0)
    created = sum(r.created for r in results)
    deferred = sum(r.deferred_tx for r in results)
    return SummaryStats(
        policy=first.config.policy.value,
        load_fraction=first.config.load_fraction,
        runs=len(results),
        seeds=[r.seed for r in results],
        transactions=int(delays.size),
        mean_delay=mean,
        delay_variance=var,
        percentiles=pct,
        per_node_mean_delay=per_node.tolist(),
        traffic_share=share.tolist(),
        fees_per_node=fees.tolist(),
        deferred_fraction=deferred / created if created else 0.0,
        demand_rate=float(np.mean([r.demand_rate() for r in results])),
        throughput=float(np.mean([r.throughput() for r in results])),
    )


def group_results(results: Iterable[SimResult]) -> dict[tuple[str, float], list[SimResult]]:
    groups: dict[tuple[str, float], list[SimResult]] = defaultdict(list)
    for r in results:
        groups[(r.config.policy.value, r.config.load_fraction)].append(r)
    return {k: sorted(v, key=lambda r: r.seed) for k, v in sorted(groups.items())}


def summarize_all(results: Iterable[SimResult]) -> list[SummaryStats]:
    return [summarize(g) for g in group_results(results).values()]


def compare_table(summaries: Sequence[SummaryStats]) -> str:
    """Plain-text table with one row per summary."""
    head = ("policy", "load", "runs", "tx", "mean", "var", "p50", "p95", "p99", "deferred")
    rows = [head]
    for s in summaries:
        p = s.percentiles
        rows.append((
            s.policy, f"{s.load_fraction:.2f}", str(s.runs), str(s.transactions),
            _fmt(s.mean_delay), _fmt(s.delay_variance), _fmt(p["p50"]), _fmt(p["p95"]),
            _fmt(p["p99"]), _fmt(s.deferred_fraction),
        ))
    widths = [max(len(r[k]) for r in rows) for k in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


# --------------------------------------------------------------------- export

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


def _ordered(results: Iterable[SimResult]) -> list[SimResult]:
    return [r for group in group_results(results).values() for r in group]


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _transaction_rows(r: SimResult):
    tx = r.transactions
    pol = r.config.policy.value
    cols = [tx[k].tolist() for k in TRANSACTION_HEADER[2:]]
    for vals in zip(*cols):
        yield (pol, r.seed, *vals)


def _series_rows(r: SimResult):
    pol = r.config.policy.value
    s = r.series
    reps = r.reputations.tolist()
    names = ("ltp_len", "issue_rate", "filtered_rate", "adv_delay", "fee")
    for k, t in enumerate(r.sample_times.tolist()):
        cols = [s[name][k].tolist() for name in names]
        inbox = s["inbox_len"][k].tolist()
        for j in range(len(reps)):
            yield (pol, r.seed, t, j, *(c[j] for c in cols), reps[j], inbox[j])


def sending_rate_series(r: SimResult) -> dict[str, np.ndarray]:
    """Aggregate user sending rate and issue rate per sample interval."""
    t = r.sample_times
    created = r.counts["created"]
    issued = r.counts["issued"]
    prev_t = np.concatenate(([0.0], t[:-1]))
    dt = np.where(t > prev_t, t - prev_t, np.nan)
    return {
        "time": t,
        "created": created,
        "issued": issued,
        "send_rate": np.diff(created, prepend=0) / dt,
        "issue_rate": np.diff(issued, prepend=0) / dt,
        "deferred_pending": r.counts["deferred_pending"],
    }


def _sending_rows(r: SimResult):
    s = sending_rate_series(r)
    cols = [s[k].tolist() for k in SENDING_RATE_HEADER[2:]]
    for vals in zip(*cols):
        yield (r.config.policy.value, r.seed, *vals)


def run_metadata(results: Sequence[SimResult]) -> dict:
    return {
        "version": __version__,
        "runs": [
            {**r.meta, "config": config_to_dict(r.config)}
            for r in results
        ],
    }


def export(results: Sequence[SimResult], out_dir: str | Path) -> list[Path]:
    """Write transactions, node series, sending rate, summary and metadata files.

    Runs are ordered by (policy, load, seed); within a run, rows follow
    (time, id). Floats carry 6 significant digits.
    """
    out = Path(out_dir)
    ordered = _ordered(results)
    paths = {name: out / name for name in
             ("transactions.csv", "node_series.csv", "sending_rate.csv", "summary.json", "run_meta.json")}
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(paths["transactions.csv"], TRANSACTION_HEADER,
                   (row for r in ordered for row in _transaction_rows(r)))
        _write_csv(paths["node_series.csv"], NODE_SERIES_HEADER,
                   (row for r in ordered for row in _series_rows(r)))
        _write_csv(paths["sending_rate.csv"], SENDING_RATE_HEADER,
                   (row for r in ordered for row in _sending_rows(r)))
        summary = [s.to_dict() for s in summarize_all(ordered)]
        paths["summary.json"].write_text(json.dumps({"summaries": summary}, indent=2, sort_keys=True) + "\n")
        paths["run_meta.json"].write_text(json.dumps(run_metadata(ordered), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        where = exc.filename or out
        raise ExportError(exc.errno, f"cannot write results to {where}: {exc.strerror}", str(where)) from exc
    return list(paths.values())


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Load an exported CSV into columns (integers where the schema says so)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols: dict[str, np.ndarray] = {}
    for k, name in enumerate(header):
        vals = [row[k] for row in rows]
        if name == "policy":
            cols[name] = np.array(vals, dtype=object)
        elif name in _INT_COLUMNS:
            cols[name] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            cols[name] = np.array([float(v) for v in vals], dtype=float)
    return cols


def rounded(x: np.ndarray) -> np.ndarray:
    """Values as they read back after export at 6 significant digits."""
    return np.array([float(f"{v:.6g}") for v in np.asarray(x, dtype=float).ravel()])
