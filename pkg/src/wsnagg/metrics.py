"""Evaluation quantities of a run and their serialisation.

Summary files are plain ``key = value`` lines, one scalar per line, in a
fixed order.  Floats are written with 9 significant digits; ``nan`` marks
an undefined value (e.g. no convergence).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Set, Tuple

NODE_COLUMNS = ("id", "x", "y", "energy_j", "energy_tx_j", "energy_rx_j",
                "energy_sense_j", "alive", "flagged_by", "compromised")
TRACE_COLUMNS = ("time_s", "max_abs_error", "mean_abs_error", "frac_within_tol")


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".9g")


@dataclass
class Detection:
    true_positives: int
    false_positives: int
    false_negatives: int
    detection_rate: float
    fp_rate: float
    fn_rate: float
    flagged_by: Dict[int, int]


def detection_stats(blacklists: Mapping[int, Set[int]], compromised: Iterable[int]) -> Detection:
    """Score final blacklists against the true compromised set.

    Only blacklists held by honest nodes count.  ``blacklists`` must have
    one entry per node in the network.
    """
    compromised = set(compromised)
    honest = [n for n in blacklists if n not in compromised]
    flagged_by = {n: 0 for n in blacklists}
    for h in honest:
        for s in blacklists[h]:
            if s in flagged_by:
                flagged_by[s] += 1
    tp = sum(1 for c in compromised if flagged_by.get(c, 0) > 0)
    fp = sum(1 for h in honest if flagged_by[h] > 0)
    fn = len(compromised) - tp
    nc, nh = len(compromised), len(honest)
    return Detection(
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        detection_rate=tp / nc if nc else 0.0,
        fp_rate=fp / nh if nh else 0.0,
        fn_rate=fn / nc if nc else 0.0,
        flagged_by=flagged_by,
    )


@dataclass
class Metrics:
    seed: int
    security: bool
    n_nodes: int
    compromised: Tuple[int, ...]
    positions: List[Tuple[float, float]]
    energy_consumed: List[float]
    energy_tx: List[float]
    energy_rx: List[float]
    energy_sense: List[float]
    alive: List[bool]
    flagged_by: Dict[int, int]
    messages_by_type: Dict[str, int]
    packets_sent: int
    packets_received: int
    loss_drops: int
    buffer_drops: int
    dead_drops: int
    receive_events: int
    challenges_issued: int
    verdicts: Dict[str, int]
    unknown_sender_drops: int
    true_positives: int
    false_positives: int
    false_negatives: int
    detection_rate: float
    fp_rate: float
    fn_rate: float
    accuracy_trace: List[Tuple[float, float, float, float]] = field(default_factory=list)
    convergence_time_s: float = math.nan
    connected: bool = False
    final_true_max: float = math.nan

    @property
    def delivery_ratio(self) -> float:
        """Received over sent, counted per intended recipient."""
        return self.packets_received / self.packets_sent if self.packets_sent else 1.0

    @property
    def mean_energy_j(self) -> float:
        return sum(self.energy_consumed) / len(self.energy_consumed)

    def frac_within_at(self, t: float) -> float:
        """Fraction of honest nodes within tolerance at the last snapshot <= ``t``."""
        best = math.nan
        for time, _, _, within in self.accuracy_trace:
            if time > t + 1e-9:
                break
            best = within
        return best

    def scalars(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "seed": self.seed,
            "security": self.security,
            "n_nodes": self.n_nodes,
            "n_compromised": len(self.compromised),
            "connected": self.connected,
            "mean_energy_j": self.mean_energy_j,
            "total_energy_j": sum(self.energy_consumed),
            "alive_at_end": sum(self.alive),
        }
        for kind, count in self.messages_by_type.items():
            out[f"messages_{kind}"] = count
        out.update(
            packets_sent=self.packets_sent,
            packets_received=self.packets_received,
            delivery_ratio=self.delivery_ratio,
            loss_drops=self.loss_drops,
            buffer_drops=self.buffer_drops,
            dead_drops=self.dead_drops,
            receive_events=self.receive_events,
            unknown_sender_drops=self.unknown_sender_drops,
            challenges_issued=self.challenges_issued,
        )
        for verdict, count in self.verdicts.items():
            out[f"verdicts_{verdict}"] = count
        out.update(
            true_positives=self.true_positives,
            false_positives=self.false_positives,
            false_negatives=self.false_negatives,
            detection_rate=self.detection_rate,
            fp_rate=self.fp_rate,
            fn_rate=self.fn_rate,
            convergence_time_s=self.convergence_time_s,
            final_true_max=self.final_true_max,
        )
        if self.accuracy_trace:
            _, max_err, mean_err, within = self.accuracy_trace[-1]
        else:
            max_err = mean_err = within = math.nan
        out.update(final_max_abs_error=max_err, final_mean_abs_error=mean_err,
                   final_frac_within_tol=within)
        return out


@dataclass
class Overhead:
    energy_overhead_pct: float
    delivery_ratio_delta: float
    secure_mean_energy_j: float
    baseline_mean_energy_j: float


def overhead_report(secure: Metrics, baseline: Metrics) -> Overhead:
    """Energy overhead (%) and delivery-ratio change of the security module."""
    if secure.seed != baseline.seed or secure.n_nodes != baseline.n_nodes:
        raise ValueError("secure and baseline runs must share seed and network size")
    if secure.positions != baseline.positions:
        raise ValueError("secure and baseline runs used different topologies")
    es, eb = secure.mean_energy_j, baseline.mean_energy_j
    return Overhead(
        energy_overhead_pct=100.0 * (es - eb) / eb if eb > 0 else math.nan,
        delivery_ratio_delta=secure.delivery_ratio - baseline.delivery_ratio,
        secure_mean_energy_j=es,
        baseline_mean_energy_j=eb,
    )


def atomic_write(path, write) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        write(fh)
    os.replace(tmp, path)


def write_csv(metrics: Metrics, nodes_path, trace_path) -> None:
    """Per-node table and accuracy time series."""
    compromised = set(metrics.compromised)

    def nodes(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_COLUMNS)
        for i in range(metrics.n_nodes):
            x, y = metrics.positions[i]
            w.writerow([i, fmt(x), fmt(y), fmt(metrics.energy_consumed[i]),
                        fmt(metrics.energy_tx[i]), fmt(metrics.energy_rx[i]),
                        fmt(metrics.energy_sense[i]), fmt(metrics.alive[i]),
                        metrics.flagged_by.get(i, 0), fmt(i in compromised)])

    def trace(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in metrics.accuracy_trace:
            w.writerow([fmt(v) for v in row])

    atomic_write(nodes_path, nodes)
    atomic_write(trace_path, trace)


def write_summary(metrics: Metrics, path) -> None:
    def body(fh):
        for key, value in metrics.scalars().items():
            fh.write(f"{key} = {fmt(value)}\n")
    atomic_write(path, body)


def write_table(rows: List[Dict[str, object]], path) -> None:
    """CSV from a list of equally keyed dicts (column order from the first row)."""
    def body(fh):
        w = csv.writer(fh, lineterminator="\n")
        if not rows:
            return
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in cols])
    atomic_write(path, body)


def read_summary(path) -> Dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = float(value)
    return out
