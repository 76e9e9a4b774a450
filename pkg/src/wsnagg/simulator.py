"""Deterministic discrete-event simulation of the aggregation protocol.

The radio is an ideal broadcast disc: every transmission reaches all
one-hop neighbours ``msg_airtime_s`` later, each copy independently lost
with ``radio_loss_prob``.  Challenge responses are unicast to the
challenger.  There is no MAC contention model.

Random streams are derived from ``rng_seed`` with :class:`numpy.random.SeedSequence`
so that topology, field samples, attacker choice and channel loss do not
perturb one another.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .fusion import Gaussian1D
from .metrics import Metrics, detection_stats
from .protocol import (ChallengeRequest, ChallengeResponse, EstimateBroadcast,
                       IsolationAnnouncement, Node, ProtocolConfig, Verdict)

log = logging.getLogger(__name__)

ATTACK_MODES = ("constant-offset", "random-liar", "stuck-value", "framer")

# stream ids for SeedSequence spawning
_TOPOLOGY, _FIELD, _ATTACKERS, _PHASE, _CHANNEL, _ATTACK, _MAC = range(7)

SENSE, DELIVER, DEADLINE, SNAPSHOT, ATTACK_START, SEND, FLUSH = range(7)


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class AttackConfig:
    compromised_fraction: float = 0.0
    mode: str = "constant-offset"
    offset_sigmas: float = 10.0
    start_time_s: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_nodes: int = 160
    sim_time_s: float = 200.0
    area_m: Tuple[float, float] = (120.0, 120.0)
    tx_range_m: float = 15.0
    initial_energy_j: float = 5.0
    tx_power_w: float = 0.75
    rx_power_w: float = 0.25
    sense_power_w: float = 0.010
    sampling_period_s: float = 0.5
    buffer_capacity: int = 5
    field_mean: float = 25.0
    field_std: float = 1.0
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    radio_loss_prob: float = 0.0
    msg_airtime_s: float = 0.002
    # random channel-access delay before each transmission; 0 sends at once
    mac_backoff_s: float = 0.02
    accuracy_tol: float = 1.0
    rng_seed: int = 1

    @property
    def send_change_fraction(self) -> float:
        return self.protocol.broadcast_threshold

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=seed)

    def validate(self) -> None:
        if not isinstance(self.n_nodes, int) or self.n_nodes < 1:
            raise ConfigError("n_nodes", "must be a positive integer")
        positive = ("sim_time_s", "tx_range_m", "initial_energy_j", "tx_power_w",
                    "rx_power_w", "sense_power_w", "sampling_period_s", "field_std",
                    "msg_airtime_s", "accuracy_tol")
        for key in positive:
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(key, f"must be positive, got {v!r}")
        if len(self.area_m) != 2 or min(self.area_m) <= 0:
            raise ConfigError("area_m", "must be two positive side lengths")
        if not isinstance(self.buffer_capacity, int) or self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity", "must be a positive integer")
        if not math.isfinite(self.field_mean):
            raise ConfigError("field_mean", "must be finite")
        if not (math.isfinite(self.mac_backoff_s) and self.mac_backoff_s >= 0):
            raise ConfigError("mac_backoff_s", "must be non-negative")
        if not 0.0 <= self.radio_loss_prob <= 1.0:
            raise ConfigError("radio_loss_prob", "must lie in [0, 1]")
        a = self.attack
        if not 0.0 <= a.compromised_fraction <= 1.0:
            raise ConfigError("compromised_fraction", "must lie in [0, 1]")
        if a.mode not in ATTACK_MODES:
            raise ConfigError("attack_mode", f"must be one of {', '.join(ATTACK_MODES)}")
        if not a.offset_sigmas > 0:
            raise ConfigError("offset_sigmas", "must be positive")
        if a.start_time_s < 0:
            raise ConfigError("attack_start_s", "must be non-negative")
        try:
            self.protocol.validate()
        except ValueError as exc:
            raise ConfigError("protocol", str(exc)) from None


def _rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, *extra]))


@dataclass
class Topology:
    positions: np.ndarray
    one_hop: Dict[int, FrozenSet[int]]
    two_hop: Dict[int, Dict[int, FrozenSet[int]]]

    @property
    def n(self) -> int:
        return len(self.positions)

    def degrees(self) -> np.ndarray:
        return np.array([len(self.one_hop[i]) for i in range(self.n)])

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        stack = [0]
        while stack:
            for m in self.one_hop[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == self.n


def topology_from_positions(positions, tx_range_m: float) -> Topology:
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
    adj = d2 <= tx_range_m * tx_range_m
    np.fill_diagonal(adj, False)
    one_hop = {i: frozenset(int(j) for j in np.flatnonzero(adj[i])) for i in range(n)}
    two_hop = {i: {m: one_hop[m] for m in one_hop[i]} for i in range(n)}
    return Topology(pos, one_hop, two_hop)


def generate_topology(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None,
                      positions=None) -> Topology:
    """Uniform random placement; ``positions`` pins nodes instead (tests)."""
    if positions is None:
        if rng is None:
            rng = _rng(cfg.rng_seed, _TOPOLOGY)
        w, h = cfg.area_m
        positions = rng.uniform(0.0, 1.0, size=(cfg.n_nodes, 2)) * np.array([w, h])
    return topology_from_positions(positions, cfg.tx_range_m)


def inject_compromise(cfg: AttackConfig, nodes: Sequence[int],
                      rng: np.random.Generator) -> Set[int]:
    k = int(math.floor(cfg.compromised_fraction * len(nodes) + 1e-9))
    if k == 0:
        return set()
    chosen = rng.choice(len(nodes), size=k, replace=False)
    return {int(nodes[i]) for i in chosen}


class FieldModel:
    """Spatially uniform i.i.d. Gaussian temperature field.

    Each node owns an independent stream, so ``sample(node, k)`` depends only
    on ``(seed, node, k)``.
    """

    def __init__(self, seed: int, n_nodes: int, n_samples: int, mean: float, std: float):
        self.mean = mean
        self.std = std
        self._draws = [
            _rng(seed, _FIELD, i).normal(mean, std, size=n_samples).tolist()
            for i in range(n_nodes)
        ]

    def sample(self, node: int, k: int) -> Gaussian1D:
        return Gaussian1D(self._draws[node][k], self.std)


def field_sample(cfg: ScenarioConfig, node: int, k: int) -> Gaussian1D:
    """One reading of ``node`` at sampling index ``k``; pure function of the seed."""
    draws = _rng(cfg.rng_seed, _FIELD, node).normal(cfg.field_mean, cfg.field_std, size=k + 1)
    return Gaussian1D(float(draws[k]), cfg.field_std)


class EventTrace:
    """Processed events as ``(time, kind, node, peers, summary)`` records.

    ``write_jsonl`` streams one JSON object per line with keys ``t``,
    ``kind``, ``node``, ``peers`` and ``info``.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: List[tuple] = []

    def add(self, t: float, kind: str, node: int, peers: Tuple[int, ...] = (), info: str = ""):
        if self.enabled:
            self.records.append((t, kind, node, peers, info))

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, EventTrace) and self.records == other.records

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t, kind, node, peers, info in self.records:
                fh.write(json.dumps({"t": t, "kind": kind, "node": node,
                                     "peers": list(peers), "info": info},
                                    separators=(",", ":")))
                fh.write("\n")


def _summary(msg) -> str:
    if isinstance(msg, EstimateBroadcast):
        return f"estimate {msg.est.mean:.6g}/{msg.est.std:.6g}"
    if isinstance(msg, ChallengeRequest):
        return f"challenge suspect={msg.suspect}"
    if isinstance(msg, ChallengeResponse):
        return f"response suspect={msg.suspect} {msg.est.mean:.6g}"
    return f"isolate suspect={msg.suspect}"


MESSAGE_KINDS = {EstimateBroadcast: "estimate", ChallengeRequest: "challenge_request",
                 ChallengeResponse: "challenge_response", IsolationAnnouncement: "isolation"}


class Simulation:
    """One scenario run.  Use :func:`run` unless the internals are needed."""

    def __init__(self, cfg: ScenarioConfig, positions=None, record_trace: bool = True):
        cfg.validate()
        self.cfg = cfg
        seed = cfg.rng_seed
        self.topology = generate_topology(cfg, positions=positions)
        n = self.topology.n
        self.nodes = [
            Node(i, self.topology.one_hop[i], self.topology.two_hop[i], cfg.initial_energy_j)
            for i in range(n)
        ]
        self.compromised = inject_compromise(cfg.attack, list(range(n)), _rng(seed, _ATTACKERS))
        self.n_samples = int(math.ceil(cfg.sim_time_s / cfg.sampling_period_s)) + 1
        self.field = FieldModel(seed, n, self.n_samples, cfg.field_mean, cfg.field_std)
        self.phases = _rng(seed, _PHASE).uniform(0.0, cfg.sampling_period_s, size=n).tolist()
        self._channel = random.Random(int(_rng(seed, _CHANNEL).integers(2 ** 63)))
        self._mac = random.Random(int(_rng(seed, _MAC).integers(2 ** 63)))
        self._flush_pending = [False] * n
        if cfg.mac_backoff_s > 0:
            for node in self.nodes:
                node.defer_broadcasts = True
        self._attack_rng = {i: _rng(seed, _ATTACK, i) for i in sorted(self.compromised)}
        self.trace = EventTrace(record_trace)

        self._queue: list = []
        self._seq = 0
        self.now = 0.0
        self.inbox = [0] * n
        self.energy_tx = [0.0] * n
        self.energy_rx = [0.0] * n
        self.energy_sense = [0.0] * n
        self.messages_by_type = {k: 0 for k in MESSAGE_KINDS.values()}
        self.packets_sent = 0
        self.packets_received = 0
        self.loss_drops = 0
        self.buffer_drops = 0
        self.dead_drops = 0
        self.receive_events = 0
        self.challenges_issued = 0
        self.verdicts = {v.value: 0 for v in Verdict}
        self.true_max = -math.inf
        self.accuracy_trace: List[Tuple[float, float, float, float]] = []
        self.max_inbox = 0

    # scheduling

    def _push(self, t: float, kind: int, payload) -> None:
        heapq.heappush(self._queue, (t, self._seq, kind, payload))
        self._seq += 1

    def _attacking(self, node: int) -> bool:
        return node in self.compromised and self.now >= self.cfg.attack.start_time_s

    # radio

    def _emit(self, sender: int, messages) -> None:
        """Hand messages to the radio; with backoff they wait for channel access."""
        backoff = self.cfg.mac_backoff_s
        if backoff <= 0.0:
            if messages:
                self._transmit(sender, messages)
            return
        uniform = self._mac.uniform
        for msg in messages:
            self._push(self.now + uniform(0.0, backoff), SEND, (sender, (msg,)))
        if self.nodes[sender].wants_broadcast and not self._flush_pending[sender]:
            self._flush_pending[sender] = True
            self._push(self.now + uniform(0.0, backoff), FLUSH, sender)

    def _flush(self, sender: int) -> None:
        self._flush_pending[sender] = False
        out = self.nodes[sender].flush_broadcast(self.cfg.protocol, self.now)
        if out:
            self._transmit(sender, out)

    def _transmit(self, sender: int, messages: Iterable) -> None:
        cfg = self.cfg
        node = self.nodes[sender]
        for msg in messages:
            if not node.alive:
                return
            if isinstance(msg, ChallengeRequest) and msg.suspect in node.blacklist:
                continue
            self.energy_tx[sender] += node.debit(cfg.tx_power_w * cfg.msg_airtime_s)
            if not node.alive:
                return
            kind = MESSAGE_KINDS[type(msg)]
            self.messages_by_type[kind] += 1
            if isinstance(msg, ChallengeRequest):
                self.challenges_issued += 1
                self._push(self.now + cfg.protocol.challenge_window, DEADLINE,
                           (sender, msg.suspect))
            targets = node.one_hop if msg.dest is None else (msg.dest,)
            recipients = []
            for to in targets:
                if not self.nodes[to].alive:
                    continue
                self.packets_sent += 1
                if cfg.radio_loss_prob > 0.0 and self._channel.random() < cfg.radio_loss_prob:
                    self.loss_drops += 1
                    continue
                if self.inbox[to] >= cfg.buffer_capacity:
                    self.buffer_drops += 1
                    continue
                self.inbox[to] += 1
                if self.inbox[to] > self.max_inbox:
                    self.max_inbox = self.inbox[to]
                recipients.append(to)
            if self.trace.enabled:
                self.trace.add(self.now, "send", sender, tuple(recipients), _summary(msg))
            if recipients:
                self._push(self.now + cfg.msg_airtime_s, DELIVER, (msg, tuple(recipients)))

    def _deliver(self, msg, recipients: Tuple[int, ...]) -> None:
        cfg = self.cfg
        rx_cost = cfg.rx_power_w * cfg.msg_airtime_s
        proto = cfg.protocol
        now = self.now
        nodes = self.nodes
        sender = msg.sender
        kind = type(msg)
        for to in recipients:
            self.inbox[to] -= 1
            node = nodes[to]
            if not node.alive:
                self.dead_drops += 1
                continue
            if node.energy_j > rx_cost:
                node.energy_j -= rx_cost
                self.energy_rx[to] += rx_cost
            else:
                self.energy_rx[to] += node.debit(rx_cost)
            if not node.alive:
                self.dead_drops += 1
                continue
            self.packets_received += 1
            if kind is EstimateBroadcast:
                self.receive_events += 1
                out = node.on_receive_estimate(sender, msg.est, proto, now)
            elif kind is ChallengeRequest:
                out = node.on_challenge_request(sender, msg.suspect, now) if proto.security else []
            elif kind is ChallengeResponse:
                node.on_challenge_response(sender, msg.suspect, msg.est)
                out = []
            else:
                if proto.security:
                    node.on_isolation(sender, msg.suspect)
                out = []
            if out or node.wants_broadcast:
                self._emit(to, out)

    # sensing

    def _reading(self, i: int, k: int) -> Tuple[Gaussian1D, bool]:
        honest = self.field.sample(i, k)
        if not self._attacking(i):
            return honest, True
        a = self.cfg.attack
        mu, sd = self.cfg.field_mean, self.cfg.field_std
        if a.mode == "constant-offset":
            return Gaussian1D(mu + a.offset_sigmas * sd, sd), False
        if a.mode == "random-liar":
            lie = float(self._attack_rng[i].uniform(mu - 20.0 * sd, mu + 20.0 * sd))
            return Gaussian1D(lie, sd), False
        if a.mode == "stuck-value":
            return self.field.sample(i, 0), k == 0
        return honest, True

    def _start_attack(self) -> None:
        # data liars stop policing their neighbours; framers keep the honest logic
        if self.cfg.attack.mode != "framer":
            for i in self.compromised:
                self.nodes[i].runs_security = False
        self.trace.add(self.now, "attack_start", -1, tuple(sorted(self.compromised)),
                       self.cfg.attack.mode)

    def _sense(self, i: int, k: int) -> None:
        cfg = self.cfg
        node = self.nodes[i]
        if not node.alive:
            return
        self.energy_sense[i] += node.debit(cfg.sense_power_w * cfg.sampling_period_s)
        if not node.alive:
            return
        reading, genuine = self._reading(i, k)
        if genuine and reading.mean > self.true_max:
            self.true_max = reading.mean
        if self.trace.enabled:
            self.trace.add(self.now, "sense", i, (), f"{reading.mean:.6g}")
        out = node.on_sense(reading, cfg.protocol, self.now)
        if (cfg.attack.mode == "framer" and cfg.protocol.security and self._attacking(i)):
            honest = [m for m in node.one_hop if m not in self.compromised]
            if honest:
                victim = honest[int(self._attack_rng[i].integers(len(honest)))]
                out = list(out) + [IsolationAnnouncement(i, self.now, victim)]
        self._emit(i, out)
        t_next = self.phases[i] + (k + 1) * cfg.sampling_period_s
        if k + 1 < self.n_samples and t_next <= cfg.sim_time_s:
            self._push(t_next, SENSE, (i, k + 1))

    def _snapshot(self) -> None:
        errs = []
        for node in self.nodes:
            if node.id in self.compromised or not node.alive or node.global_est is None:
                continue
            errs.append(abs(node.global_est.mean - self.true_max))
        if not errs or not math.isfinite(self.true_max):
            return
        tol = self.cfg.accuracy_tol
        within = sum(1 for e in errs if e <= tol) / len(errs)
        self.accuracy_trace.append((self.now, max(errs), sum(errs) / len(errs), within))

    # main loop

    def run(self) -> Tuple[Metrics, EventTrace]:
        cfg = self.cfg
        for i, ph in enumerate(self.phases):
            self._push(ph, SENSE, (i, 0))
        t = cfg.sampling_period_s
        while t <= cfg.sim_time_s + 1e-9:
            self._push(t, SNAPSHOT, None)
            t += cfg.sampling_period_s
        if self.compromised:
            self._push(cfg.attack.start_time_s, ATTACK_START, None)

        queue = self._queue
        end = cfg.sim_time_s
        while queue and queue[0][0] <= end:
            t, _, kind, payload = heapq.heappop(queue)
            self.now = t
            if kind == SENSE:
                self._sense(*payload)
            elif kind == DELIVER:
                self._deliver(*payload)
            elif kind == DEADLINE:
                node_id, suspect = payload
                out, verdict = self.nodes[node_id].resolve_challenge(suspect, cfg.protocol, t)
                if verdict is not None:
                    self.verdicts[verdict.value] += 1
                    self.trace.add(t, "verdict", node_id, (suspect,), verdict.value)
                self._emit(node_id, out)
            elif kind == SEND:
                self._transmit(*payload)
            elif kind == FLUSH:
                self._flush(payload)
            elif kind == SNAPSHOT:
                self._snapshot()
            else:
                self._start_attack()
        # packets still in the air at the end were neither received nor lost
        for _, _, kind, payload in queue:
            if kind == DELIVER:
                for to in payload[1]:
                    self.inbox[to] -= 1
                    self.packets_sent -= 1
        return self._metrics(), self.trace

    def _metrics(self) -> Metrics:
        cfg = self.cfg
        n = self.topology.n
        blacklists = {node.id: set(node.blacklist) for node in self.nodes}
        det = detection_stats(blacklists, self.compromised)
        consumed = [cfg.initial_energy_j - node.energy_j for node in self.nodes]
        convergence = math.nan
        for t, _, _, within in self.accuracy_trace:
            if within >= 0.95:
                convergence = t
                break
        return Metrics(
            seed=cfg.rng_seed,
            security=cfg.protocol.security,
            n_nodes=n,
            compromised=tuple(sorted(self.compromised)),
            positions=[tuple(map(float, p)) for p in self.topology.positions],
            energy_consumed=consumed,
            energy_tx=list(self.energy_tx),
            energy_rx=list(self.energy_rx),
            energy_sense=list(self.energy_sense),
            alive=[node.alive for node in self.nodes],
            flagged_by=det.flagged_by,
            messages_by_type=dict(self.messages_by_type),
            packets_sent=self.packets_sent,
            packets_received=self.packets_received,
            loss_drops=self.loss_drops,
            buffer_drops=self.buffer_drops,
            dead_drops=self.dead_drops,
            receive_events=self.receive_events,
            challenges_issued=self.challenges_issued,
            verdicts=dict(self.verdicts),
            unknown_sender_drops=sum(node.unknown_sender_drops for node in self.nodes),
            true_positives=det.true_positives,
            false_positives=det.false_positives,
            false_negatives=det.false_negatives,
            detection_rate=det.detection_rate,
            fp_rate=det.fp_rate,
            fn_rate=det.fn_rate,
            accuracy_trace=list(self.accuracy_trace),
            convergence_time_s=convergence,
            connected=self.topology.is_connected(),
            final_true_max=self.true_max,
        )


def run(cfg: ScenarioConfig, positions=None, record_trace: bool = True) -> Tuple[Metrics, EventTrace]:
    """Run one scenario; identical ``cfg`` gives identical metrics and trace."""
    sim = Simulation(cfg, positions=positions, record_trace=record_trace)
    log.debug("seed %d: %d nodes, %d compromised", cfg.rng_seed, sim.topology.n, len(sim.compromised))
    return sim.run()
