"""Per-node protocol: sensing, estimate exchange, broadcast suppression and
the challenge / majority-vote / isolation security procedure.

A :class:`Node` owns its state and is driven by the simulator.  Every
handler mutates the node and returns the messages it wants transmitted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple, Union

from .estimate import ci_scalar_omega
from .fusion import FusionConfig, Gaussian1D, fuse_local

THRESHOLD_MODES = ("absolute", "relative")
# which spread scales the deviation test: the receiver's own std, or the std
# of the difference of two independent estimates
DEVIATION_SCALES = ("receiver", "pooled")


@dataclass(frozen=True)
class ProtocolConfig:
    broadcast_threshold: float = 0.02
    threshold_mode: str = "relative"
    deviation_sigma: float = 3.0
    deviation_scale: str = "pooled"
    # None: 3 std of the global estimate
    sharp_fall_threshold: Optional[float] = None
    hard_truncate: bool = False
    challenge_window: float = 0.5
    min_responders: int = 2
    security: bool = True
    two_hop: bool = True
    # listen-only time after the first reading: the node does not broadcast yet
    warmup_s: float = 0.5

    def validate(self) -> None:
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.deviation_scale not in DEVIATION_SCALES:
            raise ValueError(f"deviation_scale must be one of {DEVIATION_SCALES}")
        for name in ("broadcast_threshold", "deviation_sigma", "challenge_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sharp_fall_threshold is not None and not self.sharp_fall_threshold > 0:
            raise ValueError("sharp_fall_threshold must be positive")
        if self.min_responders < 1:
            raise ValueError("min_responders must be >= 1")

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.sharp_fall_threshold, self.hard_truncate)


# Messages. ``dest`` is None for radio broadcasts.

@dataclass(frozen=True)
class EstimateBroadcast:
    sender: int
    time: float
    est: Gaussian1D
    dest = None

    @property
    def origin(self) -> int:
        return self.sender


@dataclass(frozen=True)
class ChallengeRequest:
    sender: int
    time: float
    suspect: int
    dest = None

    def __post_init__(self):
        if self.suspect == self.sender:
            raise ValueError("a node cannot challenge itself")

    @property
    def challenger(self) -> int:
        return self.sender


@dataclass(frozen=True)
class ChallengeResponse:
    sender: int
    time: float
    challenger: int
    suspect: int
    est: Gaussian1D

    @property
    def responder(self) -> int:
        return self.sender

    @property
    def dest(self) -> int:
        return self.challenger


@dataclass(frozen=True)
class IsolationAnnouncement:
    sender: int
    time: float
    suspect: int
    dest = None

    @property
    def announcer(self) -> int:
        return self.sender


Message = Union[EstimateBroadcast, ChallengeRequest, ChallengeResponse, IsolationAnnouncement]


class Verdict(enum.Enum):
    MALICIOUS = "malicious"
    INNOCENT = "innocent"
    INCONCLUSIVE = "inconclusive"


@dataclass
class Challenge:
    suspect: int
    quarantined_est: Gaussian1D
    created: float
    deadline: float
    responses: Dict[int, Gaussian1D] = field(default_factory=dict)


def deviates(ref: Gaussian1D, other: Gaussian1D, cfg: ProtocolConfig) -> bool:
    """3-sigma style test of ``other`` against the reference estimate ``ref``."""
    if cfg.deviation_scale == "pooled":
        scale = math.sqrt(ref.var + other.var)
    else:
        scale = ref.std
    return abs(other.mean - ref.mean) > cfg.deviation_sigma * scale


class Node:
    """Protocol state of a single sensor node."""

    def __init__(self, node_id: int, one_hop, two_hop: Optional[Dict[int, Set[int]]] = None,
                 energy_j: float = math.inf):
        self.id = node_id
        self.one_hop: Tuple[int, ...] = tuple(sorted(one_hop))
        self.two_hop: Dict[int, frozenset] = {
            n: frozenset((two_hop or {}).get(n, ())) for n in self.one_hop
        }
        self._one_hop_set = frozenset(self.one_hop)
        # neighbours that share each neighbour's radio range
        self._common: Dict[int, Tuple[int, ...]] = {
            s: tuple(n for n in self.one_hop if n != s and s in self.two_hop[n])
            for s in self.one_hop
        }
        self.global_est: Optional[Gaussian1D] = None
        self.prev_local: Optional[Gaussian1D] = None
        self.neighbor_table: Dict[int, Gaussian1D] = {}
        self.blacklist: Set[int] = set()
        self.pending: Dict[int, Challenge] = {}
        self.energy_j = energy_j
        self.alive = energy_j > 0
        self.unknown_sender_drops = 0
        # when set, broadcast decisions are only flagged and taken later by
        # flush_broadcast (the radio is waiting for channel access)
        self.defer_broadcasts = False
        self.wants_broadcast = False
        self.talk_after = math.inf
        # cleared for nodes whose owner no longer runs the security checks
        self.runs_security = True

    def __repr__(self):
        return f"Node({self.id}, est={self.global_est}, alive={self.alive})"

    # energy

    def debit(self, joules: float) -> float:
        """Charge ``joules``; returns the amount actually drawn.  Kills the node at 0 J."""
        if not self.alive:
            return 0.0
        drawn = min(joules, self.energy_j)
        self.energy_j -= drawn
        if self.energy_j <= 0.0:
            self.energy_j = 0.0
            self.alive = False
        return drawn

    # broadcast decision

    def decide_broadcast(self, new_est: Gaussian1D, cfg: ProtocolConfig) -> bool:
        relative = cfg.threshold_mode == "relative"
        threshold = cfg.broadcast_threshold
        mean = new_est.mean
        table = self.neighbor_table
        blacklist = self.blacklist
        for n in self.one_hop:
            known = table.get(n)
            if known is None:
                if n in blacklist:
                    continue
                return True
            diff = abs(mean - known.mean)
            if relative:
                ref = abs(known.mean)
                if ref == 0.0:
                    if diff > 0.0 and n not in blacklist:
                        return True
                    continue
                if diff / ref > threshold and n not in blacklist:
                    return True
            elif diff > threshold and n not in blacklist:
                return True
        return False

    def _maybe_broadcast(self, cfg: ProtocolConfig, now: float) -> List[Message]:
        if self.defer_broadcasts:
            self.wants_broadcast = True
            return []
        return self.flush_broadcast(cfg, now)

    def flush_broadcast(self, cfg: ProtocolConfig, now: float) -> List[Message]:
        """Broadcast the current estimate if some neighbour still needs it."""
        self.wants_broadcast = False
        est = self.global_est
        if not self.alive or now < self.talk_after:
            return []
        if est is None or not self.decide_broadcast(est, cfg):
            return []
        for n in self.one_hop:
            if n not in self.blacklist:
                self.neighbor_table[n] = est
        return [EstimateBroadcast(self.id, now, est)]

    # handlers

    def on_sense(self, reading: Gaussian1D, cfg: ProtocolConfig, now: float) -> List[Message]:
        if not self.alive:
            return []
        if self.global_est is None:
            self.global_est = reading
            self.talk_after = now + cfg.warmup_s
        else:
            self.global_est = fuse_local(reading, self.global_est, self.prev_local, cfg.fusion)
        self.prev_local = reading
        return self._maybe_broadcast(cfg, now)

    def _fuse(self, est: Gaussian1D) -> None:
        g = self.global_est
        if ci_scalar_omega(g.mean, g.var, est.mean, est.var) == 0.0:
            self.global_est = est

    def _attribute(self, sender: int, est: Gaussian1D, cfg: ProtocolConfig) -> None:
        table = self.neighbor_table
        table[sender] = est
        if not cfg.two_hop:
            return
        # common neighbours heard the same broadcast
        blacklist = self.blacklist
        for n in self._common[sender]:
            if n not in blacklist:
                table[n] = est

    def on_receive_estimate(self, sender: int, est: Gaussian1D, cfg: ProtocolConfig,
                            now: float) -> List[Message]:
        if not self.alive or sender in self.blacklist:
            return []
        if sender not in self._one_hop_set:
            self.unknown_sender_drops += 1
            return []
        g = self.global_est
        if g is None:
            # nothing to compare against before the first reading
            self.neighbor_table[sender] = est
            return []
        if cfg.security and self.runs_security and deviates(g, est, cfg):
            if sender in self.pending:
                return []
            self.pending[sender] = Challenge(sender, est, now, now + cfg.challenge_window)
            return [ChallengeRequest(self.id, now, sender)]
        self._fuse(est)
        self._attribute(sender, est, cfg)
        return self._maybe_broadcast(cfg, now)

    def on_challenge_request(self, challenger: int, suspect: int, now: float) -> List[Message]:
        if not self.alive or challenger in self.blacklist or suspect == self.id:
            return []
        if self.global_est is None:
            return []
        return [ChallengeResponse(self.id, now, challenger, suspect, self.global_est)]

    def on_challenge_response(self, responder: int, suspect: int, est: Gaussian1D) -> None:
        if not self.alive or responder in self.blacklist or responder == suspect:
            return
        ch = self.pending.get(suspect)
        if ch is not None:
            ch.responses[responder] = est

    def resolve_challenge(self, suspect: int, cfg: ProtocolConfig,
                          now: float) -> Tuple[List[Message], Optional[Verdict]]:
        ch = self.pending.pop(suspect, None)
        if ch is None or not self.alive:
            return [], None
        n = len(ch.responses)
        if n < cfg.min_responders:
            return [], Verdict.INCONCLUSIVE
        disagree = sum(
            1 for r in ch.responses.values()
            if deviates(r, ch.quarantined_est, cfg)
        )
        if 2 * disagree > n:
            self.blacklist.add(suspect)
            self.neighbor_table.pop(suspect, None)
            return [IsolationAnnouncement(self.id, now, suspect)], Verdict.MALICIOUS
        if self.global_est is None:
            self.global_est = ch.quarantined_est
        else:
            self._fuse(ch.quarantined_est)
        self.neighbor_table[suspect] = ch.quarantined_est
        return self._maybe_broadcast(cfg, now), Verdict.INNOCENT

    def on_isolation(self, announcer: int, suspect: int) -> None:
        if (not self.alive or not self.runs_security or announcer in self.blacklist
                or suspect == self.id):
            return
        self.blacklist.add(suspect)
        self.neighbor_table.pop(suspect, None)
        self.pending.pop(suspect, None)
