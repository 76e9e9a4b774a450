"""Node state machine: broadcast decisions, deviation test, challenges, isolation."""

import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from wsnagg.fusion import Gaussian1D, fuse_local
from wsnagg.protocol import (
    ChallengeRequest,
    ChallengeResponse,
    EstimateBroadcast,
    IsolationAnnouncement,
    Node,
    ProtocolConfig,
    Verdict,
    deviates,
)

G = Gaussian1D
CFG = ProtocolConfig(warmup_s=0.0)
ABS = replace(CFG, threshold_mode="absolute", broadcast_threshold=0.5)


def star(center=0, leaves=(1, 2, 3, 4)):
    """Node ``center`` with leaves that do not hear each other."""
    return Node(center, leaves, {n: {center} for n in leaves})


def clique(ids, me):
    others = [i for i in ids if i != me]
    return Node(me, others, {n: set(ids) - {n} for n in others})


def with_global(node, est):
    node.global_est = est
    node.prev_local = est
    node.talk_after = 0.0
    return node


# configuration

def test_config_validation():
    ProtocolConfig().validate()
    for bad in (dict(threshold_mode="percent"), dict(deviation_sigma=0), dict(min_responders=0),
                dict(challenge_window=0), dict(deviation_scale="sender"),
                dict(sharp_fall_threshold=-1.0)):
        with pytest.raises(ValueError):
            replace(ProtocolConfig(), **bad).validate()


def test_self_challenge_rejected():
    with pytest.raises(ValueError):
        ChallengeRequest(3, 0.0, 3)


def test_message_destinations():
    est = G(25, 1)
    assert EstimateBroadcast(1, 0.0, est).dest is None
    assert ChallengeRequest(1, 0.0, 2).dest is None
    assert IsolationAnnouncement(1, 0.0, 2).dest is None
    assert ChallengeResponse(4, 0.0, 1, 2, est).dest == 1


# decide_broadcast

def test_decide_absolute_examples():
    n = star(0, (1, 2))
    n.neighbor_table = {1: G(25.0, 1)}
    n.blacklist = {2}
    assert n.decide_broadcast(G(25.6, 1), ABS)
    n.neighbor_table = {1: G(25.0, 1), 2: G(25.5, 1)}
    n.blacklist = set()
    assert not n.decide_broadcast(G(25.4, 1), ABS)


def test_decide_empty_table_broadcasts():
    assert star().decide_broadcast(G(0.0, 1), ABS)


def test_decide_ignores_blacklisted_neighbours():
    n = star(0, (1, 2))
    n.neighbor_table = {1: G(25.0, 1)}
    n.blacklist = {2}
    assert not n.decide_broadcast(G(25.2, 1), ABS)


def test_decide_relative_two_percent():
    n = star(0, (1,))
    n.neighbor_table = {1: G(25.0, 1)}
    assert not n.decide_broadcast(G(25.5, 1), CFG)     # exactly 2 %
    assert n.decide_broadcast(G(25.51, 1), CFG)


# on_sense

def test_first_reading_becomes_estimate_and_is_broadcast():
    n = star()
    out = n.on_sense(G(25.0, 1), CFG, 0.0)
    assert n.global_est == G(25.0, 1)
    assert [type(m) for m in out] == [EstimateBroadcast]
    assert all(n.neighbor_table[i] == G(25.0, 1) for i in n.one_hop)


def test_warmup_delays_first_broadcast():
    n = star()
    cfg = replace(CFG, warmup_s=0.5)
    assert n.on_sense(G(25.0, 1), cfg, 1.0) == []
    assert n.flush_broadcast(cfg, 1.49) == []
    assert len(n.flush_broadcast(cfg, 1.5)) == 1


def test_small_change_is_not_broadcast():
    n = star()
    n.on_sense(G(25.0, 1), CFG, 0.0)
    assert n.on_sense(G(25.05, 1), CFG, 0.5) == []
    assert n.global_est == fuse_local(G(25.05, 1), G(25.0, 1), G(25.0, 1), CFG.fusion)


def test_large_rise_is_broadcast():
    n = star()
    n.on_sense(G(25.0, 1), CFG, 0.0)
    out = n.on_sense(G(30.0, 1), CFG, 0.5)
    assert len(out) == 1 and out[0].est.mean == pytest.approx(30.0, abs=0.1)
    assert n.prev_local == G(30.0, 1)


def test_dead_node_is_inert():
    n = Node(0, (1,), {1: {0}}, energy_j=0.0)
    assert not n.alive
    assert n.on_sense(G(25.0, 1), CFG, 0.0) == []
    assert n.on_receive_estimate(1, G(25, 1), CFG, 0.0) == []
    assert n.on_challenge_request(1, 2, 0.0) == []


def test_energy_debit_kills_at_zero():
    n = Node(0, (1,), {1: {0}}, energy_j=1.0)
    assert n.debit(0.4) == 0.4
    assert n.debit(1.0) == pytest.approx(0.6)
    assert not n.alive and n.energy_j == 0.0
    assert n.debit(1.0) == 0.0


# on_receive_estimate

def test_close_estimate_is_fused():
    n = with_global(star(), G(25.0, 1.0))
    out = n.on_receive_estimate(1, G(25.5, 0.8), CFG, 0.0)
    assert n.global_est == G(25.5, 0.8)
    assert n.neighbor_table[1] == G(25.5, 0.8)
    assert not n.pending
    assert not any(isinstance(m, ChallengeRequest) for m in out)


def test_deviant_estimate_is_quarantined_and_challenged():
    n = with_global(star(), G(25.0, 1.0))
    out = n.on_receive_estimate(1, G(40.0, 1.0), CFG, 2.0)
    assert out == [ChallengeRequest(0, 2.0, 1)]
    assert n.global_est == G(25.0, 1.0)
    assert 1 not in n.neighbor_table
    ch = n.pending[1]
    assert ch.quarantined_est == G(40.0, 1.0) and ch.deadline == 2.0 + CFG.challenge_window
    # a second deviant message from the same suspect does not open another challenge
    assert n.on_receive_estimate(1, G(41.0, 1.0), CFG, 2.1) == []


def test_security_off_fuses_everything():
    n = with_global(star(), G(25.0, 1.0))
    n.on_receive_estimate(1, G(40.0, 0.5), replace(CFG, security=False), 0.0)
    assert n.global_est == G(40.0, 0.5) and not n.pending


def test_unknown_and_blacklisted_senders_dropped():
    n = with_global(star(), G(25.0, 1.0))
    assert n.on_receive_estimate(99, G(25.0, 0.5), CFG, 0.0) == []
    assert n.unknown_sender_drops == 1
    n.blacklist.add(1)
    n.on_receive_estimate(1, G(25.2, 0.5), CFG, 0.0)
    assert n.global_est == G(25.0, 1.0)


def test_pooled_deviation_scale():
    assert CFG.deviation_scale == "pooled"
    recv = replace(CFG, deviation_scale="receiver")
    g = G(25.0, 1.0)
    assert deviates(g, G(28.5, 1.0), recv)
    assert not deviates(g, G(28.5, 1.0), CFG)         # 3.5 < 3 * sqrt(2)
    assert deviates(g, G(40.0, 1.0), CFG)


def test_triangle_two_hop_suppression():
    a, b, c = 0, 1, 2
    nodes = {i: clique((a, b, c), i) for i in (a, b, c)}
    for i in (b, c):
        with_global(nodes[i], G(25.0, 1.0))
        nodes[i].neighbor_table = {j: G(25.0, 1.0) for j in (a, b, c) if j != i}
    est = G(26.0, 0.8)
    out_b = nodes[b].on_receive_estimate(a, est, CFG, 0.0)
    out_c = nodes[c].on_receive_estimate(a, est, CFG, 0.0)
    assert out_b == [] and out_c == []
    assert nodes[b].neighbor_table[c] == est
    # control: without two-hop knowledge both relay
    off = replace(CFG, two_hop=False)
    for i in (b, c):
        with_global(nodes[i], G(25.0, 1.0))
        nodes[i].neighbor_table = {j: G(25.0, 1.0) for j in (a, b, c) if j != i}
    assert len(nodes[b].on_receive_estimate(a, est, off, 0.0)) == 1
    assert len(nodes[c].on_receive_estimate(a, est, off, 0.0)) == 1


# challenges

def test_challenge_request_answered_with_global():
    n = with_global(star(), G(25.0, 1.0))
    assert n.on_challenge_request(1, 2, 0.3) == [ChallengeResponse(0, 0.3, 1, 2, G(25.0, 1.0))]
    n.blacklist.add(1)
    assert n.on_challenge_request(1, 2, 0.3) == []


def test_suspect_and_uninformed_nodes_do_not_respond():
    n = with_global(star(), G(25.0, 1.0))
    assert n.on_challenge_request(1, 0, 0.0) == []
    assert star().on_challenge_request(1, 2, 0.0) == []


def _challenged(quarantined):
    n = with_global(star(), G(25.0, 1.0))
    n.on_receive_estimate(1, quarantined, replace(CFG, deviation_sigma=0.1), 0.0)
    assert 1 in n.pending
    return n


def test_malicious_verdict_blacklists_and_announces():
    n = _challenged(G(40.0, 1.0))
    for r, m in zip((2, 3, 4), (25.1, 24.9, 25.0)):
        n.on_challenge_response(r, 1, G(m, 1.0))
    n.on_challenge_response(5, 1, G(25.0, 1.0))  # not a neighbour: still a responder here
    out, verdict = n.resolve_challenge(1, CFG, 0.5)
    assert verdict is Verdict.MALICIOUS
    assert out == [IsolationAnnouncement(0, 0.5, 1)]
    assert 1 in n.blacklist and n.global_est == G(25.0, 1.0)


def test_innocent_verdict_fuses_quarantined():
    n = _challenged(G(27.0, 0.9))
    for r, m in zip((2, 3, 4), (26.8, 27.1, 26.9)):
        n.on_challenge_response(r, 1, G(m, 1.0))
    out, verdict = n.resolve_challenge(1, CFG, 0.5)
    assert verdict is Verdict.INNOCENT
    assert n.global_est == G(27.0, 0.9) and n.neighbor_table[1] == G(27.0, 0.9)
    assert 1 not in n.blacklist


def test_quorum_not_met_is_inconclusive():
    n = _challenged(G(40.0, 1.0))
    n.on_challenge_response(2, 1, G(25.0, 1.0))
    out, verdict = n.resolve_challenge(1, replace(CFG, min_responders=2), 0.5)
    assert verdict is Verdict.INCONCLUSIVE and out == []
    assert n.global_est == G(25.0, 1.0) and 1 not in n.blacklist


def test_tie_is_not_a_majority():
    n = _challenged(G(40.0, 1.0))
    n.on_challenge_response(2, 1, G(25.0, 1.0))
    n.on_challenge_response(3, 1, G(40.0, 1.0))
    _, verdict = n.resolve_challenge(1, CFG, 0.5)
    assert verdict is Verdict.INNOCENT


def test_suspect_response_excluded():
    n = _challenged(G(40.0, 1.0))
    n.on_challenge_response(1, 1, G(40.0, 1.0))
    assert n.pending[1].responses == {}


def test_resolve_unknown_challenge():
    assert star().resolve_challenge(7, CFG, 0.0) == ([], None)


# isolation

def test_isolation_examples():
    n = with_global(star(), G(25.0, 1.0))
    n.neighbor_table[2] = G(25.0, 1.0)
    n.on_isolation(1, 2)
    assert 2 in n.blacklist and 2 not in n.neighbor_table
    n.on_isolation(1, 2)
    assert n.blacklist == {2}
    n.on_isolation(2, 3)         # announcer now blacklisted
    assert 3 not in n.blacklist
    n.on_isolation(1, 0)         # never blacklists itself
    assert 0 not in n.blacklist


def test_isolation_cancels_pending_challenge():
    n = _challenged(G(40.0, 1.0))
    n.on_isolation(2, 1)
    assert 1 not in n.pending and 1 in n.blacklist


# properties

@settings(max_examples=200, deadline=None)
@given(g=st.floats(15, 35), incoming=st.lists(st.tuples(st.integers(1, 4), st.floats(0, 60),
                                                         st.floats(0.3, 3)), max_size=30))
def test_quarantine_safety_and_blacklist_monotone(g, incoming):
    n = with_global(star(), G(g, 1.0))
    seen = set()
    for sender, mean, std in incoming:
        before = n.global_est
        had_pending = set(n.pending)
        n.on_receive_estimate(sender, G(mean, std), CFG, 0.0)
        if sender in n.pending and sender not in had_pending:
            assert n.global_est == before
        assert seen <= n.blacklist
        seen = set(n.blacklist)
        if mean > 45:
            n.on_isolation(3 if sender != 3 else 4, sender)


@settings(max_examples=100, deadline=None)
@given(seq=st.lists(st.tuples(st.floats(20, 30), st.floats(0.5, 2)), min_size=1, max_size=20))
def test_transitions_are_deterministic(seq):
    a, b = star(), star()
    for t, (m, s) in enumerate(seq):
        assert a.on_sense(G(m, s), CFG, t) == b.on_sense(G(m, s), CFG, t)
        assert a.on_receive_estimate(1, G(m + 1, s), CFG, t) == b.on_receive_estimate(1, G(m + 1, s), CFG, t)
    assert a.global_est == b.global_est and a.neighbor_table == b.neighbor_table
