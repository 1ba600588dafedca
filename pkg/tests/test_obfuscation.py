import csv
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import deep_fan_topology, layered_descriptors, make_topology
from linkbait.errors import NoBranchAvailable
from linkbait.obfuscation import (
    ObfuscationState,
    Scope,
    adversary_view,
    apply_reroute,
    inspect_ingress,
    rules_from_plan,
)
from linkbait.sifting import (
    BaitLink,
    SiftingPlan,
    TargetLink,
    group_bait_links,
    identify_target_links,
    lg_trace_all,
)
from linkbait.topology import build_topology, route
from linkbait.traffic import (
    Flow,
    FlowKind,
    ProbePacket,
    TcpPacket,
    World,
    emulate_traceroute,
)


def _plan(targets=(), baits=()) -> SiftingPlan:
    return SiftingPlan(list(targets), list(baits), 0.0, 0.0, 1)


def _probe(fid: int, src: int, dst: int, path: list[int]) -> Flow:
    return Flow(fid, src, dst, FlowKind.PROBE, 1, list(path), label="probe")


# -- identification -------------------------------------------------------------


def test_varying_ttl_flags_on_third_packet(minimal):
    state = ObfuscationState(minimal)
    directives = [
        inspect_ingress(state, ProbePacket(0, 0, 1, ttl, 33434, tick))
        for tick, ttl in enumerate((1, 2, 3))
    ]
    assert directives[:2] == [None, None]
    assert directives[2] is not None and directives[2].tick == 2
    assert state.probers[0].flagged_tick == 2


def test_stable_tcp_is_never_flagged(minimal):
    state = ObfuscationState(minimal)
    for tick in range(500):
        assert inspect_ingress(state, TcpPacket(0, 0, 1, 17, 443, tick)) is None
    assert not state.is_labeled(0)


def test_fixed_ttl_with_invalid_ports_is_flagged(minimal):
    # header randomization keeps the invalid-port trait
    state = ObfuscationState(minimal)
    out = [inspect_ingress(state, ProbePacket(0, 0, 1, 5, 40_000, t)) for t in range(3)]
    assert out[-1] is not None
    rec = state.probers[0]
    assert rec.distinct_ttls_seen == 1 and rec.invalid_port_hits == 3


def test_varying_ttl_with_valid_ports_is_not_flagged(minimal):
    state = ObfuscationState(minimal)
    for t, ttl in enumerate(range(1, 20)):
        inspect_ingress(state, ProbePacket(0, 0, 1, ttl, 443, t))
    assert not state.is_labeled(0)


@given(st.lists(st.tuples(st.integers(1, 64), st.integers(1, 65535)), max_size=40))
def test_flag_requires_evidence(packets):
    topo = make_topology(["ingress", "egress"], [(0, 1, 10)], [("bot", 0), ("server", 1)])
    state = ObfuscationState(topo)
    for t, (ttl, port) in enumerate(packets):
        inspect_ingress(state, ProbePacket(0, 0, 1, ttl, port, t))
    rec = state.probers.get(0)
    if rec is not None and rec.flagged:
        assert rec.invalid_port_hits >= 1
        assert rec.distinct_ttls_seen >= 3 or rec.invalid_port_hits >= 3


# -- rerouting --------------------------------------------------------------------


def test_bait_member_probe_goes_through_converge(fan):
    bait = BaitLink(0, (1, 2, 3), 3, frozenset({0}))
    state = ObfuscationState(fan, _plan(baits=[bait]))
    flow = _probe(0, 0, 1, route(fan, 0, 1))
    assert flow.path == [0, 1, 4]
    path, first = state.effective_path(flow)
    assert path == [0, 3, 6]
    assert first == 1
    assert fan.routers_on(0, path) == [0, 1, 4, 5]
    assert apply_reroute(state, flow, 1) == [3, 6]


def test_unlabeled_flow_is_untouched(fan):
    bait = BaitLink(0, (1, 2, 3), 3, frozenset({0}))
    state = ObfuscationState(fan, _plan(baits=[bait]))
    tcp = Flow(0, 2, 1, FlowKind.TCP_LIKE, 1, route(fan, 2, 1))
    assert state.effective_path(tcp) == ([0, 1, 4], None)
    assert apply_reroute(state, tcp, 1) == [1, 4]


def test_branch_sampling_is_uniform():
    # ingress 0 -> core 1 -> {2..6} -> egress 7; target 1->2, four branches
    kinds = ["ingress", "core"] + ["core"] * 5 + ["egress"]
    links = [(0, 1, 10)] + [(1, c, 10) for c in range(2, 7)] + [(c, 7, 10) for c in range(2, 7)]
    topo = make_topology(kinds, links, [("bot", 0), ("server", 7)])
    target = topo.link_between(1, 2)
    branches = tuple(topo.link_between(1, c) for c in range(3, 7))
    state = ObfuscationState(topo, _plan(targets=[TargetLink(target, 1, branches)]), seed=42)
    real = route(topo, 0, 1)
    counts = Counter()
    for fid in range(1000):
        path, _ = state.effective_path(_probe(fid, 0, 1, real))
        assert target not in path
        counts[next(l for l in path if l in branches)] += 1
    assert set(counts) == set(branches)
    assert all(200 <= c <= 300 for c in counts.values()), counts


def test_empty_branch_set_is_a_configuration_error(fan):
    state = ObfuscationState(fan, _plan(targets=[TargetLink(1, 1, ())]))
    with pytest.raises(NoBranchAvailable):
        state.effective_path(_probe(0, 0, 1, route(fan, 0, 1)))


def test_cascade_target_to_bait_converge(fan):
    # the only branch of target 1 is bait member 2, whose converge is 3
    target = TargetLink(1, 1, (2,))
    bait = BaitLink(0, (2, 3), 3, frozenset({0}))
    state = ObfuscationState(fan, _plan([target], [bait]))
    path, _ = state.effective_path(_probe(0, 0, 1, route(fan, 0, 1)))
    assert path == [0, 3, 6]
    assert [m for _f, m, _v in state.reroutes] == [1, 2]


def test_repeated_traces_vary_at_the_rerouting_hop():
    topo = deep_fan_topology(branches=3)
    target = topo.link_between(3, 4)
    branches = (topo.link_between(3, 5), topo.link_between(3, 6))
    state = ObfuscationState(topo, _plan(targets=[TargetLink(target, 1, branches)]), seed=0)
    w = World(topo, seed=0, defense=state)
    seen = set()
    for _ in range(30):
        res = emulate_traceroute(w, 0, 1)
        assert 4 not in res.routers
        seen.add(res.routers[4])
    assert seen == {5, 6}


def test_rule_and_prober_dumps(tmp_path, fan):
    target = TargetLink(1, 1, (2, 3))
    bait = BaitLink(0, (4, 5), 5, frozenset({0}))
    state = ObfuscationState(fan, _plan([target], [bait]))
    w = World(fan, defense=state)
    emulate_traceroute(w, 0, 1)
    state.dump_rules(tmp_path / "rules.csv")
    state.dump_probers(tmp_path / "probers.csv")
    rules = list(csv.reader(open(tmp_path / "rules.csv")))
    assert rules[0] == ["scope", "match_link", "action"]
    assert rules[1] == ["target_link", "1", "branch:2;3"]
    assert rules[2] == ["bait_member", "4", "converge:5"]
    probers = list(csv.DictReader(open(tmp_path / "probers.csv")))
    assert probers[0]["flagged_tick"] == "2"


def test_rules_follow_plan():
    target = TargetLink(9, 3, (1, 2))
    bait = BaitLink(0, (4, 5, 6), 6, frozenset({1}))
    rules = rules_from_plan(_plan([target], [bait]))
    assert rules[9].scope is Scope.TARGET_LINK and rules[9].branches == (1, 2)
    assert {l for l, r in rules.items() if r.scope is Scope.BAIT_MEMBER} == {4, 5}
    assert rules[4].converge == 6


@given(layered_descriptors(max_layers=4), st.integers(0, 1000))
def test_rerouted_probes_keep_their_destination(desc, seed):
    topo = build_topology(desc)
    lm = lg_trace_all(topo, [e.id for e in topo.endpoints.values() if e.role.value != "server"])
    k = min(2, sum(1 for f in lm.flows_by_link.values() if f))
    # a target without branches is a configuration error, tested separately
    targets = [t for t in identify_target_links(lm, k, topo) if t.branches]
    plan = group_bait_links(lm, 1.0, 2, targets)
    state = ObfuscationState(topo, plan, seed=seed)
    host = next(e.id for e in topo.endpoints.values() if e.role.value != "server")
    start = topo.endpoint(host).attach
    for fid, server in enumerate(topo.servers()):
        real = route(topo, host, server.id)
        tcp = Flow(10_000 + fid, host, server.id, FlowKind.TCP_LIKE, 1, list(real))
        assert state.effective_path(tcp)[0] == real
        path, _ = state.effective_path(_probe(fid, host, server.id, real))
        routers = topo.routers_on(start, path)
        assert routers[-1] == server.attach
        assert len(routers) == len(set(routers))
        for a, b in zip(path, path[1:]):
            assert topo.links[a].dst == topo.links[b].src


# -- adversary view ------------------------------------------------------------------


def _adversary_world(defended: bool, n_bots: int = 6):
    """Deep fan whose densest link is the target; bait baits the other branches."""
    topo = deep_fan_topology(n_bots=n_bots, branches=3, bw=[10, 10, 20])
    target = topo.link_between(3, 4)
    b5, b6 = topo.link_between(3, 5), topo.link_between(3, 6)
    plan = _plan([TargetLink(target, n_bots, (b5,))], [BaitLink(0, (b5, b6), b6, frozenset({0}))])
    state = ObfuscationState(topo, plan, seed=1) if defended else None
    w = World(topo, seed=1, defense=state)
    server = topo.servers()[0].id
    for bot in range(n_bots):
        emulate_traceroute(w, bot, server)
    return topo, target, b6, adversary_view(w, range(n_bots))


def test_undefended_view_ranks_the_true_target():
    _topo, target, _c, view = _adversary_world(False)
    assert target in view.ranking()
    assert view.bot_count(target) == 6
    assert view.bot_count(target) == max(view.bot_count(l) for l in view.ranking())


def test_defended_view_displaces_the_target():
    topo, target, converge, view = _adversary_world(True)
    ranking = view.ranking()
    assert target not in ranking
    assert converge in ranking
    assert view.bot_count(converge) == 6
    k = len(ranking)
    assert target not in ranking[:k]
