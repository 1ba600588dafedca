from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_topology
from oracles import brute_force_cover, harmonic, neighborhood_links
from linkbait.errors import InvalidTau, KTooLarge, NoLgServers
from linkbait.sifting import (
    DefenderLinkmap,
    attack_cost,
    branch_links,
    greedy_select,
    group_bait_links,
    identify_target_links,
    lg_trace_all,
    read_path_corpus,
    write_path_corpus,
)
from linkbait.topology import TopologyProfile, synthesize_topology

# frozen from oracles.neighborhood_links
TRIANGLE_BRANCHES = {1, 2}
CHAIN_BRANCHES = {0, 1, 2, 4, 5, 6, 7, 8}
# frozen from oracles.brute_force_cover on the four-link example
EXAMPLE_OPT_WEIGHT = 0.75


def _linkmap(flows_by_link: dict, bandwidth: dict | None = None) -> DefenderLinkmap:
    universe = frozenset().union(*flows_by_link.values()) if flows_by_link else frozenset()
    return DefenderLinkmap(
        {l: frozenset(f) for l, f in flows_by_link.items()}, universe, {}, bandwidth or {}
    )


def test_single_path_densities():
    topo = make_topology(
        ["ingress", "core", "core", "egress", "core"],
        [(0, 1, 10), (1, 2, 10), (2, 3, 10), (1, 4, 10)],
        [("lg_server", 0), ("server", 3)],
    )
    lm = lg_trace_all(topo)
    on_path = [0, 1, 2]
    assert all(lm.density(l) == 1 for l in on_path)
    assert lm.density(3) == 0


def test_no_lg_servers(minimal):
    with pytest.raises(NoLgServers):
        lg_trace_all(minimal)


def test_lg_census_with_126_vantage_points():
    # 126 LG servers over the AS1-like map yield 603 paths
    topo = synthesize_topology(
        1, TopologyProfile(n_paths=603, mean_hops=12, n_lg_servers=126)
    )
    lm = lg_trace_all(topo)
    assert len(lm.flows) == 126
    assert lm.n_paths == 603


def test_target_ranking_tie_break():
    lm = _linkmap({1: set(range(10)), 2: {0, 1, 2}, 3: {3, 4, 5}})
    assert [t.link for t in identify_target_links(lm, 2)] == [1, 2]
    with pytest.raises(KTooLarge):
        identify_target_links(lm, 4)


def test_as3_like_top15_coverage():
    # AS3-like map reaches full coverage
    topo = synthesize_topology(1, TopologyProfile(n_paths=497, mean_hops=16))
    lm = lg_trace_all(topo)
    assert lm.top_coverage(15) == 1.0


def test_branch_set_in_diamond_is_the_parallel_pair():
    # ingress 0 -> egress 2 directly (target) and through core 1
    topo = make_topology(
        ["ingress", "core", "egress"], [(0, 2, 10), (0, 1, 10), (1, 2, 10)], [("server", 2)]
    )
    links = [(l.id, l.src, l.dst) for l in topo.links.values()]
    assert neighborhood_links(links, 0) == TRIANGLE_BRANCHES
    assert set(branch_links(topo, 0)) == TRIANGLE_BRANCHES


def test_branch_set_matches_hand_enumeration():
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (3, 8), (8, 5)]
    topo = make_topology(
        ["ingress"] + ["core"] * 6 + ["egress", "core"],
        [(a, b, 10) for a, b in edges],
        [("server", 7)],
    )
    links = [(l.id, l.src, l.dst) for l in topo.links.values()]
    assert neighborhood_links(links, 3) == CHAIN_BRANCHES
    assert set(branch_links(topo, 3)) == CHAIN_BRANCHES


def test_greedy_example_against_brute_force():
    a, b, c, d = 10, 11, 12, 13
    flows = {a: {1, 2, 3, 4}, b: {3, 4, 5}, c: {5, 6}, d: {1}}
    lm = _linkmap(flows)
    plan = group_bait_links(lm, 1.0, 1)
    assert plan.selection == [a, c]
    assert plan.coverage == 1.0
    opt, best_cov = brute_force_cover(lm.flows_by_link, lm.flows, 1.0)
    assert (opt, best_cov) == (EXAMPLE_OPT_WEIGHT, 1.0)
    greedy_weight = sum(1 / len(flows[l]) for l in plan.selection)
    assert greedy_weight <= harmonic(6) * opt + 1e-12


def test_tau_zero_is_empty():
    lm = _linkmap({1: {1, 2}, 2: {3}})
    plan = group_bait_links(lm, 0.0, 1)
    assert plan.bait_links == [] and plan.coverage == 0.0


def test_invalid_tau():
    with pytest.raises(InvalidTau):
        group_bait_links(_linkmap({1: {1}}), 1.5, 1)


def test_targets_are_not_bait_candidates():
    lm = _linkmap({1: {1, 2, 3}, 2: {1, 2}, 3: {3}}, {1: 10, 2: 10, 3: 10})
    targets = identify_target_links(lm, 1)
    plan = group_bait_links(lm, 1.0, 1, targets)
    members = {m for bait in plan.bait_links for m in bait.members}
    assert 1 not in members
    assert plan.coverage == 1.0


def test_coverage_trend_on_as_like_profile():
    topo = synthesize_topology(1, TopologyProfile(n_paths=603, mean_hops=12))
    lm = lg_trace_all(topo)
    covs = [group_bait_links(lm, 0.9, n).coverage for n in range(1, 9)]
    assert all(x >= y for x, y in zip(covs, covs[1:]))
    assert min(covs[:4]) >= 0.70


def test_attack_cost_arithmetic():
    cost = attack_cost(None, 10_000, 1, 3, 50)
    assert (cost.n_p, cost.n_b) == (10_000, 30_050)
    # three equal members: inflation from N_p to M N_p
    assert attack_cost(None, 100, 1, 1, 0, {0: [1, 1, 1]}).n_l[0] == 300
    assert attack_cost(None, 100, 1, 1, 0, {0: [0.5, 0.5]}).n_l[0] == 100
    assert attack_cost(None, 10, 3, 1, 0).n_p == 4
    with pytest.raises(ValueError):
        attack_cost(None, 10, 0, 1, 0)


def test_attack_cost_alphas_from_topology():
    lm = _linkmap({0: {1}, 1: {2}, 2: {3}}, {0: 20, 1: 10, 2: 10})
    plan = group_bait_links(lm, 1.0, 3)
    topo = make_topology(
        ["ingress", "ingress", "ingress", "egress"],
        [(0, 3, 20), (1, 3, 10), (2, 3, 10)],
        [("server", 3)],
    )
    cost = attack_cost(plan, 10, 1, 1, 0, topology=topo)
    assert cost.n_l == {0: 40.0}


def test_path_corpus_round_trip(tmp_path):
    topo = synthesize_topology(2, TopologyProfile(n_paths=30, mean_hops=5))
    lm = lg_trace_all(topo)
    path = tmp_path / "corpus.csv"
    write_path_corpus(lm, path)
    again = read_path_corpus(topo, path)
    assert again.flows_by_link == lm.flows_by_link
    assert again.n_paths == lm.n_paths


def test_plan_json_shape():
    lm = _linkmap({1: {1, 2}, 2: {3}, 3: {4}}, {1: 5, 2: 7, 3: 1})
    data = group_bait_links(lm, 1.0, 2).to_json()
    assert set(data) >= {"target_links", "bait_links", "coverage", "tau", "nl_th"}
    bait = data["bait_links"][0]
    assert set(bait) >= {"members", "converge", "density", "weight"}


# -- properties -------------------------------------------------------------------

instances = st.dictionaries(
    st.integers(0, 30),
    st.frozensets(st.integers(0, 15), min_size=0, max_size=10),
    min_size=1,
    max_size=12,
).filter(lambda d: any(d.values()))


@given(
    instances,
    st.sampled_from([0.3, 0.5, 0.8, 0.9, 1.0]),
    st.integers(1, 5),
    st.randoms(use_true_random=False),
)
def test_plan_invariants(flows, tau, nl_th, rnd):
    bw = {l: rnd.randint(1, 100) for l in flows}
    lm = _linkmap(flows, bw)
    k = rnd.randint(0, 2)
    targets = identify_target_links(lm, k) if k and sum(1 for f in flows.values() if f) > k else []
    plan = group_bait_links(lm, tau, nl_th, targets)
    seen: set[int] = set()
    covered: set[int] = set()
    for bait in plan.bait_links:
        assert not seen & set(bait.members), "member reused"
        seen |= set(bait.members)
        member_flows = frozenset().union(*(lm.flows_by_link[m] for m in bait.members))
        assert bait.flows == member_flows
        assert bait.weight * bait.density == bait.n
        assert bait.weight == Fraction(bait.n, bait.density)
        assert bait.n >= nl_th
        assert bw[bait.converge] == max(bw[m] for m in bait.members)
        covered |= bait.flows
    assert plan.coverage == pytest.approx(len(covered) / len(lm.flows))
    assert not {t.link for t in targets} & {b.converge for b in plan.bait_links}
    assert 0.0 <= plan.coverage <= 1.0


@given(instances, st.sampled_from([0.5, 0.8, 1.0]))
def test_coverage_non_increasing_in_nl_th(flows, tau):
    lm = _linkmap(flows)
    covs = [group_bait_links(lm, tau, n).coverage for n in range(1, 9)]
    assert all(x >= y - 1e-12 for x, y in zip(covs, covs[1:]))


@given(instances, st.sampled_from([0.5, 0.7, 0.9, 1.0]))
def test_greedy_within_harmonic_bound(flows, tau):
    lm = _linkmap(flows)
    chosen = greedy_select(lm.flows_by_link, lm.flows, tau)
    opt, best_cov = brute_force_cover(lm.flows_by_link, lm.flows, tau)
    covered = frozenset().union(*(lm.flows_by_link[l] for l in chosen)) if chosen else frozenset()
    if best_cov >= tau:
        assert len(covered) >= tau * len(lm.flows) - 1e-9
        weight = sum(1 / len(lm.flows_by_link[l]) for l in chosen)
        assert weight <= harmonic(len(lm.flows)) * opt + 1e-9
