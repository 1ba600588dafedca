from __future__ import annotations

from typing import Sequence

import pytest
from hypothesis import settings
from hypothesis import strategies as st

from linkbait.topology import Topology, build_topology

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_topology(
    kinds: Sequence[str],
    links: Sequence[tuple[int, int, int] | tuple[int, int, int, int]],
    endpoints: Sequence[tuple[str, int]],
) -> Topology:
    """Routers get ids by position. Links are ``(src, dst, bw)`` with sequential
    ids, or ``(id, src, dst, bw)``. Endpoints get ids by position."""
    link_rows = []
    for i, spec in enumerate(links):
        lid, src, dst, bw = spec if len(spec) == 4 else (i, *spec)
        link_rows.append({"id": lid, "src": src, "dst": dst, "bandwidth": bw})
    return build_topology(
        {
            "routers": [{"id": i, "kind": k} for i, k in enumerate(kinds)],
            "links": link_rows,
            "endpoints": [
                {"id": i, "role": role, "attach": at} for i, (role, at) in enumerate(endpoints)
            ],
        }
    )


@pytest.fixture
def minimal() -> Topology:
    """ingress 0 -> egress 1 over link 0; host 0, server 1."""
    return make_topology(
        ["ingress", "egress"], [(0, 1, 10)], [("legitimate_host", 0), ("server", 1)]
    )


@pytest.fixture
def diamond() -> Topology:
    """Five routers, three equal-length branches with scrambled link ids.

    0 -> {1, 2, 3} -> 4. Branch via 1 is links [5, 1], via 2 is [2, 6],
    via 3 is [7, 3].
    """
    return make_topology(
        ["ingress", "core", "core", "core", "egress"],
        [(5, 0, 1, 10), (2, 0, 2, 10), (7, 0, 3, 10), (1, 1, 4, 10), (6, 2, 4, 10), (3, 3, 4, 10)],
        [("bot", 0), ("server", 4)],
    )


@pytest.fixture
def fan() -> Topology:
    """ingress 0 -> core 1 -> {2, 3, 4} -> egress 5.

    Links: 0:0->1, 1:1->2, 2:1->3, 3:1->4 (bw 30), 4:2->5, 5:3->5, 6:4->5.
    Endpoints: bot 0 and host 2 on the ingress, server 1 on the egress.
    """
    return make_topology(
        ["ingress", "core", "core", "core", "core", "egress"],
        [(0, 1, 10), (1, 2, 10), (1, 3, 10), (1, 4, 30), (2, 5, 10), (3, 5, 10), (4, 5, 10)],
        [("bot", 0), ("server", 5), ("legitimate_host", 0)],
    )


def deep_fan_topology(n_bots: int = 1, branches: int = 3, bw: Sequence[int] | None = None) -> Topology:
    """A three-hop chain in front of a fan, so flagging completes before the fan.

    Routers: 0 ingress, 1-3 chain, 4.. fan cores, last egress.
    Links: 0:0->1, 1:1->2, 2:2->3, then 3->fan_i (ids 3..), then fan_i->egress.
    """
    fan_ids = list(range(4, 4 + branches))
    egress = 4 + branches
    kinds = ["ingress", "core", "core", "core"] + ["core"] * branches + ["egress"]
    bw = list(bw) if bw is not None else [10] * branches
    links = [(0, 1, 100), (1, 2, 100), (2, 3, 100)]
    links += [(3, f, b) for f, b in zip(fan_ids, bw)]
    links += [(f, egress, 100) for f in fan_ids]
    eps = [("bot", 0)] * n_bots + [("server", egress)]
    return make_topology(kinds, links, eps)


@st.composite
def layered_descriptors(draw, max_layers: int = 3, max_width: int = 4) -> dict:
    """Random loop-free layered networks where every server is reachable."""
    n_ingress = draw(st.integers(1, 3))
    cores = draw(st.lists(st.integers(1, max_width), min_size=0, max_size=max_layers))
    n_egress = draw(st.integers(1, 3))
    widths = [n_ingress] + cores + [n_egress]
    kinds = ["ingress"] * n_ingress
    for w in cores:
        kinds += ["core"] * w
    kinds += ["egress"] * n_egress
    stages, nid = [], 0
    for w in widths:
        stages.append(list(range(nid, nid + w)))
        nid += w
    edges = set()
    for cur, nxt in zip(stages, stages[1:]):
        for a in cur:
            picks = draw(st.lists(st.sampled_from(nxt), min_size=1, max_size=len(nxt), unique=True))
            edges.update((a, b) for b in picks)
        for b in nxt:
            if not any((a, b) in edges for a in cur):
                edges.add((draw(st.sampled_from(cur)), b))
    # a layered DAG where some egress may still be unreachable from some ingress:
    # add full wiring into the final stage to guarantee reachability
    for a in stages[-2]:
        for b in stages[-1]:
            edges.add((a, b))
    edges = sorted(edges)
    ids = draw(st.permutations(list(range(len(edges)))))
    links = [
        {"id": ids[i], "src": a, "dst": b, "bandwidth": draw(st.integers(1, 50))}
        for i, (a, b) in enumerate(edges)
    ]
    endpoints = []
    for r in stages[0]:
        endpoints.append({"id": len(endpoints), "role": "legitimate_host", "attach": r})
    for r in stages[-1]:
        endpoints.append({"id": len(endpoints), "role": "server", "attach": r})
    return {
        "routers": [{"id": i, "kind": k} for i, k in enumerate(kinds)],
        "links": links,
        "endpoints": endpoints,
    }


def bait_star(
    members: int, n_bots: int, bandwidth: int = 10, U: int = 1, defended: bool = True
):
    """``members`` ingress routers, each with one member link into egress D.

    Ingress i > 0 also links to ingress 0 so a labeled probe can reach the
    converge link (ingress 0 -> D). Bots attach round-robin starting at
    ingress 0; one LG server per ingress lets sifting group the members.
    Returns ``(world, linkmap, plan, flood_log)`` after one flood tick.
    """
    from linkbait.adversary import AdversaryConfig, select_and_flood
    from linkbait.obfuscation import ObfuscationState, adversary_view
    from linkbait.sifting import group_bait_links, lg_trace_all
    from linkbait.traffic import World, emulate_traceroute, step

    d = members
    kinds = ["ingress"] * members + ["egress"]
    links = [(i, d, bandwidth) for i in range(members)]
    links += [(i, 0, 100 * bandwidth * U) for i in range(1, members)]
    eps = [("lg_server", i) for i in range(members)]
    eps += [("bot", i % members) for i in range(n_bots)]
    eps += [("server", d)]
    topo = make_topology(kinds, links, eps)
    plan = group_bait_links(lg_trace_all(topo), 1.0, members)
    state = ObfuscationState(topo, plan) if defended else None
    world = World(topo, seed=0, defense=state)
    bots = [e.id for e in topo.endpoints.values() if e.role.value == "bot"]
    server = topo.servers()[0].id
    # two rounds: the first gets each bot flagged, the second is what it keeps
    for _round in range(2):
        for bot in bots:
            emulate_traceroute(world, bot, server)
    view = adversary_view(world, bots)
    log = select_and_flood(
        world, view, 1, 5, AdversaryConfig(tuple(bots), U=U, commit="all"), start=0
    )
    step(world)
    return world, view, plan, log
