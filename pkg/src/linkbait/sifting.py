"""Defender-side link analysis and bait-link construction.

Flows are identified by the LG server that traced them, so the flow set of a
link ``T(l)`` is the set of LG servers whose traces cross it and its density
is ``|T(l)|``. Bait links are built by greedy weighted set cover where a single
link costs ``1/density`` and a bait link of ``n`` members costs ``n/density``.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import InvalidTau, KTooLarge, NoLgServers
from .topology import Role, Topology
from .traffic import World, emulate_traceroute


@dataclass
class DefenderLinkmap:
    flows_by_link: dict[int, frozenset[int]]
    flows: frozenset[int]
    paths: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)
    bandwidth: dict[int, int] = field(default_factory=dict)

    def density(self, link: int) -> int:
        return len(self.flows_by_link.get(link, ()))

    @property
    def n_paths(self) -> int:
        """Distinct router-level paths among all traces."""
        return len(set(self.paths.values()))

    @property
    def mean_hops(self) -> float:
        distinct = set(self.paths.values())
        if not distinct:
            return 0.0
        return sum(len(p) for p in distinct) / len(distinct)

    def top_coverage(self, k: int = 15) -> float:
        """Fraction of flows crossing at least one of the ``k`` densest links."""
        ranked = rank_links(self)[:k]
        covered = set().union(*(self.flows_by_link[l] for l in ranked)) if ranked else set()
        return len(covered) / len(self.flows) if self.flows else 0.0


def rank_links(linkmap: DefenderLinkmap) -> list[int]:
    """Link ids by descending density, ties by ascending id."""
    return sorted(linkmap.flows_by_link, key=lambda l: (-linkmap.density(l), l))


def _linkmap_from_router_paths(
    topology: Topology, router_paths: Mapping[tuple[int, int], Sequence[int]]
) -> DefenderLinkmap:
    flows_by_link: dict[int, set[int]] = defaultdict(set)
    flows = set()
    for (lg, _server), routers in router_paths.items():
        flows.add(lg)
        for a, b in zip(routers, routers[1:]):
            lid = topology.link_between(a, b)
            if lid is not None:
                flows_by_link[lid].add(lg)
    return DefenderLinkmap(
        {l: frozenset(s) for l, s in sorted(flows_by_link.items())},
        frozenset(flows),
        {k: tuple(v) for k, v in sorted(router_paths.items())},
        {l.id: l.bandwidth for l in topology.links.values()},
    )


def lg_trace_all(
    topology: Topology,
    lg_servers: Iterable[int] | None = None,
    targets: Iterable[int] | None = None,
) -> DefenderLinkmap:
    """Trace from every LG server to every target server, with no obfuscation."""
    lgs = sorted(
        lg_servers
        if lg_servers is not None
        else (e.id for e in topology.endpoints_with_role(Role.LG_SERVER))
    )
    if not lgs:
        raise NoLgServers("at least one LG server is required")
    servers = sorted(targets if targets is not None else (s.id for s in topology.servers()))
    world = World(topology, seed=0)
    router_paths = {}
    for lg in lgs:
        for server in servers:
            result = emulate_traceroute(world, lg, server)
            router_paths[(lg, server)] = result.routers
    return _linkmap_from_router_paths(topology, router_paths)


def read_path_corpus(topology: Topology, path: str | Path) -> DefenderLinkmap:
    """Load recorded traces from ``lg_server_id,server_id,hop_index,router_id`` rows."""
    hops: dict[tuple[int, int], dict[int, int]] = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["lg_server_id"]), int(row["server_id"]))
            hops[key][int(row["hop_index"])] = int(row["router_id"])
    router_paths = {k: [v[i] for i in sorted(v)] for k, v in hops.items()}
    return _linkmap_from_router_paths(topology, router_paths)


def write_path_corpus(linkmap: DefenderLinkmap, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lg_server_id", "server_id", "hop_index", "router_id"])
        for (lg, server), routers in linkmap.paths.items():
            for i, r in enumerate(routers, start=1):
                writer.writerow([lg, server, i, r])


# -- target links ----------------------------------------------------------------


@dataclass(frozen=True)
class TargetLink:
    link: int
    density: int
    branches: tuple[int, ...]


def _undirected_distances(topology: Topology, sources: Iterable[int], limit: int) -> dict[int, int]:
    dist = {s: 0 for s in sources}
    frontier = list(dist)
    for d in range(1, limit + 1):
        nxt = []
        for r in frontier:
            for lid in topology.out_links(r) + topology.in_links(r):
                link = topology.links[lid]
                for other in (link.src, link.dst):
                    if other not in dist:
                        dist[other] = d
                        nxt.append(other)
        frontier = nxt
    return dist


def branch_links(topology: Topology, link: int, radius: int = 2) -> tuple[int, ...]:
    """Links with an endpoint within ``radius`` hops of either end of ``link``."""
    t = topology.links[link]
    near = _undirected_distances(topology, (t.src, t.dst), radius)
    return tuple(
        l.id
        for l in topology.links.values()
        if l.id != link and (l.src in near or l.dst in near)
    )


def identify_target_links(
    linkmap: DefenderLinkmap, k: int, topology: Topology | None = None
) -> list[TargetLink]:
    """The ``k`` densest links with their branch sets (empty without a topology)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = [l for l in rank_links(linkmap) if linkmap.density(l) > 0]
    if k > len(ranked):
        raise KTooLarge(f"asked for {k} targets but only {len(ranked)} links carry flows")
    return [
        TargetLink(
            l, linkmap.density(l), branch_links(topology, l) if topology is not None else ()
        )
        for l in ranked[:k]
    ]


# -- bait links --------------------------------------------------------------------


@dataclass(frozen=True)
class BaitLink:
    id: int
    members: tuple[int, ...]
    converge: int
    flows: frozenset[int]

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def density(self) -> int:
        return len(self.flows)

    @property
    def weight(self) -> Fraction:
        return Fraction(self.n, self.density)


@dataclass
class SiftingPlan:
    target_links: list[TargetLink]
    bait_links: list[BaitLink]
    coverage: float
    tau: float
    nl_th: int
    selection: list[int] = field(default_factory=list)
    exhausted: bool = False

    def to_json(self) -> dict:
        return {
            "target_links": [
                {"link": t.link, "density": t.density, "branches": list(t.branches)}
                for t in self.target_links
            ],
            "bait_links": [
                {
                    "id": b.id,
                    "members": list(b.members),
                    "converge": b.converge,
                    "density": b.density,
                    "weight": str(b.weight),
                }
                for b in self.bait_links
            ],
            "coverage": self.coverage,
            "tau": self.tau,
            "nl_th": self.nl_th,
            "selection": self.selection,
            "exhausted": self.exhausted,
        }

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def greedy_select(
    flows_by_link: Mapping[int, frozenset[int]],
    universe: frozenset[int],
    tau: float,
) -> list[int]:
    """Greedy weighted set cover until the covered fraction reaches ``tau``.

    Each step takes the link maximising ``newly covered / weight`` with
    ``weight = 1/density``; ties go to the lowest id. Links that would cover
    nothing new are never taken.
    """
    remaining = dict(flows_by_link)
    uncovered = set(universe)
    need = tau * len(universe)
    chosen: list[int] = []
    while remaining and len(universe) - len(uncovered) < need - 1e-12:
        best, best_score = None, 0
        for lid in sorted(remaining):
            flows = remaining[lid]
            score = len(flows & uncovered) * len(flows)
            if score > best_score:
                best, best_score = lid, score
        if best is None:
            break
        chosen.append(best)
        uncovered -= remaining.pop(best)
    return chosen


def group_bait_links(
    linkmap: DefenderLinkmap,
    tau: float,
    nl_th: int,
    targets: Sequence[TargetLink] = (),
) -> SiftingPlan:
    """Select links greedily and pack them into bait links of >= ``nl_th`` members.

    Selected links fill bait links in selection order; a bait link closes once
    it has ``nl_th`` members and its flow count reaches the median single-link
    density. Leftovers join the last closed bait link. If nothing closes, the
    open group is padded with links adding no new flows; failing that it is
    dropped and the plan is flagged ``exhausted``.
    """
    if not 0 <= tau <= 1:
        raise InvalidTau(f"tau must lie in [0, 1], got {tau}")
    if nl_th < 1:
        raise ValueError("nl_th must be at least 1")
    target_ids = {t.link for t in targets}
    candidates = {
        l: f for l, f in linkmap.flows_by_link.items() if f and l not in target_ids
    }
    universe = linkmap.flows
    selection = greedy_select(candidates, universe, tau) if tau > 0 else []
    median = statistics.median(len(f) for f in candidates.values()) if candidates else 0

    groups: list[list[int]] = []
    current: list[int] = []
    for lid in selection:
        current.append(lid)
        if len(current) >= nl_th and len(_union(candidates, current)) >= median:
            groups.append(current)
            current = []
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            covered = _union(candidates, current)
            spare = sorted(
                (l for l in candidates if l not in current and candidates[l] <= covered),
                key=lambda l: (-len(candidates[l]), l),
            )
            while spare and (len(current) < nl_th or len(covered) < median):
                current.append(spare.pop(0))
            if len(current) >= nl_th and len(covered) >= median:
                groups.append(current)

    bw = linkmap.bandwidth
    baits = []
    for i, members in enumerate(groups):
        members_sorted = tuple(sorted(members))
        converge = min(members_sorted, key=lambda l: (-bw.get(l, 1), l))
        baits.append(BaitLink(i, members_sorted, converge, _union(candidates, members)))
    covered = set().union(*(b.flows for b in baits)) if baits else set()
    coverage = len(covered) / len(universe) if universe else 0.0
    return SiftingPlan(
        list(targets), baits, coverage, tau, nl_th, selection,
        exhausted=coverage < tau - 1e-12,
    )


def _union(flows_by_link: Mapping[int, frozenset[int]], links: Iterable[int]) -> frozenset[int]:
    out: set[int] = set()
    for l in links:
        out |= flows_by_link[l]
    return frozenset(out)


# -- attack cost ---------------------------------------------------------------------


@dataclass(frozen=True)
class AttackCost:
    n_p: int
    n_b: int
    n_l: dict[int, float]


def attack_cost(
    plan: SiftingPlan | None,
    B_bw: int,
    U: int,
    n_targets: int,
    N_un: int,
    alphas: Mapping[int, Sequence[float]] | None = None,
    topology: Topology | None = None,
) -> AttackCost:
    """Bots needed without and with bait links.

    ``alphas`` maps bait-link id to the member bandwidth ratios; when omitted
    they come from ``topology`` as ``bandwidth(member) / B_bw``.
    """
    if U <= 0:
        raise ValueError("bot upstream U must be positive")
    n_p = math.ceil(B_bw / U)
    n_b = n_targets * n_p + N_un
    if alphas is None:
        alphas = {}
        if plan is not None and topology is not None:
            alphas = {
                b.id: [topology.links[m].bandwidth / B_bw for m in b.members]
                for b in plan.bait_links
            }
    n_l = {bid: sum(a) * n_p for bid, a in alphas.items()}
    return AttackCost(n_p, n_b, n_l)
