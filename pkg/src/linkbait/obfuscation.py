"""Link-prober identification and selective rerouting of probe flows.

Probers are recognised at the ingress mirror from two traceroute traits:
varying TTLs and invalid (high) destination ports. Once an endpoint is
flagged, its later probe packets carry a label, and labeled probes are
detoured: through a random branch link at a target link, or through the
converge link at a bait-link member. TCP-like flows are never touched.
"""

from __future__ import annotations

import csv
import enum
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NoBranchAvailable
from .sifting import SiftingPlan
from .topology import Topology
from .traffic import INVALID_PORT_FLOOR, Flow, FlowKind, ProbePacket, TcpPacket, World

PROBE_LABEL = "probe"


class Scope(str, enum.Enum):
    TARGET_LINK = "target_link"
    BAIT_MEMBER = "bait_member"


@dataclass(frozen=True)
class RerouteRule:
    scope: Scope
    match: int
    branches: tuple[int, ...] = ()
    converge: int | None = None

    @property
    def action(self) -> str:
        if self.scope is Scope.TARGET_LINK:
            return "branch:" + ";".join(str(b) for b in self.branches)
        return f"converge:{self.converge}"


@dataclass
class ProberRecord:
    endpoint: int
    ttls: set[int] = field(default_factory=set)
    invalid_port_hits: int = 0
    first_seen: int | None = None
    last_seen: int | None = None
    flagged: bool = False
    flagged_tick: int | None = None

    @property
    def distinct_ttls_seen(self) -> int:
        return len(self.ttls)


@dataclass(frozen=True)
class LabelDirective:
    endpoint: int
    tick: int


def rules_from_plan(plan: SiftingPlan) -> dict[int, RerouteRule]:
    rules: dict[int, RerouteRule] = {}
    for t in plan.target_links:
        rules[t.link] = RerouteRule(Scope.TARGET_LINK, t.link, branches=tuple(t.branches))
    for bait in plan.bait_links:
        for m in bait.members:
            if m != bait.converge and m not in rules:
                rules[m] = RerouteRule(Scope.BAIT_MEMBER, m, converge=bait.converge)
    return rules


class ObfuscationState:
    """Prober table, active rules and per-rule random streams for one world."""

    def __init__(
        self,
        topology: Topology,
        plan: SiftingPlan | None = None,
        ttl_threshold: int = 3,
        port_repeat_threshold: int = 3,
        seed: int = 0,
    ):
        self.topology = topology
        self.ttl_threshold = ttl_threshold
        self.port_repeat_threshold = port_repeat_threshold
        self.seed = seed
        self.probers: dict[int, ProberRecord] = {}
        self.rules: dict[int, RerouteRule] = {}
        self._rngs: dict[int, np.random.Generator] = {}
        self._paths: dict[int, tuple[list[int], int | None]] = {}
        self._choices: dict[tuple[int, int], int] = {}
        self._feasible: dict[tuple, list[tuple[int, int, list[int]]]] = {}
        self._transient: set[int] = set()
        self.label_log: list[LabelDirective] = []
        self.reroutes: list[tuple[int, int, int]] = []  # (flow, matched link, via link)
        self.unrerouted: list[tuple[int, int]] = []
        if plan is not None:
            self.install_plan(plan)

    def install_plan(self, plan: SiftingPlan) -> None:
        self.rules = rules_from_plan(plan)
        self._rngs = {
            lid: np.random.default_rng([self.seed, lid]) for lid in sorted(self.rules)
        }
        self._paths.clear()
        self._choices.clear()
        self._feasible.clear()

    # -- identification ---------------------------------------------------------

    def inspect_ingress(self, packet: ProbePacket | TcpPacket) -> LabelDirective | None:
        rec = self.probers.get(packet.src)
        if rec is None:
            rec = self.probers[packet.src] = ProberRecord(packet.src, first_seen=packet.tick)
        rec.last_seen = packet.tick
        rec.ttls.add(packet.ttl)
        if isinstance(packet, ProbePacket) and packet.dst_port > INVALID_PORT_FLOOR:
            rec.invalid_port_hits += 1
        if rec.flagged or rec.invalid_port_hits < 1:
            return None
        if (
            rec.distinct_ttls_seen >= self.ttl_threshold
            or rec.invalid_port_hits >= self.port_repeat_threshold
        ):
            rec.flagged = True
            rec.flagged_tick = packet.tick
            self._transient.add(packet.src)
            directive = LabelDirective(packet.src, packet.tick)
            self.label_log.append(directive)
            return directive
        return None

    def is_labeled(self, endpoint: int) -> bool:
        rec = self.probers.get(endpoint)
        return rec is not None and rec.flagged

    def consume_transient(self, endpoint: int) -> int:
        """One extra response tick for the first labeled packet of a prober."""
        if endpoint in self._transient:
            self._transient.discard(endpoint)
            return 1
        return 0

    # -- rerouting --------------------------------------------------------------

    def effective_path(self, flow: Flow) -> tuple[list[int], int | None]:
        """Path a labeled probe flow takes, and where it first diverges.

        Rules cascade: a detour that lands on another rule's link is rerouted
        again, and links already rerouted are avoided by later detours.
        """
        if flow.label is None or flow.kind is not FlowKind.PROBE:
            return list(flow.path), None
        cached = self._paths.get(flow.id)
        if cached is not None:
            return cached
        path = list(flow.path)
        first: int | None = None
        applied: set[int] = set()
        idx = 0
        while idx < len(path):
            lid = path[idx]
            rule = self.rules.get(lid)
            if rule is not None and lid not in applied:
                applied.add(lid)
                res = self._reroute(flow, path, idx, rule, frozenset(applied))
                if res is not None:
                    j, suffix = res
                    path = path[:j] + suffix
                    first = j if first is None else min(first, j)
                    idx = j
                    continue
            idx += 1
        self._paths[flow.id] = (path, first)
        return path, first

    def _reroute(
        self, flow: Flow, path: list[int], idx: int, rule: RerouteRule, banned: frozenset[int]
    ) -> tuple[int, list[int]] | None:
        if rule.scope is Scope.TARGET_LINK:
            if not rule.branches:
                raise NoBranchAvailable(f"target link {rule.match} has no branch links")
            vias = rule.branches
        else:
            vias = (rule.converge,)
        options = self._options(flow, path, idx, vias, banned)
        if not options:
            self.unrerouted.append((flow.id, rule.match))
            return None
        if rule.scope is Scope.TARGET_LINK:
            key = (flow.id, rule.match)
            if key not in self._choices:
                self._choices[key] = int(self._rngs[rule.match].integers(len(options)))
            j, via, suffix = options[self._choices[key]]
        else:
            j, via, suffix = options[0]
        self.reroutes.append((flow.id, rule.match, via))
        return j, suffix

    def _options(
        self, flow: Flow, path: list[int], idx: int, vias: Sequence[int], banned: frozenset[int]
    ) -> list[tuple[int, int, list[int]]]:
        topo = self.topology
        start = topo.endpoint(flow.src).attach
        egress = topo.endpoint(flow.dst).attach
        key = (start, tuple(path[: idx + 1]), egress, tuple(vias), banned)
        hit = self._feasible.get(key)
        if hit is not None:
            return hit
        routers = topo.routers_on(start, path)
        options = []
        for via in vias:
            found = _detour(topo, routers, idx, via, banned, egress)
            if found is not None:
                options.append((found[0], via, found[1]))
        self._feasible[key] = options
        return options

    def apply_reroute(self, flow: Flow, at_link: int) -> list[int]:
        """Effective path suffix from the point where ``at_link`` is handled."""
        if at_link not in flow.path:
            raise ValueError(f"link {at_link} is not on flow {flow.id}")
        idx = flow.path.index(at_link)
        rule = self.rules.get(at_link)
        if flow.label is None or flow.kind is not FlowKind.PROBE or rule is None:
            return list(flow.path[idx:])
        path, first = self.effective_path(flow)
        if first is None:
            return path[idx:]
        return path[min(first, idx):]

    # -- audit dumps ------------------------------------------------------------

    def dump_rules(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scope", "match_link", "action"])
            for lid, rule in sorted(self.rules.items()):
                writer.writerow([rule.scope.value, lid, rule.action])

    def dump_probers(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["endpoint_id", "distinct_ttls", "invalid_port_hits", "flagged_tick"])
            for ep, rec in sorted(self.probers.items()):
                flagged = "" if rec.flagged_tick is None else rec.flagged_tick
                writer.writerow([ep, rec.distinct_ttls_seen, rec.invalid_port_hits, flagged])


def _detour(
    topo: Topology,
    routers: list[int],
    idx: int,
    via: int,
    banned: frozenset[int],
    egress: int,
) -> tuple[int, list[int]] | None:
    """Rewrite the path from the latest prefix router that can reach ``via``.

    Returns ``(j, suffix)`` where the new path is ``path[:j] + suffix``; the
    suffix crosses ``via`` and ends at ``egress`` without revisiting routers.
    """
    v = topo.links[via]
    if via in banned or not topo.reaches(v.dst, egress):
        return None
    for j in range(idx, -1, -1):
        if not topo.reaches(routers[j], v.src):
            continue
        before = set(routers[:j])
        head = topo.shortest_path(routers[j], v.src, banned, before)
        if head is None:
            continue
        seen = before | set(topo.routers_on(routers[j], head))
        if v.dst in seen:
            continue
        tail = topo.shortest_path(v.dst, egress, banned, seen)
        if tail is None:
            continue
        return j, head + [via] + tail
    return None


def inspect_ingress(state: ObfuscationState, packet: ProbePacket | TcpPacket) -> LabelDirective | None:
    return state.inspect_ingress(packet)


def apply_reroute(state: ObfuscationState, flow: Flow, at_link: int) -> list[int]:
    return state.apply_reroute(flow, at_link)


# -- adversary's view --------------------------------------------------------------


@dataclass
class AdversaryLinkmap:
    """What the bots learned: per-link occupancy and per-(bot, server) paths."""

    occupancy: dict[int, set[int]]
    path_counts: dict[int, int]
    observed: dict[tuple[int, int], list[int]]
    chosen: list[int] = field(default_factory=list)

    def ranking(self) -> list[int]:
        return sorted(
            self.occupancy,
            key=lambda l: (-len(self.occupancy[l]), -self.path_counts.get(l, 0), l),
        )

    def bot_count(self, link: int) -> int:
        return len(self.occupancy.get(link, ()))

    def dump(self, path: str | Path) -> None:
        """Write ``link_id,bot_count,is_chosen`` in ranking order."""
        chosen = set(self.chosen)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["link_id", "bot_count", "is_chosen"])
            for lid in self.ranking():
                writer.writerow([lid, self.bot_count(lid), int(lid in chosen)])


def _links_from_routers(topo: Topology, routers: Sequence[int]) -> list[int]:
    out = []
    for a, b in zip(routers, routers[1:]):
        lid = topo.link_between(a, b)
        if lid is not None:
            out.append(lid)
    return out


def adversary_view(world: World, bots: Iterable[int]) -> AdversaryLinkmap:
    """Aggregate the bots' traceroute output the way the adversary would.

    Complete traces give each bot its own observed path. Partial traces (fixed
    TTL probing) are pooled per (ingress router, server) and the pooled path is
    credited to every bot that contributed a hop.
    """
    topo = world.topology
    bot_set = set(bots)
    observed: dict[tuple[int, int], list[int]] = {}
    pooled: dict[tuple[int, int], dict[int, int]] = defaultdict(dict)
    contributors: dict[tuple[int, int], set[int]] = defaultdict(set)
    for trace in world.traces:
        if trace.prober not in bot_set:
            continue
        idx = [h.index for h in trace.hops]
        ingress = topo.endpoint(trace.prober).attach
        egress = topo.endpoint(trace.dst).attach
        complete = idx == list(range(1, len(idx) + 1)) and trace.hops and trace.hops[-1].router == egress
        if complete:
            observed[(trace.prober, trace.dst)] = _links_from_routers(topo, trace.routers)
        else:
            group = (ingress, trace.dst)
            for h in trace.hops:
                pooled[group].setdefault(h.index, h.router)
            contributors[group].add(trace.prober)
    for group, hops in pooled.items():
        routers = [hops[i] for i in sorted(hops)]
        links = _links_from_routers(topo, routers)
        for bot in contributors[group]:
            observed.setdefault((bot, group[1]), links)

    occupancy: dict[int, set[int]] = defaultdict(set)
    counts: dict[int, int] = defaultdict(int)
    for (bot, _server), links in observed.items():
        for lid in set(links):
            occupancy[lid].add(bot)
            counts[lid] += 1
    return AdversaryLinkmap(dict(occupancy), dict(counts), observed)
