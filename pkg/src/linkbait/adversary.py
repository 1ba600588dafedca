"""Crossfire-style adversary: probe, pick targets, flood, check.

Bots build a linkmap with traceroute, rank links by how many bots occupy
them, and send low-rate TCP-like flows toward servers whose observed path
crosses the chosen links. Floods are never labeled, so they follow the real
routes regardless of what the probes saw.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyLinkmap
from .obfuscation import AdversaryLinkmap, adversary_view
from .topology import Role
from .traffic import Flow, FlowKind, World


class Strategy(str, enum.Enum):
    BASELINE = "baseline"
    PROLONGED_INTERVAL = "prolonged_interval"
    RANDOMIZED_HEADERS = "randomized_headers"
    ONE_IN_ALL = "one_in_all"


@dataclass(frozen=True)
class AdversaryConfig:
    bots: tuple[int, ...]
    interval: int = 10
    jitter: int = 3
    stagger: int = 20
    U: int = 1
    strategy: Strategy = Strategy.BASELINE
    probing_fraction: float = 1.0
    prolong_factor: int = 20
    fixed_ttl_repeats: int = 3
    commit: str = "n_p"
    n_targets: int = 4

    def __post_init__(self):
        if self.U <= 0:
            raise ValueError("U must be positive")
        if not 0 < self.probing_fraction <= 1:
            raise ValueError("probing_fraction must lie in (0, 1]")
        if self.probing_fraction != 1 and self.strategy is not Strategy.ONE_IN_ALL:
            raise ValueError("probing_fraction below 1 requires the one_in_all strategy")
        if self.commit not in ("n_p", "all"):
            raise ValueError("commit must be 'n_p' or 'all'")


def probing_bots(world: World, config: AdversaryConfig) -> list[int]:
    """Bots that run traceroute, spread round-robin over ingress routers."""
    bots = sorted(config.bots)
    if config.strategy is not Strategy.ONE_IN_ALL:
        return bots
    by_ingress: dict[int, list[int]] = defaultdict(list)
    for b in bots:
        by_ingress[world.topology.endpoint(b).attach].append(b)
    order = []
    queues = [by_ingress[k] for k in sorted(by_ingress)]
    depth = max((len(q) for q in queues), default=0)
    for i in range(depth):
        order.extend(q[i] for q in queues if i < len(q))
    n = round(config.probing_fraction * len(bots))
    return sorted(order[:n])


def schedule_probes(
    world: World, config: AdversaryConfig, start: int = 0, servers: Sequence[int] | None = None
) -> list[int]:
    """Queue every probing bot's traceroutes; returns the probing bots."""
    servers = sorted(servers if servers is not None else (s.id for s in world.topology.servers()))
    probers = probing_bots(world, config)
    interval = config.interval
    if config.strategy is Strategy.PROLONGED_INTERVAL:
        interval *= config.prolong_factor
    depth_rank: dict[int, int] = defaultdict(int)
    for k, bot in enumerate(probers):
        base = start + k * config.stagger
        options = {}
        if config.strategy is Strategy.RANDOMIZED_HEADERS:
            ingress = world.topology.endpoint(bot).attach
            ttl = 1 + depth_rank[ingress] % 16
            depth_rank[ingress] += 1
            options = {"ttl_schedule": [ttl], "repeats": config.fixed_ttl_repeats}
        for s_idx, server in enumerate(servers):
            jitter = int(world.rng.integers(0, config.jitter + 1)) if config.jitter else 0
            world.schedule_trace(base + s_idx * interval + jitter, bot, server, **options)
    return probers


def run_probe_phase(
    world: World, config: AdversaryConfig, start: int = 0, servers: Sequence[int] | None = None
) -> AdversaryLinkmap:
    """Run the bots' linkmap construction and return what they learned.

    Scheduled traceroutes already queued in the world (for instance legitimate
    diagnostics) run interleaved in time order. Bots that did not probe borrow
    the paths learned by a probing bot on the same ingress router.
    """
    probers = schedule_probes(world, config, start, servers)
    world.run_trace_jobs()
    linkmap = adversary_view(world, probers)
    prober_set = set(probers)
    donors: dict[int, int] = {}
    for b in probers:
        donors.setdefault(world.topology.endpoint(b).attach, b)
    borrowed = defaultdict(list)
    for (bot, server), links in linkmap.observed.items():
        borrowed[bot].append((server, links))
    for bot in sorted(config.bots):
        if bot in prober_set:
            continue
        donor = donors.get(world.topology.endpoint(bot).attach)
        if donor is None:
            continue
        for server, links in borrowed[donor]:
            linkmap.observed[(bot, server)] = list(links)
            for lid in set(links):
                linkmap.occupancy.setdefault(lid, set()).add(bot)
                linkmap.path_counts[lid] = linkmap.path_counts.get(lid, 0) + 1
    return linkmap


@dataclass
class FloodLog:
    chosen: list[int]
    assignments: list[tuple[int, int, int, int]]  # (bot, target, server, flow id)
    idle: list[int]
    start: int
    stop: int
    U: int

    def flows_for(self, target: int) -> list[int]:
        return [f for _b, t, _s, f in self.assignments if t == target]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tick", "bot_id", "target_link_id", "offered"])
            for tick in range(self.start, self.stop):
                for bot, target, _server, _fid in self.assignments:
                    writer.writerow([tick, bot, target, self.U])


def select_and_flood(
    world: World,
    linkmap: AdversaryLinkmap,
    n_targets: int,
    duration: int,
    config: AdversaryConfig,
    start: int | None = None,
) -> FloodLog:
    """Pick the most-occupied links and start the bots' floods.

    With ``commit='n_p'`` each target gets exactly ``ceil(B/U)`` bots, the
    Crossfire pacing, and links without that many free occupying bots are
    passed over; with ``'all'`` every occupying bot floods. Each bot
    floods one target toward a uniformly drawn server whose observed path
    crosses it. Bots left without a target stay idle.
    """
    start = world.tick if start is None else start
    bots = set(config.bots)
    occupied = {l: s & bots for l, s in linkmap.occupancy.items() if s & bots}
    if not occupied:
        if not bots:
            return FloodLog([], [], [], start, start + duration, config.U)
        raise EmptyLinkmap("the adversary linkmap has no occupied links")
    ranking = [l for l in linkmap.ranking() if l in occupied]
    chosen: list[int] = []
    assigned: set[int] = set()
    assignments = []
    for target in ranking:
        if len(chosen) == n_targets:
            break
        pool = sorted(occupied[target] - assigned)
        if config.commit == "n_p":
            # a pacing adversary only commits to links it can saturate
            n_p = math.ceil(world.topology.links[target].bandwidth / config.U)
            if len(pool) < n_p:
                continue
            pool = pool[:n_p]
        chosen.append(target)
        for bot in pool:
            decoys = sorted(
                s for (b, s), links in linkmap.observed.items() if b == bot and target in links
            )
            if not decoys:
                continue
            server = decoys[int(world.rng.integers(len(decoys)))]
            flow = world.add_flow(bot, server, config.U, start, start + duration)
            assignments.append((bot, target, server, flow.id))
            assigned.add(bot)
    linkmap.chosen = list(chosen)
    idle = sorted(bots - assigned)
    return FloodLog(chosen, assignments, idle, start, start + duration, config.U)


def verify_congestion(
    world: World,
    targets: Iterable[int],
    linkmap: AdversaryLinkmap,
    tick: int | None = None,
) -> dict[int, bool]:
    """Adversary-side check: does a probe across each believed target see loss?

    For each target, one bot whose observed path crossed it probes the same
    server again; the probe follows its effective (possibly rerouted) path and
    reports loss if any link on it is overloaded at ``tick`` (default: the
    last stepped tick).
    """
    result = {}
    if not world.offered_log:
        return {t: False for t in targets}
    t = world.tick - 1 if tick is None else tick
    row = world.offered_log[t - world.log_start]
    for target in targets:
        witness = next(
            ((b, s) for (b, s), links in sorted(linkmap.observed.items()) if target in links),
            None,
        )
        if witness is None:
            result[target] = False
            continue
        bot, server = witness
        probe = Flow(-1, bot, server, FlowKind.PROBE, 1, _route(world, bot, server))
        path = probe.path
        if world.defense is not None and world.defense.is_labeled(bot):
            probe.label = "probe"
            path, _ = world.defense.effective_path(probe)
        result[target] = any(
            row[world.link_index[l]] > world.bandwidth[world.link_index[l]] for l in path
        )
    return result


def _route(world: World, src: int, dst: int) -> list[int]:
    from .topology import route

    return route(world.topology, src, dst)
