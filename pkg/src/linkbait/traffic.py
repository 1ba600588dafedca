"""Discrete-tick traffic engine.

TCP-like flows are constant-rate and follow their routed path for their whole
lifetime. Link accounting is threshold based: a link is congested in a tick
when offered bytes exceed its bandwidth, and delivery is proportional.
Traceroute is emulated packet by packet; probe packets carry no load.
"""

from __future__ import annotations

import csv
import enum
import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import InvariantViolation, UnknownEndpoint, UnreachableDestination
from .topology import MAX_TTL, Role, RouterKind, Topology, route

INVALID_PORT_FLOOR = 30000


class FlowKind(str, enum.Enum):
    TCP_LIKE = "tcp_like"
    PROBE = "probe"


@dataclass
class Flow:
    id: int
    src: int
    dst: int
    kind: FlowKind
    rate: int
    path: list[int]
    label: str | None = None
    start: int = 0
    stop: int | None = None  # exclusive; None runs forever

    def active(self, tick: int) -> bool:
        return self.start <= tick and (self.stop is None or tick < self.stop)


@dataclass(frozen=True)
class ProbePacket:
    flow_id: int
    src: int
    dst: int
    ttl: int
    dst_port: int
    tick: int
    labeled: bool = False


@dataclass(frozen=True)
class TcpPacket:
    """A TCP-like packet as seen by the ingress mirror."""

    flow_id: int
    src: int
    dst: int
    ttl: int
    dst_port: int
    tick: int


@dataclass(frozen=True)
class LinkLoad:
    link: int
    tick: int
    offered: int
    delivered: int
    congested: bool


@dataclass(frozen=True)
class Hop:
    index: int
    router: int
    response_ticks: int


@dataclass
class TraceResult:
    prober: int
    dst: int
    hops: list[Hop]
    flow_id: int = -1
    start_tick: int = 0
    end_tick: int = 0
    real_path: list[int] = field(default_factory=list)
    packets: list[ProbePacket] = field(default_factory=list)

    @property
    def routers(self) -> list[int]:
        return [h.router for h in self.hops]


class Defense(Protocol):
    """What the traffic engine needs from an active obfuscation runtime."""

    def is_labeled(self, endpoint: int) -> bool: ...

    def inspect_ingress(self, packet: ProbePacket | TcpPacket) -> object: ...

    def effective_path(self, flow: Flow) -> tuple[list[int], int | None]: ...

    def consume_transient(self, endpoint: int) -> int: ...


def default_port_rule(rng: np.random.Generator) -> int:
    return int(rng.integers(INVALID_PORT_FLOOR + 1, 65536))


@dataclass(order=True)
class TraceJob:
    tick: int
    prober: int
    dst: int
    options: dict = field(default_factory=dict, compare=False)


class World:
    """Mutable simulation state for one run. Single-threaded."""

    def __init__(self, topology: Topology, seed: int = 0, defense: Defense | None = None):
        self.topology = topology
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        # probe ports get their own stream so defended and undefended runs
        # draw identical traffic even when traceroutes differ in length
        self.probe_rng = np.random.default_rng([seed, 1])
        self.defense = defense
        self.tick = 0
        self.flows: dict[int, Flow] = {}
        self.probe_flows: dict[int, Flow] = {}
        self.traces: list[TraceResult] = []
        self.trace_jobs: list[TraceJob] = []
        self.link_ids = list(topology.links)
        self.link_index = {lid: i for i, lid in enumerate(self.link_ids)}
        self.bandwidth = np.array(
            [topology.links[l].bandwidth for l in self.link_ids], dtype=np.int64
        )
        self._offered = np.zeros(len(self.link_ids), dtype=np.int64)
        self._events: dict[int, list[tuple[int, int]]] = defaultdict(list)
        self._active: set[int] = set()
        self.offered_log: list[np.ndarray] = []
        self.log_start: int | None = None
        self._next_flow = 0

    def new_flow_id(self) -> int:
        fid = self._next_flow
        self._next_flow += 1
        return fid

    def add_flow(
        self, src: int, dst: int, rate: int, start: int | None = None, stop: int | None = None
    ) -> Flow:
        """Register a TCP-like flow on its routed path."""
        if rate <= 0:
            raise ValueError("flow rate must be positive")
        start = self.tick if start is None else max(start, self.tick)
        flow = Flow(
            self.new_flow_id(), src, dst, FlowKind.TCP_LIKE, int(rate),
            route(self.topology, src, dst), start=start, stop=stop,
        )
        self.flows[flow.id] = flow
        self._events[start].append((flow.id, +1))
        if stop is not None:
            self._events[stop].append((flow.id, -1))
        return flow

    def schedule_trace(self, tick: int, prober: int, dst: int, **options) -> None:
        heapq.heappush(self.trace_jobs, TraceJob(tick, prober, dst, options))

    def run_trace_jobs(self) -> list[TraceResult]:
        """Execute all scheduled traceroutes in (tick, prober, dst) order."""
        done = []
        while self.trace_jobs:
            job = heapq.heappop(self.trace_jobs)
            done.append(
                emulate_traceroute(self, job.prober, job.dst, start_tick=job.tick, **job.options)
            )
        return done

    def offered_matrix(self) -> np.ndarray:
        """Ticks x links matrix of offered bytes for every stepped tick."""
        if not self.offered_log:
            return np.zeros((0, len(self.link_ids)), dtype=np.int64)
        return np.vstack(self.offered_log)


def step(world: World) -> list[LinkLoad]:
    """Advance one tick and return the load on every link (ascending id)."""
    t = world.tick
    for fid, sign in sorted(world._events.pop(t, ())):
        flow = world.flows[fid]
        if sign > 0:
            world._active.add(fid)
        else:
            world._active.discard(fid)
        idx = [world.link_index[l] for l in flow.path]
        world._offered[idx] += sign * flow.rate
    for fid in world._active:
        if world.flows[fid].label is not None:
            raise InvariantViolation(f"tcp_like flow {fid} carries a label")
    offered = world._offered.copy()
    if world.log_start is None:
        world.log_start = t
    world.offered_log.append(offered)
    delivered = np.minimum(offered, world.bandwidth)
    congested = offered > world.bandwidth
    world.tick += 1
    return [
        LinkLoad(lid, t, int(offered[i]), int(delivered[i]), bool(congested[i]))
        for i, lid in enumerate(world.link_ids)
    ]


def run_until(world: World, tick: int) -> None:
    while world.tick < tick:
        step(world)


def fast_forward(world: World, tick: int) -> None:
    """Jump the clock over an idle stretch before the first stepped tick."""
    if world.offered_log:
        raise ValueError("cannot fast-forward a world that has already stepped")
    if any(t < tick for t in world._events):
        raise ValueError("flows start before the fast-forward target")
    world.tick = max(world.tick, tick)


def delivered_rate(world: World, flow: Flow, tick: int) -> float:
    """Per-tick bytes the flow gets through under proportional delivery."""
    if not flow.active(tick) or world.log_start is None:
        return 0.0
    row = world.offered_log[tick - world.log_start]
    share = 1.0
    for lid in flow.path:
        i = world.link_index[lid]
        if row[i] > world.bandwidth[i]:
            share = min(share, world.bandwidth[i] / row[i])
    return flow.rate * share


def emulate_traceroute(
    world: World,
    prober: int,
    dst: int,
    port_rule: Callable[[np.random.Generator], int] | None = None,
    pacing: int = 1,
    start_tick: int | None = None,
    ttl_schedule: Sequence[int] | None = None,
    repeats: int = 1,
) -> TraceResult:
    """Hop-by-hop path discovery from ``prober`` toward server ``dst``.

    Without ``ttl_schedule`` TTLs run 1, 2, ... until the destination's egress
    answers; with it, exactly the listed TTLs are sent (``repeats`` packets
    each). Hops report the effective path, so rerouted probes reveal detour
    routers.
    """
    topo = world.topology
    src = topo.endpoint(prober)
    if topo.routers[src.attach].kind is not RouterKind.INGRESS:
        raise UnknownEndpoint(f"prober {prober} is not attached to an ingress router")
    real = route(topo, prober, dst)
    port_rule = port_rule or default_port_rule
    tick = world.tick if start_tick is None else start_tick
    flow = Flow(world.new_flow_id(), prober, dst, FlowKind.PROBE, 1, list(real), start=tick)
    world.probe_flows[flow.id] = flow
    defense = world.defense
    result = TraceResult(prober, dst, [], flow.id, tick, tick, list(real))

    ttls: Iterable[int] = ttl_schedule if ttl_schedule is not None else range(1, MAX_TTL + 1)
    reached = False
    for ttl in ttls:
        if ttl > MAX_TTL:
            break
        for _ in range(repeats):
            labeled = defense is not None and defense.is_labeled(prober)
            packet = ProbePacket(flow.id, prober, dst, ttl, port_rule(world.probe_rng), tick, labeled)
            result.packets.append(packet)
            if defense is not None:
                defense.inspect_ingress(packet)
            path, reroute_at = real, None
            extra = 0
            if labeled:
                flow.label = "probe"
                path, reroute_at = defense.effective_path(flow)
                extra += defense.consume_transient(prober)
            routers = topo.routers_on(src.attach, path)
            hop = min(ttl, len(routers))
            if reroute_at is not None and hop == reroute_at + 2:
                extra += 1
            result.hops.append(Hop(ttl, routers[hop - 1], hop + extra))
            reached = reached or hop == len(routers)
            result.end_tick = tick
            tick += pacing
        if reached and ttl_schedule is None:
            break
    if ttl_schedule is None and not reached:
        raise UnreachableDestination(f"no response from {dst} within {MAX_TTL} hops")
    if repeats > 1:
        result.hops = _collapse(result.hops)
    world.traces.append(result)
    return result


def _collapse(hops: list[Hop]) -> list[Hop]:
    seen: dict[int, Hop] = {}
    for h in hops:
        seen.setdefault(h.index, h)
    return [seen[k] for k in sorted(seen)]


# -- legitimate traffic --------------------------------------------------------

RateDistribution = Callable[[np.random.Generator], int]


def constant_rate(value: int) -> RateDistribution:
    return lambda rng: int(value)


def schedule_legitimate_traffic(
    world: World,
    hosts: Iterable[int],
    rate_distribution: RateDistribution | int,
    occasional_diagnostic_probability: float,
    start: int = 0,
    stop: int = 1000,
    detection_period: tuple[int, int] = (0, 1000),
    mean_session: float = 50.0,
    mean_gap: float = 0.0,
) -> list[Flow]:
    """Install back-to-back client sessions and rare diagnostic traceroutes.

    Each host runs consecutive sessions toward uniformly chosen servers in
    ``[start, stop)``; session and gap lengths are geometric. With the given
    probability a host schedules one traceroute inside ``detection_period``.
    """
    if isinstance(rate_distribution, int):
        rate_distribution = constant_rate(rate_distribution)
    topo = world.topology
    servers = [s.id for s in topo.servers()]
    rng = world.rng
    flows = []
    for host in sorted(hosts):
        if topo.endpoint(host).role is Role.SERVER:
            raise UnknownEndpoint(f"{host} is a server")
        t = start
        while t < stop:
            length = int(rng.geometric(1.0 / mean_session))
            end = min(stop, t + length)
            dst = servers[int(rng.integers(len(servers)))]
            flows.append(world.add_flow(host, dst, rate_distribution(rng), t, end))
            t = end
            if mean_gap > 0:
                t += int(rng.geometric(1.0 / (1.0 + mean_gap))) - 1
        if rng.random() < occasional_diagnostic_probability:
            lo, hi = detection_period
            world.schedule_trace(
                int(rng.integers(lo, hi)), host, servers[int(rng.integers(len(servers)))]
            )
    return flows


# -- exports -------------------------------------------------------------------


def write_link_loads_csv(world: World, path: str | Path) -> None:
    """Dump the per-tick stream as ``tick,link_id,offered,delivered,congested``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "link_id", "offered", "delivered", "congested"])
        start = world.log_start or 0
        for k, row in enumerate(world.offered_log):
            for i, lid in enumerate(world.link_ids):
                off = int(row[i])
                bw = int(world.bandwidth[i])
                writer.writerow([start + k, lid, off, min(off, bw), int(off > bw)])


def host_link_volumes(
    world: World, hosts: Sequence[int], links: Sequence[int], t0: int, t1: int
) -> np.ndarray:
    """Bytes each host offers to each link per tick, shape (hosts, links, t1 - t0)."""
    hidx = {h: i for i, h in enumerate(hosts)}
    lidx = {l: i for i, l in enumerate(links)}
    out = np.zeros((len(hosts), len(links), t1 - t0), dtype=np.int64)
    for flow in world.flows.values():
        h = hidx.get(flow.src)
        if h is None:
            continue
        a = max(flow.start, t0)
        b = t1 if flow.stop is None else min(flow.stop, t1)
        if a >= b:
            continue
        for lid in flow.path:
            j = lidx.get(lid)
            if j is not None:
                out[h, j, a - t0 : b - t0] += flow.rate
    return out
