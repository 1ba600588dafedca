"""ISP-style network model: routers, directed links, endpoints, and routing.

A topology is built from a declarative descriptor (``routers``, ``links`` and
``endpoints`` lists) and is immutable afterwards. Routing is static
shortest-path by hop count; among equal-length next hops the lowest link id
wins, so every (router, server) pair has exactly one next hop.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import (
    DisconnectedServer,
    DuplicateId,
    InfeasibleProfile,
    InvalidAttachment,
    NonPositiveBandwidth,
    TopologyError,
    UnknownEndpoint,
    UnknownRouter,
)

MAX_TTL = 64


class RouterKind(str, enum.Enum):
    INGRESS = "ingress"
    EGRESS = "egress"
    CORE = "core"


class Role(str, enum.Enum):
    LEGITIMATE_HOST = "legitimate_host"
    BOT = "bot"
    LG_SERVER = "lg_server"
    SERVER = "server"


@dataclass(frozen=True)
class Router:
    id: int
    kind: RouterKind


@dataclass(frozen=True)
class Link:
    id: int
    src: int
    dst: int
    bandwidth: int


@dataclass(frozen=True)
class Endpoint:
    id: int
    role: Role
    attach: int


class Topology:
    """Validated, read-only network with a deterministic routing table.

    Use :func:`build_topology` rather than calling the constructor directly.
    """

    def __init__(
        self,
        routers: Mapping[int, Router],
        links: Mapping[int, Link],
        endpoints: Mapping[int, Endpoint],
    ):
        self.routers: dict[int, Router] = dict(sorted(routers.items()))
        self.links: dict[int, Link] = dict(sorted(links.items()))
        self.endpoints: dict[int, Endpoint] = dict(sorted(endpoints.items()))
        self._by_pair = {(l.src, l.dst): l.id for l in self.links.values()}
        out: dict[int, list[int]] = {r: [] for r in self.routers}
        inc: dict[int, list[int]] = {r: [] for r in self.routers}
        for l in self.links.values():
            out[l.src].append(l.id)
            inc[l.dst].append(l.id)
        self._out = {r: tuple(sorted(v)) for r, v in out.items()}
        self._in = {r: tuple(sorted(v)) for r, v in inc.items()}
        self._dist: dict[int, dict[int, int]] = {}
        self._reach_cache: dict[int, dict[int, int]] = {}
        # next hop keyed by (router, egress); servers on one egress share routes
        self._next: dict[tuple[int, int], int] = {}
        for egress in sorted({e.attach for e in self.servers()}):
            dist = self._distances_to(egress)
            self._dist[egress] = dist
            for r in self.routers:
                if r == egress or r not in dist:
                    continue
                self._next[(r, egress)] = min(
                    lid
                    for lid in self._out[r]
                    if dist.get(self.links[lid].dst, math.inf) == dist[r] - 1
                )

    # -- queries -------------------------------------------------------------

    def servers(self) -> list[Endpoint]:
        return [e for e in self.endpoints.values() if e.role is Role.SERVER]

    def endpoints_with_role(self, role: Role) -> list[Endpoint]:
        return [e for e in self.endpoints.values() if e.role is role]

    def routers_of_kind(self, kind: RouterKind) -> list[int]:
        return [r.id for r in self.routers.values() if r.kind is kind]

    def out_links(self, router: int) -> tuple[int, ...]:
        return self._out[router]

    def in_links(self, router: int) -> tuple[int, ...]:
        return self._in[router]

    def link_between(self, src: int, dst: int) -> int | None:
        return self._by_pair.get((src, dst))

    def endpoint(self, endpoint_id: int) -> Endpoint:
        try:
            return self.endpoints[endpoint_id]
        except KeyError:
            raise UnknownEndpoint(f"unknown endpoint {endpoint_id}") from None

    def next_hop(self, router: int, server: int) -> int | None:
        """Link taken from ``router`` toward ``server``; None at the egress."""
        egress = self.endpoint(server).attach
        if router == egress:
            return None
        return self._next[(router, egress)]

    def path_from_router(self, router: int, server: int) -> list[int]:
        egress = self.endpoint(server).attach
        path = []
        while router != egress:
            lid = self._next[(router, egress)]
            path.append(lid)
            router = self.links[lid].dst
        return path

    def routers_on(self, start: int, path: Iterable[int]) -> list[int]:
        """Router sequence visited when walking ``path`` from ``start``."""
        seq = [start]
        for lid in path:
            seq.append(self.links[lid].dst)
        return seq

    def shortest_path(
        self,
        src: int,
        dst: int,
        banned_links: Iterable[int] = (),
        banned_routers: Iterable[int] = (),
    ) -> list[int] | None:
        """Hop-count shortest path with lowest-link-id tie-break, or None."""
        if src == dst:
            return []
        banned_l = set(banned_links)
        banned_r = set(banned_routers)
        if src in banned_r or dst in banned_r:
            return None
        dist = self._distances_to(dst, banned_l, banned_r)
        if src not in dist:
            return None
        path, r = [], src
        while r != dst:
            lid = min(
                lid
                for lid in self._out[r]
                if lid not in banned_l
                and dist.get(self.links[lid].dst, math.inf) == dist[r] - 1
            )
            path.append(lid)
            r = self.links[lid].dst
        return path

    def reaches(self, src: int, dst: int) -> bool:
        """Whether any directed path leads from ``src`` to ``dst`` (no bans)."""
        if src == dst:
            return True
        dist = self._reach_cache.get(dst)
        if dist is None:
            dist = self._reach_cache[dst] = self._distances_to(dst)
        return src in dist

    def _distances_to(
        self, target: int, banned_links: set[int] = frozenset(), banned_routers: set[int] = frozenset()
    ) -> dict[int, int]:
        dist = {target: 0}
        queue = deque([target])
        while queue:
            r = queue.popleft()
            for lid in self._in[r]:
                if lid in banned_links:
                    continue
                s = self.links[lid].src
                if s in dist or s in banned_routers:
                    continue
                dist[s] = dist[r] + 1
                queue.append(s)
        return dist

    # -- serialization -------------------------------------------------------

    def to_descriptor(self) -> dict[str, Any]:
        return {
            "routers": [{"id": r.id, "kind": r.kind.value} for r in self.routers.values()],
            "links": [
                {"id": l.id, "src": l.src, "dst": l.dst, "bandwidth": l.bandwidth}
                for l in self.links.values()
            ],
            "endpoints": [
                {"id": e.id, "role": e.role.value, "attach": e.attach}
                for e in self.endpoints.values()
            ],
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return self.to_descriptor() == other.to_descriptor()

    def __repr__(self) -> str:
        return (
            f"Topology(routers={len(self.routers)}, links={len(self.links)}, "
            f"endpoints={len(self.endpoints)})"
        )


def _unique(items: list[dict], what: str) -> None:
    seen = set()
    for item in items:
        if item["id"] in seen:
            raise DuplicateId(f"duplicate {what} id {item['id']}")
        seen.add(item["id"])


def build_topology(config: Mapping[str, Any]) -> Topology:
    """Validate a descriptor and compute routing.

    Raises:
        DuplicateId: repeated router/link/endpoint id or repeated (src, dst).
        NonPositiveBandwidth: a link with bandwidth <= 0.
        DisconnectedServer: a server not on an egress router, or unreachable
            from some ingress router.
    """
    raw_routers = list(config.get("routers", []))
    raw_links = list(config.get("links", []))
    raw_eps = list(config.get("endpoints", []))
    _unique(raw_routers, "router")
    _unique(raw_links, "link")
    _unique(raw_eps, "endpoint")

    routers = {int(r["id"]): Router(int(r["id"]), RouterKind(r["kind"])) for r in raw_routers}
    links: dict[int, Link] = {}
    pairs = set()
    for raw in raw_links:
        link = Link(int(raw["id"]), int(raw["src"]), int(raw["dst"]), int(raw["bandwidth"]))
        if link.src not in routers or link.dst not in routers:
            raise UnknownRouter(f"link {link.id} references an unknown router")
        if link.bandwidth <= 0:
            raise NonPositiveBandwidth(f"link {link.id} has bandwidth {link.bandwidth}")
        if (link.src, link.dst) in pairs:
            raise DuplicateId(f"duplicate link pair ({link.src}, {link.dst})")
        pairs.add((link.src, link.dst))
        links[link.id] = link

    endpoints = {}
    for raw in raw_eps:
        ep = Endpoint(int(raw["id"]), Role(raw["role"]), int(raw["attach"]))
        if ep.attach not in routers:
            raise UnknownRouter(f"endpoint {ep.id} attaches to unknown router {ep.attach}")
        kind = routers[ep.attach].kind
        if ep.role is Role.SERVER and kind is not RouterKind.EGRESS:
            raise DisconnectedServer(f"server {ep.id} is not attached to an egress router")
        if ep.role is not Role.SERVER and kind is not RouterKind.INGRESS:
            raise InvalidAttachment(f"{ep.role.value} {ep.id} is not attached to an ingress router")
        endpoints[ep.id] = ep

    topo = Topology(routers, links, endpoints)
    ingress = topo.routers_of_kind(RouterKind.INGRESS)
    for server in topo.servers():
        dist = topo._dist[server.attach]
        missing = [r for r in ingress if r not in dist]
        if missing:
            raise DisconnectedServer(
                f"server {server.id} unreachable from ingress routers {missing}"
            )
    return topo


def load_topology(path: str | Path) -> Topology:
    with open(path) as fh:
        return build_topology(json.load(fh))


def save_topology(topology: Topology, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(topology.to_descriptor(), fh, indent=1, sort_keys=True)


def route(topology: Topology, src: int, dst: int) -> list[int]:
    """Link ids on the routed path from endpoint ``src`` to server ``dst``."""
    source = topology.endpoint(src)
    target = topology.endpoint(dst)
    if target.role is not Role.SERVER:
        raise UnknownEndpoint(f"endpoint {dst} is not a server")
    if source.role is Role.SERVER:
        raise UnknownEndpoint(f"endpoint {src} is a server, not a traffic source")
    return topology.path_from_router(source.attach, dst)


# -- synthetic generator -----------------------------------------------------


@dataclass(frozen=True)
class TopologyProfile:
    """Targets for :func:`synthesize_topology`.

    ``n_paths`` is the number of distinct ingress-to-egress router paths seen
    from the LG vantage points and ``mean_hops`` the routers per path.
    ``density_skew`` is the Zipf exponent used when wiring each stage to the
    next; larger values concentrate paths onto fewer links.
    """

    n_paths: int
    mean_hops: int
    density_skew: float = 1.5
    n_lg_servers: int | None = None
    n_servers: int | None = None
    n_hosts: int = 0
    n_bots: int = 0
    max_ingress: int = 128
    out_degree: int = 2


def split_paths(n_paths: int, max_ingress: int = 128) -> tuple[int, int]:
    """Factor ``n_paths`` into (ingress count, egress count).

    Prefers the largest ingress count not above ``max_ingress`` with at least
    as many ingress as egress routers; primes fall back to a single egress.
    """
    best = None
    for egress in range(1, int(math.isqrt(n_paths)) + 1):
        if n_paths % egress:
            continue
        ingress = n_paths // egress
        if ingress <= max_ingress and (best is None or ingress > best[0]):
            best = (ingress, egress)
    return best if best is not None else (n_paths, 1)


def _stage_widths(n_ingress: int, n_egress: int, n_core: int) -> list[int]:
    widths = []
    for s in range(1, n_core + 1):
        widths.append(max(2, round(n_ingress * 0.5**s)))
    if widths:
        widths[-1] = max(widths[-1], 2, math.ceil(n_egress / 2))
    return widths


def synthesize_topology(seed: int, profile: TopologyProfile) -> Topology:
    """Generate a layered ingress-to-egress network with heavy-tailed density.

    Every path has exactly ``mean_hops`` routers. Link bandwidth is provisioned
    at 10 units per routed ingress-egress path crossing the link (minimum 10).
    """
    if profile.n_paths < 1 or profile.mean_hops < 2:
        raise InfeasibleProfile("need n_paths >= 1 and mean_hops >= 2")
    if profile.mean_hops > MAX_TTL:
        raise InfeasibleProfile(
            f"mean_hops {profile.mean_hops} exceeds the {MAX_TTL}-hop probe horizon"
        )
    rng = np.random.default_rng(seed)
    n_in, n_eg = split_paths(profile.n_paths, profile.max_ingress)
    widths = _stage_widths(n_in, n_eg, profile.mean_hops - 2)

    routers: list[dict] = []
    stages: list[list[int]] = []
    next_id = 0
    for kind, width in (
        [(RouterKind.INGRESS, n_in)]
        + [(RouterKind.CORE, w) for w in widths]
        + [(RouterKind.EGRESS, n_eg)]
    ):
        stage = list(range(next_id, next_id + width))
        next_id += width
        stages.append(stage)
        routers.extend({"id": r, "kind": kind.value} for r in stage)

    edges: list[tuple[int, int]] = []
    for s in range(len(stages) - 1):
        cur, nxt = stages[s], stages[s + 1]
        if s == len(stages) - 2:
            # last hop fans out to every egress so all servers stay reachable
            edges.extend((a, b) for a in cur for b in nxt)
            continue
        weights = 1.0 / np.arange(1, len(nxt) + 1) ** profile.density_skew
        weights /= weights.sum()
        degree = min(profile.out_degree, len(nxt))
        fed = set()
        stage_edges = []
        for a in cur:
            picks = rng.choice(len(nxt), size=degree, replace=False, p=weights)
            for j in sorted(int(p) for p in picks):
                stage_edges.append((a, nxt[j]))
                fed.add(nxt[j])
        for b in nxt:
            if b not in fed:
                stage_edges.append((cur[int(rng.integers(len(cur)))], b))
        edges.extend(sorted(set(stage_edges)))

    endpoints: list[dict] = []
    ep_id = 0
    ingress, egress = stages[0], stages[-1]
    n_lg = profile.n_lg_servers if profile.n_lg_servers is not None else n_in
    for i in range(n_lg):
        endpoints.append({"id": ep_id, "role": Role.LG_SERVER.value, "attach": ingress[i % n_in]})
        ep_id += 1
    n_srv = profile.n_servers if profile.n_servers is not None else n_eg
    for i in range(n_srv):
        endpoints.append({"id": ep_id, "role": Role.SERVER.value, "attach": egress[i % n_eg]})
        ep_id += 1
    for role, count in ((Role.LEGITIMATE_HOST, profile.n_hosts), (Role.BOT, profile.n_bots)):
        for _ in range(count):
            endpoints.append(
                {"id": ep_id, "role": role.value, "attach": ingress[int(rng.integers(n_in))]}
            )
            ep_id += 1

    links = [
        {"id": i, "src": a, "dst": b, "bandwidth": 10} for i, (a, b) in enumerate(edges)
    ]
    draft = build_topology({"routers": routers, "links": links, "endpoints": endpoints})
    crossings = np.zeros(len(links), dtype=np.int64)
    for r in ingress:
        for e in egress:
            srv = next(s for s in draft.servers() if s.attach == e) if n_srv >= n_eg else None
            if srv is None:
                continue
            for lid in draft.path_from_router(r, srv.id):
                crossings[lid] += 1
    for link in links:
        link["bandwidth"] = int(10 * max(1, crossings[link["id"]]))
    return build_topology({"routers": routers, "links": links, "endpoints": endpoints})
