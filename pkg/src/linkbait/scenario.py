"""Scenario configuration, end-to-end runs, and parameter sweeps."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .adversary import AdversaryConfig, Strategy, run_probe_phase, select_and_flood, verify_congestion
from .detection import (
    MinMax,
    Mode,
    SvmConfig,
    build_features,
    evaluate,
    extract_fm,
    extract_tm,
    split_by_host,
    train_svm,
    write_features_csv,
)
from .errors import ConfigInvalid, EmptyLinkmap, LinkbaitError
from .obfuscation import ObfuscationState
from .sifting import attack_cost, group_bait_links, identify_target_links, lg_trace_all
from .topology import (
    Role,
    RouterKind,
    Topology,
    TopologyProfile,
    build_topology,
    load_topology,
    synthesize_topology,
)
from .traffic import World, fast_forward, host_link_volumes, run_until, schedule_legitimate_traffic, step

# -- configuration -----------------------------------------------------------------


@dataclass
class TopologySection:
    file: str | None = None
    generator: str = "isp"
    seed: int | None = None
    ingress: int = 10
    layers: list = field(default_factory=lambda: [8, 8, 6, 6, 6])
    egress: int = 5
    out_degree: int = 3
    skew: float = 1.0
    headroom: float = 4.0
    min_bandwidth: int = 20
    profile: dict | None = None


@dataclass
class PopulationSection:
    bots: int = 100
    legitimate_hosts: int = 190
    servers: int = 20
    lg_servers: int = 20


@dataclass
class DefenseSection:
    enabled: bool = True
    tau: float = 0.9
    nl_th: int = 3
    k: int = 10
    ttl_threshold: int = 3
    port_repeat_threshold: int = 3


@dataclass
class AdversarySection:
    interval: int = 10
    jitter: int = 3
    stagger: int = 20
    U: int = 3
    strategy: str = "baseline"
    probing_fraction: float = 1.0
    prolong_factor: int = 20
    fixed_ttl_repeats: int = 3
    commit: str = "n_p"
    n_targets: int = 4
    flood_duration: int = 300


@dataclass
class LegitimateSection:
    rate_min: int = 1
    rate_max: int = 2
    diagnostic_probability: float = 0.05
    mean_session: float = 200.0
    warmup: int = 100


@dataclass
class DetectionSection:
    enabled: bool = True
    DT: int = 5000
    n_T: int = 5
    window: int = 10
    interval: int = 10
    training_fraction: float = 0.8
    ct_svm: float = 0.5
    ct_sweep: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9])
    seed: int | None = None
    epochs: int = 60
    lam: float = 0.001


SECTIONS = {
    "topology": TopologySection,
    "population": PopulationSection,
    "defense": DefenseSection,
    "adversary": AdversarySection,
    "legitimate": LegitimateSection,
    "detection": DetectionSection,
}


@dataclass
class ScenarioConfig:
    seed: int = 0
    horizon: int | None = None
    topology: TopologySection = field(default_factory=TopologySection)
    population: PopulationSection = field(default_factory=PopulationSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    adversary: AdversarySection = field(default_factory=AdversarySection)
    legitimate: LegitimateSection = field(default_factory=LegitimateSection)
    detection: DetectionSection = field(default_factory=DetectionSection)
    base_dir: str = "."

    @property
    def effective_horizon(self) -> int:
        if self.horizon is not None:
            return self.horizon
        return self.detection.DT + self.adversary.flood_duration

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("base_dir")
        out["horizon"] = self.effective_horizon
        return out


def _check_type(value: Any, default: Any) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _section(raw: Any, cls: type, name: str, problems: dict[str, str]):
    inst = cls()
    if raw is None:
        return inst
    if not isinstance(raw, dict):
        problems[name] = "must be an object"
        return inst
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        if key not in known:
            problems[f"{name}.{key}"] = "unknown key"
            continue
        if value is not None and not _check_type(value, getattr(inst, key)):
            problems[f"{name}.{key}"] = f"expected {type(getattr(inst, key)).__name__}"
            continue
        setattr(inst, key, value)
    return inst


def parse_config(raw: Mapping[str, Any], base_dir: str | Path = ".") -> ScenarioConfig:
    """Build a config from parsed JSON, raising ConfigInvalid with every problem found."""
    problems: dict[str, str] = {}
    if not isinstance(raw, Mapping):
        raise ConfigInvalid({"": "config must be a JSON object"})
    cfg = ScenarioConfig(base_dir=str(base_dir))
    for key, value in raw.items():
        if key in SECTIONS:
            setattr(cfg, key, _section(value, SECTIONS[key], key, problems))
        elif key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                problems["seed"] = "expected int"
            else:
                cfg.seed = value
        elif key == "horizon":
            if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
                problems["horizon"] = "expected int"
            else:
                cfg.horizon = value
        else:
            problems[key] = "unknown key"
    _validate(cfg, problems)
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def _validate(cfg: ScenarioConfig, problems: dict[str, str]) -> None:
    t, p, d, a, l, det = (
        cfg.topology, cfg.population, cfg.defense, cfg.adversary, cfg.legitimate, cfg.detection,
    )
    if t.file is not None and not (Path(cfg.base_dir) / t.file).exists():
        problems["topology.file"] = f"file not found: {t.file}"
    if t.generator not in ("isp", "synthetic"):
        problems["topology.generator"] = "must be 'isp' or 'synthetic'"
    if t.generator == "synthetic" and t.file is None:
        prof = t.profile or {}
        for key in ("n_paths", "mean_hops"):
            if not isinstance(prof.get(key), int):
                problems[f"topology.profile.{key}"] = "required int for the synthetic generator"
    if t.ingress < 1 or t.egress < 1:
        problems["topology.ingress"] = "ingress and egress counts must be >= 1"
    if not t.layers or any(not isinstance(w, int) or w < 1 for w in t.layers):
        problems["topology.layers"] = "must be a nonempty list of positive ints"
    if t.headroom <= 0:
        problems["topology.headroom"] = "must be > 0"
    for name in ("bots", "legitimate_hosts", "servers", "lg_servers"):
        if getattr(p, name) < 0:
            problems[f"population.{name}"] = "must be >= 0"
    if p.servers < 1 and t.file is None:
        problems["population.servers"] = "at least one server is required"
    if not 0 <= d.tau <= 1:
        problems["defense.tau"] = "must lie in [0, 1]"
    if d.nl_th < 1:
        problems["defense.nl_th"] = "must be >= 1"
    if d.k < 1:
        problems["defense.k"] = "must be >= 1"
    try:
        Strategy(a.strategy)
    except ValueError:
        problems["adversary.strategy"] = f"unknown strategy {a.strategy!r}"
    if a.U <= 0:
        problems["adversary.U"] = "must be > 0"
    if not 0 < a.probing_fraction <= 1:
        problems["adversary.probing_fraction"] = "must lie in (0, 1]"
    elif a.probing_fraction != 1 and a.strategy != Strategy.ONE_IN_ALL.value:
        problems["adversary.probing_fraction"] = "below 1 only with the one_in_all strategy"
    if a.commit not in ("all", "n_p"):
        problems["adversary.commit"] = "must be 'all' or 'n_p'"
    if a.flood_duration < 1:
        problems["adversary.flood_duration"] = "must be >= 1"
    if l.rate_min < 1 or l.rate_max < l.rate_min:
        problems["legitimate.rate_min"] = "need 1 <= rate_min <= rate_max"
    if not 0 <= l.diagnostic_probability <= 1:
        problems["legitimate.diagnostic_probability"] = "must lie in [0, 1]"
    if det.DT < 1 or det.n_T < 1 or det.DT % det.n_T:
        problems["detection.DT"] = "DT must be positive and divisible by n_T"
    if not 0 < det.training_fraction < 1:
        problems["detection.training_fraction"] = "must lie in (0, 1)"
    if not 0 <= det.ct_svm <= 1 or any(not 0 <= c <= 1 for c in det.ct_sweep):
        problems["detection.ct_svm"] = "thresholds must lie in [0, 1]"
    if det.window < 1 or det.interval < 1:
        problems["detection.window"] = "window and interval must be >= 1"
    elif l.warmup + a.flood_duration < det.window * det.interval:
        problems["detection.window"] = "warmup + flood_duration must cover one FM window"
    if l.warmup > det.DT:
        problems["legitimate.warmup"] = "must not exceed DT"
    if cfg.horizon is not None and det.enabled and cfg.horizon < det.DT + a.flood_duration:
        problems["horizon"] = "must cover DT plus the flood phase"


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid({"": f"config file not found: {path}"}) from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid({"": f"invalid JSON: {exc}"}) from None
    return parse_config(raw, path.parent)


# -- topology construction -----------------------------------------------------------


def isp_topology(
    seed: int,
    section: TopologySection,
    population: PopulationSection,
    mean_rate: float = 1.0,
) -> Topology:
    """Layered ISP network provisioned for its legitimate load.

    Ingress routers feed one or more core layers that fan into the egress
    routers; every router wires to ``out_degree`` routers of the next layer,
    Zipf-weighted by ``skew``. Each link gets ``headroom`` times the expected
    legitimate load it carries, with a floor of ``min_bandwidth``.
    """
    rng = np.random.default_rng([seed, 7])
    widths = [section.ingress, *section.layers, section.egress]
    kinds = (
        [RouterKind.INGRESS] + [RouterKind.CORE] * len(section.layers) + [RouterKind.EGRESS]
    )
    stages, routers, nid = [], [], 0
    for kind, width in zip(kinds, widths):
        stages.append(list(range(nid, nid + width)))
        routers.extend({"id": r, "kind": kind.value} for r in stages[-1])
        nid += width
    edges: set[tuple[int, int]] = set()
    for cur, nxt in zip(stages, stages[1:]):
        weights = 1.0 / np.arange(1, len(nxt) + 1) ** section.skew
        order = rng.permutation(len(nxt))
        probs = np.empty(len(nxt))
        probs[order] = weights / weights.sum()
        degree = min(section.out_degree, len(nxt))
        for a in cur:
            for j in rng.choice(len(nxt), size=degree, replace=False, p=probs):
                edges.add((a, nxt[int(j)]))
        # two upstream links per router so no single link is a cut
        fan_in = defaultdict(int)
        for _a, b in edges:
            fan_in[b] += 1
        for b in nxt:
            while fan_in[b] < min(2, len(cur)):
                a = cur[int(rng.integers(len(cur)))]
                if (a, b) not in edges:
                    edges.add((a, b))
                    fan_in[b] += 1
    _ensure_reachable(stages, edges, rng)

    ingress, egress = stages[0], stages[-1]
    endpoints, eid = [], 0

    def add(role: Role, attach: int) -> None:
        nonlocal eid
        endpoints.append({"id": eid, "role": role.value, "attach": attach})
        eid += 1

    for i in range(population.servers):
        add(Role.SERVER, egress[i % len(egress)])
    for i in range(population.lg_servers):
        add(Role.LG_SERVER, ingress[i % len(ingress)])
    for role, count in (
        (Role.LEGITIMATE_HOST, population.legitimate_hosts),
        (Role.BOT, population.bots),
    ):
        for _ in range(count):
            add(role, ingress[int(rng.integers(len(ingress)))])

    links = [
        {"id": i, "src": a, "dst": b, "bandwidth": section.min_bandwidth}
        for i, (a, b) in enumerate(sorted(edges))
    ]
    draft = build_topology({"routers": routers, "links": links, "endpoints": endpoints})
    load = expected_legit_load(draft, mean_rate)
    for link in links:
        link["bandwidth"] = max(
            section.min_bandwidth, math.ceil(section.headroom * load.get(link["id"], 0.0))
        )
    return build_topology({"routers": routers, "links": links, "endpoints": endpoints})


def _ensure_reachable(stages: list[list[int]], edges: set[tuple[int, int]], rng) -> None:
    """Add last-layer links until every ingress reaches every egress."""
    out = defaultdict(set)
    for a, b in edges:
        out[a].add(b)
    last_core, egress = stages[-2], stages[-1]
    for src in stages[0]:
        reach, frontier = set(), {src}
        while frontier:
            nxt = set()
            for r in frontier:
                nxt |= out[r] - reach
            reach |= nxt
            frontier = nxt
        for e in egress:
            if e in reach:
                continue
            cands = sorted(r for r in last_core if r in reach)
            a = cands[int(rng.integers(len(cands)))]
            edges.add((a, e))
            out[a].add(e)
            reach.add(e)


def expected_legit_load(topology: Topology, mean_rate: float) -> dict[int, float]:
    """Mean per-tick legitimate load per link under uniform server choice."""
    servers = [s.id for s in topology.servers()]
    per_ingress = defaultdict(int)
    for h in topology.endpoints_with_role(Role.LEGITIMATE_HOST):
        per_ingress[h.attach] += 1
    load: dict[int, float] = defaultdict(float)
    for ingress, count in per_ingress.items():
        for s in servers:
            for lid in topology.path_from_router(ingress, s):
                load[lid] += count * mean_rate / len(servers)
    return dict(load)


def build_scenario_topology(cfg: ScenarioConfig) -> Topology:
    t = cfg.topology
    seed = cfg.seed if t.seed is None else t.seed
    if t.file is not None:
        return load_topology(Path(cfg.base_dir) / t.file)
    mean_rate = (cfg.legitimate.rate_min + cfg.legitimate.rate_max) / 2
    if t.generator == "synthetic":
        p = cfg.population
        profile = TopologyProfile(
            n_paths=t.profile["n_paths"],
            mean_hops=t.profile["mean_hops"],
            density_skew=float(t.profile.get("density_skew", 1.5)),
            n_lg_servers=p.lg_servers or None,
            n_servers=p.servers,
            n_hosts=p.legitimate_hosts,
            n_bots=p.bots,
        )
        return synthesize_topology(seed, profile)
    return isp_topology(seed, t, cfg.population, mean_rate)


# -- run -------------------------------------------------------------------------------


@dataclass
class RunResult:
    report: dict
    timelines: list[tuple]
    features: list
    plan: dict
    world: World | None = None


def run_scenario(cfg: ScenarioConfig, keep_world: bool = False) -> RunResult:
    """Execute every phase and return the report plus the raw tables."""
    topo = build_scenario_topology(cfg)
    d, a, l, det = cfg.defense, cfg.adversary, cfg.legitimate, cfg.detection
    horizon = cfg.effective_horizon
    DT = det.DT
    flood_start, flood_stop = DT, DT + a.flood_duration
    obs_start = DT - l.warmup

    # defender measurement and plan
    linkmap = lg_trace_all(topo)
    k = min(d.k, sum(1 for f in linkmap.flows_by_link.values() if f))
    targets = identify_target_links(linkmap, k, topo)
    plan = group_bait_links(linkmap, d.tau, d.nl_th, targets)
    defense = (
        ObfuscationState(topo, plan, d.ttl_threshold, d.port_repeat_threshold, seed=cfg.seed)
        if d.enabled
        else None
    )
    world = World(topo, seed=cfg.seed, defense=defense)

    hosts = [h.id for h in topo.endpoints_with_role(Role.LEGITIMATE_HOST)]
    bots = [b.id for b in topo.endpoints_with_role(Role.BOT)]
    lo, hi = l.rate_min, l.rate_max
    schedule_legitimate_traffic(
        world, hosts,
        lambda rng: int(rng.integers(lo, hi + 1)),
        l.diagnostic_probability,
        start=obs_start, stop=horizon, detection_period=(0, DT),
        mean_session=l.mean_session,
    )

    adv_cfg = AdversaryConfig(
        bots=tuple(bots), interval=a.interval, jitter=a.jitter, stagger=a.stagger, U=a.U,
        strategy=Strategy(a.strategy), probing_fraction=a.probing_fraction,
        prolong_factor=a.prolong_factor, fixed_ttl_repeats=a.fixed_ttl_repeats,
        commit=a.commit, n_targets=a.n_targets,
    )
    adv_map = run_probe_phase(world, adv_cfg, start=0)
    probe_flagged = {
        ep for ep, rec in (defense.probers.items() if defense else ())
        if rec.flagged_tick is not None and rec.flagged_tick < DT
    }
    fast_forward(world, obs_start)
    try:
        flood = select_and_flood(world, adv_map, a.n_targets, a.flood_duration, adv_cfg, flood_start)
    except EmptyLinkmap:
        flood = None

    target_ids = [t.link for t in plan.target_links]
    member_ids = sorted({m for b in plan.bait_links for m in b.members})
    converge_ids = {b.converge for b in plan.bait_links}
    watched = sorted(set(target_ids) | set(member_ids) | set(adv_map.chosen))
    timelines: list[tuple] = []
    congested_ticks = defaultdict(int)
    while world.tick < horizon:
        t = world.tick
        loads = step(world)
        if t < flood_start:
            continue
        for lid in watched:
            ld = loads[world.link_index[lid]]
            role = (
                "target" if lid in target_ids
                else "converge" if lid in converge_ids
                else "bait_member" if lid in member_ids
                else "adversary_choice"
            )
            timelines.append((t, lid, role, ld.offered, ld.delivered, int(ld.congested)))
            if ld.congested and t < flood_stop:
                congested_ticks[lid] += 1
    verified = verify_congestion(world, adv_map.chosen, adv_map) if flood else {}

    # attack cost
    B_bw = topo.links[target_ids[0]].bandwidth if target_ids else 1
    n_un = len(flood.idle) if flood else len(bots)
    cost = attack_cost(plan, B_bw, a.U, len(target_ids), n_un, topology=topo)
    multipliers = [v / cost.n_p for v in cost.n_l.values()]
    cost_multiplier = sum(multipliers) / len(multipliers) if multipliers else None

    # detection
    detection_report: dict[str, Any] = {"enabled": det.enabled}
    feature_rows: list = []
    if det.enabled:
        detection_report, feature_rows = _detect(cfg, world, hosts, bots, watched, obs_start, horizon)

    probers = adversary_probers(world, adv_cfg)
    report = {
        "seed": cfg.seed,
        "config": cfg.to_json(),
        "topology": {
            "routers": len(topo.routers),
            "links": len(topo.links),
            "servers": len(topo.servers()),
            "lg_servers": len(topo.endpoints_with_role(Role.LG_SERVER)),
            "legitimate_hosts": len(hosts),
            "bots": len(bots),
        },
        "sifting": {
            "n_paths": linkmap.n_paths,
            "mean_hops": linkmap.mean_hops,
            "target_links": target_ids,
            "bait_links": len(plan.bait_links),
            "bait_members": len(member_ids),
            "coverage": plan.coverage,
            "exhausted": plan.exhausted,
        },
        "defense": {
            "enabled": d.enabled,
            "flagged_endpoints": len(defense.label_log) if defense else 0,
            "probing_bots": len(probers),
            "probing_bots_flagged": len(set(probers) & probe_flagged),
            "reroutes": len(defense.reroutes) if defense else 0,
            "unrerouted": len(defense.unrerouted) if defense else 0,
        },
        "adversary": {
            "ranking": [
                {"link": lid, "bots": adv_map.bot_count(lid), "paths": adv_map.path_counts.get(lid, 0)}
                for lid in adv_map.ranking()[:20]
            ],
            "chosen": list(adv_map.chosen),
            "flooding_bots": len(flood.assignments) if flood else 0,
            "idle_bots": n_un,
            "verified_congested": {str(k): v for k, v in sorted(verified.items())},
        },
        "congestion": {
            "flood_window": [flood_start, flood_stop],
            "target_congested_ticks": {str(t): congested_ticks[t] for t in target_ids},
            "bait_member_congested_ticks": {str(m): congested_ticks[m] for m in member_ids},
            "chosen_congested_ticks": {str(c): congested_ticks[c] for c in adv_map.chosen},
            "any_target_congested": any(congested_ticks[t] for t in target_ids),
        },
        "attack_cost": {
            "B": B_bw,
            "U": a.U,
            "n_p": cost.n_p,
            "n_b": cost.n_b,
            "n_l": {str(k): v for k, v in sorted(cost.n_l.items())},
            "cost_multiplier": cost_multiplier,
        },
        "detection": detection_report,
    }
    return RunResult(report, timelines, feature_rows, plan.to_json(), world if keep_world else None)


def adversary_probers(world: World, adv_cfg: AdversaryConfig) -> list[int]:
    from .adversary import probing_bots

    return probing_bots(world, adv_cfg) if adv_cfg.bots else []


def _detect(cfg, world, hosts, bots, links, obs_start, horizon):
    det = cfg.detection
    seed = cfg.seed if det.seed is None else det.seed
    everyone = sorted(hosts + bots)
    labels = {h: 0 for h in hosts} | {b: 1 for b in bots}
    out: dict[str, Any] = {"enabled": True, "monitored_links": links}
    if not links or not bots or not hosts:
        out["modes"] = {m.value: None for m in Mode}
        out["undefined"] = "need monitored links and both classes"
        return out, []
    volumes = host_link_volumes(world, everyone, links, obs_start, horizon)
    fms = extract_fm(volumes, everyone, det.window, det.interval, 1, obs_start)
    tms = extract_tm(world.traces, links, det.DT, det.n_T, 0)
    train, test = split_by_host(everyone, labels, det.training_fraction, seed)
    out["train_hosts"] = len(train)
    out["test_hosts"] = len(test)
    modes: dict[str, Any] = {}
    rows = []
    for mode in Mode:
        vecs = build_features(fms, tms, mode, labels, tm_shape=(len(links), det.n_T))
        by_host = {v.host: v for v in vecs}
        X_train = np.array([by_host[h].values for h in train])
        X_test = np.array([by_host[h].values for h in test])
        norm = MinMax.fit(X_train)
        model = train_svm(
            norm.apply(X_train), [labels[h] for h in train], seed,
            SvmConfig(epochs=det.epochs, lam=det.lam),
        )
        model.normalizer = norm
        y_test = [labels[h] for h in test]
        main = evaluate(model, norm.apply(X_test), y_test, det.ct_svm)
        sweep = [evaluate(model, norm.apply(X_test), y_test, c).to_json() for c in det.ct_sweep]
        modes[mode.value] = {"metrics": main.to_json(), "ct_sweep": sweep, "model": model.to_json()}
        rows.extend(vecs)
    out["modes"] = modes
    return out, rows


def write_outputs(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result.report, indent=1, sort_keys=True) + "\n")
    (out / "plan.json").write_text(json.dumps(result.plan, indent=1, sort_keys=True) + "\n")
    with open(out / "timelines.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "link_id", "role", "offered", "delivered", "congested"])
        writer.writerows(result.timelines)
    write_features_csv(result.features, out / "features.csv")


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> dict:
    result = run_scenario(cfg)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result.report


# -- sweeps ------------------------------------------------------------------------------

AXES = {
    "NL_th": ("defense", "nl_th", int),
    "tau": ("defense", "tau", float),
    "training_fraction": ("detection", "training_fraction", float),
    "CT_svm": ("detection", "ct_svm", float),
    "strategy": ("adversary", "strategy", str),
    "seed": (None, "seed", int),
}


def with_axis(cfg: ScenarioConfig, axis: str, value: Any) -> ScenarioConfig:
    if axis not in AXES:
        raise ConfigInvalid({"axis": f"unknown axis {axis!r}; choose from {sorted(AXES)}"})
    section, name, cast = AXES[axis]
    new = copy.deepcopy(cfg)
    target = new if section is None else getattr(new, section)
    setattr(target, name, cast(value))
    problems: dict[str, str] = {}
    _validate(new, problems)
    if problems:
        raise ConfigInvalid(problems)
    return new


def summarize(report: dict) -> dict:
    modes = (report["detection"].get("modes") or {}) if report["detection"]["enabled"] else {}
    fused = (modes.get(Mode.FUSED_FM_TM.value) or {}).get("metrics", {}) if modes else {}
    return {
        "coverage": report["sifting"]["coverage"],
        "detection_rate": fused.get("detection_rate"),
        "fpr": fused.get("false_positive_rate"),
        "cost_multiplier": report["attack_cost"]["cost_multiplier"],
    }


def _sweep_worker(args: tuple) -> tuple[Any, dict]:
    cfg, axis, value, out_dir = args
    report = run(with_axis(cfg, axis, value), out_dir)
    return value, summarize(report)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("LINKBAIT_SIM_THREADS")
    limit = int(cap) if cap and cap.isdigit() and int(cap) > 0 else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def sweep(
    cfg: ScenarioConfig, axis: str, values: Sequence[Any], out_dir: str | Path | None = None
) -> list[tuple[Any, dict]]:
    """Run one independent world per value and collect the summary rows in order."""
    for v in values:  # fail fast on a bad value before any run starts
        with_axis(cfg, axis, v)
    jobs = [
        (cfg, axis, v, None if out_dir is None else Path(out_dir) / f"{axis}={v}")
        for v in values
    ]
    workers = worker_count(len(jobs))
    if workers == 1:
        rows = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    if out_dir is not None:
        write_sweep_csv(rows, Path(out_dir) / "sweep.csv")
    return rows


def write_sweep_csv(rows: Sequence[tuple[Any, dict]], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "coverage", "detection_rate", "fpr", "cost_multiplier"])
        for value, s in rows:
            writer.writerow(
                [value] + ["" if s[k] is None else s[k] for k in ("coverage", "detection_rate", "fpr", "cost_multiplier")]
            )
