"""Link-flooding defense simulator: link sifting, bait links, probe rerouting and bot detection."""

from .adversary import AdversaryConfig, Strategy, run_probe_phase, select_and_flood, verify_congestion
from .detection import (
    Mode,
    build_features,
    evaluate,
    extract_fm,
    extract_tm,
    train_svm,
)
from .errors import LinkbaitError
from .obfuscation import ObfuscationState, adversary_view, apply_reroute, inspect_ingress
from .scenario import ScenarioConfig, load_config, run, run_scenario, sweep
from .sifting import (
    attack_cost,
    group_bait_links,
    identify_target_links,
    lg_trace_all,
)
from .topology import Topology, build_topology, route, synthesize_topology
from .traffic import World, emulate_traceroute, schedule_legitimate_traffic, step

__all__ = [
    "AdversaryConfig",
    "LinkbaitError",
    "Mode",
    "ObfuscationState",
    "ScenarioConfig",
    "Strategy",
    "Topology",
    "World",
    "adversary_view",
    "apply_reroute",
    "attack_cost",
    "build_features",
    "build_topology",
    "emulate_traceroute",
    "evaluate",
    "extract_fm",
    "extract_tm",
    "group_bait_links",
    "identify_target_links",
    "inspect_ingress",
    "lg_trace_all",
    "load_config",
    "route",
    "run",
    "run_probe_phase",
    "run_scenario",
    "schedule_legitimate_traffic",
    "select_and_flood",
    "step",
    "sweep",
    "synthesize_topology",
    "train_svm",
    "verify_congestion",
]
