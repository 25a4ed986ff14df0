"""Scenario files (YAML) and the packaged template catalog."""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .orchestrator import InspectionPolicy
from .vm_state import TemplateSpec
from .worm_engine import ScanStrategy, WormSpec


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending field path."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ServerCfg(_Model):
    id: str
    capacity: Optional[int] = Field(None, ge=1)


class TemplateCfg(_Model):
    name: str
    os_label: str
    ram_mb: int = Field(gt=0)
    disk_gb: int = Field(gt=0)
    processors: int = Field(1, ge=1)
    software_set: list[str] = []
    baseline_processes: dict[str, list[str]] = {}

    def to_spec(self) -> TemplateSpec:
        return TemplateSpec(
            self.name, self.os_label, self.ram_mb, self.disk_gb, self.processors,
            frozenset(self.software_set),
            tuple((p, tuple(m)) for p, m in self.baseline_processes.items()),
        )


class WormCfg(_Model):
    family_id: str
    invariant: Optional[str] = None
    invariant_hex: Optional[str] = None
    mutable_region_len: int = Field(16, ge=0)
    polymorphic: bool = True
    checks_existence: bool = False
    dormancy_ticks: int = Field(0, ge=0)
    scan_strategy: Literal["sweep_port_group", "address_harvest"] = "sweep_port_group"
    disk_write_sectors: int = Field(0, ge=0)
    process_name: str = ""
    hidden: bool = False
    host_process: Optional[str] = None

    @model_validator(mode="after")
    def _one_invariant(self) -> WormCfg:
        if (self.invariant is None) == (self.invariant_hex is None):
            raise ValueError("exactly one of invariant / invariant_hex is required")
        if self.invariant is not None and not self.invariant:
            raise ValueError("invariant must be non-empty")
        if self.invariant_hex is not None:
            bytes.fromhex(self.invariant_hex)
        return self

    def to_spec(self) -> WormSpec:
        inv = self.invariant.encode() if self.invariant is not None else bytes.fromhex(self.invariant_hex)
        return WormSpec(
            self.family_id, inv, self.mutable_region_len, self.polymorphic, self.checks_existence,
            self.dormancy_ticks, ScanStrategy(self.scan_strategy), self.disk_write_sectors,
            self.process_name, self.hidden, self.host_process,
        )


class InfectionCfg(_Model):
    vm: int = Field(ge=0)  # index into the network's customer VMs
    family: str


class NetworkCfg(_Model):
    name: str
    switch: str = "dvs-1"
    vm_count: int = Field(ge=0)
    software_profile: list[str] = []
    template: Optional[str] = None  # pin a template instead of profile matching
    infections: list[InfectionCfg] = []
    address_book_density: float = Field(1.0, ge=0.0, le=1.0)


class PolicyCfg(_Model):
    dwell_ticks: int = Field(20, ge=1)
    rotation_count: int = Field(5, ge=0)
    snapshot_period_ticks: int = Field(10, ge=1)
    networks_per_inspector: int = Field(2, ge=1)
    baseline_warmup_ticks: int = Field(5, ge=0)
    churn_tolerance: int = Field(0, ge=0)

    def to_policy(self) -> InspectionPolicy:
        return InspectionPolicy(**self.model_dump())


class MigrateCfg(_Model):
    network: str
    vm: int = Field(ge=0)
    dest: str


class DynamicEventCfg(_Model):
    tick: int = Field(ge=0)
    add_network: Optional[NetworkCfg] = None
    remove_network: Optional[str] = None
    migrate_vm: Optional[MigrateCfg] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> DynamicEventCfg:
        n = sum(x is not None for x in (self.add_network, self.remove_network, self.migrate_vm))
        if n != 1:
            raise ValueError("exactly one of add_network / remove_network / migrate_vm is required")
        return self


class ScenarioConfig(_Model):
    name: str = "scenario"
    seed: int = 0
    max_ticks: int = Field(ge=1)
    servers: list[ServerCfg] = []
    templates: Optional[list[TemplateCfg]] = None
    worms: list[WormCfg] = []
    networks: list[NetworkCfg] = []
    policy: PolicyCfg = PolicyCfg()
    dynamic_events: list[DynamicEventCfg] = []

    def template_specs(self) -> dict[str, TemplateSpec]:
        cfgs = self.templates if self.templates is not None else default_template_cfgs()
        return {t.name: t.to_spec() for t in cfgs}

    def worm_specs(self) -> dict[str, WormSpec]:
        return {w.family_id: w.to_spec() for w in self.worms}


def _load_catalog(text: str) -> list[TemplateCfg]:
    data = yaml.safe_load(text) or {}
    return [TemplateCfg.model_validate(t) for t in data.get("templates", [])]


def default_template_cfgs() -> list[TemplateCfg]:
    text = resources.files("honeynet").joinpath("data/templates.yaml").read_text(encoding="utf-8")
    return _load_catalog(text)


def default_templates() -> dict[str, TemplateSpec]:
    return {t.name: t.to_spec() for t in default_template_cfgs()}


def load_template_catalog(path: str | os.PathLike) -> dict[str, TemplateSpec]:
    return {t.name: t.to_spec() for t in _load_catalog(Path(path).read_text(encoding="utf-8"))}


def scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"a_polymorphic_sweep"``."""
    p = resources.files("honeynet").joinpath(f"data/scenarios/{name}.yaml")
    return Path(str(p))


def shipped_scenarios() -> list[str]:
    d = resources.files("honeynet").joinpath("data/scenarios")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".yaml"))


def _check_references(cfg: ScenarioConfig) -> None:
    def fail(where: str, msg: str) -> None:
        raise ScenarioError(f"{where}: {msg}")

    templates = cfg.template_specs()
    worms = {w.family_id for w in cfg.worms}
    servers = {s.id for s in cfg.servers}
    if len(servers) != len(cfg.servers):
        fail("servers", "duplicate server id")
    if len(templates) != len(cfg.templates if cfg.templates is not None else templates):
        fail("templates", "duplicate template name")
    if len(worms) != len(cfg.worms):
        fail("worms", "duplicate worm family_id")
    for i, w in enumerate(cfg.worms):
        if w.host_process is not None and not any(
            w.host_process in dict(t.baseline_processes) for t in templates.values()
        ):
            fail(f"worms.{i}.host_process", f"no template runs process {w.host_process!r}")

    def check_net(where: str, net: NetworkCfg) -> None:
        if net.template is not None and net.template not in templates:
            fail(f"{where}.template", f"unknown template {net.template!r}")
        for j, inf in enumerate(net.infections):
            if inf.family not in worms:
                fail(f"{where}.infections.{j}.family", f"unknown worm family {inf.family!r}")
            if inf.vm >= net.vm_count:
                fail(f"{where}.infections.{j}.vm", f"index {inf.vm} out of range for vm_count {net.vm_count}")

    live: dict[str, NetworkCfg] = {}
    for i, net in enumerate(cfg.networks):
        if net.name in live:
            fail(f"networks.{i}.name", f"duplicate network name {net.name!r}")
        check_net(f"networks.{i}", net)
        live[net.name] = net
    ever = set(live)
    # replay dynamic events in execution order (stable by tick)
    order = sorted(range(len(cfg.dynamic_events)), key=lambda k: cfg.dynamic_events[k].tick)
    for k in order:
        ev = cfg.dynamic_events[k]
        where = f"dynamic_events.{k}"
        if ev.tick >= cfg.max_ticks:
            fail(f"{where}.tick", f"tick {ev.tick} is beyond max_ticks {cfg.max_ticks}")
        if ev.add_network is not None:
            if ev.add_network.name in ever:
                fail(f"{where}.add_network.name", f"network name {ev.add_network.name!r} already used")
            check_net(f"{where}.add_network", ev.add_network)
            live[ev.add_network.name] = ev.add_network
            ever.add(ev.add_network.name)
        elif ev.remove_network is not None:
            if ev.remove_network not in live:
                fail(f"{where}.remove_network", f"unknown or already removed network {ev.remove_network!r}")
            del live[ev.remove_network]
        else:
            mv = ev.migrate_vm
            if mv.network not in live:
                fail(f"{where}.migrate_vm.network", f"unknown network {mv.network!r}")
            if mv.vm >= live[mv.network].vm_count:
                fail(f"{where}.migrate_vm.vm", f"index {mv.vm} out of range")
            if mv.dest not in servers:
                fail(f"{where}.migrate_vm.dest", f"unknown server {mv.dest!r}")


def parse_scenario(data: object) -> ScenarioConfig:
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        raise ScenarioError(f"{loc}: {err['msg']}") from None
    _check_references(cfg)
    return cfg


def load_scenario(path: str | os.PathLike) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"<file>: YAML parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("<root>: scenario must be a mapping")
    return parse_scenario(data)
