"""Shared helpers: fixture scenarios, switch/controller construction and
cached simulation runs (the long runs are reused across test modules)."""

from __future__ import annotations

import functools
from dataclasses import replace
from typing import Dict, Tuple

import pytest
from hypothesis import settings

from ivnsec.controlplane import Controller
from ivnsec.dataplane import SwitchState
from ivnsec.scenario import Scenario, load_fixture
from ivnsec.simcore import RunResult, run

settings.register_profile("ivnsec", deadline=None, max_examples=100)
settings.load_profile("ivnsec")


@functools.lru_cache(maxsize=None)
def fixture(name: str) -> Scenario:
    return load_fixture(name)


@functools.lru_cache(maxsize=None)
def cached_run(name: str, seed: int) -> RunResult:
    """One simulation per (fixture, seed) for the whole session."""
    return run(fixture(name), seed)


def build_plane(scn: Scenario, provision: bool = True, **controller_kw) -> Tuple[Dict[str, SwitchState], Controller]:
    topo = scn.topology
    switches = {sw: SwitchState(sw, dict(topo.ports(sw)), topo.mirror_port(sw)) for sw in topo.switches}
    kw = dict(acl=scn.acl, whitelist=scn.whitelist, tunnels=scn.tunnels, log_unknown=scn.controller.log_unknown)
    kw.update(controller_kw)
    ctrl = Controller(topo, switches, **kw)
    if provision:
        ctrl.provision(scn.matrix)
    return switches, ctrl


def shortened(scn: Scenario, duration_us: int) -> Scenario:
    return replace(scn, duration_us=duration_us)


@pytest.fixture(scope="session")
def static_scn() -> Scenario:
    return fixture("static_provisioning")


@pytest.fixture(scope="session")
def scan_scn() -> Scenario:
    return fixture("port_scan")


@pytest.fixture
def plane(static_scn):
    return build_plane(static_scn)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
