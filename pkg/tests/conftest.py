import pytest

from honeynet.scenario import default_templates
from honeynet.vm_state import TemplateSpec
from honeynet.world import World
from honeynet.worm_engine import WormSpec

XP = "Windows Xp professional"


@pytest.fixture(scope="session")
def catalog():
    return default_templates()


@pytest.fixture
def tiny_template():
    return TemplateSpec(
        name="tiny",
        os_label="Windows test",
        ram_mb=256,
        disk_gb=1,
        software_set=frozenset({"smb"}),
        baseline_processes=(("p1", ("a.dll", "b.dll")), ("p2", ("c.dll",))),
    )


def make_worm(family="wx", **kw):
    kw.setdefault("invariant_region", b"INVARIANT-" + family.encode())
    kw.setdefault("process_name", f"{family}.exe")
    return WormSpec(family, **kw)


@pytest.fixture
def world(catalog):
    """Two servers, one switch, templates from the default catalog, no worms."""
    w = World.in_memory(templates=catalog)
    w.topology.add_server("esx-1")
    w.topology.add_server("esx-2")
    w.topology.add_switch("dvs-1")
    return w


# acceptance verdicts, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
