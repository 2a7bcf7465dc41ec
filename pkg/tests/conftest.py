import pytest

from pathfinder.env import AttackEnv
from pathfinder.model import load_benchmark, load_scenario

# goal sits in a device payload two moves from the start
TINY = """
name: tiny
spaces: [outer, room]
devices:
  - {id: box, kind: computer, location: room, payload: [flag]}
info: [flag]
adjacency: [[outer, room]]
attacker_start: outer
goal: flag
"""

# one firewall between a workstation and a web server
LAB = """
name: lab
spaces: [outer, lab, dc]
devices:
  - {id: pc, kind: computer, location: lab}
  - {id: fw, kind: firewall, location: dc}
  - {id: srv, kind: server, location: dc}
ports:
  - {id: pc_e0, host: pc}
  - {id: fw_e0, host: fw}
  - {id: fw_e1, host: fw}
  - {id: fw_e2, host: fw}
  - {id: srv_e0, host: srv}
services:
  - {id: fw_mgr, port: fw_e2, password: fw_pw}
  - {id: web, port: srv_e0, password: web_pw}
files:
  - {id: notes, host: pc, payload: [fw_pw, web_pw]}
  - {id: loot, host: web, payload: [flag]}
info: [fw_pw, web_pw, flag, dc_badge]
adjacency: [[outer, lab], [lab, dc]]
links: [[pc_e0, fw_e0], [fw_e1, srv_e0]]
acl:
  - {firewall: fw, src: pc_e0, dst: fw_e2, service: fw_mgr}
rules:
  - {kind: PhysicalAccess, space: dc, key: dc_badge}
attacker_start: outer
goal: flag
"""


@pytest.fixture(scope="session")
def bench():
    return load_benchmark()


@pytest.fixture(scope="session")
def bench_env(bench):
    return AttackEnv(bench)


@pytest.fixture(scope="session")
def tiny():
    return load_scenario(TINY)


@pytest.fixture(scope="session")
def lab():
    return load_scenario(LAB)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)
