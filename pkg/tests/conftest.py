import socket

import pytest

from handmorph.model import FingerParams, OphParams, SemanticSchema

# Every outbound connection attempt is recorded and refused.
NETWORK_ATTEMPTS = []


def _refuse(*args, **kwargs):
    NETWORK_ATTEMPTS.append(args)
    raise OSError("network access is disabled in the test suite")


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    monkeypatch.setattr(socket.socket, "connect", _refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", _refuse)
    monkeypatch.setattr(socket, "create_connection", _refuse)
    monkeypatch.setattr(socket, "getaddrinfo", _refuse)
    yield NETWORK_ATTEMPTS


# Three symmetric fingers, each J-L-J-L-J, hub on the palm.
PAPER_GRAMMAR = {
    "components": {
        "P": "palm",
        **{f"J{i}": "joint" for i in range(1, 10)},
        **{f"L{i}": "link" for i in (1, 2, 4, 5, 7, 8)},
    },
    "structure_rules": [
        "S -> P <-> F1 <-> F2 <-> F3",
        "F1 -> J1 <-> L1 <-> J2 <-> L2 <-> J3",
        "F2 -> J4 <-> L4 <-> J5 <-> L5 <-> J6",
        "F3 -> J7 <-> L7 <-> J8 <-> L8 <-> J9",
    ],
    "connection_rules": [],
    "layout_hints": {"finger_spacing": "24 mm", "tendon_routing": "palmar"},
}


def make_schema(grasp="force_based", goal="lift a water bottle"):
    return SemanticSchema(goal, "bottle", (70.0, 70.0, 220.0), 500.0, "plastic",
                          "low", "medium", "high", "low", grasp)


def make_params(n=3, scale=1.0, metacarpal=30.0, width=80.0, curvature=0.5, spacing=25.0, angle=0.0):
    offset = (n - 1) / 2
    fingers = tuple(FingerParams(angle, (i - offset) * spacing, metacarpal, scale) for i in range(n))
    return OphParams(fingers, width, curvature)


# --------------------------------------------------------------------------
# Acceptance reporting: tests marked ``criterion(n, text)`` get one PASS/FAIL line.

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    if report.when == "call" or report.failed:
        ok = report.passed and _RESULTS.get(number, (None, True))[1]
        _RESULTS[number] = (text, ok)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        text, ok = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")
