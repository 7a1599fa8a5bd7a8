import pytest

from pipebft.core import Config, quorums

_acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in item.nodeid:
        _acceptance_results.append((item.name, report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _acceptance_results:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({duration:.1f}s)")


class StubServices:
    """Manual-clock transport stub for driving a Replica or EpochConsensus by
    hand: records sends/broadcasts and holds timers for explicit firing."""

    def __init__(self, now=0.0):
        self.clock = now
        self.sent = []  # (dest, env)
        self.broadcasts = []
        self.timers = []  # (due, fn)
        self.rate = 0.0

    def now(self):
        return self.clock

    def send(self, dest, env):
        self.sent.append((dest, env))

    def broadcast(self, env):
        self.broadcasts.append(env)

    def schedule(self, delay, fn):
        self.timers.append((self.clock + delay, fn))

    def tx_rate_sample(self):
        return self.rate

    def fire_due(self):
        """Run every timer due at the current clock, in schedule order."""
        due = [(t, fn) for t, fn in self.timers if t <= self.clock]
        self.timers = [(t, fn) for t, fn in self.timers if t > self.clock]
        for _, fn in due:
            fn()


@pytest.fixture
def cfg4():
    return Config(n=4, batch_size_bytes=4096, round_timeout_initial=0.1)


@pytest.fixture
def q4(cfg4):
    return quorums(cfg4)
