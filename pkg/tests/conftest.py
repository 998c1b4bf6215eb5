import pytest

from redshard import engine
from redshard.model import SystemState

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


class _CheckedState(SystemState):
    """SystemState that also asserts policy-level properties after each event."""

    work_conserving = False
    nr_cap = False
    violations = None

    def check_invariants(self):
        super().check_invariants()
        idle = sum(1 for s in self.threads if s is None)
        for rid, st in self.active.items():
            if self.work_conserving and idle and (st.req.n - st.started > 0 or st.paused):
                self.violations.append(("idle thread with assignable chunk", rid))
            if self.nr_cap and len(st.serving) > st.req.k - st.downloaded:
                self.violations.append(("more threads than remaining chunks", rid))


@pytest.fixture
def checked_engine(monkeypatch):
    """Patch the engine so every event asserts work conservation / the NR cap.

    Returns a function ``configure(work_conserving, nr_cap)`` giving the list
    that collects violations.
    """

    def configure(work_conserving=False, nr_cap=False):
        found = []

        class S(_CheckedState):
            pass

        S.work_conserving = work_conserving
        S.nr_cap = nr_cap
        S.violations = found
        monkeypatch.setattr(engine, "SystemState", S)
        return found

    return configure
