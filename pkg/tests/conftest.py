import json
import threading
from pathlib import Path

import pytest

from share._io import atomic_write_text
from share.geometry import read_grid_csv


class FakeResponder(threading.Thread):
    """Plays the external model: acks each trainspec and answers each grid with errors.

    The reported error shrinks by ``step`` mm per interval so a loop visibly improves.
    """

    def __init__(self, directory, intervals, step=5.0, poll=0.01):
        super().__init__(daemon=True)
        self.dir = Path(directory)
        self.intervals = intervals
        self.step = step
        self.poll = poll
        self.stop = threading.Event()
        self.trainspecs = []
        self.error = None

    def _await(self, path):
        while not path.exists():
            if self.stop.wait(self.poll):
                raise TimeoutError(path)

    def run(self):
        try:
            for n in range(self.intervals):
                spec = self.dir / f"{n:03d}.trainspec.json"
                self._await(spec)
                self.trainspecs.append(json.loads(spec.read_text()))
                atomic_write_text(self.dir / f"{n:03d}.ack", "ok\n")
                grid_path = self.dir / f"{n:03d}.grid.csv"
                self._await(grid_path)
                grid = read_grid_csv(grid_path)
                rows = ["theta_deg,phi_deg,error_mm"]
                for p in grid:
                    err = max(0.0, 100.0 - self.step * n + 0.2 * p.theta_deg + (10.0 if p.phi_deg < 90 else 0.0))
                    rows.append(f"{p.theta_deg!r},{p.phi_deg!r},{err!r}")
                atomic_write_text(self.dir / f"{n:03d}.errors.csv", "\n".join(rows) + "\n")
        except Exception as exc:  # surfaced by the test through .error
            self.error = exc


@pytest.fixture
def responder_factory():
    started = []

    def make(directory, intervals, **kw):
        r = FakeResponder(directory, intervals, **kw)
        r.start()
        started.append(r)
        return r

    yield make
    for r in started:
        r.stop.set()
        r.join(timeout=5)


# -- acceptance verdict lines ----------------------------------------------------

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """``verdict(label, ok, detail)`` records one PASS/FAIL line and fails the test when not ok."""

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        request.config.stash[_VERDICTS].append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
