import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def ball10():
    from surfmotion.volgrid import ball_mask

    return ball_mask(10.0, margin=3)


ACCEPTANCE = pytest.StashKey[list]()


class Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.ok = True
        self.details = []

    def check(self, condition, detail):
        self.details.append(detail)
        self.ok &= bool(condition)

    def line(self):
        verdict = "PASS" if self.ok else "FAIL"
        return f"criterion {self.number:02d} {verdict}  {self.title}: {'; '.join(self.details)} [{self.seconds:.1f} s]"


@pytest.fixture
def criterion(request):
    """Context manager that records one pass/fail line per acceptance criterion."""
    import time
    from contextlib import contextmanager

    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    @contextmanager
    def run(number, title):
        c = Criterion(number, title)
        t0 = time.perf_counter()
        try:
            yield c
        except Exception as exc:
            c.ok = False
            c.details.append(f"error {exc!r}")
            raise
        finally:
            c.seconds = time.perf_counter() - t0
            lines.append(c.line())
            print(c.line())
        assert c.ok, c.line()

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
