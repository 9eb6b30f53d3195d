import contextlib
import time

import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class _Outcome:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion(request):
    """``with criterion(3, "title") as out:`` records one PASS/FAIL/SKIP line,
    printed in the terminal summary; ``out.detail`` is appended to it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextlib.contextmanager
    def run(number, title):
        out = _Outcome()
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield out
            status = "PASS"
        except pytest.skip.Exception as exc:
            status, out.detail = "SKIP", str(exc)
            raise
        except BaseException as exc:
            out.detail = f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        finally:
            line = f"criterion {number:>2} {status}  {title} [{time.perf_counter() - t0:.2f}s]"
            if out.detail:
                line += f"  {out.detail}"
            lines.append((number, line))
            print(line)

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
