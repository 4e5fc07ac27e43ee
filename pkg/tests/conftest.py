import contextlib
import time

ACCEPTANCE: dict = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record the outcome of one acceptance criterion; details go in the yielded dict."""
    info: dict = {}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        info.setdefault("seconds", round(time.perf_counter() - start, 1))
        ACCEPTANCE[number] = (ok, title, info)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, info = ACCEPTANCE[n]
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
