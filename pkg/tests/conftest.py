import contextlib

import pytest

_VERDICTS = {}


class _Verdict:
    def __init__(self):
        self.detail = ""
        self.reported = False  # measured and shown, but not asserted on this host


@pytest.fixture
def criterion(request):
    """``with criterion(3, "title") as v:`` records one PASS/FAIL/SKIP/REPORT line."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    @contextlib.contextmanager
    def record(num, title):
        v = _Verdict()
        status = "PASS"
        try:
            yield v
        except pytest.skip.Exception as exc:
            status = "SKIP"
            v.detail = f"{exc.msg}; {v.detail}" if v.detail else exc.msg
            raise
        except BaseException:
            status = "FAIL"
            raise
        finally:
            if status == "PASS" and v.reported:
                status = "REPORT"
            line = f"criterion {num:2d} {status:6s} {title}" + (f" :: {v.detail}" if v.detail else "")
            _VERDICTS[num] = line
            if tr is not None:
                tr.write_line(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[num])
