"""pytest plugin used by the chainforge runner.

--cf-select FILE    keep only the node ids listed in FILE (one per line)
--cf-report FILE    append one JSON object per finished test
--cf-collect FILE   write collected node ids and collection errors as JSON
--cf-timeout SECS   per-test alarm
"""

import json
import signal

import pytest


def pytest_addoption(parser):
    group = parser.getgroup("chainforge")
    group.addoption("--cf-select", default=None)
    group.addoption("--cf-report", default=None)
    group.addoption("--cf-collect", default=None)
    group.addoption("--cf-timeout", type=float, default=120.0)


class _State:
    def __init__(self, config):
        self.config = config
        self.results = {}
        self.collect_errors = []
        report = config.getoption("cf_report")
        self.report = open(report, "a", encoding="utf-8") if report else None

    def emit(self, obj):
        if self.report is not None:
            self.report.write(json.dumps(obj) + "\n")
            self.report.flush()


_state = None


def pytest_configure(config):
    global _state
    _state = _State(config)


def pytest_unconfigure(config):
    if _state is not None and _state.report is not None:
        _state.report.close()


def pytest_collectreport(report):
    if report.failed:
        text = str(report.longrepr)
        _state.collect_errors.append({"path": report.nodeid, "longrepr": text})
        _state.emit({"collect_error": report.nodeid, "longrepr": text})


def pytest_collection_modifyitems(session, config, items):
    select = config.getoption("cf_select")
    if not select:
        return
    with open(select, encoding="utf-8") as fh:
        wanted = {line.strip() for line in fh if line.strip()}
    keep = [item for item in items if item.nodeid in wanted]
    dropped = [item for item in items if item.nodeid not in wanted]
    items[:] = keep
    if dropped:
        config.hook.pytest_deselected(items=dropped)


def pytest_collection_finish(session):
    path = session.config.getoption("cf_collect")
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"items": [item.nodeid for item in session.items], "errors": _state.collect_errors},
                fh,
            )


def _on_alarm(signum, frame):
    pytest.fail("Timeout: test exceeded %.1fs" % _state.config.getoption("cf_timeout"), pytrace=False)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_protocol(item, nextitem):
    timeout = item.config.getoption("cf_timeout")
    armed = timeout and timeout > 0 and hasattr(signal, "SIGALRM")
    if armed:
        previous = signal.signal(signal.SIGALRM, _on_alarm)
        signal.setitimer(signal.ITIMER_REAL, timeout)
    try:
        yield
    finally:
        if armed:
            signal.setitimer(signal.ITIMER_REAL, 0)
            signal.signal(signal.SIGALRM, previous)


def pytest_runtest_logreport(report):
    entry = _state.results.setdefault(report.nodeid, {"outcome": None, "duration": 0.0, "text": []})
    entry["duration"] += getattr(report, "duration", 0.0) or 0.0
    if report.when == "call":
        if report.passed:
            entry["outcome"] = entry["outcome"] or "passed"
        elif report.skipped:
            entry["outcome"] = "skipped"
        else:
            entry["outcome"] = "failed"
    elif report.failed:
        entry["outcome"] = "errored"
    elif report.skipped and entry["outcome"] is None:
        entry["outcome"] = "skipped"
    if report.failed and report.longrepr is not None:
        entry["text"].append(str(report.longrepr))
    for name, content in getattr(report, "sections", []):
        if "stderr" in name and content and report.when == "call":
            entry["text"].append(content)


def pytest_runtest_logfinish(nodeid, location):
    entry = _state.results.pop(nodeid, None)
    if entry is None:
        return
    _state.emit(
        {
            "nodeid": nodeid,
            "outcome": entry["outcome"] or "errored",
            "duration": entry["duration"],
            "longrepr": "\n".join(entry["text"]),
        }
    )
