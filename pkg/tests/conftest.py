"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    cid, title = mark.args
    ok = rep.passed and not hasattr(rep, "wasxfail")
    details = [v for k, v in item.user_properties if k == "detail"]
    entry = _RESULTS.setdefault(cid, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and ok
    entry["details"].extend(details)
    if hasattr(rep, "wasxfail"):
        entry["details"].append("known shortfall: " + rep.wasxfail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[2:])):
        r = _RESULTS[cid]
        line = f"{cid} {'PASS' if r['ok'] else 'FAIL'}  {r['title']}"
        if r["details"]:
            line += "  | " + "; ".join(r["details"])
        terminalreporter.write_line(line)
