import json
from collections import defaultdict

import pytest

from cestgm.families import binary
from cestgm.model import ar1_spec, univariate_spec

# criterion number -> list of (label, ok, detail), filled by the acceptance tests
ACCEPTANCE = defaultdict(list)


@pytest.fixture
def record():
    def _record(criterion: int, label: str, ok: bool, detail: str = ""):
        ACCEPTANCE[criterion].append((label, bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {status}")
        for label, ok, detail in parts:
            mark = "ok " if ok else "BAD"
            terminalreporter.write_line(f"    [{mark}] {label}: {detail}")


@pytest.fixture
def spec_files(tmp_path):
    """A handful of model-spec files on disk."""
    files = {
        "ar1": ar1_spec(0.5),
        "ar1_unit": ar1_spec(1.0),
        "binary": univariate_spec(binary(), [0.0], 1.0),
        "iid": univariate_spec(binary(), [0.3], 0.0),
    }
    out = {}
    for name, spec in files.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(spec.to_json()))
        out[name] = path
    return out
