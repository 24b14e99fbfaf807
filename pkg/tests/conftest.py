import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    from deskvid.synth import make_corpus

    out = tmp_path_factory.mktemp("corpus")
    make_corpus(out, n_clips=60, seed=0)
    return out


@pytest.fixture(scope="session")
def curated(corpus_dir):
    from deskvid.datapipe import curate

    return curate(corpus_dir / "metadata.jsonl")


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    k, name = int(m.group(1)), m.group(2).replace("_", " ")
    failed = report.failed
    if report.when == "call" or failed:
        prev = _CRITERIA.get(k, (name, "PASS"))[1]
        _CRITERIA[k] = (name, "FAIL" if failed or prev == "FAIL" else ("SKIP" if report.skipped else "PASS"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        name, status = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k} ({name}): {status}")
