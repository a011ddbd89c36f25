import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import prepared_corpus  # noqa: E402
from irispad.stereo import LightRig  # noqa: E402
from irispad.synth import generate_corpus  # noqa: E402


@pytest.fixture
def rig():
    return LightRig.symmetric()


@pytest.fixture(scope="session")
def small_corpus():
    return prepared_corpus(12, 12, seed=3)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(out, 10, 10, seed=5, n_clear=4)
    return out


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "FAIL"
    item.config._acceptance[marker.args[0]] = f"criterion {marker.args[0]}: {status}  {item.name}  {detail}"


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
