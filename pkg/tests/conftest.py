import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_code():
    from noma_osd.gf2codes import random_code

    return random_code(10, 5, np.random.default_rng(7))


@pytest.fixture(scope="session")
def ebch32():
    from noma_osd.gf2codes import load_code

    return load_code("ebch_32_16_8")


@pytest.fixture(scope="session")
def ebch64():
    from noma_osd.gf2codes import load_code

    return load_code("ebch_64_30_14")


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("NOMA_OSD_CACHE", str(tmp_path / "cache"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
