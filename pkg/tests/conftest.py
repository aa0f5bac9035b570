import re

import numpy as np
import pytest
from hypothesis import settings

from starcf.scenario import SystemConfig, build_topology

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")

# filled by test_acceptance, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: (int(re.match(r"\d+", s).group()), s)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk():
    return build_topology(SystemConfig())


@pytest.fixture(scope="session")
def tiny():
    """Small scenario for expensive oracles: M=2, N=2, K=2, L=4."""
    return build_topology(SystemConfig(M=2, N=2, K=2, K_r=1, K_t=1, L=4, L_h=2, L_v=2,
                                       tau_p=1, seed=3))


def rel(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / np.linalg.norm(np.ravel(b)))
