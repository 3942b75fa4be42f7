import numpy as np
import pytest

from matpca.matnorm import MatNormalParams


def random_spd(rng, d, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    vals = np.exp(rng.uniform(0.0, np.log(cond), d))
    S = (Q * vals) @ Q.T
    return 0.5 * (S + S.T)


def random_params(rng, d_c, d_r, cond=10.0):
    return MatNormalParams(rng.standard_normal((d_c, d_r)), random_spd(rng, d_c, cond), random_spd(rng, d_r, cond))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
