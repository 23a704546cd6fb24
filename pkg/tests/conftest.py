import numpy as np
import pytest

from crbrate.channel import SystemParams, rician_channel


def small_params(seed=0, **kw):
    """Two-antenna instance used for brute-force comparisons."""
    base = dict(m_tx=2, n_rx_sense=3, n_rx_comm=2, cpi_len=10, power=10.0,
                reflect_coeff=0.3, rician_k=1.0, seed=seed)
    base.update(kw)
    return SystemParams(**base)


def random_psd(rng, m, rank=None, scale=1.0):
    k = m if rank is None else rank
    x = rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))
    q = x @ x.conj().T
    return scale * 0.5 * (q + q.conj().T)


@pytest.fixture(scope="session")
def ref_params():
    return SystemParams()


@pytest.fixture(scope="session")
def ref_channel(ref_params):
    return rician_channel(ref_params)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip("abc:")), s)):
        terminalreporter.write_line(line)
