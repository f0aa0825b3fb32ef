import numpy as np
import pytest

from nonprob.popgen import NonProbSample, ProbSample


def make_b(y, x, members=None, z=None):
    y = np.asarray(y, dtype=float)
    if members is None:
        members = np.arange(y.shape[0])
    return NonProbSample(members=members, y=y, x=np.asarray(x), z=z)


def random_cells(rng, K=None, max_n=30):
    """Random stratum sizes and a B-sample hitting every stratum."""
    K = K or int(rng.integers(1, 6))
    sizes = {k: int(rng.integers(5, 60)) for k in range(K)}
    ys, xs = [], []
    for k, N_k in sizes.items():
        n_k = int(rng.integers(1, min(N_k, max_n) + 1))
        ys.append(rng.normal(k, 1.0, n_k))
        xs.append(np.full(n_k, k))
    return make_b(np.concatenate(ys), np.concatenate(xs)), sizes


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def three_row_b():
    return make_b([2.0, 4.0, 3.0], [0, 1, 1])


def srs_sample(members, y, N_frame, x=None, z=None):
    members = np.asarray(members)
    n = members.shape[0]
    return ProbSample(members=members, pi=np.full(n, n / N_frame), x=np.zeros(n, int) if x is None else x,
                      y=None if y is None else np.asarray(y, dtype=float), z=z)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
