import os

import numpy as np
import pytest

from pair.datasets import MissingDataError, mnist_paths, write_mnist_subset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """MNIST from $PAIR_DATA_DIR, or the mlxtend subset written to a temp dir."""
    env = os.environ.get("PAIR_DATA_DIR")
    if env:
        try:
            mnist_paths(env)
            return env
        except MissingDataError:
            pass
    pytest.importorskip("mlxtend")
    return str(write_mnist_subset(tmp_path_factory.mktemp("mnist")))


@pytest.fixture(scope="session")
def mnist_cfg(mnist_dir):
    from pair.experiments import load_config

    cfg = load_config("preset:mnist_desk")
    cfg["data"]["data_dir"] = mnist_dir
    return cfg


@pytest.fixture(scope="session")
def mnist_data(mnist_cfg):
    from pair.experiments import prepare_mnist

    return prepare_mnist(mnist_cfg)


@pytest.fixture(scope="session")
def mnist_run(mnist_cfg, mnist_data, tmp_path_factory):
    """Desk-scale MNIST pipeline, trained once per session."""
    import time

    from pair.experiments import run_mnist_pipeline

    out = tmp_path_factory.mktemp("mnist_run")
    t0 = time.perf_counter()
    res = run_mnist_pipeline(mnist_cfg, str(out), data=mnist_data)
    res["seconds"] = time.perf_counter() - t0
    res["out"] = str(out)
    return res


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(number, passed, detail)``; the line is printed at once
    and repeated in the terminal summary.
    """

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def pytest_collection_modifyitems(items):
    for item in items:
        if {"mnist_data", "mnist_run", "tiny", "images"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)
