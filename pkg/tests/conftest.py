"""Shared fixtures: backend parametrization and a small on-disk digit set."""

import pytest

from eleatt import backends as bk
from eleatt.data import write_stroke_digits


def _backend_id(mod):
    return "compiled" if mod.__name__.endswith("_core") else "numpy"


@pytest.fixture(params=bk.available(), ids=_backend_id)
def backend(request):
    """Each available batched-kernel backend in turn."""
    return request.param


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory):
    """Tiny synthetic digit dataset in IDX layout, shared across tests."""
    root = tmp_path_factory.mktemp("digits")
    write_stroke_digits(root, n_train=96, n_test=32, seed=3)
    return root
