import os

import numpy as np
import pytest

from weyllab import dynamics as D
from weyllab import fuchsian as F
from weyllab.kernels import get_backend


def pytest_configure(config):
    # keep the user's cache untouched
    os.environ.setdefault("WEYLLAB_CACHE_DIR", str(config.rootpath / ".pytest_cache" / "weyllab"))


@pytest.fixture(scope="session")
def bolza():
    return F.builtin_surface("bolza")


@pytest.fixture(scope="session")
def bolza_domain(bolza):
    return F.dirichlet_domain(bolza)


@pytest.fixture(scope="session")
def spec6(bolza, bolza_domain):
    return F.build_length_spectrum(bolza, 6.0, domain=bolza_domain)


@pytest.fixture(scope="session")
def spec8(bolza, bolza_domain):
    return F.build_length_spectrum(bolza, 8.0, domain=bolza_domain)


@pytest.fixture(scope="session")
def spec8_det(spec8):
    return D.attach_det_terms(spec8)[0]


@pytest.fixture(scope="session")
def bump(bolza, bolza_domain):
    return F.bump_metric(bolza, domain=bolza_domain)


@pytest.fixture(scope="session")
def kernel():
    from weyllab.spectral import make_kernel

    return make_kernel()


def _backends():
    out = ["python"]
    try:
        get_backend("cython")
        out.append("cython")
    except ImportError:
        pass
    return out


@pytest.fixture(params=_backends())
def backend(request, monkeypatch):
    """Run a test with each available kernel backend active."""
    from weyllab import kernels

    mod = get_backend(request.param)
    monkeypatch.setattr(kernels, "_impl", mod)
    monkeypatch.setattr(kernels, "BACKEND", request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
