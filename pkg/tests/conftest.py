import functools

import pytest

from diskpsc.isotopy import prepared_path
from diskpsc.mesh import generate_disk_mesh
from diskpsc.metric import named_metric

GB_BUMPS = ("bump:0.8,0.1,0.3", "bump:-0.5,0.2,0.3", "bump:1,-0.1,0.35")


@functools.lru_cache(maxsize=None)
def metric(name, level=5):
    return named_metric(generate_disk_mesh(level), name)


@functools.lru_cache(maxsize=None)
def flat_to_hemisphere(level=5, N=64):
    """Clamped, volume-matched path from scaled_flat(sqrt2) to the hemisphere."""
    return prepared_path(metric("scaled_flat:sqrt2", level), metric("hemisphere", level), N)


@pytest.fixture(scope="session")
def mesh5():
    return generate_disk_mesh(5)


@pytest.fixture(scope="session")
def fh_path():
    return flat_to_hemisphere()


PRODUCT_TARGET = "hemisphere+bump:0.1,0.1,0.25"


@functools.lru_cache(maxsize=None)
def warped_cylinder(name, level=5):
    from diskpsc.concordance import build_warped_cylinder

    return build_warped_cylinder(metric(name, level))


@functools.lru_cache(maxsize=None)
def warped_fh(gauge="conformal", level=5):
    from diskpsc.concordance import build_warped_concordance

    return build_warped_concordance(flat_to_hemisphere(level), gauge=gauge)


@functools.lru_cache(maxsize=None)
def constant_hemisphere(N=64):
    from diskpsc.isotopy import prepared_path

    h = metric("hemisphere")
    return prepared_path(h, h, N)


@functools.lru_cache(maxsize=None)
def outward(which, epsilon, gauge="moser"):
    from diskpsc.concordance import build_outward_bent

    path = constant_hemisphere() if which == "constant" else flat_to_hemisphere()
    return build_outward_bent(path, epsilon, gauge=gauge)


@functools.lru_cache(maxsize=None)
def product_path():
    from diskpsc.isotopy import prepared_path

    return prepared_path(metric("hemisphere"), metric(PRODUCT_TARGET), 64, match_volume=False)


@functools.lru_cache(maxsize=None)
def product_cylinder():
    from diskpsc.concordance import build_product_concordance

    return build_product_concordance(product_path())


@functools.lru_cache(maxsize=None)
def certificate(kind, mode, *args):
    from diskpsc.concordance import verify_concordance

    builders = {
        "warped_cylinder": warped_cylinder,
        "warped_fh": warped_fh,
        "outward": outward,
        "product": lambda: product_cylinder(),
    }
    return verify_concordance(builders[kind](*args), mode)
