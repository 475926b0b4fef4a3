import os
import pytest

from liverseg.phantom import PhantomSpec, make_dataset


def pytest_collection_modifyitems(config, items):
    if os.getenv('LIVERSEG_SLOW_TESTS') == '1':
        return
    skip = pytest.mark.skip(reason='set LIVERSEG_SLOW_TESTS=1 to run training experiments')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope='session')
def tiny_spec():
    return PhantomSpec(shape=(12, 64, 64), liver_axes=(4, 20, 18), n_tumors=1,
                       tumor_radius_range=(2, 3), noise_sigma=8.0)


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory, tiny_spec):
    out = tmp_path_factory.mktemp('tiny-data')
    make_dataset(4, out, tiny_spec, split=(0.5, 0.25, 0.25), seed_base=3)
    return out
