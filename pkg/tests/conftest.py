import numpy as np
import pytest

from fusevos.core import ConfidencePlane, ConfidenceVolume


def random_volume(rng, shape, ids, model_name="m"):
    planes = tuple(
        ConfidencePlane(oid, rng.random(shape).astype(np.float32)) for oid in ids
    )
    return ConfidenceVolume(model_name, planes)


@pytest.fixture(scope="session")
def zoo_fixture(tmp_path_factory):
    """One on-disk 5-model synthetic benchmark instance (seed 0).

    Returns (root, manifest_path); gt masks live under root/gt.
    """
    from fusevos.synthetic import write_fixture

    root = tmp_path_factory.mktemp("zoo")
    manifest_path = write_fixture(root, seed=0, frames=6)
    return root, manifest_path
