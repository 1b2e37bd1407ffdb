import numpy as np
import pytest

from statechef import BackboneSpec, HeadSpec, build_model, load_canonical_taxonomy
from statechef.synthetic import texture_dataset


@pytest.fixture(scope="session")
def taxonomy():
    return load_canonical_taxonomy()


@pytest.fixture
def tiny_model():
    def factory(seed=0, class_count=11):
        return build_model(BackboneSpec.tiny(), HeadSpec.tiny(class_count), seed=seed)

    return factory


@pytest.fixture(scope="session")
def small_textures():
    """Tiny texture set shared by fast training tests (read-only)."""
    return texture_dataset(per_class=4, size=16, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
