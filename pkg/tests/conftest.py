import pytest

from viewdiv.synthetic import make_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """24-image synthetic corpus manifest for pipeline/CLI tests."""
    out = tmp_path_factory.mktemp("small_corpus")
    return make_synthetic_corpus(out, n_images=24, seed=0)


@pytest.fixture(scope="session")
def big_corpus(tmp_path_factory):
    """200-image corpus for the corpus-statistics acceptance checks."""
    out = tmp_path_factory.mktemp("big_corpus")
    return make_synthetic_corpus(out, n_images=200, seed=7)
