import numpy as np
import pytest

from infokit import make_table


def random_table(
    n_classes=4,
    per_class=25,
    dim=8,
    seed=0,
    with_logits=False,
    domain_tag="train",
    id_offset=0,
):
    """Small deterministic table for unit tests: clustered Gaussian classes."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=3.0, size=(n_classes, dim))
    labels = np.repeat(np.arange(n_classes, dtype=np.int32), per_class)
    feats = (means[labels] + rng.standard_normal((len(labels), dim))).astype(np.float32)
    ids = np.arange(len(labels), dtype=np.int64) + id_offset
    logits = rng.normal(size=(len(labels), n_classes)).astype(np.float32) if with_logits else None
    return make_table(ids, labels, feats, n_classes, logits=logits, domain_tag=domain_tag)


@pytest.fixture
def small_table():
    return random_table()


@pytest.fixture
def logit_table():
    return random_table(with_logits=True, seed=7)
