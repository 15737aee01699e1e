import numpy as np
import pytest

from dfflops.core import SparseVector


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sparse_vector(rng, vocab_size, max_nnz=None, doc_id=None, low=0.05, high=2.0):
    """A random valid sparse vector with weights well away from zero."""
    max_nnz = vocab_size if max_nnz is None else min(max_nnz, vocab_size)
    nnz = int(rng.integers(0, max_nnz + 1))
    ids = np.sort(rng.choice(vocab_size, size=nnz, replace=False))
    weights = rng.uniform(low, high, size=nnz)
    return SparseVector(ids, weights, doc_id)


def random_batch(rng, n, vocab_size, **kwargs):
    return [random_sparse_vector(rng, vocab_size, **kwargs) for _ in range(n)]
