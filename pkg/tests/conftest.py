import numpy as np
import pytest

from entrel.corpus import LabelSpace, corpus_vocabulary, random_embeddings
from entrel.model import HyperParams, init_params
from entrel.querygen import gen_setup1
from entrel import synth

TINY_HYPER = dict(nk_c=4, nk_e=3, h_c=5, h_e=4, k=2, emb_dim=6)


@pytest.fixture
def label_space():
    return LabelSpace()


@pytest.fixture
def tiny_model(label_space):
    """Small CRF model plus a handful of setup-1 queries on synthetic data."""
    grammar = synth.default_grammar(seed=3)
    sentences = synth.generate(grammar, 12)
    queries = gen_setup1(sentences)
    hyper = HyperParams(**TINY_HYPER)
    table = random_embeddings(corpus_vocabulary(sentences), hyper.emb_dim,
                              np.random.default_rng(1))
    params = init_params(hyper, label_space, table, seed=5)
    return params, queries, sentences


def finite_difference(objective, value: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Independent central-difference gradient of objective() w.r.t. value."""
    grad = np.zeros_like(value)
    flat_value = value.reshape(-1)
    flat_grad = grad.reshape(-1)
    for idx in range(flat_value.size):
        original = flat_value[idx]
        flat_value[idx] = original + epsilon
        up = objective()
        flat_value[idx] = original - epsilon
        down = objective()
        flat_value[idx] = original
        flat_grad[idx] = (up - down) / (2 * epsilon)
    return grad
