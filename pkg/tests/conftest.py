import numpy as np
import pytest

from phtsum.data import Sample, Vocabulary, build_vocab, gen_toy_corpus, toy_corpus_text


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f over array x."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture(scope="session")
def toy_records():
    return gen_toy_corpus(12, seed=7)


@pytest.fixture(scope="session")
def toy_vocab(toy_records) -> Vocabulary:
    return build_vocab(toy_corpus_text(toy_records), 160)


@pytest.fixture(scope="session")
def toy_samples(toy_records, toy_vocab):
    return [
        Sample(id=r["id"], title=toy_vocab.encode(r["title"]),
               paragraphs=[toy_vocab.encode(p) for p in r["paragraphs"]],
               summary=toy_vocab.encode(r["summary"]))
        for r in toy_records
    ]
