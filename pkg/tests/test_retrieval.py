import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from rscaption.evalkit.retrieval import I2T, T2I, RetrievalError, SimilarityMatrix, mean_recall, recall_at_k, retrieval_report
from oracles import rank_scan_recall


def random_case(rng, n_img=20, per=5, ties=False):
    cmap = np.repeat(np.arange(n_img), per)
    rng.shuffle(cmap)
    if ties:
        scores = rng.integers(0, 3, size=(n_img, n_img * per)).astype(float)
    else:
        scores = rng.normal(size=(n_img, n_img * per))
    return scores, cmap


def test_identity_and_permutation():
    eye = SimilarityMatrix(np.eye(10), np.arange(10))
    assert recall_at_k(eye, 1, I2T) == recall_at_k(eye, 1, T2I) == 100.0
    anti = SimilarityMatrix(np.eye(10)[::-1], np.arange(10)[::-1])
    assert recall_at_k(anti, 1, I2T) == recall_at_k(anti, 1, T2I) == 100.0
    assert mean_recall(eye) == 100.0


def test_matches_rank_scan_oracle(kernel_backend):
    rng = np.random.default_rng(0)
    for trial in range(15):
        scores, cmap = random_case(rng, ties=trial % 3 == 0)
        m = SimilarityMatrix(scores, cmap)
        for d in (I2T, T2I):
            for k in (1, 5, 10):
                assert recall_at_k(m, k, d) == rank_scan_recall(scores, cmap, k, d)


def test_all_zero_scores_follow_index_tie_break(kernel_backend):
    cmap = np.repeat(np.arange(20), 5)
    m = SimilarityMatrix(np.zeros((20, 100)), cmap)
    # I2T: texts ranked 0..99; image i owns texts 5i..5i+4, so a hit at k iff 5i < k
    assert recall_at_k(m, 1, I2T) == 5.0
    assert recall_at_k(m, 5, I2T) == 5.0
    assert recall_at_k(m, 10, I2T) == 10.0
    # T2I: images ranked 0..19; a text of image i hits iff i < k
    assert [recall_at_k(m, k, T2I) for k in (1, 5, 10)] == [5.0, 25.0, 50.0]
    expected = np.mean([rank_scan_recall(m.scores, cmap, k, d) for d in (I2T, T2I) for k in (1, 5, 10)])
    assert mean_recall(m) == expected


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 2**32 - 1), st.sampled_from(["shift", "exp", "cube", "scale"]))
def test_rank_invariance(kernel_backend, seed, transform):
    rng = np.random.default_rng(seed)
    scores, cmap = random_case(rng, n_img=12, per=2, ties=seed % 2 == 0)
    f = {"shift": lambda s: s + 17.0, "exp": np.exp, "cube": lambda s: s**3, "scale": lambda s: 4 * s}[transform]
    a = retrieval_report(SimilarityMatrix(scores, cmap))
    b = retrieval_report(SimilarityMatrix(f(scores), cmap))
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recall_monotone_in_k(seed):
    rng = np.random.default_rng(seed)
    scores, cmap = random_case(rng, n_img=6, per=2)
    m = SimilarityMatrix(scores, cmap)
    for d, top in ((I2T, 12), (T2I, 6)):
        values = [recall_at_k(m, k, d) for k in range(1, top + 1)]
        assert values == sorted(values) and values[-1] == 100.0


def test_errors():
    m = SimilarityMatrix(np.zeros((3, 6)), [0, 0, 1, 1, 2, 2])
    with pytest.raises(RetrievalError):
        recall_at_k(m, 7, I2T)
    with pytest.raises(RetrievalError):
        recall_at_k(m, 4, T2I)
    with pytest.raises(RetrievalError):
        recall_at_k(m, 0, I2T)
    with pytest.raises(RetrievalError, match="without captions"):
        SimilarityMatrix(np.zeros((3, 2)), [0, 1])
    with pytest.raises(RetrievalError):
        SimilarityMatrix(np.zeros((2, 2)), [0, 2])
    with pytest.raises(RetrievalError):
        SimilarityMatrix(np.array([[np.nan, 0.0]]), [0, 0])


def test_report_keys():
    rep = retrieval_report(SimilarityMatrix(np.eye(12), np.arange(12)))
    assert set(rep) == {"i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10", "mean_recall"}
