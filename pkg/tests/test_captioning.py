import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rscaption.evalkit import captioning as cap
from oracles import cider_d_oracle

WORKSHEET = json.loads((Path(__file__).parent / "fixtures" / "metric_worksheet.json").read_text())
HYPS = WORKSHEET["corpus"]["hypotheses"]
REFS = WORKSHEET["corpus"]["references"]

TOY = (
    ["a plane parked near the runway", "two tennis courts beside a road", "green trees around a pond"],
    [
        ["a plane is parked near a runway", "an airplane beside the runway"],
        ["two courts next to the road", "tennis courts beside a road"],
        ["a pond with trees around it", "green trees surround a pond", "a small pond"],
    ],
)


def test_tokenizer():
    assert cap.tokenize("Two Planes, parked.") == ["two", "planes", ",", "parked", "."]


def test_bleu_worksheet():
    stats = cap.bleu_stats(HYPS, REFS)
    w = WORKSHEET["bleu"]
    assert stats == {k: w[k] for k in ("matches", "totals", "hyp_len", "ref_len")}
    for n in range(1, 5):
        assert cap.bleu(HYPS, REFS, n) == pytest.approx(w[f"BLEU-{n}"], abs=1e-9)


def test_rouge_worksheet():
    w = WORKSHEET["rouge_l"]
    assert cap.rouge_l(HYPS, REFS) == pytest.approx(283 / 420, abs=1e-9)
    assert cap.rouge_l(HYPS, REFS) == pytest.approx(w["corpus"], abs=1e-9)
    assert cap.rouge_l_pair("the cat sat".split(), "the cat ran".split()) == pytest.approx(2 / 3, abs=1e-9)


def test_meteor_worksheet():
    w = WORKSHEET["meteor_lite"]
    assert cap.meteor_lite(HYPS, REFS) == pytest.approx((121 / 150 + 230 / 351) / 2, abs=1e-9)
    assert cap.meteor_lite(HYPS, REFS) == pytest.approx(w["corpus"], abs=1e-9)
    assert cap.meteor_pair(["dogs", "running"], ["dog", "runs"]) == pytest.approx(15 / 16, abs=1e-9)


def test_identical_pairs_score_one():
    hyps = ["many buildings near a road", "a bridge over the river"]
    refs = [[h] for h in hyps]
    for n in range(1, 5):
        assert cap.bleu(hyps, refs, n) == pytest.approx(1.0, abs=1e-12)
    assert cap.rouge_l(hyps, refs) == pytest.approx(1.0, abs=1e-12)
    assert cap.meteor_lite(hyps, refs) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_pairs_score_zero():
    hyps = ["alpha beta gamma", "delta epsilon"]
    refs = [["one two three"], ["four five six"]]
    m = cap.all_metrics(hyps, refs)
    assert all(v == 0.0 for v in m.values()), m


def test_cider_matches_dense_oracle():
    hyps, refs = TOY
    tok_h = [cap.tokenize(h) for h in hyps]
    tok_r = [[cap.tokenize(r) for r in rs] for rs in refs]
    expected = cider_d_oracle(tok_h, tok_r)
    got = cap.cider_d_scores(hyps, refs)
    assert got == pytest.approx(expected, abs=1e-9)
    assert cap.cider_d(hyps, refs) == pytest.approx(sum(expected) / 3, abs=1e-9)


def test_cider_identical_corpus_is_maximal():
    # each image has a single reference and the hypothesis copies it
    refs = [["a plane parked near the runway"], ["two tennis courts beside a road"], ["green trees around a pond"]]
    hyps = [r[0] for r in refs]
    best = cap.cider_d(hyps, refs)
    variants = [
        ["a plane near the runway", hyps[1], hyps[2]],
        [hyps[0], "two tennis courts beside a road and a car", hyps[2]],
        [hyps[0], hyps[1], "trees around a pond"],
        [hyps[1], hyps[0], hyps[2]],
    ]
    for v in variants:
        assert cap.cider_d(v, refs) < best


def test_cider_single_image_raises():
    with pytest.raises(cap.MetricError, match="IDF undefined"):
        cap.cider_d(["a plane"], [["a plane"]])
    assert "CIDEr-D" not in cap.all_metrics(["a plane"], [["a plane"]])


def test_empty_hypothesis_contributes_nothing():
    stats = cap.bleu_stats(["", "a dog runs"], [["a cat"], ["a dog runs"]])
    assert stats["totals"] == [3, 2, 1, 0] and stats["matches"] == [3, 2, 1, 0]
    assert cap.rouge_l(["", "a dog"], [["a cat"], ["a dog"]]) == pytest.approx(0.5)
    assert cap.meteor_lite(["", "a dog"], [["a cat"], ["a dog"]]) == pytest.approx(0.5)


def test_validation():
    with pytest.raises(cap.MetricError):
        cap.bleu([], [])
    with pytest.raises(cap.MetricError):
        cap.bleu(["a"], [["a"], ["b"]])
    with pytest.raises(cap.MetricError):
        cap.bleu(["a"], ["a"])
    with pytest.raises(cap.MetricError):
        cap.bleu(["a"], [["a"]], max_n=5)


words = st.lists(st.sampled_from("a the plane road tree pond runway two".split()), min_size=0, max_size=9)


@settings(max_examples=200, deadline=None)
@given(words, st.lists(words, min_size=1, max_size=3))
def test_bleu_clipping(hyp, refs):
    stats = cap.bleu_stats([" ".join(hyp)], [[" ".join(r) for r in refs]])
    for n in range(1, 5):
        hc = cap.ngrams(hyp, n)
        cap_counts = sum(min(c, max(cap.ngrams(r, n)[g] for r in refs)) for g, c in hc.items())
        assert stats["matches"][n - 1] == cap_counts <= stats["totals"][n - 1]
    assert stats["totals"][0] == len(hyp)


@settings(max_examples=100, deadline=None)
@given(words.filter(bool), words.filter(bool))
def test_pair_scores_bounded(h, r):
    assert 0.0 <= cap.rouge_l_pair(h, r) <= 1.0
    assert 0.0 <= cap.meteor_pair(h, r) <= 1.0
