import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wordspot.errors import EmptyQuerySet, NoRelevantItems, ZeroVector
from wordspot.phoc import PhocConfig, encode
from wordspot.retrieval import (
    DescriptorSet,
    average_precision,
    cosine_similarity,
    evaluate,
    read_descriptors,
    read_report_map,
    select_qbe_queries,
    select_qbs_queries,
    write_descriptors,
    write_report,
)

from oracles import ap_bruteforce, map_bruteforce

SMALL = PhocConfig(alphabet=("a", "b", "c", "d"), levels=(1, 2))


def dset(trans, vecs=None, ids=None):
    n = len(trans)
    if vecs is None:
        vecs = np.random.default_rng(0).random((n, 4))
    ids = ids or [f"s{i:03d}" for i in range(n)]
    return DescriptorSet(ids, np.asarray(vecs, dtype=float).reshape(n, -1), list(trans))


class TestCosine:
    def test_identical(self):
        assert cosine_similarity([0.3, 2.0], [0.3, 2.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_diagonal(self):
        assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine_similarity([0, 0], [1, 0])


class TestAveragePrecision:
    def test_hand_case(self):
        assert average_precision([1, 0, 0, 1], 2) == 0.75

    def test_interpolation_lifts(self):
        assert average_precision([0, 1, 1], 2) == pytest.approx(2 / 3, abs=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 7])
    def test_all_relevant_prefix(self, n):
        assert average_precision([1] * n + [0] * 3, n) == 1.0

    def test_no_relevant(self):
        with pytest.raises(NoRelevantItems):
            average_precision([0, 0], 0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            flags = (rng.random(rng.integers(1, 40)) < 0.3).astype(int).tolist()
            r = sum(flags)
            if r == 0:
                continue
            assert average_precision(flags, r) == pytest.approx(float(ap_bruteforce(flags, r)), abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=30).filter(any))
    def test_bounds_and_perfect_iff_sorted(self, flags):
        r = sum(flags)
        ap = average_precision(flags, r)
        assert 0.0 <= ap <= 1.0
        perfect = all(flags[:r])
        assert (ap == 1.0) == perfect


class TestQuerySelection:
    def test_qbe_counts(self):
        d = dset(["the", "cat", "the", "the"])
        assert select_qbe_queries(d) == [0, 2, 3]

    def test_qbe_all_unique(self):
        assert select_qbe_queries(dset(["a", "b", "c"])) == []

    @pytest.mark.parametrize("counts,expected", [({"a": 2, "b": 2, "c": 6}, 10),
                                                 ({"a": 2, "b": 2, "c": 1, "d": 5}, 9)])
    def test_qbe_enumeration(self, counts, expected):
        trans = [w for w, n in counts.items() for _ in range(n)]
        queries = select_qbe_queries(dset(trans))
        brute = [i for i in range(len(trans)) if sum(t == trans[i] for t in trans) >= 2]
        assert queries == brute and len(queries) == expected

    def test_qbs_unique(self):
        assert select_qbs_queries(dset(["the", "the", "cat"])) == ["the", "cat"]

    def test_qbs_stop_words(self):
        assert select_qbs_queries(dset(["the", "the", "cat"]), {"the"}) == ["cat"]

    def test_qbs_empty(self):
        assert select_qbs_queries(DescriptorSet([], np.zeros((0, 4)), [])) == []

    def test_empty_transcriptions_never_query(self):
        d = dset(["", "", "ab"])
        assert select_qbe_queries(d) == [] and select_qbs_queries(d) == ["ab"]


class TestEvaluate:
    def test_perfect_single_query(self):
        vecs = [[1, 0, 0, 0], [1, 0, 0, 0.01], [0, 1, 0, 0]]
        res = evaluate(dset(["ab", "ab", "cd"], vecs), "qbe")
        assert [r.average_precision for r in res.lists] == [1.0, 1.0]
        assert res.mean_average_precision == 1.0

    def test_map_is_unweighted_mean(self):
        from wordspot.retrieval import EvalResult, RankedList

        res = EvalResult("qbe", [RankedList("a", [], np.zeros(0), np.zeros(0), 1, 0.75),
                                 RankedList("b", [], np.zeros(0), np.zeros(0), 1, 0.25)])
        assert res.mean_average_precision == 0.5

    def test_query_not_in_own_list(self):
        rng = np.random.default_rng(1)
        d = dset(["a", "b", "a", "c", "b", "a"], rng.random((6, 5)))
        for r in evaluate(d, "qbe").lists:
            assert r.query not in r.ids
            assert len(r.ids) == 5

    def test_relevant_count(self):
        d = dset(["a", "b", "a", "a"])
        res = evaluate(d, "qbe")
        assert [r.num_relevant for r in res.lists] == [2, 2, 2]

    def test_qbs_uses_phoc(self):
        trans = ["ab", "cd", "ab", "dc"]
        vecs = np.stack([encode(t, SMALL).bits for t in trans]).astype(float)
        res = evaluate(dset(trans, vecs), "qbs", phoc_config=SMALL)
        assert [r.query for r in res.lists] == ["ab", "cd", "dc"]
        assert res.mean_average_precision == 1.0

    def test_ties_broken_by_sample_id(self):
        vecs = np.ones((4, 3))
        d = dset(["x", "y", "x", "z"], vecs, ids=["d", "c", "b", "a"])
        lists = evaluate(d, "qbe").lists
        assert lists[0].ids == ["a", "b", "c"]

    def test_empty_query_set(self):
        with pytest.raises(EmptyQuerySet):
            evaluate(dset(["a", "b"]), "qbe")

    @pytest.mark.parametrize("mode", ["qbe", "qbs"])
    def test_stop_words_apply(self, mode):
        cfg = PhocConfig(alphabet=("a", "b"), levels=(1,))
        d = dset(["a", "a", "b", "b"], [[1, 0.1], [1, 0.2], [0.1, 1], [0.2, 1]])
        queries = [r.query for r in evaluate(d, mode, {"a"}, cfg).lists]
        assert queries == (["s002", "s003"] if mode == "qbe" else ["b"])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            evaluate(dset(["a", "a"]), "qbx")

    def test_zero_descriptor(self):
        with pytest.raises(ZeroVector):
            evaluate(dset(["a", "a"], np.zeros((2, 4))), "qbe")


def random_instance(rng, n_max=50):
    n = int(rng.integers(4, n_max + 1))
    vocab = ["ab", "ba", "abc", "cab", "dd", "a", "bcd", "dab"][: int(rng.integers(2, 9))]
    trans = [vocab[int(rng.integers(len(vocab)))] for _ in range(n)]
    cfg = PhocConfig(alphabet=("a", "b", "c", "d"), levels=(1, 2))
    vecs = rng.random((n, cfg.dimension))
    # plant exact duplicates to exercise the tie rule
    for _ in range(int(rng.integers(0, 3))):
        i, j = rng.integers(n, size=2)
        vecs[j] = vecs[i]
    ids = [f"id{k:03d}" for k in rng.permutation(n)]
    return DescriptorSet(ids, vecs, trans), cfg


@pytest.mark.parametrize("mode", ["qbe", "qbs"])
def test_matches_bruteforce_evaluator(mode):
    rng = np.random.default_rng(99)
    for _ in range(100):
        d, cfg = random_instance(rng)
        phoc = {t: encode(t, cfg).bits.astype(float) for t in set(d.transcriptions)}
        brute = map_bruteforce(d.ids, d.transcriptions, d.descriptors, mode, phoc)
        if not brute:
            with pytest.raises(EmptyQuerySet):
                evaluate(d, mode, phoc_config=cfg)
            continue
        res = evaluate(d, mode, phoc_config=cfg)
        got = [r.average_precision for r in res.lists]
        assert len(got) == len(brute)
        np.testing.assert_allclose(got, [float(a) for a in brute], rtol=0, atol=1e-12)
        assert res.mean_average_precision == pytest.approx(float(sum(brute) / len(brute)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(-20, 20), st.integers(0, 10_000))
def test_positive_scaling_invariance(exponent, seed):
    # powers of two scale exactly, so rankings must agree bit for bit
    d, cfg = random_instance(np.random.default_rng(seed), n_max=25)
    scaled = DescriptorSet(d.ids, d.descriptors * 2.0 ** exponent, d.transcriptions)
    for mode in ("qbe", "qbs"):
        try:
            a = evaluate(d, mode, phoc_config=cfg)
        except EmptyQuerySet:
            continue
        b = evaluate(scaled, mode, phoc_config=cfg)
        assert [r.ids for r in a.lists] == [r.ids for r in b.lists]
        assert a.mean_average_precision == b.mean_average_precision


class TestFiles:
    def test_descriptor_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        d = DescriptorSet(["x1", "x2"], rng.random((2, 5)), ["ab", "cd"], {"levels": [1, 2]})
        write_descriptors(tmp_path / "d.tsv", d)
        back = read_descriptors(tmp_path / "d.tsv")
        assert back.ids == d.ids and back.transcriptions == d.transcriptions
        assert back.descriptors.tobytes() == d.descriptors.tobytes()
        assert back.phoc == {"levels": [1, 2]}
        line = (tmp_path / "d.tsv").read_text().splitlines()[1]
        assert line.split("\t")[:2] == ["x1", "ab"] and len(line.split("\t")) == 7

    def test_report_csv(self, tmp_path):
        d = dset(["a", "a", "b"], [[1, 0, 0, 0], [1, 0, 0, 0.1], [0, 1, 0, 0]])
        res = evaluate(d, "qbe")
        write_report(tmp_path / "r.csv", res)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "mode,query,R,AP"
        assert lines[1].startswith("qbe,s000,1,")
        assert read_report_map(tmp_path / "r.csv") == ("qbe", 1.0)
