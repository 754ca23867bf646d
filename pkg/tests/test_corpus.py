import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeforge import corpus
from rangeforge.corpus import (
    CorpusManifest,
    DuplicateIdError,
    EmptySelectionError,
    IdCollisionError,
    InsufficientStratumError,
    LabelViolationError,
    ManifestError,
    SampleRecord,
    TypeDistribution,
)


def rec(sid, ftype="executable", label="benign", zero_day=False, size=100):
    return SampleRecord(sid, ftype, label, zero_day, size, f"d-{sid}")


def toy_manifest():
    rows = []
    for label in ("benign", "malicious"):
        for ftype in ("exe", "doc"):
            rows += [rec(f"{label[0]}-{ftype}-{i}", ftype, label) for i in range(10)]
    return CorpusManifest(rows)


class TestLoadManifest:
    def test_header_only_csv_is_empty(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(",".join(corpus.MANIFEST_COLUMNS) + "\n")
        assert len(corpus.load_manifest(p)) == 0

    @pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
    def test_four_rows_round_trip(self, tmp_path, suffix):
        rows = [rec("a", label="benign"), rec("b", "document", "benign", size=0),
                rec("c", "script", "malicious"), rec("d", "iso", "malicious", zero_day=True, size=7)]
        p = corpus.write_manifest(rows, tmp_path / f"m{suffix}")
        back = corpus.load_manifest(p)
        assert len(back) == 4
        for original in rows:
            got = back.get(original.sample_id)
            for f in corpus.MANIFEST_COLUMNS:
                assert getattr(got, f) == getattr(original, f)

    def test_duplicate_id_names_the_id(self, tmp_path):
        p = corpus.write_manifest([rec("x"), rec("y")], tmp_path / "m.csv")
        p.write_text(p.read_text() + "x,executable,benign,false,1,dd\n")
        with pytest.raises(DuplicateIdError, match="x"):
            corpus.load_manifest(p)

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps(rec("a").to_dict()) + "\n{not json\n")
        with pytest.raises(ManifestError) as err:
            corpus.load_manifest(p)
        assert err.value.line == 2

    def test_zero_day_must_be_malicious(self):
        with pytest.raises(Exception):
            rec("z", label="benign", zero_day=True)


class TestMeasureDistribution:
    def test_three_to_one(self):
        rows = [rec(f"e{i}") for i in range(3)] + [rec("d", "document")]
        assert measure(rows) == {"executable": 0.75, "document": 0.25}

    def test_singleton(self):
        assert measure([rec("only", "iso")]) == {"iso": 1.0}

    def test_empty_filter(self):
        with pytest.raises(EmptySelectionError):
            corpus.measure_distribution([rec("a")], "malicious")


def measure(rows, label=None):
    return corpus.measure_distribution(rows, label).weights


class TestStratifiedSample:
    def test_toy_six_four_split(self):
        out = corpus.stratified_sample(toy_manifest(), 20, 0.5, TypeDistribution({"exe": 0.6, "doc": 0.4}), seed=3)
        tally = Counter((s.label, s.filetype) for s in out.samples)
        assert tally == {("benign", "exe"): 6, ("benign", "doc"): 4, ("malicious", "exe"): 6, ("malicious", "doc"): 4}

    def test_zero_total(self):
        out = corpus.stratified_sample(toy_manifest(), 0, 0.5, seed=1)
        assert len(out) == 0

    def test_insufficient_stratum(self):
        with pytest.raises(InsufficientStratumError) as err:
            corpus.stratified_sample(toy_manifest(), 40, 0.5, TypeDistribution({"exe": 0.9, "doc": 0.1}), seed=1)
        e = err.value
        assert (e.label, e.filetype, e.needed, e.available) == ("benign", "exe", 18, 10)

    def test_deterministic(self):
        m = toy_manifest()
        a = corpus.stratified_sample(m, 14, 0.5, seed=9)
        b = corpus.stratified_sample(m, 14, 0.5, seed=9)
        assert [s.sample_id for s in a.samples] == [s.sample_id for s in b.samples]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.randoms(use_true_random=False))
    def test_permutation_insensitive(self, seed, rnd):
        rows = list(toy_manifest())
        shuffled = rows[:]
        rnd.shuffle(shuffled)
        a = corpus.stratified_sample(CorpusManifest(rows), 13, 0.4, seed=seed)
        b = corpus.stratified_sample(CorpusManifest(shuffled), 13, 0.4, seed=seed)
        assert sorted(s.sample_id for s in a.samples) == sorted(s.sample_id for s in b.samples)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 400), st.floats(0, 1), st.integers(0, 1000))
    def test_stratum_fidelity(self, n, frac, seed):
        weights = {"exe": 0.5, "doc": 0.3, "iso": 0.2}
        manifest = corpus.synthesize_manifest(400, weights, seed=1)
        out = corpus.stratified_sample(manifest, n, frac, TypeDistribution(weights), seed)
        n_benign = int(n * frac + 0.5)
        assert out.benign_count == n_benign
        assert len(out) == n
        for (label, ftype), count in out.strata().items():
            share = (n_benign if label == "benign" else n - n_benign) * weights[ftype]
            assert abs(count - share) <= 1


def test_largest_remainder_hand_cases():
    assert corpus.largest_remainder(10, {"a": 1 / 3, "b": 1 / 3, "c": 1 / 3}) == {"a": 4, "b": 3, "c": 3}
    assert corpus.largest_remainder(7, {"x": 0.5, "y": 0.5}) == {"x": 4, "y": 3}
    assert corpus.largest_remainder(0, {"x": 1.0}) == {"x": 0}


def test_type_distribution_sum():
    with pytest.raises(Exception):
        TypeDistribution({"a": 0.5, "b": 0.4})


class TestInjectZeroDays:
    def base(self):
        return corpus.stratified_sample(toy_manifest(), 20, 0.5, seed=5)

    def test_empty_is_identity(self):
        s = self.base()
        assert corpus.inject_zero_days(s, []).to_jsonl() == s.to_jsonl()

    def test_one_exe_replaces_one_exe(self):
        rows = [rec("b1"), rec("m1", label="malicious"), rec("m2", label="malicious")]
        sset = corpus.stratified_sample(CorpusManifest(rows), 3, 1 / 3, TypeDistribution({"executable": 1.0}), seed=2)
        z = rec("z1", label="malicious", zero_day=True)
        out = corpus.inject_zero_days(sset, [z])
        removed = {s.sample_id for s in sset.samples} - {s.sample_id for s in out.samples}
        added = {s.sample_id for s in out.samples} - {s.sample_id for s in sset.samples}
        assert added == {"z1"}
        assert len(removed) == 1 and removed <= {"m1", "m2"}

    def test_counts_preserved(self):
        s = self.base()
        zs = corpus.make_zero_days(4, {"exe": 0.5, "doc": 0.5}, seed=1)
        out = corpus.inject_zero_days(s, zs)
        assert (len(out), out.benign_count, out.malicious_count, out.zero_day_count) == (20, 10, 10, 4)

    def test_id_collision(self):
        s = self.base()
        clash = SampleRecord(s.samples[0].sample_id, "exe", "malicious", True, 1, "d")
        with pytest.raises(IdCollisionError):
            corpus.inject_zero_days(s, [clash])

    def test_label_violation(self):
        with pytest.raises(LabelViolationError):
            corpus.inject_zero_days(self.base(), [rec("new", label="malicious")])


def test_sample_set_round_trip(tmp_path):
    s = corpus.stratified_sample(toy_manifest(), 12, 0.5, seed=4)
    back = corpus.load_sample_set(corpus.write_sample_set(s, tmp_path / "s.jsonl"))
    assert back.to_jsonl() == s.to_jsonl()
    assert back.digest() == s.digest()


def test_proportional_subset_within_one():
    s = corpus.stratified_sample(corpus.synthesize_manifest(300, None, seed=2), 300, 0.5, seed=2)
    sub = corpus.proportional_subset(s, 57, seed=2)
    full = s.strata()
    for key, count in sub.strata().items():
        assert abs(count - full[key] * 57 / 300) <= 1
    assert len(sub) == 57


def test_selection_is_uniform_within_stratum():
    rows = [rec(f"e{i:02d}") for i in range(10)]
    hits = Counter()
    for seed in range(3000):
        out = corpus.stratified_sample(CorpusManifest(rows), 2, 1.0, seed=seed)
        hits.update(s.sample_id for s in out.samples)
    # each id expected 600 times; sd ~ 22
    assert all(abs(v - 600) < 100 for v in hits.values())
