from collections import Counter

import numpy as np
import pytest

from cgdmer import corpus
from cgdmer.corpus import DEFAULT_CLASSES, ClassSpec, generate, make_record, read_dataset, write_dataset
from cgdmer.text_mae import split_words


def test_same_seed_and_index_is_bit_identical():
    assert make_record(7, 3) == make_record(7, 3)
    assert make_record(7, 3) != make_record(7, 4)
    assert generate(5, 1)[4] == make_record(1, 4)


def test_record_shape_and_ids():
    recs = generate(3, 2, leads=4, length=100, sample_rate=10.0)
    assert [r.id for r in recs] == ["s2-000000", "s2-000001", "s2-000002"]
    assert all(r.ecg.shape == (4, 100) for r in recs)
    assert all(abs(r.ecg.mean(axis=1)).max() < 1e-12 for r in recs)


def test_rr_intervals_stay_in_band():
    rng = np.random.default_rng(0)
    for spec in DEFAULT_CLASSES:
        lo, hi = spec.rate_band
        for _ in range(50):
            _, rrs = corpus._beat_times(rng, spec, 10.0)
            assert rrs.size >= 1
            assert 60.0 / hi - 1e-12 <= rrs.mean() <= 60.0 / lo + 1e-12


def test_mean_rates_separate():
    rng = np.random.default_rng(1)
    rates = {}
    for label in (0, 1):
        spec = DEFAULT_CLASSES[label]
        rates[label] = np.mean([corpus.synthesize(rng, spec, label, 2, 250, 25.0)[1] for _ in range(1000)])
    assert rates[1] - rates[0] >= 30.0


def test_class_balance():
    counts = Counter(r.label for r in generate(2000, 5, leads=2, length=100, sample_rate=10.0))
    assert set(counts) == {0, 1, 2, 3}
    assert all(abs(c - 500) < 80 for c in counts.values())


def test_reports_name_the_class_and_rate():
    for r in generate(40, 3, leads=2, length=100, sample_rate=10.0):
        spec = DEFAULT_CLASSES[r.label]
        assert r.class_name == spec.name
        assert any(tok.isdigit() for tok in split_words(r.report))


def test_reports_are_separable_by_bag_of_words():
    train, test = generate(400, 10, leads=2, length=100, sample_rate=10.0), generate(200, 11, leads=2, length=100,
                                                                                     sample_rate=10.0)
    words = sorted({w for r in train for w in split_words(r.report) if not w.isdigit()})
    index = {w: i for i, w in enumerate(words)}

    def bow(r):
        v = np.zeros(len(words))
        for w in split_words(r.report):
            if w in index:
                v[index[w]] += 1
        return v / max(np.linalg.norm(v), 1e-12)

    x = np.stack([bow(r) for r in train])
    y = np.array([r.label for r in train])
    centroids = np.stack([x[y == c].mean(axis=0) for c in range(4)])
    pred = np.argmax(np.stack([bow(r) for r in test]) @ centroids.T, axis=1)
    assert np.mean(pred == [r.label for r in test]) >= 0.95


def test_validation_errors():
    spec = DEFAULT_CLASSES[0]
    slow = ClassSpec("slow", (5, 10), 0.0, spec.templates, spec.prompt)
    with pytest.raises(ValueError, match="fewer than 2 beats"):
        generate(1, 0, specs=(spec, slow))
    few = ClassSpec("few", (60, 80), 0.0, spec.templates[:2], spec.prompt)
    with pytest.raises(ValueError, match="3 report templates"):
        generate(1, 0, specs=(spec, few))
    with pytest.raises(ValueError):
        generate(0, 0)


def test_lead_scale_override_checked():
    spec = ClassSpec("x", (60, 80), 0.0, DEFAULT_CLASSES[0].templates, "x", lead_scale=np.ones(3))
    np.testing.assert_array_equal(spec.scales(3, 0), np.ones(3))
    with pytest.raises(ValueError):
        spec.scales(4, 0)


# ---------------------------------------------------------------------------
# NDJSON
# ---------------------------------------------------------------------------


def test_empty_dataset_is_metadata_only(tmp_path):
    path = tmp_path / "empty.ndjson"
    write_dataset([], path, leads=12, length=250)
    assert len(path.read_text().splitlines()) == 1
    ds = read_dataset(path)
    assert len(ds) == 0 and (ds.leads, ds.length) == (12, 250)
    assert ds.class_names == corpus.class_names()


def test_round_trip_up_to_float32(tmp_path):
    path = tmp_path / "d.ndjson"
    recs = generate(3, 4, leads=3, length=50, sample_rate=5.0)
    write_dataset(recs, path)
    back = read_dataset(path).records
    for a, b in zip(recs, back):
        assert (a.id, a.report, a.label, a.class_name) == (b.id, b.report, b.label, b.class_name)
        np.testing.assert_array_equal(b.ecg, a.ecg.astype(np.float32).astype(np.float64))


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "bad.ndjson"
    write_dataset(generate(2, 0, leads=2, length=40, sample_rate=4.0), path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="line 3"):
        read_dataset(path)


def test_shape_mismatch_against_header(tmp_path):
    path = tmp_path / "d.ndjson"
    write_dataset(generate(1, 0, leads=2, length=40, sample_rate=4.0), path)
    text = path.read_text().replace('"L": 2', '"L": 3', 1)
    path.write_text(text)
    with pytest.raises(ValueError, match="line 2"):
        read_dataset(path)


def test_missing_metadata(tmp_path):
    path = tmp_path / "none.ndjson"
    path.write_text("")
    with pytest.raises(ValueError, match="line 1"):
        read_dataset(path)
