import json

import numpy as np
import pytest

from sentlab.data import (
    Dataset,
    DatasetSchema,
    VectorizerSpec,
    fnv1a_64,
    gaussian_blobs,
    load_dataset,
    make_benchmark,
    parse_records,
    save_dataset,
    split_dev,
    tokenize,
    vectorize_text,
)
from sentlab.errors import ConfigError, ParseError, SchemaError


def lines(*records):
    return [json.dumps(r) for r in records]


def assert_same(a: Dataset, b: Dataset):
    assert a.ids == b.ids and a.roles == b.roles and a.num_classes == b.num_classes
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.true_labels, b.true_labels)
    assert a.texts == b.texts


class TestHashing:
    # published FNV-1a 64-bit test vectors
    @pytest.mark.parametrize("data, expected", [
        (b"", 0xCBF29CE484222325),
        (b"a", 0xAF63DC4C8601EC8C),
        (b"foobar", 0x85944171F73967E8),
    ])
    def test_fnv_vectors(self, data, expected):
        assert fnv1a_64(data) == expected

    def test_tokenizer_splits_on_punctuation(self):
        assert tokenize("Hello, wörld!  A-b") == ["hello", "wörld", "a", "b"]
        assert tokenize("Hello", lowercase=False) == ["Hello"]

    def test_empty_text(self):
        assert not vectorize_text("", VectorizerSpec(dim=16)).any()
        assert not vectorize_text(" ,. ", VectorizerSpec(dim=16)).any()

    def test_bag_of_words(self):
        spec = VectorizerSpec(dim=64)
        assert np.array_equal(vectorize_text("a b", spec), vectorize_text("b a", spec))
        assert np.array_equal(vectorize_text("x y z", spec), vectorize_text("x y z", spec))

    def test_signed_accumulation_oracle(self):
        spec = VectorizerSpec(dim=8)
        expected = np.zeros(8)
        for tok in ["the", "cat", "the"]:
            h = fnv1a_64(tok.encode())
            expected[h % 8] += -1.0 if h >> 63 else 1.0
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(vectorize_text("The cat the", spec), expected, atol=1e-15)

    def test_dim_must_be_at_least_two(self):
        with pytest.raises(ConfigError):
            VectorizerSpec(dim=1)


class TestParsing:
    def test_features_and_roles(self):
        ds = parse_records(lines(
            {"id": "a", "features": [1, 2], "label": 0, "true_label": 1, "role": "train"},
            {"id": "b", "features": [3, 4], "label": 2},
            {"id": "c", "features": [5, 6], "role": "unlabeled"},
        ))
        assert ds.num_classes == 3
        assert ds.labels.tolist() == [0, 2, -1] and ds.true_labels.tolist() == [1, -1, -1]
        assert ds.roles == ["train", "train", "unlabeled"]

    def test_bad_json_reports_line(self):
        with pytest.raises(ParseError) as exc:
            parse_records(lines({"id": "a", "features": [1], "label": 0}) + ["", "{oops"])
        assert exc.value.line == 3

    def test_both_features_and_text(self):
        with pytest.raises(SchemaError, match="line 1"):
            parse_records(lines({"id": "a", "features": [1], "text": "x", "label": 0}))

    @pytest.mark.parametrize("record", [
        {"id": "a", "features": [1], "label": -1},
        {"id": "a", "features": [1], "label": True},
        {"id": "a", "features": [1]},
        {"id": "a", "features": [1], "label": 0, "role": "dev"},
        {"id": "", "features": [1], "label": 0},
        {"id": "a", "features": ["x"], "label": 0},
    ])
    def test_schema_errors(self, record):
        with pytest.raises(SchemaError):
            parse_records(lines(record))

    def test_label_beyond_declared_classes(self):
        with pytest.raises(SchemaError):
            parse_records(lines({"id": "a", "features": [1], "label": 3}), DatasetSchema(num_classes=3))

    def test_duplicate_ids_and_ragged_features(self):
        with pytest.raises(SchemaError):
            parse_records(lines({"id": "a", "features": [1], "label": 0}, {"id": "a", "features": [1], "label": 0}))
        with pytest.raises(SchemaError):
            parse_records(lines({"id": "a", "features": [1], "label": 0}, {"id": "b", "features": [1, 2], "label": 0}))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        with pytest.raises(SchemaError, match="empty"):
            load_dataset(p)

    def test_round_trip_features(self, tmp_path):
        ds = gaussian_blobs(40, seed=3)
        ds.labels[:5] = (ds.labels[:5] + 1) % 3
        save_dataset(ds, tmp_path / "d.jsonl")
        assert_same(load_dataset(tmp_path / "d.jsonl"), ds)

    def test_round_trip_text(self, tmp_path):
        ds = parse_records(lines(
            {"id": "x", "text": "good film", "label": 1, "role": "train"},
            {"id": "y", "text": "bad film", "label": 0, "true_label": 0, "role": "test"},
        ))
        save_dataset(ds, tmp_path / "t.jsonl")
        assert_same(load_dataset(tmp_path / "t.jsonl"), ds)


class TestSplitDev:
    def test_balanced_binary(self):
        dev = gaussian_blobs(300, k=2, seed=0)
        dev = dev.subset(np.r_[np.flatnonzero(dev.labels == 0)[:50], np.flatnonzero(dev.labels == 1)[:50]])
        sel, ev = split_dev(dev, seed=1)
        assert len(sel) == len(ev) == 50
        assert np.bincount(sel.labels).tolist() == [25, 25]
        assert set(sel.ids).isdisjoint(ev.ids) and set(sel.ids) | set(ev.ids) == set(dev.ids)
        assert set(sel.roles) == {"select"} and set(ev.roles) == {"eval"}

    def test_small_dev_regime(self):
        dev = gaussian_blobs(62, k=6, seed=4)
        sel, ev = split_dev(dev, seed=2)
        assert abs(len(sel) - len(ev)) <= dev.num_classes
        assert len(sel) + len(ev) == 62

    def test_odd_classes_alternate(self):
        # 31 + 31: each class has an odd member, one goes to each half
        dev = gaussian_blobs(300, k=2, seed=0)
        dev = dev.subset(np.r_[np.flatnonzero(dev.labels == 0)[:31], np.flatnonzero(dev.labels == 1)[:31]])
        sel, ev = split_dev(dev, seed=0)
        assert (len(sel), len(ev)) == (31, 31)

    def test_deterministic(self):
        dev = gaussian_blobs(80, seed=5)
        a, _ = split_dev(dev, seed=3)
        b, _ = split_dev(dev, seed=3)
        assert a.ids == b.ids

    def test_too_small(self):
        with pytest.raises(ConfigError):
            split_dev(gaussian_blobs(5, k=3, seed=0))


class TestBenchmark:
    def test_sizes_and_centers(self):
        s = make_benchmark(0, n_train=300, n_dev=200, n_test=100, n_unlabeled=50)
        assert (len(s.train), len(s.unlabeled), len(s.select) + len(s.eval), len(s.test)) == (300, 50, 200, 100)
        assert len(s.select) == 100
        big = gaussian_blobs(30000, seed=1)
        centers = np.vstack([big.features[big.labels == c].mean(axis=0) for c in range(3)])
        gaps = [np.linalg.norm(centers[i] - centers[j]) for i, j in [(0, 1), (1, 2), (0, 2)]]
        np.testing.assert_allclose(gaps, 3.0, atol=0.05)

    def test_deterministic_and_seed_dependent(self):
        a, b, c = make_benchmark(3, n_train=50), make_benchmark(3, n_train=50), make_benchmark(4, n_train=50)
        assert np.array_equal(a.train.features, b.train.features)
        assert not np.array_equal(a.train.features, c.train.features)


class TestSplits:
    def test_gold_roles_default_truth_to_label(self):
        from sentlab.data import Splits
        ds = parse_records(lines(
            {"id": "a", "features": [1], "label": 1, "role": "train"},
            {"id": "b", "features": [2], "label": 2, "role": "test"},
            {"id": "c", "features": [3], "label": 0, "true_label": 1, "role": "eval"},
        ))
        s = Splits.from_dataset(ds)
        assert s.train.true_labels.tolist() == [-1]
        assert s.test.true_labels.tolist() == [2]
        assert s.eval.true_labels.tolist() == [1]
        assert s.select is None and s.unlabeled is None
