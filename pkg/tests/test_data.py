import numpy as np
import pytest

from relkd.data import (DataError, PairedDataset, SyntheticSpec, generate,
                        load, save, split)

SMALL = SyntheticSpec(latent_dim=4, image_dim=6, text_dim=5,
                      n_concepts=10, samples_per_concept=8, noise_sigma=0.3, seed=7)


def test_generate_deterministic():
    a, b = generate(SMALL), generate(SMALL)
    assert np.array_equal(a.image_features, b.image_features)
    assert np.array_equal(a.text_features, b.text_features)
    assert np.array_equal(a.concept_labels, b.concept_labels)


def test_generate_row_count():
    spec = SyntheticSpec(n_concepts=200, samples_per_concept=10)
    assert len(generate(spec)) == 2000


def test_generate_zero_noise_identical_within_concept():
    spec = SyntheticSpec(latent_dim=4, image_dim=6, text_dim=5,
                         n_concepts=3, samples_per_concept=5, noise_sigma=0.0, seed=1)
    ds = generate(spec)
    for c in range(3):
        rows = ds.image_features[ds.concept_labels == c]
        assert np.all(rows == rows[0])


def test_spec_validation():
    with pytest.raises(DataError):
        SyntheticSpec(latent_dim=0)
    with pytest.raises(DataError):
        SyntheticSpec(noise_sigma=-1.0)


def test_split_sizes():
    spec = SyntheticSpec(n_concepts=200, samples_per_concept=10)
    train, val, test = split(generate(spec), (0.8, 0.1, 0.1), seed=0)
    assert (len(train), len(val), len(test)) == (1600, 200, 200)


def test_split_union_is_original():
    ds = generate(SMALL)
    train, val, test = split(ds, (0.5, 0.25, 0.25), seed=3)
    merged = np.concatenate([train.image_features, val.image_features, test.image_features])
    assert sorted(map(tuple, merged)) == sorted(map(tuple, ds.image_features))


def test_split_deterministic():
    ds = generate(SMALL)
    a = split(ds, (0.5, 0.25, 0.25), seed=5)
    b = split(ds, (0.5, 0.25, 0.25), seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.image_features, y.image_features)


def test_split_stratified_by_concept():
    ds = generate(SMALL)
    train, val, test = split(ds, (0.5, 0.25, 0.25), seed=2)
    for part in (train, val, test):
        assert set(part.concept_labels) == set(range(10))


def test_split_bad_fractions():
    ds = generate(SMALL)
    with pytest.raises(DataError):
        split(ds, (0.5, 0.2, 0.2), seed=0)


def test_split_zero_rows_errors():
    spec = SyntheticSpec(latent_dim=2, image_dim=2, text_dim=2,
                         n_concepts=2, samples_per_concept=2, seed=0)
    with pytest.raises(DataError):
        split(generate(spec), (0.9, 0.05, 0.05), seed=0)


def test_save_load_roundtrip(tmp_path):
    ds = generate(SMALL)
    path = str(tmp_path / "data.jsonl")
    save(ds, path)
    loaded = load(path)
    assert np.array_equal(ds.image_features, loaded.image_features)
    assert np.array_equal(ds.text_features, loaded.text_features)
    assert np.array_equal(ds.concept_labels, loaded.concept_labels)
    assert list(ds.split_tags) == list(loaded.split_tags)


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert len(load(str(path))) == 0


def test_load_truncated_line_names_lineno(tmp_path):
    ds = generate(SMALL)
    path = tmp_path / "data.jsonl"
    save(ds, str(path))
    text = path.read_text()
    path.write_text(text[:-20])  # truncate inside the last record
    with pytest.raises(DataError, match=f"line {len(ds)}"):
        load(str(path))
