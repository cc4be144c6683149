import hashlib
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from snnpar.data import (ATTRIBUTES, Dataset, IntegrityError, Manifest, ManifestError, Record, SyntheticSpec,
                         batch_iter, generate_synthetic, load_manifest, manifest_path, oracle_labels,
                         synthesize, write_manifest)


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_generation_is_deterministic(tmp_path):
    spec = SyntheticSpec(seed=11, n_train=15, n_test=5)
    generate_synthetic(spec, tmp_path / "a")
    generate_synthetic(spec, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    generate_synthetic(SyntheticSpec(seed=12, n_train=15, n_test=5), tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_oracle_relabels_every_image(small_train, small_test):
    for ds in (small_train, small_test):
        for img, y in zip(ds.images, ds.labels):
            np.testing.assert_array_equal(oracle_labels(img), y)


def test_oracle_at_full_resolution():
    spec = SyntheticSpec(seed=5, image_height=256, image_width=128)
    images, labels = synthesize(spec, 30, np.random.default_rng(0))
    assert images.shape == (30, 3, 256, 128)
    for img, y in zip(images, labels):
        np.testing.assert_array_equal(oracle_labels(img), y)


def test_positive_ratios_match_spec():
    spec = SyntheticSpec(seed=2)
    _, labels = synthesize(spec, 2000, np.random.default_rng(spec.seed))
    np.testing.assert_allclose(labels.mean(axis=0), spec.positive_ratios, atol=0.02)


def test_loader_ratio_equals_count_ratio(small_train):
    counts = np.array([sum(int(r.labels[j]) for r in small_train.manifest.records)
                       for j in range(len(ATTRIBUTES))])
    np.testing.assert_array_equal(small_train.positive_ratios(), counts / len(small_train))


def test_pixels_in_unit_range(small_train):
    assert small_train.images.min() >= 0.0 and small_train.images.max() <= 1.0
    assert small_train.images.dtype == np.float32


def test_ids_unique_across_splits(small_train, small_test):
    ids = np.concatenate([small_train.ids, small_test.ids])
    assert len(set(ids.tolist())) == len(ids)


def test_manifest_round_trip(tmp_path, rng):
    recs = [Record(i * 3, f"x/{i}.sntf", (rng.random(5) < 0.5).astype(np.uint8)) for i in range(6)]
    man = Manifest(list("abcde"), recs, "val", np.array([1, 0, 1, 1, 0], bool))
    write_manifest(tmp_path / "manifest_val.txt", man)
    back = load_manifest(tmp_path / "manifest_val.txt", check_files=False)
    assert back.attributes == man.attributes and back.split == "val"
    np.testing.assert_array_equal(back.selected, man.selected)
    for a, b in zip(back.records, man.records):
        assert (a.id, a.path) == (b.id, b.path)
        np.testing.assert_array_equal(a.labels, b.labels)
    assert back.selected_attributes == ["a", "c", "d"]
    assert back.labels().shape == (6, 3)


def test_large_vocabulary_with_selection_mask(tmp_path, rng):
    names = [f"attr{i}" for i in range(61)]
    mask = np.zeros(61, bool)
    mask[rng.choice(61, 35, replace=False)] = True
    recs = [Record(i, f"{i}.sntf", (rng.random(61) < 0.3).astype(np.uint8)) for i in range(4)]
    write_manifest(tmp_path / "m.txt", Manifest(names, recs, "train", mask))
    back = load_manifest(tmp_path / "m.txt", check_files=False)
    assert len(back.selected_attributes) == 35
    np.testing.assert_array_equal(back.labels(), np.array([r.labels for r in recs])[:, mask])


def test_empty_manifest_is_valid_dataset(tmp_path):
    (tmp_path / "manifest_test.txt").write_text("a,b\n", encoding="utf-8")
    ds = Dataset.load(tmp_path, "test")
    assert len(ds) == 0
    assert list(batch_iter(ds, 4)) == []


@pytest.mark.parametrize("body,lineno", [
    ("1,p.sntf,010\n2,p.sntf\n", 3),
    ("1,p.sntf,012\n", 2),
    ("x,p.sntf,010\n", 2),
    ("1,p.sntf,010\n1,p.sntf,110\n", 3),
    ("#select,11\n", 2),
])
def test_malformed_lines_report_line_number(tmp_path, body, lineno):
    (tmp_path / "p.sntf").write_bytes(b"")
    (tmp_path / "m.txt").write_text("a,b,c\n" + body, encoding="utf-8")
    with pytest.raises(ManifestError, match=f"line {lineno}"):
        load_manifest(tmp_path / "m.txt")


def test_missing_tensor_is_integrity_error(tmp_path):
    (tmp_path / "m.txt").write_text("a\n1,gone.sntf,1\n", encoding="utf-8")
    with pytest.raises(IntegrityError):
        load_manifest(tmp_path / "m.txt")


def test_batch_partition_and_determinism(small_train):
    sub = small_train.subset(range(25))
    sizes = [len(y) for _, y in batch_iter(sub, 12)]
    assert sizes == [12, 12, 1]
    a = [idx.tolist() for *_, idx in batch_iter(sub, 12, shuffle_seed=4, with_index=True)]
    b = [idx.tolist() for *_, idx in batch_iter(sub, 12, shuffle_seed=4, with_index=True)]
    assert a == b and sorted(sum(a, [])) == list(range(25))


def test_batches_cover_labels_as_multiset(small_train):
    emitted = Counter(tuple(row) for _, y in batch_iter(small_train, 7, shuffle_seed=1) for row in y.tolist())
    assert emitted == Counter(tuple(row) for row in small_train.labels.tolist())


def test_batch_size_must_be_positive(small_train):
    with pytest.raises(ValueError):
        next(batch_iter(small_train, 0))


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(image_height=100)
    with pytest.raises(ValueError):
        SyntheticSpec(positive_ratios=(0.5,) * 7)
    with pytest.raises(ValueError):
        SyntheticSpec(positive_ratios=(1.0,) + (0.5,) * 7)


def test_manifest_files_per_split(small_dataset_dir):
    assert manifest_path(small_dataset_dir, "train").exists()
    assert manifest_path(small_dataset_dir, "test").exists()
    assert not manifest_path(small_dataset_dir, "val").exists()
