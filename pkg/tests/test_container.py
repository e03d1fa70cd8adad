import numpy as np
import pytest

from coarse2fine.container import (
    MAGIC,
    VERSION,
    load_dataset,
    save_dataset,
    verify_dataset,
)
from coarse2fine.records import (
    IGNORE,
    PROV_IGNORE,
    PROV_MANUAL,
    SceneDataset,
    SceneRecord,
    provenance_from_label,
)


def random_dataset(rng, max_side=6):
    classes = int(rng.integers(1, 7))
    n = int(rng.integers(0, 5))
    records = []
    for i in range(n):
        h = int(rng.integers(1, max_side + 1))
        w = int(rng.integers(1, max_side + 1))
        label = rng.integers(0, classes, size=(h, w)).astype(np.uint8)
        label[rng.random((h, w)) < 0.2] = IGNORE
        domain = ("synthetic", "real-coarse", "real-fine")[int(rng.integers(3))]
        if domain == "synthetic":
            label[label == IGNORE] = 0
        records.append(SceneRecord(
            record_id=f"rec-{i}-é{int(rng.integers(1000))}",
            domain=domain,
            image=rng.standard_normal((3, h, w)).astype(np.float32),
            label=label,
            provenance=provenance_from_label(label),
        ))
    return SceneDataset(classes, records)


def record_offset(ds, index):
    """Byte offset of record `index`, recomputed from the format definition."""
    off = 4 + 2 + 4 + 2
    for rec in ds.records[:index]:
        h, w = rec.label.shape
        off += 2 + len(rec.record_id.encode("utf-8")) + 5 + h * w * (3 * 4 + 2)
    return off


def assert_datasets_equal(a, b):
    assert a.num_classes == b.num_classes
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.record_id == rb.record_id
        assert ra.domain == rb.domain
        assert ra.image.dtype == rb.image.dtype == np.float32
        assert ra.image.tobytes() == rb.image.tobytes()
        assert np.array_equal(ra.label, rb.label)
        assert np.array_equal(ra.provenance, rb.provenance)


def test_round_trip_is_bit_exact_on_random_datasets(tmp_path):
    rng = np.random.default_rng(7)
    for k in range(100):
        ds = random_dataset(rng)
        path = tmp_path / f"ds{k}.c2fd"
        save_dataset(path, ds)
        assert_datasets_equal(ds, load_dataset(path))


def test_serialization_is_deterministic(tmp_path):
    ds = random_dataset(np.random.default_rng(0))
    save_dataset(tmp_path / "a.c2fd", ds)
    save_dataset(tmp_path / "b.c2fd", ds)
    assert (tmp_path / "a.c2fd").read_bytes() == (tmp_path / "b.c2fd").read_bytes()


def test_reserialization_reproduces_the_file(tmp_path):
    ds = random_dataset(np.random.default_rng(3))
    save_dataset(tmp_path / "a.c2fd", ds)
    save_dataset(tmp_path / "b.c2fd", load_dataset(tmp_path / "a.c2fd"))
    assert (tmp_path / "a.c2fd").read_bytes() == (tmp_path / "b.c2fd").read_bytes()


def test_empty_dataset_round_trips(tmp_path):
    save_dataset(tmp_path / "e.c2fd", SceneDataset(3, []))
    out = load_dataset(tmp_path / "e.c2fd")
    assert out.num_classes == 3 and len(out) == 0


def _one_record_dataset(classes=4, h=4, w=5, domain="real-coarse"):
    label = np.full((h, w), 1, dtype=np.uint8)
    label[0, 0] = IGNORE
    return SceneDataset(classes, [SceneRecord(
        record_id="real/0",
        domain=domain,
        image=np.zeros((3, h, w), dtype=np.float32),
        label=label,
        provenance=provenance_from_label(label),
    )])


def test_augmented_records_are_not_storable(tmp_path):
    ds = _one_record_dataset()
    ds.records[0] = SceneRecord(
        record_id="x", domain="augmented",
        image=ds[0].image, label=ds[0].label, provenance=ds[0].provenance,
    )
    with pytest.raises(ValueError, match="not storable"):
        save_dataset(tmp_path / "x.c2fd", ds)


def test_class_count_must_fit_the_header(tmp_path):
    with pytest.raises(ValueError, match="class count"):
        save_dataset(tmp_path / "x.c2fd", SceneDataset(70_000, []))


def test_bad_magic_is_reported_at_offset_zero(tmp_path):
    path = tmp_path / "x.c2fd"
    save_dataset(path, _one_record_dataset())
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="byte 0.*magic"):
        load_dataset(path)
    problems = verify_dataset(path)
    assert len(problems) == 1 and "byte 0" in problems[0]


def test_unsupported_version_is_rejected(tmp_path):
    path = tmp_path / "x.c2fd"
    save_dataset(path, _one_record_dataset())
    blob = bytearray(path.read_bytes())
    blob[4:6] = (VERSION + 9).to_bytes(2, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_dataset(path)


def test_truncated_file_is_rejected(tmp_path):
    path = tmp_path / "x.c2fd"
    save_dataset(path, _one_record_dataset())
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(ValueError, match="truncated"):
        load_dataset(path)


def test_trailing_bytes_are_rejected(tmp_path):
    path = tmp_path / "x.c2fd"
    save_dataset(path, _one_record_dataset())
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_dataset(path)


def test_verify_accepts_a_clean_file(tmp_path):
    path = tmp_path / "x.c2fd"
    save_dataset(path, random_dataset(np.random.default_rng(11)))
    assert verify_dataset(path) == []


def test_verify_flags_out_of_range_labels_with_record_id(tmp_path):
    ds = _one_record_dataset(classes=4)
    ds[0].label[2, 2] = 4 + 3
    ds[0].provenance[2, 2] = PROV_MANUAL
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    problems = verify_dataset(path)
    assert any("'real/0'" in p and "label value 7" in p for p in problems)


def test_verify_flags_manual_provenance_on_ignore_pixels(tmp_path):
    ds = _one_record_dataset()
    ds[0].provenance[0, 0] = PROV_MANUAL  # label there is IGNORE
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    assert any("manual" in p and "IGNORE" in p for p in verify_dataset(path))


def test_verify_flags_ignore_provenance_on_labeled_pixels(tmp_path):
    ds = _one_record_dataset()
    ds[0].provenance[1, 1] = PROV_IGNORE  # label there is 1
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    assert any("'ignore' on labeled" in p for p in verify_dataset(path))


def test_verify_flags_duplicate_ids(tmp_path):
    base = _one_record_dataset()
    ds = SceneDataset(4, [base[0], base[0].copy()])
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    assert any("duplicate id" in p for p in verify_dataset(path))


def test_verify_flags_ignore_pixels_in_synthetic_records(tmp_path):
    label = np.full((4, 4), IGNORE, dtype=np.uint8)
    label[0] = 1
    ds = SceneDataset(4, [SceneRecord(
        record_id="synthetic/0", domain="synthetic",
        image=np.zeros((3, 4, 4), dtype=np.float32),
        label=label, provenance=provenance_from_label(label),
    )])
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    assert any("synthetic record has IGNORE" in p for p in verify_dataset(path))


def test_verify_flags_non_finite_image_values(tmp_path):
    ds = _one_record_dataset()
    ds[0].image[1, 2, 3] = np.nan
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    assert any("non-finite" in p for p in verify_dataset(path))


def test_verify_reports_the_true_byte_offset_of_the_offending_record(tmp_path):
    rng = np.random.default_rng(5)
    while True:  # need at least three records to make the offset interesting
        ds = random_dataset(rng)
        if len(ds) >= 3:
            break
    bad = 2
    ds[bad].label[0, 0] = ds.num_classes + 3  # out of range, not IGNORE
    ds[bad].provenance[0, 0] = PROV_MANUAL
    path = tmp_path / "x.c2fd"
    save_dataset(path, ds)
    expected = record_offset(ds, bad)
    hits = [p for p in verify_dataset(path) if "label value" in p]
    assert hits and f"@ byte {expected}" in hits[0]
    # the id length field at that offset must frame the record's actual id
    blob = path.read_bytes()
    id_len = int.from_bytes(blob[expected:expected + 2], "little")
    assert blob[expected + 2:expected + 2 + id_len].decode("utf-8") == ds[bad].record_id


def test_structural_damage_stops_verification_with_one_violation(tmp_path):
    path = tmp_path / "x.c2fd"
    save_dataset(path, _one_record_dataset())
    path.write_bytes(path.read_bytes()[:-3])
    problems = verify_dataset(path)
    assert len(problems) == 1 and "truncated" in problems[0]
