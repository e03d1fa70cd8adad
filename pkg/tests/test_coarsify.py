import numpy as np
import pytest

from coarse2fine.coarsify import CoarsePolicy, coarsify, coarsify_record, labeled_fraction
from coarse2fine.datagen import SceneSpec, generate_scene
from coarse2fine.records import IGNORE, PROV_IGNORE, PROV_MANUAL


def test_never_relabels():
    spec = SceneSpec(seed=1)
    for i in range(10):
        dense = generate_scene(spec, i, "real").label
        coarse = coarsify(dense, CoarsePolicy())
        keep = coarse != IGNORE
        assert np.array_equal(coarse[keep], dense[keep])


def test_identity_policy():
    dense = generate_scene(SceneSpec(seed=2), 0, "real").label
    out = coarsify(dense, CoarsePolicy(target_fraction=1.0, min_component_area=0))
    assert np.array_equal(out, dense)


def test_small_component_dropped_entirely():
    dense = np.zeros((64, 64), dtype=np.uint8)
    dense[10:12, 10:12] = 1  # 2x2 island, area 4 < 16
    out = coarsify(dense, CoarsePolicy(target_fraction=1.0, min_component_area=16))
    assert np.all(out[10:12, 10:12] == IGNORE)
    assert np.all(out[dense == 0] == 0)


def test_monotone_in_target():
    spec = SceneSpec(seed=3)
    for i in range(6):
        dense = generate_scene(spec, i, "real").label
        hi = coarsify(dense, CoarsePolicy(target_fraction=0.8))
        lo = coarsify(dense, CoarsePolicy(target_fraction=0.45))
        lo_set = lo != IGNORE
        hi_set = hi != IGNORE
        assert np.all(~lo_set | hi_set), "lower-target labels must nest in higher-target labels"
        assert labeled_fraction(lo) <= labeled_fraction(hi)


def test_boundary_band_is_ignored():
    # big blobs, no small components: any erosion must blank both sides
    # of every class boundary
    dense = np.zeros((48, 48), dtype=np.uint8)
    dense[8:40, 8:22] = 1
    dense[8:40, 26:44] = 2
    out = coarsify(dense, CoarsePolicy(target_fraction=0.5, min_component_area=0))
    assert not np.array_equal(out, dense)  # erosion actually ran
    boundary = np.zeros_like(dense, dtype=bool)
    boundary[:-1] |= dense[:-1] != dense[1:]
    boundary[1:] |= dense[:-1] != dense[1:]
    boundary[:, :-1] |= dense[:, :-1] != dense[:, 1:]
    boundary[:, 1:] |= dense[:, :-1] != dense[:, 1:]
    assert np.all(out[boundary] == IGNORE)


def test_image_border_is_not_a_boundary():
    dense = np.zeros((32, 32), dtype=np.uint8)  # one class everywhere
    out = coarsify(dense, CoarsePolicy(target_fraction=0.9, min_component_area=0))
    assert np.array_equal(out, dense)  # nothing to erode against


def test_mean_fraction_near_target():
    spec = SceneSpec(seed=0)
    pol = CoarsePolicy()
    fr = [
        labeled_fraction(coarsify(generate_scene(spec, i, "real").label, pol))
        for i in range(40)
    ]
    assert abs(np.mean(fr) - pol.target_fraction) < 0.05


def test_deterministic():
    dense = generate_scene(SceneSpec(seed=4), 1, "real").label
    a = coarsify(dense, CoarsePolicy())
    b = coarsify(dense, CoarsePolicy())
    assert np.array_equal(a, b)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        coarsify(np.zeros((4, 4, 4), dtype=np.uint8))
    holey = np.zeros((8, 8), dtype=np.uint8)
    holey[0, 0] = IGNORE
    with pytest.raises(ValueError):
        coarsify(holey)
    with pytest.raises(ValueError):
        CoarsePolicy(target_fraction=0.0)
    with pytest.raises(ValueError):
        labeled_fraction(np.zeros((0,), dtype=np.uint8))


def test_coarsify_record_sets_domain_and_provenance():
    rec = generate_scene(SceneSpec(seed=5), 0, "real")
    coarse = coarsify_record(rec)
    assert coarse.domain == "real-coarse"
    assert coarse.record_id == rec.record_id
    assert np.array_equal(coarse.image, rec.image)
    ign = coarse.label == IGNORE
    assert np.all(coarse.provenance[ign] == PROV_IGNORE)
    assert np.all(coarse.provenance[~ign] == PROV_MANUAL)
    assert 0.3 < labeled_fraction(coarse.label) < 1.0
