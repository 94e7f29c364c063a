import json
import math
import pathlib
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles.radiomics_oracle import all_features, ngtdm as oracle_ngtdm
from rgt.boxes import BoundingBox
from rgt.radiomics import (FEATURES, QUALIFIED_NAMES, EmptyRegionError, as_dict, discretize,
                           extract_all, first_order, glcm_features, glcm_matrices,
                           glszm_features, ngtdm_features, shape_features, to_csv, to_json)
from rgt.radiomics.names import FIRST_ORDER, GLCM, GLSZM, NGTDM, SHAPE
from rgt.radiomics.shape import unique_rows
from rgt.radiomics.texture import runs

FIXTURE = pathlib.Path(__file__).parent / "fixtures" / "canonical_8x8.json"
MESH_FEATURES = {f"shape_{n}" for n in ("MeshVolume", "SurfaceArea", "SurfaceVolumeRatio",
                                        "Sphericity")}
MATRIX_FAMILIES = ("glcm", "gldm", "glrlm", "glszm", "ngtdm")


def load_fixture():
    doc = json.loads(FIXTURE.read_text())
    return np.array(doc["image"], dtype=np.float64), BoundingBox(*doc["box"]), doc["golden"]


def assert_matches(values, reference, rel=1e-6, mesh_rel=1e-5):
    for name, v in zip(QUALIFIED_NAMES, values):
        tol = mesh_rel if name in MESH_FEATURES else rel
        assert v == pytest.approx(reference[name], rel=tol, abs=1e-12), name


def idx(family, name):
    return FEATURES.index((family, name))


# ------------------------------------------------------------ names / order
def test_feature_counts_follow_family_order():
    fams = [f for f, _ in FEATURES]
    assert len(FEATURES) == 107
    assert [fams.count(f) for f in ("shape", "firstorder", "glcm", "gldm", "glrlm", "glszm",
                                    "ngtdm")] == [14, 18, 24, 14, 16, 16, 5]
    assert len(set(QUALIFIED_NAMES)) == 107


# ------------------------------------------------------------ discretize
@pytest.mark.parametrize("bin_width", [1.0, 25.0, 1000.0])
def test_discretize_constant_region(bin_width):
    q = discretize(np.full((4, 4), 37.0), np.ones((4, 4), bool), bin_width)
    assert q.ng == 1 and set(q.levels.ravel()) == {1}


@pytest.mark.parametrize("values,expected", [
    ([0.0, 25.0, 50.0], [1, 2, 3]),
    ([0.0, 24.9], [1, 1]),
])
def test_discretize_formula(values, expected):
    img = np.array([values])
    q = discretize(img, np.ones_like(img, dtype=bool), 25.0)
    assert q.levels.ravel().tolist() == expected


def test_discretize_masks_outside_pixels_to_zero():
    img = np.arange(9.0).reshape(3, 3) * 30
    mask = np.eye(3, dtype=bool)
    q = discretize(img, mask, 25.0)
    assert (q.levels[~mask] == 0).all() and q.levels[0, 0] == 1


def test_empty_mask_rejected():
    with pytest.raises(EmptyRegionError):
        discretize(np.zeros((3, 3)), np.zeros((3, 3), bool))
    with pytest.raises(ValueError):
        discretize(np.zeros((3, 3)), np.ones((3, 3), bool), bin_width=0)


# ------------------------------------------------------------ first order
def test_first_order_hand_values():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = dict(zip(FIRST_ORDER, first_order(img, np.ones((2, 2), bool))))
    assert v["Mean"] == 2.5 and v["Minimum"] == 1 and v["Maximum"] == 4
    assert v["Range"] == 3 and v["Energy"] == 30 and v["TotalEnergy"] == 30


def test_first_order_constant_region():
    v = dict(zip(FIRST_ORDER, first_order(np.full((3, 3), 9.0), np.ones((3, 3), bool))))
    assert v["Variance"] == 0 and v["Entropy"] == 0 and v["Uniformity"] == 1
    assert v["Skewness"] == 0 and v["Kurtosis"] == 0


# ------------------------------------------------------------ shape
@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_square_elongation_is_one(k):
    v = dict(zip(SHAPE, shape_features(np.ones((k, k), bool))))
    assert v["Elongation"] == 1.0


@pytest.mark.parametrize("w,h", [(1, 1), (3, 2), (7, 4), (10, 1)])
def test_rectangle_voxel_volume(w, h):
    mask = np.zeros((h + 4, w + 4), bool)
    mask[2:2 + h, 2:2 + w] = True
    v = dict(zip(SHAPE, shape_features(mask)))
    assert v["VoxelVolume"] == w * h


def test_slab_mesh_is_closed():
    from rgt.radiomics.shape import slab_mesh

    rng = np.random.default_rng(3)
    tris = slab_mesh(rng.random((9, 9)) < 0.5)
    edges = {}
    for t in np.round(tris * 2).astype(int):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (tuple(t[a]), tuple(t[b]))
            edges[key] = edges.get(key, 0) + 1
    # every directed edge is matched by its reverse exactly once
    assert all(edges.get((b, a), 0) == n for (a, b), n in edges.items())


def disk(radius, pad=3):
    n = 2 * radius + 1 + 2 * pad
    yy, xx = np.mgrid[:n, :n]
    c = n // 2
    return (yy - c) ** 2 + (xx - c) ** 2 <= radius ** 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 40), st.integers(1, 4))
def test_unique_rows_matches_numpy(seed, n, d):
    a = np.random.default_rng(seed).integers(0, 4, (n, d)).astype(float)
    rows, inv = unique_rows(a)
    ref, ref_inv = np.unique(a, axis=0, return_inverse=True)
    np.testing.assert_array_equal(rows, ref)
    np.testing.assert_array_equal(inv, ref_inv.ravel())


def test_disk_sphericity_against_mesh_oracle():
    from oracles.radiomics_oracle import shape as oracle_shape

    mask = disk(20)
    v = dict(zip(SHAPE, shape_features(mask)))
    ref = oracle_shape(mask)["Sphericity"]
    assert abs(v["Sphericity"] - ref) / ref < 0.02
    # the closed-form cylinder of the same radius and unit height is close too
    vol, area = math.pi * 400, 2 * math.pi * 400 + 2 * math.pi * 20
    analytic = (36 * math.pi * vol ** 2) ** (1 / 3) / area
    assert abs(v["Sphericity"] - analytic) / analytic < 0.05


# ------------------------------------------------------------ GLCM
def test_glcm_constant_region():
    q = discretize(np.full((4, 4), 3.0), np.ones((4, 4), bool))
    v = dict(zip(GLCM, glcm_features(q)))
    assert v["Contrast"] == 0 and v["JointEnergy"] == 1 and v["Correlation"] == 1


def test_glcm_hand_enumeration():
    img = np.array([[0.0, 25.0], [0.0, 25.0]])  # levels [[1,2],[1,2]]
    q = discretize(np.pad(img, 1), np.pad(np.ones((2, 2), bool), 1), 25.0)
    horizontal = glcm_matrices(q)[0]
    np.testing.assert_array_equal(horizontal, [[0, 2], [2, 0]])
    p = horizontal / horizontal.sum()
    contrast = sum(p[i, j] * (i - j) ** 2 for i in range(2) for j in range(2))
    assert contrast == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_glcm_symmetric(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 200, (6, 6)).astype(float)
    mask = rng.random((6, 6)) < 0.7
    mask[0, 0] = True
    for m in glcm_matrices(discretize(img, mask)):
        np.testing.assert_array_equal(m, m.T)


# ------------------------------------------------------------ zones / runs / ngtdm
def test_constant_region_single_zone_and_row_runs():
    img, mask = np.full((4, 5), 10.0), np.ones((4, 5), bool)
    q = discretize(np.pad(img, 1), np.pad(mask, 1))
    v = dict(zip(GLSZM, glszm_features(q)))
    assert v["SizeZoneNonUniformity"] == 1
    levels, lengths = runs(q, (0, 1))
    assert levels.tolist() == [1] * 4 and lengths.tolist() == [5] * 4


def test_ngtdm_checkerboard_hand_value():
    board = (np.indices((3, 3)).sum(axis=0) % 2) * 25.0  # corners + centre level 1
    q = discretize(np.pad(board, 1), np.pad(np.ones((3, 3), bool), 1))
    v = dict(zip(NGTDM, ngtdm_features(q)))
    # s1 = 4 * 2/3 + 1/2, s2 = 4 * 3/5; p = (5/9, 4/9)
    expected = (2 * (5 / 9) * (4 / 9)) / 2 * (19 / 6 + 12 / 5) / 9
    assert v["Contrast"] == pytest.approx(expected, rel=1e-12)
    lv = {(r, c): int(board[r, c] // 25) + 1 for r in range(3) for c in range(3)}
    assert v["Contrast"] == pytest.approx(oracle_ngtdm(lv)["Contrast"], rel=1e-12)


def test_single_pixel_region_is_finite():
    mask = np.zeros((5, 5), bool)
    mask[2, 2] = True
    v = extract_all(np.arange(25.0).reshape(5, 5), mask)
    assert np.all(np.isfinite(v))
    assert v[idx("ngtdm", "Coarseness")] == 1e6


# ------------------------------------------------------------ full vector
def test_canonical_fixture_matches_golden_and_oracle():
    image, box, golden = load_fixture()
    t0 = time.perf_counter()
    values = extract_all(image, box)
    assert time.perf_counter() - t0 < 1.0
    assert_matches(values, golden)
    assert_matches(values, all_features(image, box.to_mask(8, 8)))


@pytest.mark.parametrize("seed", range(4))
def test_random_regions_match_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    img = rng.normal(120, 50, (11, 13))
    mask = rng.random((11, 13)) < 0.55
    mask[5, 6] = True
    assert_matches(extract_all(img, mask), all_features(img, mask))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.3, 0.95))
def test_property_matches_oracle(seed, density):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (7, 7)).astype(float)
    mask = rng.random((7, 7)) < density
    mask[3, 3] = True
    assert_matches(extract_all(img, mask), all_features(img, mask))


def test_constant_image_conventions():
    v = as_dict(extract_all(np.full((6, 6), 80.0), BoundingBox(0, 0, 6, 6)))
    assert v["firstorder_Entropy"] == 0 and v["firstorder_Variance"] == 0
    assert v["firstorder_Uniformity"] == 1 and v["glcm_Contrast"] == 0
    assert v["glcm_Correlation"] == 1 and v["shape_Elongation"] == 1
    assert all(math.isfinite(x) for x in v.values())


def test_translation_invariance_exact():
    image, box, _ = load_fixture()
    canvas = np.zeros((16, 16))
    canvas[3:11, 3:11] = image
    moved = BoundingBox(box.x + 3, box.y + 3, box.w, box.h)
    np.testing.assert_array_equal(extract_all(canvas, moved), extract_all(image, box))


def test_translation_invariance_irregular_mask():
    rng = np.random.default_rng(9)
    img = rng.integers(0, 256, (9, 9)).astype(float)
    mask = rng.random((9, 9)) < 0.6
    big_img, big_mask = np.full((20, 20), 3.0), np.zeros((20, 20), bool)
    big_img[5:14, 7:16], big_mask[5:14, 7:16] = img, mask
    np.testing.assert_array_equal(extract_all(big_img, big_mask), extract_all(img, mask))


@pytest.mark.parametrize("c", [1, 17, 300, -40])
def test_intensity_shift(c):
    image, box, _ = load_fixture()
    a, b = extract_all(image, box), extract_all(image + c, box)
    for n, (fam, name) in enumerate(FEATURES):
        if fam in MATRIX_FAMILIES or fam == "shape":
            assert a[n] == b[n], name
    for name in ("Minimum", "Maximum", "Median", "10Percentile", "90Percentile"):
        n = idx("firstorder", name)
        assert b[n] == a[n] + c, name
    assert b[idx("firstorder", "Mean")] == pytest.approx(a[idx("firstorder", "Mean")] + c,
                                                         abs=1e-12)


def test_extract_is_pure():
    image, box, _ = load_fixture()
    assert extract_all(image, box).tobytes() == extract_all(image.copy(), box).tobytes()


def test_box_outside_image_rejected():
    with pytest.raises(ValueError):
        extract_all(np.zeros((8, 8)), BoundingBox(4, 4, 8, 8))
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 3)


def test_nan_inside_region_rejected():
    img = np.zeros((4, 4))
    img[1, 1] = np.nan
    with pytest.raises(ValueError):
        extract_all(img, np.ones((4, 4), bool))


def test_json_and_csv_layout():
    image, box, _ = load_fixture()
    v = extract_all(image, box)
    doc = json.loads(to_json(v))
    assert list(doc["features"]) == list(QUALIFIED_NAMES) and doc["values"] == v.tolist()
    lines = to_csv([v, v], ids=["a", "b"]).splitlines()
    assert lines[0].split(",")[1:] == list(QUALIFIED_NAMES) and len(lines) == 3
    assert float(lines[1].split(",")[1]) == v[0]
