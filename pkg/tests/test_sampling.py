import hashlib
import zipfile
from dataclasses import replace
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wildspread.sampling import (
    CounterRNG,
    MaskSample,
    PatchError,
    SampleStore,
    SamplingError,
    StoreError,
    decode_patch,
    dihedral,
    dihedral_variants,
    encode_patch,
    extract_patch,
    iterate_store,
    label_from_name,
    rotate_bearing,
    sample_mask_scheme,
    sample_pois,
    split_sizes,
    write_store,
)
from wildspread.stacking import LayerSchema

from conftest import T0, make_pair, make_stack


def patch_oracle(data, poi, n):
    """Cell-by-cell reference: source value when in bounds, else 0."""
    C, H, W = data.shape
    col, row = poi
    r = n // 2
    out = np.zeros((n, n, C))
    for i in range(n):
        for j in range(n):
            rr, cc = row - r + i, col - r + j
            if 0 <= rr < H and 0 <= cc < W:
                out[i, j] = data[:, rr, cc]
    return out


# --- rng ----------------------------------------------------------------------


def test_rng_reproducible_and_stream_separated():
    a = CounterRNG(5, "x").sample_indices(1000, 50)
    b = CounterRNG(5, "x").sample_indices(1000, 50)
    c = CounterRNG(5, "y").sample_indices(1000, 50)
    assert a == b and a != c
    assert len(set(a)) == 50


def test_rng_frozen_stream():
    # pins the documented draw order so accidental changes surface
    perm = CounterRNG(0, "split").permutation(10)
    assert sorted(perm) == list(range(10))
    assert perm == CounterRNG(0, "split").permutation(10)
    assert perm != list(range(10))


def test_rng_below_is_roughly_uniform():
    rng = CounterRNG(3)
    counts = np.bincount([rng.below(6) for _ in range(60000)], minlength=6)
    assert np.all(np.abs(counts - 10000) < 500)


# --- extract_patch ------------------------------------------------------------


def test_patch_center_of_31x31_is_whole_stack():
    stack = make_stack(31, 31)
    p = extract_patch(stack, (15, 15), 31)
    np.testing.assert_array_equal(p, stack.data.transpose(1, 2, 0))


def test_patch_corner_zero_padded():
    stack = make_stack(40, 40, seed=2)
    p = extract_patch(stack, (0, 0), 31)
    assert np.all(p[:15] == 0) and np.all(p[:, :15] == 0)
    np.testing.assert_array_equal(p[15:, 15:], stack.data[:, :16, :16].transpose(1, 2, 0))
    np.testing.assert_array_equal(p, patch_oracle(stack.data, (0, 0), 31))


def test_patch_even_size_rejected():
    with pytest.raises(PatchError):
        extract_patch(make_stack(8, 8), (1, 1), 4)


@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(1, 20), w=st.integers(1, 20), n=st.sampled_from([1, 3, 5, 9, 31]),
    data=st.data(),
)
def test_patch_matches_index_oracle(h, w, n, data):
    stack = make_stack(h, w, seed=h * 31 + w)
    poi = (data.draw(st.integers(0, w - 1)), data.draw(st.integers(0, h - 1)))
    np.testing.assert_array_equal(extract_patch(stack, poi, n), patch_oracle(stack.data, poi, n))


# --- sample_pois ----------------------------------------------------------------


def test_sample_pois_population_bound():
    a, b = make_pair(100, 100)
    with pytest.raises(SamplingError, match="exceeds"):
        sample_pois(a, b, 20000, seed=1)


def test_sample_pois_exhaustive_draw():
    a, b = make_pair(12, 9)
    samples = sample_pois(a, b, 12 * 9, seed=4, n=5)
    pois = [s.poi for s in samples]
    assert len(set(pois)) == len(pois) == 108
    assert set(pois) == {(c, r) for r in range(12) for c in range(9)}


def test_sample_pois_labels_and_patches():
    a, b = make_pair(20, 20)
    for s in sample_pois(a, b, 50, seed=9, n=7):
        col, row = s.poi
        assert s.label == b.fire_mask[row, col]
        np.testing.assert_array_equal(s.patch, patch_oracle(a.data, s.poi, 7).astype(np.float32))
        assert s.t1 - s.t0 >= timedelta(hours=24)


def test_sample_pois_seeded():
    a, b = make_pair(30, 30)
    x = [s.poi for s in sample_pois(a, b, 100, seed=11)]
    y = [s.poi for s in sample_pois(a, b, 100, seed=11)]
    z = [s.poi for s in sample_pois(a, b, 100, seed=12)]
    assert x == y and x != z


def test_sample_pois_rejects_short_gap():
    a = make_stack(5, 5)
    b = replace(make_stack(5, 5, seed=1), timestamp=T0 + timedelta(hours=3))
    with pytest.raises(SamplingError):
        sample_pois(a, b, 3, seed=0)


def test_majority_cap():
    a, b = make_pair(30, 30)
    full = sample_pois(a, b, 300, seed=1, n=3)
    capped = sample_pois(a, b, 300, seed=1, n=3, majority_cap=1.0)
    pos = sum(s.label for s in full)
    assert sum(s.label for s in capped) == pos
    assert len(capped) - pos == pos


# --- mask scheme ----------------------------------------------------------------


def test_mask_scheme_center_matches_label():
    a, b = make_pair(25, 25)
    for s in sample_mask_scheme(a, b, 40, 9, seed=3):
        assert s.label_mask[4, 4] == s.label


def test_mask_scheme_all_burning_interior():
    a, b = make_pair(25, 25, mask=np.ones((25, 25)))
    s = sample_mask_scheme(a, b, 1, 5, seed=0)[0]
    col, row = s.poi
    if 2 <= col < 23 and 2 <= row < 23:
        assert s.label_mask.sum() == 25


def test_mask_scheme_corner_padding():
    a, b = make_pair(10, 10)
    all_samples = sample_mask_scheme(a, b, 100, 5, seed=0)
    corner = next(s for s in all_samples if s.poi == (0, 0))
    expected = patch_oracle(b.fire_mask[None], (0, 0), 5)[:, :, 0]
    np.testing.assert_array_equal(corner.label_mask, expected)
    assert np.all(corner.label_mask[:2] == 0) and np.all(corner.label_mask[:, :2] == 0)


# --- dihedral augmentation ----------------------------------------------------


@pytest.mark.parametrize("k", range(8))
def test_dihedral_bearing_follows_geometry(k):
    # a marker one cell east of center has bearing 90; wherever the transform
    # moves it, its bearing from the center must equal rotate_bearing(90, k)
    n = 5
    patch = np.zeros((n, n, 1))
    patch[2, 3, 0] = 1
    out = dihedral(patch, k)
    (r, c), = np.argwhere(out[:, :, 0] == 1)
    east, north = c - 2, 2 - r
    bearing = np.degrees(np.arctan2(east, north)) % 360
    assert rotate_bearing(90.0, k) == pytest.approx(bearing)


def test_dihedral_variants_adjust_wind():
    schema = LayerSchema((("fire_mask", "fire_mask"), ("wind_direction", "weather_constant"),
                          ("wind_dir_sin", "weather_constant"), ("wind_dir_cos", "weather_constant")))
    patch = np.zeros((5, 5, 4), dtype=np.float32)
    patch[:, :, 1] = 90 / 360
    patch[:, :, 2] = 1.0
    patch[:, :, 3] = 0.0
    from wildspread.sampling import Sample

    s = Sample(patch, 0, (2, 2), "f", T0, T0 + timedelta(days=1))
    vs = dihedral_variants(s, schema)
    assert len(vs) == 8 and [v.variant for v in vs] == list(range(8))
    # one counter-clockwise turn: an east wind becomes a north wind
    assert vs[1].patch[2, 2, 1] == pytest.approx(0.0)
    assert vs[1].patch[2, 2, 3] == pytest.approx(1.0)


def test_augmented_sampling_and_store(tmp_path):
    a, b = make_pair(12, 12)
    samples = sample_pois(a, b, 5, seed=1, n=5, augment=True)
    assert len(samples) == 40
    store = write_store(samples, tmp_path / "aug.zip", seed=0)
    assert sum(store.manifest["splits"].values()) == 40


# --- store ------------------------------------------------------------------------


def test_payload_round_trip():
    p = np.random.default_rng(0).standard_normal((7, 7, 3)).astype(np.float32)
    enc = encode_patch(p)
    assert len(enc) == 16 + 4 * 147 and enc[:4] == b"WSP1"
    assert np.array_equal(decode_patch(enc), p)
    # channel-major, then row-major
    assert np.frombuffer(enc[16:20], "<f4")[0] == p[0, 0, 0]
    assert np.frombuffer(enc[20:24], "<f4")[0] == p[0, 1, 0]


def test_split_sizes_rounding():
    assert split_sizes(10, (0.8, 0.1, 0.1)) == [8, 1, 1]
    assert split_sizes(7, (0.5, 0.25, 0.25)) == [5, 1, 1]


@pytest.mark.parametrize("fractions", [(0.8, 0.2, 0.0), (0.5, 0.3, 0.3), (1.0,), (-0.1, 0.6, 0.5)])
def test_bad_fractions(tmp_path, fractions):
    a, b = make_pair(6, 6)
    with pytest.raises(StoreError):
        write_store(sample_pois(a, b, 5, seed=0, n=3), tmp_path / "s.zip", 0, fractions)


def test_store_ten_samples(tmp_path):
    a, b = make_pair(10, 10)
    store = write_store(sample_pois(a, b, 10, seed=0, n=5), tmp_path / "s.zip", seed=3)
    assert store.manifest["splits"] == {"train": 8, "val": 1, "test": 1}
    with zipfile.ZipFile(tmp_path / "s.zip") as zf:
        assert all(i.compress_type == zipfile.ZIP_STORED for i in zf.infolist())
    batches = list(iterate_store(store, "train", 4, epoch_seed=0))
    assert [len(lab) for _, lab in batches] == [4, 4]


def test_label_from_path():
    assert label_from_name("train/1/king_2014-09-13T00:00:00Z_10_12.bin") == 1
    assert label_from_name("val/0/king_2014-09-13T00:00:00Z_3_4.bin") == 0


def test_store_round_trip_and_iteration(tmp_path):
    a, b = make_pair(20, 20)
    samples = sample_pois(a, b, 100, seed=5, n=7, fire_id="king")
    store = write_store(samples, tmp_path / "s.zip", seed=1)
    by_key = {(s.poi[1], s.poi[0]): s for s in samples}
    seen = []
    for split in ("train", "val", "test"):
        for patches, labels, names in iterate_store(store, split, 16, epoch_seed=7, with_names=True):
            for p, lab, nm in zip(patches, labels, names):
                row, col = map(int, nm[:-4].split("_")[-2:])
                s = by_key[(row, col)]
                assert p.tobytes() == s.patch.tobytes()
                assert lab == s.label == label_from_name(nm)
                seen.append(nm)
    assert len(seen) == len(set(seen)) == 100


def test_iteration_order_and_exactly_once(tmp_path):
    a, b = make_pair(10, 10)
    samples = sample_pois(a, b, 10, seed=0, n=3)
    store = write_store(samples, tmp_path / "s.zip", seed=0, split_fractions=(0.998, 0.001, 0.001))
    # ten samples, tiny val/test fractions floor to zero
    assert store.manifest["splits"]["train"] == 10
    sizes = [len(lab) for _, lab in iterate_store(store, "train", 4, epoch_seed=1)]
    assert sizes == [4, 4, 2]
    o1 = [nm for *_, nms in iterate_store(store, "train", 4, 2, with_names=True) for nm in nms]
    o2 = [nm for *_, nms in iterate_store(store, "train", 4, 2, with_names=True) for nm in nms]
    o3 = [nm for *_, nms in iterate_store(store, "train", 4, 3, with_names=True) for nm in nms]
    assert o1 == o2 and o1 != o3
    assert sorted(o1) == store.names("train")
    with pytest.raises(StoreError):
        list(iterate_store(store, "val", 4))
    with pytest.raises(StoreError):
        list(iterate_store(store, "holdout", 4))


def test_store_deterministic_bytes(tmp_path):
    a, b = make_pair(16, 16)
    s1 = write_store(sample_pois(a, b, 60, seed=2, n=5), tmp_path / "a.zip", seed=9)
    s2 = write_store(sample_pois(a, b, 60, seed=2, n=5), tmp_path / "b.zip", seed=9)
    s3 = write_store(sample_pois(a, b, 60, seed=2, n=5), tmp_path / "c.zip", seed=10)
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
    assert digest(tmp_path / "a.zip") == digest(tmp_path / "b.zip")
    assert digest(tmp_path / "a.zip") != digest(tmp_path / "c.zip")
    assert s1.names("train") == s2.names("train")


def test_split_disjoint_and_covering(tmp_path):
    a, b = make_pair(16, 16)
    samples = sample_pois(a, b, 200, seed=2, n=5)
    store = write_store(samples, tmp_path / "s.zip", seed=4)
    ids = {sp: set(store.names(sp)) for sp in ("train", "val", "test")}
    assert not (ids["train"] & ids["val"]) and not (ids["train"] & ids["test"]) and not (ids["val"] & ids["test"])
    assert sum(len(v) for v in ids.values()) == 200
    assert [len(ids[s]) for s in ("train", "val", "test")] == [160, 20, 20]


def test_duplicate_entry_rejected(tmp_path):
    a, b = make_pair(6, 6)
    s = sample_pois(a, b, 3, seed=0, n=3)
    with pytest.raises(StoreError, match="duplicate"):
        write_store([s[0], s[0]], tmp_path / "d.zip", seed=0)


def test_mask_store_pairs(tmp_path):
    a, b = make_pair(12, 12)
    samples = sample_mask_scheme(a, b, 20, 5, seed=0)
    store = write_store(samples, tmp_path / "m.zip", seed=0)
    assert store.manifest["scheme"] == "mask"
    with zipfile.ZipFile(tmp_path / "m.zip") as zf:
        names = zf.namelist()
    bins = [n for n in names if n.endswith(".bin") and not n.endswith(".mask.bin")]
    assert all(n[:-4] + ".mask.bin" in names for n in bins)
    by_poi = {s.poi: s for s in samples}
    for name in store.names("train"):
        row, col = map(int, name[:-4].split("_")[-2:])
        np.testing.assert_array_equal(store.read_mask(name), by_poi[(col, row)].label_mask)
        assert isinstance(by_poi[(col, row)], MaskSample)


def test_store_rejects_compressed(tmp_path):
    a, b = make_pair(6, 6)
    write_store(sample_pois(a, b, 5, seed=0, n=3), tmp_path / "s.zip", seed=0)
    with zipfile.ZipFile(tmp_path / "s.zip") as src, zipfile.ZipFile(tmp_path / "c.zip", "w", zipfile.ZIP_DEFLATED) as dst:
        for n in src.namelist():
            dst.writestr(n, src.read(n))
    with pytest.raises(StoreError, match="compressed"):
        SampleStore(tmp_path / "c.zip")
