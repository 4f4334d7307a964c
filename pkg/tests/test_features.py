"""Feature pipeline: bilateral smoothing, corner detection, descriptors, matching."""

import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from sedift.core import Image
from sedift.errors import ContractViolation
from sedift.features import (BINARY_KIND, FLOAT_KIND, Descriptor, Keypoint,
                             Match, bilateral_filter, describe, describe_all,
                             descriptor_distance, detect_keypoints,
                             features_from_jsonl, features_to_jsonl,
                             match_bruteforce)


def draw_square(arr, y0, x0, size, value=1.0):
    arr[y0:y0 + size, x0:x0 + size] = value
    return arr


def unit_descriptor(rng):
    v = np.abs(rng.normal(size=128)) + 1e-3
    return Descriptor(kind=FLOAT_KIND, values=v / np.linalg.norm(v))


class TestBilateralFilter:
    def test_constant_image_unchanged(self):
        arr = np.full((20, 24), 0.37)
        out = bilateral_filter(arr)
        assert np.allclose(out, arr, atol=1e-12)

    def test_huge_range_sigma_reduces_to_gaussian(self, rng):
        # scipy's "mirror" matches the edge-exclusive reflection used here
        arr = rng.normal(size=(32, 32))
        got = bilateral_filter(arr, sigma_spatial=3.0, sigma_range=1e6)
        want = gaussian_filter(arr, 3.0, truncate=2.0, mode="mirror")
        assert np.max(np.abs(got - want)) < 1e-9

    def test_preserves_step_edge(self):
        arr = np.zeros((24, 24))
        arr[:, 12:] = 1.0
        smooth_edgeaware = bilateral_filter(arr, sigma_spatial=3.0, sigma_range=0.1)
        smooth_blind = gaussian_filter(arr, 3.0, truncate=2.0, mode="reflect")
        # the blind blur smears the edge; the bilateral filter keeps it sharp
        assert np.max(np.abs(smooth_edgeaware - arr)) < 0.05
        assert np.max(np.abs(smooth_blind - arr)) > 0.2

    def test_image_in_image_out(self, rng):
        img = Image(rng.uniform(-1, 1, (16, 16)))
        out = bilateral_filter(img)
        assert isinstance(out, Image)
        arr_out = bilateral_filter(img.data[:, :, 0])
        assert isinstance(arr_out, np.ndarray)
        assert np.allclose(out.data[:, :, 0], arr_out)

    def test_rejects_bad_sigmas(self, rng):
        with pytest.raises(ContractViolation):
            bilateral_filter(rng.normal(size=(8, 8)), sigma_spatial=0.0)
        with pytest.raises(ContractViolation):
            bilateral_filter(rng.normal(size=(8, 8)), sigma_range=-1.0)


class TestDetectKeypoints:
    def test_square_corners_found(self):
        arr = draw_square(np.zeros((48, 48)), 12, 12, 17)  # corners at 12 and 28
        kps = detect_keypoints(arr)
        assert len(kps) >= 4
        for cy, cx in [(12, 12), (12, 28), (28, 12), (28, 28)]:
            best = min(math.hypot(k.u - cx, k.v - cy) for k in kps)
            assert best <= 1.5, (cy, cx)

    def test_constant_image_yields_nothing(self):
        assert detect_keypoints(np.full((32, 32), 0.5)) == []

    def test_max_count_truncates_strongest_first(self):
        arr = np.zeros((96, 96))
        for i in range(5):
            for j in range(5):
                draw_square(arr, 8 + 17 * i, 8 + 17 * j, 9,
                            value=0.5 + 0.02 * (i * 5 + j))
        kps = detect_keypoints(arr, max_count=30)
        assert len(kps) == 30
        responses = [k.response for k in kps]
        assert responses == sorted(responses, reverse=True)
        full = detect_keypoints(arr, max_count=1000)
        assert len(full) > 30
        assert [k.response for k in full[:30]] == responses

    def test_translation_equivariance(self):
        base = draw_square(np.zeros((64, 64)), 14, 18, 13)
        moved = draw_square(np.zeros((64, 64)), 19, 21, 13)  # shifted by (5, 3)
        kp0 = detect_keypoints(base)
        kp1 = detect_keypoints(moved)
        assert len(kp0) == len(kp1) >= 4
        p0 = sorted((k.v, k.u) for k in kp0)
        p1 = sorted((k.v - 5.0, k.u - 3.0) for k in kp1)
        for (y0, x0), (y1, x1) in zip(p0, p1):
            assert math.hypot(y0 - y1, x0 - x1) <= 0.5

    def test_margin_respected(self, rng):
        arr = rng.normal(size=(40, 40))  # noise creates corners everywhere
        for k in detect_keypoints(arr, max_count=500):
            assert 4.5 <= k.u <= 34.5 and 4.5 <= k.v <= 34.5

    def test_accepts_image_objects(self):
        arr = draw_square(np.zeros((48, 48)), 12, 12, 17)
        kps_img = detect_keypoints(Image(arr))
        kps_arr = detect_keypoints(arr)
        assert [(k.u, k.v) for k in kps_img] == [(k.u, k.v) for k in kps_arr]


class TestDescriptors:
    def _textured(self, rng, n=48):
        arr = rng.normal(size=(n, n))
        return gaussian_filter(arr, 2.0, mode="reflect")

    def test_float_descriptor_contract(self, rng):
        arr = self._textured(rng)
        d = describe(arr, Keypoint(u=24.0, v=24.0, response=1.0))
        assert d.kind == FLOAT_KIND
        assert d.values.shape == (128,)
        assert np.linalg.norm(d.values) == pytest.approx(1.0, abs=1e-9)
        assert np.all(d.values >= 0.0)
        assert np.all(d.values <= 1.0)

    def test_contrast_and_brightness_invariance(self, rng):
        arr = self._textured(rng)
        kp = Keypoint(u=20.5, v=26.25, response=1.0)
        a = describe(arr, kp)
        b = describe(3.7 * arr - 0.9, kp)
        assert np.max(np.abs(a.values - b.values)) < 1e-9

    def test_rotation_changes_float_descriptor(self):
        ramp = np.tile(np.linspace(0.0, 1.0, 48), (48, 1))
        bump = gaussian_filter(draw_square(np.zeros((48, 48)), 20, 20, 8), 1.0)
        arr = ramp + bump
        kp = Keypoint(u=24.0, v=24.0, response=1.0)
        a = describe(arr, kp)
        b = describe(np.rot90(arr).copy(), kp)
        assert np.linalg.norm(a.values - b.values) > 0.1

    def test_constant_patch_gives_uniform_vector(self):
        d = describe(np.full((48, 48), 0.25), Keypoint(u=24.0, v=24.0, response=1.0))
        assert np.allclose(d.values, 1.0 / math.sqrt(128.0))

    def test_binary_descriptor_contract(self, rng):
        arr = self._textured(rng)
        d = describe(arr, Keypoint(u=24.0, v=24.0, response=1.0), kind=BINARY_KIND)
        assert d.kind == BINARY_KIND
        assert d.values.shape == (256,)
        assert d.values.dtype == np.uint8
        assert set(np.unique(d.values)) <= {0, 1}

    def test_binary_deterministic(self, rng):
        arr = self._textured(rng)
        kp = Keypoint(u=18.0, v=30.0, response=1.0)
        a = describe(arr, kp, kind=BINARY_KIND)
        b = describe(arr, kp, kind=BINARY_KIND)
        assert np.array_equal(a.values, b.values)

    def test_unknown_kind_rejected(self, rng):
        with pytest.raises(ContractViolation):
            describe(self._textured(rng), Keypoint(u=24.0, v=24.0, response=1.0),
                     kind="sift")

    def test_descriptor_validation(self, rng):
        with pytest.raises(ContractViolation):
            Descriptor(kind=FLOAT_KIND, values=np.ones(128))  # not unit norm
        with pytest.raises(ContractViolation):
            Descriptor(kind=FLOAT_KIND, values=np.zeros(64))
        with pytest.raises(ContractViolation):
            Descriptor(kind=BINARY_KIND, values=np.zeros(255, dtype=np.uint8))
        with pytest.raises(ContractViolation):
            Descriptor(kind="orb", values=np.zeros(256, dtype=np.uint8))

    def test_describe_all_order(self, rng):
        arr = self._textured(rng)
        kps = [Keypoint(u=float(10 + i), v=24.0, response=1.0) for i in range(4)]
        ds = describe_all(arr, kps)
        assert len(ds) == 4
        assert np.array_equal(ds[2].values, describe(arr, kps[2]).values)


class TestDescriptorDistance:
    def test_float_is_euclidean(self, rng):
        a = unit_descriptor(rng)
        b = unit_descriptor(rng)
        assert descriptor_distance(a, b) == pytest.approx(
            np.linalg.norm(a.values - b.values), rel=1e-12)

    def test_binary_is_hamming(self):
        a = np.zeros(256, dtype=np.uint8)
        b = np.zeros(256, dtype=np.uint8)
        b[:37] = 1
        d = descriptor_distance(Descriptor(BINARY_KIND, a), Descriptor(BINARY_KIND, b))
        assert d == 37.0

    def test_kind_mixing_rejected(self, rng):
        with pytest.raises(ContractViolation):
            descriptor_distance(unit_descriptor(rng),
                                Descriptor(BINARY_KIND, np.zeros(256, dtype=np.uint8)))


class TestMatchBruteforce:
    def test_matches_double_loop_oracle(self, rng):
        queries = [unit_descriptor(rng) for _ in range(8)]
        trains = [unit_descriptor(rng) for _ in range(11)]
        got = match_bruteforce(queries, trains, ratio_threshold=0.95)

        want = []
        for qi, q in enumerate(queries):
            dists = [descriptor_distance(q, t) for t in trains]
            order = np.argsort(dists)
            best, second = order[0], order[1]
            ratio = dists[best] / dists[second] if dists[second] > 0 else 1.0
            if ratio < 0.95:
                want.append((qi, int(best), dists[best], min(ratio, 1.0)))
        assert [(m.query, m.train, m.distance, m.ratio) for m in got] == \
            [(q, t, pytest.approx(d), pytest.approx(r)) for q, t, d, r in want]

    def test_ambiguous_tie_rejected(self, rng):
        q = unit_descriptor(rng)
        t = unit_descriptor(rng)
        twin = Descriptor(kind=FLOAT_KIND, values=t.values.copy())
        assert match_bruteforce([q], [t, twin], ratio_threshold=1.0) == []

    def test_identical_duplicates_at_zero_distance_rejected(self, rng):
        q = unit_descriptor(rng)
        dup = Descriptor(kind=FLOAT_KIND, values=q.values.copy())
        dup2 = Descriptor(kind=FLOAT_KIND, values=q.values.copy())
        assert match_bruteforce([q], [dup, dup2]) == []

    def test_single_candidate_kept_with_zero_ratio(self, rng):
        q = unit_descriptor(rng)
        t = unit_descriptor(rng)
        got = match_bruteforce([q], [t], ratio_threshold=0.5)
        assert len(got) == 1
        assert got[0].ratio == 0.0
        assert got[0].train == 0

    def test_clear_winner_kept(self, rng):
        q = unit_descriptor(rng)
        near = Descriptor(kind=FLOAT_KIND, values=q.values.copy())
        far_v = np.roll(q.values, 64)
        far = Descriptor(kind=FLOAT_KIND, values=far_v / np.linalg.norm(far_v))
        got = match_bruteforce([q], [far, near], ratio_threshold=0.8)
        assert len(got) == 1 and got[0].train == 1

    def test_empty_inputs(self, rng):
        q = unit_descriptor(rng)
        assert match_bruteforce([], [q]) == []
        assert match_bruteforce([q], []) == []

    def test_threshold_validation(self, rng):
        q = unit_descriptor(rng)
        with pytest.raises(ContractViolation):
            match_bruteforce([q], [q], ratio_threshold=0.0)
        with pytest.raises(ContractViolation):
            match_bruteforce([q], [q], ratio_threshold=1.5)

    def test_binary_matching_end_to_end(self, rng):
        def bits(n_ones):
            v = np.zeros(256, dtype=np.uint8)
            v[:n_ones] = 1
            return Descriptor(BINARY_KIND, v)

        got = match_bruteforce([bits(10)], [bits(12), bits(200)],
                               ratio_threshold=0.8)
        assert len(got) == 1
        assert got[0].train == 0
        assert got[0].distance == 2.0

    def test_match_validation(self):
        with pytest.raises(ContractViolation):
            Match(query=0, train=0, distance=-1.0, ratio=0.5)
        with pytest.raises(ContractViolation):
            Match(query=0, train=0, distance=1.0, ratio=1.5)


class TestJsonlRoundTrip:
    def test_both_kinds(self, rng):
        arr = gaussian_filter(rng.normal(size=(48, 48)), 2.0)
        kps = detect_keypoints(arr, max_count=5)
        if not kps:
            kps = [Keypoint(u=24.0, v=24.0, response=1.0)]
        for kind in (FLOAT_KIND, BINARY_KIND):
            descs = describe_all(arr, kps, kind=kind)
            text = features_to_jsonl("img-1", kps, descs)
            back_kps, back_descs = features_from_jsonl(text)
            assert [(k.u, k.v, k.response, k.scale) for k in back_kps] == \
                [(k.u, k.v, k.response, k.scale) for k in kps]
            for a, b in zip(descs, back_descs):
                assert a.kind == b.kind
                assert np.allclose(a.values, b.values, atol=1e-15)

    def test_empty_and_blank_lines(self):
        assert features_to_jsonl("img", [], []) == ""
        kps, descs = features_from_jsonl("\n\n")
        assert kps == [] and descs == []
