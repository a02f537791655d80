import math

import numpy as np
import pytest

from boxal.certainty import (
    CertaintyTriple,
    combined_certainty,
    image_certainty,
    occurrence_certainty,
    rank_pool,
    semantic_certainty,
    set_certainty,
    spatial_certainty,
)
from boxal.data_io import Detection, ImagePasses
from boxal.errors import ValidationError
from boxal.geometry import BoundingBox
from boxal.grouping import InstanceSet

from oracles import random_passes

# frozen high-precision value for 1 - H(0.9, 0.1)/log(2), computed with a
# 50-digit arbitrary-precision evaluation
C_SEM_09_01 = 0.53100440641071878


def det(x0, y0, x1, y1, scores):
    return Detection(BoundingBox(float(x0), float(y0), float(x1), float(y1)), tuple(scores))


def make_set(*members, creation_index=0):
    return InstanceSet(tuple(members), creation_index)


class TestSemanticCertainty:
    def test_one_hot_is_one(self):
        for kappa in (2, 5, 9):
            scores = (1.0,) + (0.0,) * (kappa - 1)
            s = make_set((0, det(0, 0, 10, 10, scores)))
            assert semantic_certainty(s, kappa) == pytest.approx(1.0, abs=1e-9)

    def test_uniform_is_zero(self):
        for kappa in (2, 4, 10):
            scores = (1.0 / kappa,) * kappa
            s = make_set((0, det(0, 0, 10, 10, scores)))
            assert semantic_certainty(s, kappa) == pytest.approx(0.0, abs=1e-9)

    def test_frozen_binary_case(self):
        s = make_set((0, det(0, 0, 10, 10, (0.9, 0.1))))
        got = semantic_certainty(s, 2)
        assert got == pytest.approx(C_SEM_09_01, abs=1e-9)
        assert got == pytest.approx(0.531004, abs=1e-5)

    def test_mean_over_members(self):
        a = det(0, 0, 10, 10, (1.0, 0.0))
        b = det(0, 0, 10, 10, (0.5, 0.5))
        s = make_set((0, a), (1, b))
        assert semantic_certainty(s, 2) == pytest.approx(0.5, abs=1e-9)

    def test_kappa_below_two_rejected(self):
        s = make_set((0, det(0, 0, 10, 10, (1.0, 0.0))))
        with pytest.raises(ValidationError):
            semantic_certainty(s, 1)

    def test_score_length_mismatch_rejected(self):
        s = make_set((0, det(0, 0, 10, 10, (1.0, 0.0))))
        with pytest.raises(ValidationError):
            semantic_certainty(s, 3)

    def test_base_invariance_1000_vectors(self):
        rng = np.random.Generator(np.random.PCG64(42))
        for _ in range(1000):
            kappa = int(rng.integers(2, 12))
            raw = rng.gamma(rng.uniform(0.2, 3.0), size=kappa) + 1e-12
            p = raw / raw.sum()
            h_nat = -sum(v * math.log(v) for v in p if v > 0)
            h_two = -sum(v * math.log2(v) for v in p if v > 0)
            natural = 1.0 - h_nat / math.log(kappa)
            base2 = 1.0 - h_two / math.log2(kappa)
            assert abs(natural - base2) <= 1e-12


class TestSpatialCertainty:
    def test_identical_boxes(self):
        d = det(5, 5, 15, 15, (1.0, 0.0))
        s = make_set((0, d), (1, d), (2, d))
        assert spatial_certainty(s) == pytest.approx(1.0, abs=1e-9)

    def test_single_member(self):
        s = make_set((0, det(5, 5, 15, 15, (1.0, 0.0))))
        assert spatial_certainty(s) == pytest.approx(1.0, abs=1e-9)

    def test_two_shifted_boxes(self):
        # mean of (0,0,10,10) and (2,0,12,10) is (1,0,11,10);
        # IoU of each member with the mean is 90/110
        s = make_set((0, det(0, 0, 10, 10, (1.0, 0.0))), (1, det(2, 0, 12, 10, (1.0, 0.0))))
        assert spatial_certainty(s) == pytest.approx(90.0 / 110.0, abs=1e-9)


class TestOccurrenceCertainty:
    @pytest.mark.parametrize("r,n,want", [(15, 15, 1.0), (3, 15, 0.2), (1, 15, 1.0 / 15.0)])
    def test_ratio(self, r, n, want):
        d = det(0, 0, 10, 10, (1.0, 0.0))
        s = make_set(*((p, d) for p in range(r)))
        assert occurrence_certainty(s, n) == pytest.approx(want, abs=1e-9)

    def test_r_above_n_asserts(self):
        d = det(0, 0, 10, 10, (1.0, 0.0))
        s = make_set((0, d), (1, d))
        with pytest.raises(AssertionError):
            occurrence_certainty(s, 1)


class TestCombinedCertainty:
    def test_all_ones(self):
        assert combined_certainty(CertaintyTriple(1.0, 1.0, 1.0)) == 1.0

    def test_product(self):
        assert combined_certainty(CertaintyTriple(0.5, 0.8, 0.2)) == pytest.approx(0.08, abs=1e-9)

    def test_bounded_by_factors(self):
        rng = np.random.Generator(np.random.PCG64(7))
        for _ in range(200):
            t = CertaintyTriple(*(float(v) for v in rng.uniform(0, 1, size=3)))
            assert 0.0 <= t.c_h <= min(t.c_sem, t.c_spa, t.c_occ) + 1e-15


class TestImageCertainty:
    def test_min_over_sets(self):
        # three spatially separated sets with distinct certainties
        passes = (
            (det(0, 0, 10, 10, (1.0, 0.0)), det(40, 40, 50, 50, (0.6, 0.4))),
            (det(0, 0, 10, 10, (1.0, 0.0)),),
        )
        img = ImagePasses("x", 100, 100, passes)
        ic = image_certainty(img, kappa=2, n=2)
        assert ic.set_count == 2
        assert ic.c_min == pytest.approx(min(t.c_h for t in ic.triples), abs=1e-15)
        assert ic.min_triple.c_h == ic.c_min

    def test_single_set(self):
        img = ImagePasses("x", 100, 100, ((det(0, 0, 10, 10, (0.8, 0.2)),), ()))
        ic = image_certainty(img, kappa=2, n=2)
        assert ic.set_count == 1
        assert ic.c_min == pytest.approx(ic.triples[0].c_h, abs=1e-15)

    def test_no_detections_certainty_one(self):
        img = ImagePasses("blank", 100, 100, ((), (), ()))
        ic = image_certainty(img, kappa=2, n=3)
        assert ic.set_count == 0
        assert ic.c_min == 1.0
        assert ic.min_triple is None

    def test_permuting_members_leaves_triple_unchanged(self):
        rng = np.random.Generator(np.random.PCG64(3))
        d1 = det(0, 0, 10, 10, (0.7, 0.3))
        d2 = det(1, 0, 11, 10, (0.6, 0.4))
        d3 = det(0, 1, 10, 11, (0.9, 0.1))
        members = [(0, d1), (1, d2), (2, d3)]
        base = set_certainty(make_set(*members), kappa=2, n=5)
        for _ in range(5):
            rng.shuffle(members)
            shuffled = set_certainty(make_set(*members), kappa=2, n=5)
            assert shuffled.c_sem == pytest.approx(base.c_sem, abs=1e-12)
            assert shuffled.c_spa == pytest.approx(base.c_spa, abs=1e-12)
            assert shuffled.c_occ == base.c_occ

    def test_adding_a_set_cannot_increase_cmin(self):
        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(30):
            img = random_passes(rng)
            ic = image_certainty(img, kappa=3, n=img.n_passes)
            # append an extra detection far from the 100x100 content grid
            extra = det(110, 110, 118, 118, (0.5, 0.3, 0.2))
            bigger = ImagePasses(
                img.image_id, 120, 120,
                (img.passes[0] + (extra,),) + img.passes[1:],
            )
            ic2 = image_certainty(bigger, kappa=3, n=img.n_passes)
            assert ic2.set_count == ic.set_count + 1
            assert ic2.c_min <= ic.c_min + 1e-15

    def test_all_values_in_unit_interval(self):
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(50):
            img = random_passes(rng)
            ic = image_certainty(img, kappa=3, n=img.n_passes)
            assert 0.0 <= ic.c_min <= 1.0
            for t in ic.triples:
                for v in (t.c_sem, t.c_spa, t.c_occ, t.c_h):
                    assert -1e-12 <= v <= 1.0 + 1e-12
                assert ic.c_min <= t.c_h + 1e-15


class TestRankPool:
    def blank(self, image_id):
        return ImagePasses(image_id, 10, 10, ((), ()))

    def one_set(self, image_id, scores):
        return ImagePasses(image_id, 100, 100, ((det(0, 0, 10, 10, scores),), ()))

    def test_singleton_pool(self):
        assert rank_pool([self.blank("only")], kappa=2, n=2) == [("only", 1.0)]

    def test_ascending_order(self):
        sharp = self.one_set("sharp", (1.0, 0.0))      # higher c_min
        fuzzy = self.one_set("fuzzy", (0.55, 0.45))    # lower c_min
        ranking = rank_pool([sharp, fuzzy], kappa=2, n=2)
        assert [r[0] for r in ranking] == ["fuzzy", "sharp"]
        assert ranking[0][1] <= ranking[1][1]

    def test_tie_broken_by_image_id(self):
        ranking = rank_pool([self.blank("b"), self.blank("a")], kappa=2, n=2)
        assert [r[0] for r in ranking] == ["a", "b"]
