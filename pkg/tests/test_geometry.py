import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaicgen.geometry import (
    CanvasSpec,
    InvalidCenter,
    InvalidSpec,
    MosaicCenter,
    NotDivisible,
    CanvasPlan,
    Region,
    coverage_holds,
    jitter_center,
    plan_from_dict,
    plan_regions,
    plan_to_dict,
    to_latent,
)

DEFAULT = dict(width=1024, height=768, jitter_ratio=0.375, overlap_x=64, overlap_y=48)


def spec_strategy():
    """Randomized specs that satisfy all CanvasSpec invariants."""
    u = 8

    @st.composite
    def build(draw):
        w = draw(st.integers(8, 40)) * u * 2  # keep W/2 on the U grid for sigma=0.5
        h = draw(st.integers(8, 40)) * u * 2
        n = draw(st.sampled_from([1, 2, 4]))
        sigma = draw(st.sampled_from([0.25, 0.375, 0.5]))
        max_dx = int(sigma * w) // (2 * u)
        max_dy = int(sigma * h) // (2 * u)
        dx = draw(st.integers(0, max_dx)) * 2 * u
        dy = draw(st.integers(0, max_dy)) * 2 * u
        return CanvasSpec(width=w, height=h, object_count=n, jitter_ratio=sigma,
                          overlap_x=dx, overlap_y=dy)

    return build()


class TestJitterCenter:
    def test_sigma_half_collapses_to_single_point(self):
        spec = CanvasSpec(object_count=1, jitter_ratio=0.5, overlap_x=0, overlap_y=0,
                          width=1024, height=768)
        for seed in range(5):
            assert jitter_center(spec, np.random.default_rng(seed)) == MosaicCenter(512, 384)

    def test_default_ratio_containment_and_grid(self):
        spec = CanvasSpec(object_count=4, **DEFAULT)
        xs = set(range(384, 641, 8))
        ys = set(range(288, 481, 8))
        for seed in range(200):
            c = jitter_center(spec, np.random.default_rng(seed))
            assert c.x in xs and c.y in ys

    def test_golden_seed_42(self):
        # regression fixture pinned from the first run of the seeded generator
        spec = CanvasSpec(object_count=4, **DEFAULT)
        assert jitter_center(spec, np.random.default_rng(42)) == MosaicCenter(584, 376)


class TestPlanRegions:
    def test_four_region_closed_form(self):
        spec = CanvasSpec(object_count=4, **DEFAULT)
        plan = plan_regions(spec, MosaicCenter(512, 384))
        got = [(r.x, r.y, r.w, r.h) for r in plan.regions]
        assert got == [(0, 0, 544, 408), (480, 0, 544, 408),
                       (0, 360, 544, 408), (480, 360, 544, 408)]
        # brute-force pixel coverage of the same plan
        assert coverage_holds(plan)

    def test_zero_overlap_exact_partition(self):
        spec = CanvasSpec(object_count=4, width=1024, height=768,
                          jitter_ratio=0.375, overlap_x=0, overlap_y=0)
        plan = plan_regions(spec, MosaicCenter(512, 384))
        areas = sum(r.w * r.h for r in plan.regions)
        assert areas == 1024 * 768
        assert coverage_holds(plan)

    def test_single_region_whole_canvas(self):
        spec = CanvasSpec(object_count=1, width=512, height=384,
                          jitter_ratio=0.375, overlap_x=0, overlap_y=0)
        plan = plan_regions(spec, MosaicCenter(256, 192))
        assert [(r.x, r.y, r.w, r.h) for r in plan.regions] == [(0, 0, 512, 384)]

    def test_invalid_center_rejected(self):
        spec = CanvasSpec(object_count=4, **DEFAULT)
        with pytest.raises(InvalidCenter):
            plan_regions(spec, MosaicCenter(3, 384))  # not on the U grid
        with pytest.raises(InvalidCenter):
            plan_regions(spec, MosaicCenter(8, 384))  # outside containment

    def test_two_region_split_axes(self):
        spec = CanvasSpec(object_count=2, **DEFAULT)
        seen = set()
        for seed in range(20):
            plan = plan_regions(spec, MosaicCenter(512, 384), np.random.default_rng(seed))
            seen.add(plan.split_axis)
            assert len(plan.regions) == 2
            assert coverage_holds(plan)
        assert seen == {"vertical", "horizontal"}


class TestToLatent:
    def test_exact_division(self):
        spec = CanvasSpec(object_count=1, width=512, height=384,
                          jitter_ratio=0.375, overlap_x=0, overlap_y=0)
        plan = plan_regions(spec, MosaicCenter(256, 192))
        lat = plan.latent_regions[0]
        assert (lat.x, lat.y, lat.w, lat.h) == (0, 0, 64, 48)

    def test_division_of_offset_region(self):
        spec = CanvasSpec(object_count=4, **DEFAULT)
        plan = plan_regions(spec, MosaicCenter(512, 384))
        lat = plan.latent_regions[3]
        assert (lat.x, lat.y, lat.w, lat.h) == (60, 45, 68, 51)
        # multiplying back reproduces the parent exactly
        r = plan.regions[3]
        assert (lat.x * 8, lat.y * 8, lat.w * 8, lat.h * 8) == (r.x, r.y, r.w, r.h)

    def test_not_divisible_rejected(self):
        spec = CanvasSpec(object_count=1, width=512, height=384,
                          jitter_ratio=0.375, overlap_x=0, overlap_y=0)
        bad = CanvasPlan(spec=spec, center=MosaicCenter(256, 192),
                         regions=(Region(0, 0, 510, 384, 1),))
        with pytest.raises(NotDivisible):
            to_latent(bad)


class TestSpecValidation:
    def test_bad_jitter_ratio(self):
        with pytest.raises(InvalidSpec):
            CanvasSpec(object_count=4, width=1024, height=768, jitter_ratio=0.6,
                       overlap_x=64, overlap_y=48)
        with pytest.raises(InvalidSpec):
            CanvasSpec(object_count=4, width=1024, height=768, jitter_ratio=0.0,
                       overlap_x=64, overlap_y=48)

    def test_overlap_divisibility(self):
        with pytest.raises(InvalidSpec):
            CanvasSpec(object_count=4, width=1024, height=768, jitter_ratio=0.375,
                       overlap_x=60, overlap_y=48)

    def test_oversized_overlap(self):
        with pytest.raises(InvalidSpec):
            CanvasSpec(object_count=4, width=128, height=128, jitter_ratio=0.25,
                       overlap_x=48, overlap_y=0)

    def test_unsupported_object_count(self):
        with pytest.raises(InvalidSpec):
            CanvasSpec(object_count=3, **DEFAULT)

    def test_empty_jitter_grid(self):
        # W/2 = 260 is not a multiple of 8, so sigma=0.5 has no admissible center
        with pytest.raises(InvalidSpec):
            CanvasSpec(object_count=1, width=520, height=384, jitter_ratio=0.5,
                       overlap_x=0, overlap_y=0)


@settings(max_examples=150, deadline=None)
@given(spec=spec_strategy(), seed=st.integers(0, 2**32 - 1))
def test_plan_properties(spec, seed):
    rng = np.random.default_rng(seed)
    center = jitter_center(spec, rng)
    plan = plan_regions(spec, center, rng)

    # center containment on the snapped grid
    assert spec.jitter_ratio * spec.width - 1e-9 <= center.x
    assert center.x <= (1 - spec.jitter_ratio) * spec.width + 1e-9
    assert center.x % spec.latent_factor == 0

    # coverage via brute-force pixel enumeration (specs are small)
    assert coverage_holds(plan)
    assert len(plan.regions) == spec.object_count

    # overlap exactness for N=4: shared columns/rows between neighbours
    if spec.object_count == 4:
        r1, r2, r3, _ = plan.regions
        shared_cols = (r1.x + r1.w) - r2.x
        shared_rows = (r1.y + r1.h) - r3.y
        assert shared_cols == spec.overlap_x
        assert shared_rows == spec.overlap_y

    # latent round-trip
    u = spec.latent_factor
    for r, lat in zip(plan.regions, plan.latent_regions):
        assert (lat.x * u, lat.y * u, lat.w * u, lat.h * u) == (r.x, r.y, r.w, r.h)
        assert r.w >= u and r.h >= u

    # determinism: same (spec, seed) -> identical plan
    rng2 = np.random.default_rng(seed)
    plan2 = plan_regions(spec, jitter_center(spec, rng2), rng2)
    assert plan2 == plan


def test_plan_dict_round_trip():
    spec = CanvasSpec(object_count=4, **DEFAULT)
    plan = plan_regions(spec, MosaicCenter(512, 384))
    assert plan_from_dict(plan_to_dict(plan)) == plan
