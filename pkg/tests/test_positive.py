import pytest
from hypothesis import given, strategies as st

from chipforge.geometry import Box, encloses, scale_box
from chipforge.positive import attach_gts, greedy_cover, mine_positive, valid_gts
from chipforge.pyramid import AreaRange, Factor, ScaleSpec, chip_grid, default_pyramid, resolve_canvas
from chipforge.records import GroundTruth, ImageInfo
from chipforge.stats import SynthParams, brute_force_cover, check_coverage, synth_scenes

UNIT = ScaleSpec(1, Factor(1), AreaRange(0), 512, 32)
# Cropped boxes are rounded to 6 decimals.
EPS = 1e-6


def gt(i, x, y, w, h, crowd=False, cat=1):
    return GroundTruth(i, Box(x, y, w, h), cat, crowd)


def unit_canvas(w, h):
    c = resolve_canvas(w, h, UNIT)
    return c, chip_grid(c, 512, 32)


def test_valid_gts_examples():
    assert valid_gts([gt(1, 0, 0, 64, 64)], AreaRange(0, 80)) == [gt(1, 0, 0, 64, 64)]
    g = gt(2, 0, 0, 130, 130)
    assert valid_gts([g], AreaRange(32, 150)) == [g]
    assert valid_gts([g], AreaRange(120)) == [g]
    assert valid_gts([], AreaRange(0, 80)) == []


def test_valid_gts_keeps_order_and_drops_crowd():
    gs = [gt(3, 0, 0, 10, 10), gt(1, 0, 0, 20, 20), gt(2, 0, 0, 5, 5, crowd=True), gt(4, 0, 0, 100, 100)]
    assert [g.id for g in valid_gts(gs, AreaRange(0, 80))] == [3, 1]


def test_two_far_boxes_need_two_chips():
    c, grid = unit_canvas(2000, 600)
    res = greedy_cover([gt(1, 10, 10, 20, 20), gt(2, 1900, 500, 20, 20)], c, grid)
    assert len(res.chips) == 2 and not res.uncoverable


def test_single_chip_grid():
    c, grid = unit_canvas(400, 300)
    res = greedy_cover([gt(1, 10, 10, 50, 50)], c, grid)
    assert res.chips == [Box(0, 0, 512, 512)]


def test_box_larger_than_chip_is_uncoverable():
    c, grid = unit_canvas(1000, 1000)
    big = gt(1, 0, 0, 600, 100)
    res = greedy_cover([big], c, grid)
    assert res.chips == [] and res.uncoverable == [big]


def test_ties_break_row_major():
    c, grid = unit_canvas(600, 600)
    # Enclosed by every candidate: the first one wins.
    res = greedy_cover([gt(1, 100, 100, 10, 10)], c, grid)
    assert res.trace[0][0] == 0


scene = st.tuples(
    st.sampled_from([(600, 600), (640, 544), (1024, 512), (512, 1088)]),  # at most 20 candidates each
    st.lists(
        st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(4, 400), st.floats(4, 400)),
        min_size=1,
        max_size=8,
    ),
)


def build(raw):
    (w, h), boxes = raw
    gts = []
    for i, (fx, fy, bw, bh) in enumerate(boxes):
        bw, bh = min(bw, w), min(bh, h)
        gts.append(gt(i, fx * (w - bw), fy * (h - bh), bw, bh))
    return w, h, gts


@given(scene)
def test_greedy_step_is_brute_force_argmax(raw):
    w, h, gts = build(raw)
    c, grid = unit_canvas(w, h)
    candidates = grid.boxes()
    assert len(candidates) <= 20
    oracle = brute_force_cover(gts, candidates, c)
    for route in (grid, candidates):
        res = greedy_cover(gts, c, route)
        assert res.trace == oracle.per_step_argmax
        assert res.counts == oracle.per_step_max


@given(scene)
def test_grid_and_list_routes_agree(raw):
    w, h, gts = build(raw)
    c, grid = unit_canvas(w, h)
    a = greedy_cover(gts, c, grid)
    b = greedy_cover(gts, c, grid.boxes())
    assert a == b


@given(scene)
def test_every_enclosable_box_is_covered(raw):
    w, h, gts = build(raw)
    c, grid = unit_canvas(w, h)
    res = greedy_cover(gts, c, grid)
    for g in gts:
        b = scale_box(g.box, c.factor)
        if g in res.uncoverable:
            assert not any(encloses(k, b) for k in grid.boxes())
        else:
            assert any(encloses(k, b) for k in res.chips)


@given(scene, st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(4, 400), st.floats(4, 400)))
def test_superset_chips_cover_subset(raw, extra):
    (w, h), boxes = raw
    _, _, small = build(raw)
    _, _, big = build(((w, h), boxes + [extra]))
    c, grid = unit_canvas(w, h)
    chips = greedy_cover(big, c, grid).chips
    for g in small:
        b = scale_box(g.box, c.factor)
        if b.w <= 512 and b.h <= 512:
            assert any(encloses(k, b) for k in chips)


def test_chip_count_can_drop_when_a_box_is_added():
    # Greedy is not monotone in chip count: with box 0 present it picks the
    # two outer chips; without it, it first takes a middle chip and needs three.
    raw = [
        (186.92, 54.48, 187.66, 199.68),
        (12.89, 147.22, 277.22, 79.62),
        (620.94, 59.16, 159.99, 193.67),
        (610.7, 178.72, 157.28, 102.86),
        (750.77, 278.67, 245.23, 65.57),
        (328.49, 13.47, 132.92, 220.44),
    ]
    gts = [gt(i, *r) for i, r in enumerate(raw)]
    c, grid = unit_canvas(1000, 600)
    assert len(greedy_cover(gts, c, grid).chips) == 2
    assert len(greedy_cover(gts[1:], c, grid).chips) == 3


def test_attach_gts_examples():
    c, _ = unit_canvas(1000, 1000)
    rng = AreaRange(0, 80)
    chip = Box(0, 0, 512, 512)
    inside, big, far = gt(1, 10, 20, 30, 40), gt(2, 400, 100, 300, 300), gt(3, 800, 800, 50, 50)
    out = {g.gt_id: g for g in attach_gts(chip, [inside, big, far], c, rng)}
    assert set(out) == {1, 2}
    assert out[1].valid and out[1].box == Box(10, 20, 30, 40)
    assert not out[2].valid and out[2].box == Box(400, 100, 112, 300)


def test_attach_gts_is_chip_local():
    c, _ = unit_canvas(1000, 1000)
    out = attach_gts(Box(96, 64, 512, 512), [gt(1, 100, 100, 10, 10)], c, AreaRange(0))
    assert out[0].box == Box(4, 36, 10, 10)


def test_attach_gts_drops_sub_pixel_slivers():
    c, _ = unit_canvas(1000, 1000)
    assert attach_gts(Box(0, 0, 512, 512), [gt(1, 511.5, 0, 50, 50)], c, AreaRange(0)) == []


def test_mine_positive_empty():
    assert mine_positive(ImageInfo(1, 640, 480), [], default_pyramid()) == []


def fig1_scene():
    image = ImageInfo(7, 1920, 1280)
    gts = [
        gt(1, 100, 100, 20, 30),  # small: finest scale
        gt(2, 1500, 900, 40, 25),
        gt(3, 900, 200, 130, 130),  # valid at the middle and coarse scales
        gt(4, 300, 500, 600, 500),  # large: coarse scale only
        gt(5, 1200, 100, 60, 90),
        gt(6, 50, 1100, 8, 8),
    ]
    return image, gts


def test_fig1_scene_every_valid_box_enclosed():
    image, gts = fig1_scene()
    pyramid = default_pyramid()
    records = mine_positive(image, gts, pyramid)
    for spec in pyramid:
        c = resolve_canvas(image.width, image.height, spec)
        chips = [r.rect_canvas for r in records if r.scale_index == spec.index]
        for g in valid_gts(gts, spec.valid_range):
            assert any(encloses(k, scale_box(g.box, c.factor)) for k in chips), (spec.index, g.id)


def test_same_box_valid_in_chips_of_two_scales():
    image, gts = fig1_scene()
    records = mine_positive(image, gts, default_pyramid())
    scales = {r.scale_index for r in records for g in r.gts if g.gt_id == 3 and g.valid}
    assert scales == {1, 2}


def test_crowd_never_drives_selection_but_is_attached():
    image = ImageInfo(1, 1600, 1200)
    crowd = gt(1, 1000, 800, 40, 40, crowd=True)
    normal = gt(2, 10, 10, 40, 40)
    records = mine_positive(image, [crowd, normal], default_pyramid())
    for r in records:
        assert any(g.valid for g in r.gts)
        assert all(not g.valid for g in r.gts if g.gt_id == 1)
    # The crowd region sits far from the normal box at the fine scale.
    assert not any(g.gt_id == 1 for r in records if r.scale_index == 3 for g in r.gts)


def test_record_invariants_on_corpus():
    ds, _ = synth_scenes(SynthParams(n_images=100), seed=11)
    pyramid = default_pyramid()
    records = [r for im in ds.images for r in mine_positive(im, ds.gts(im.id), pyramid)]
    assert check_coverage(records, ds, pyramid).complete
    images = ds.image_map()
    for r in records:
        assert r.rect_canvas.w == r.rect_canvas.h == 512
        assert any(g.valid for g in r.gts)
        frame = Box(-EPS, -EPS, 512 + 2 * EPS, 512 + 2 * EPS)
        for g in r.gts:
            assert g.box.w >= 1 and g.box.h >= 1
            assert encloses(frame, g.box)
        f = r.factor
        assert r.rect_original.x == pytest.approx(r.rect_canvas.x / f, abs=1e-6)
        assert r.rect_original.w == pytest.approx(512 / f, abs=1e-6)
        assert images[r.image_id].width >= 1


def test_mining_is_deterministic():
    image, gts = fig1_scene()
    assert mine_positive(image, gts, default_pyramid()) == mine_positive(image, list(gts), default_pyramid())


def test_box_on_border_survives_canvas_rounding():
    # 420 * 1.667 = 700.14 rounds to 700 rows; the box's scaled bottom edge is 700.06.
    image = ImageInfo(580, 471, 420)
    gt = GroundTruth(1, Box(242.03, 312.38, 176.87, 107.57), 1)
    pyramid = default_pyramid()
    canvas = resolve_canvas(image.width, image.height, pyramid[1])
    assert canvas.content_h == 700 and scale_box(gt.box, canvas.factor).y2 > 700
    res = greedy_cover([gt], canvas, chip_grid(canvas, 512, 32))
    assert res.uncoverable == [] and len(res.chips) == 1
    records = mine_positive(image, [gt], pyramid)
    assert [r.scale_index for r in records] == [1, 2]
    ds = type("DS", (), {"images": [image], "gts": lambda self, i: [gt]})()
    cov = check_coverage(records, ds, pyramid)
    assert cov.complete and cov.required == 2 and not cov.geometric_misses
