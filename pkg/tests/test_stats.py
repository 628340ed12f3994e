import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from chipforge.dataset_io import Dataset
from chipforge.errors import InstanceTooLarge, UnknownImage
from chipforge.geometry import Box
from chipforge.pipeline import MiningConfig, build_manifest, mine_dataset
from chipforge.positive import greedy_cover
from chipforge.pyramid import AreaRange, Factor, ScaleSpec, chip_grid, resolve_canvas
from chipforge.records import NEGATIVE, POSITIVE, GroundTruth, ImageInfo, make_chip_record
from chipforge.stats import (
    SynthParams,
    baseline_pixels,
    bench_throughput,
    brute_force_cover,
    format_report,
    greedy_bound,
    pixel_report,
    synth_scenes,
    write_histogram_csv,
)

UNIT = ScaleSpec(1, Factor(1), AreaRange(0), 512, 32)


def rec(image, kind=POSITIVE, scale=1, x=0):
    return make_chip_record(image, scale, 1.0, x, 0, 512, kind, ())


def test_single_chip_ratio():
    image = ImageInfo(1, 1333, 800)
    assert baseline_pixels(1333, 800) == 1333 * 800
    rep = pixel_report([rec(image)], Dataset(images=[image]))
    assert rep.total_chip_pixels == 512**2
    assert rep.ratio == pytest.approx(512**2 / (800 * 1333), abs=1e-12)
    assert round(rep.ratio, 6) == 0.245821


def test_baseline_rule():
    # Shorter side to 800 unless the longer side would pass 1333.
    assert baseline_pixels(640, 480) == 1067 * 800
    assert baseline_pixels(2000, 500) == 1333 * 333


def test_empty_manifest():
    rep = pixel_report([], Dataset(images=[ImageInfo(1, 640, 480)]))
    assert rep.ratio == 0 and rep.n_chips == 0
    assert pixel_report([], Dataset()).ratio == 0


def test_five_chips_per_image_and_totals():
    images = [ImageInfo(i, 640, 480) for i in range(1, 5)]
    records = [rec(im, POSITIVE if k < 3 else NEGATIVE, 1 + k % 3, 32 * k) for im in images for k in range(5)]
    rep = pixel_report(records, Dataset(images=images))
    assert rep.chips_per_image == {"mean": 5.0, "min": 5, "max": 5, "histogram": {"5": 4}}
    assert rep.total_chip_pixels == sum(r.rect_canvas.w * r.rect_canvas.h for r in records) == 20 * 512**2
    assert rep.per_kind == {POSITIVE: 12, NEGATIVE: 8}
    assert sum(rep.per_scale.values()) == 20
    assert rep.baseline_pixels == 4 * baseline_pixels(640, 480)
    assert "ratio" in format_report(rep)


def test_unknown_image():
    with pytest.raises(UnknownImage):
        pixel_report([rec(ImageInfo(9, 10, 10))], Dataset(images=[ImageInfo(1, 10, 10)]))


def test_report_is_stable_and_csv(tmp_path):
    ds, props = synth_scenes(SynthParams(n_images=30), seed=1)
    config = MiningConfig()
    m = build_manifest(mine_dataset(ds, props, config), config)
    a, b = pixel_report(m.records, ds), pixel_report(m.records, ds)
    assert json.dumps(a.to_json(), sort_keys=True) == json.dumps(b.to_json(), sort_keys=True)
    write_histogram_csv(a, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["chips_per_image", "n_images"]
    assert sum(int(n) for _, n in rows[1:]) == 30


def test_synth_contract():
    ds, props = synth_scenes(SynthParams(n_images=0), seed=1)
    assert ds.images == [] and props == {}
    assert synth_scenes(SynthParams(n_images=25), seed=4) == synth_scenes(SynthParams(n_images=25), seed=4)
    ds, props = synth_scenes(SynthParams(n_images=25, noise_rate=0), seed=4)
    for im in ds.images:
        assert [p.box for p in props.get(im.id, [])] == [g.box for g in ds.gts(im.id)]
    ds, props = synth_scenes(SynthParams(n_images=25), seed=4)
    for im in ds.images:
        gt_boxes = [g.box for g in ds.gts(im.id)]
        assert [p.box for p in props[im.id][: len(gt_boxes)]] == gt_boxes


def test_oracle_examples():
    c = resolve_canvas(600, 600, UNIT)
    one = [GroundTruth(1, Box(10, 10, 20, 20), 1)]
    assert brute_force_cover(one, [Box(0, 0, 512, 512)], c).min_cover_size == 1
    two = one + [GroundTruth(2, Box(60, 60, 20, 20), 1)]
    cands = chip_grid(c, 512, 32).boxes()
    assert brute_force_cover(two, cands, c).min_cover_size == 1
    assert len(greedy_cover(two, c, cands).chips) == 1
    with pytest.raises(InstanceTooLarge):
        brute_force_cover(one, [Box(0, 0, 512, 512)] * 21, c)
    with pytest.raises(InstanceTooLarge):
        brute_force_cover(one * 11, [Box(0, 0, 512, 512)], c)


def test_oracle_minimum_by_hand():
    # Three boxes on a 3-chip strip; chips 0 and 2 suffice, greedy takes 3 steps at most.
    c = resolve_canvas(1100, 512, UNIT)
    cands = [Box(0, 0, 512, 512), Box(294, 0, 512, 512), Box(588, 0, 512, 512)]
    gts = [GroundTruth(1, Box(10, 10, 50, 50), 1), GroundTruth(2, Box(300, 10, 100, 50), 1), GroundTruth(3, Box(1000, 10, 50, 50), 1)]
    oracle = brute_force_cover(gts, cands, c)
    assert oracle.min_cover_size == 2
    assert oracle.per_step_argmax == [(0, 2), (2, 1)]


@given(
    st.sampled_from([(600, 600), (640, 544), (1024, 512), (512, 1088)]),
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(4, 400), st.floats(4, 400)), min_size=1, max_size=10),
)
@settings(max_examples=100)
def test_greedy_within_log_bound(size, raw):
    w, h = size
    gts = [GroundTruth(i, Box(fx * (w - min(bw, w)), fy * (h - min(bh, h)), min(bw, w), min(bh, h)), 1) for i, (fx, fy, bw, bh) in enumerate(raw)]
    c = resolve_canvas(w, h, UNIT)
    cands = chip_grid(c, 512, 32).boxes()
    oracle = brute_force_cover(gts, cands, c)
    res = greedy_cover(gts, c, cands)
    assert len(res.chips) <= greedy_bound(oracle.min_cover_size, len(gts)) + 1e-9


def test_bench_shapes():
    empty = bench_throughput(Dataset(), None, MiningConfig())
    assert (empty.n_images, empty.wall_time, empty.images_per_second) == (0, 0.0, 0.0)
    ds, props = synth_scenes(SynthParams(n_images=50), seed=1)
    res = bench_throughput(ds, props, MiningConfig(), workers=1, repeats=2)
    assert res.n_images == 50 and len(res.runs) == 2 and res.images_per_second > 0
    assert res.wall_time == min(res.runs)


def test_coco_shaped_scenes_fix_the_long_side():
    ds, _ = synth_scenes(SynthParams.coco_shaped(300), seed=3)
    assert all(max(im.width, im.height) == 640 for im in ds.images)
    assert all(320 <= min(im.width, im.height) <= 640 for im in ds.images)
    landscape = sum(im.width == 640 for im in ds.images) / len(ds.images)
    assert 0.55 < landscape < 0.85
