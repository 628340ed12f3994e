import json
import subprocess
import sys

import pytest

from chipforge.cli import main
from chipforge.dataset_io import Manifest, read_manifest, write_manifest
from chipforge.records import Label, POSITIVE, ImageInfo, make_chip_record


def dump(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


TINY = {
    "images": [{"id": 1, "width": 400, "height": 300, "file_name": "a.jpg"}],
    "annotations": [{"id": 1, "image_id": 1, "bbox": [40, 60, 50, 50], "category_id": 3, "iscrowd": 0}],
}


@pytest.fixture
def corpus(tmp_path):
    assert main(["synth", "--images", "40", "--seed", "2", "--out", str(tmp_path / "c")]) == 0
    return tmp_path / "c"


def test_positive_reports_full_coverage(corpus, tmp_path, capsys):
    out = tmp_path / "pos.jsonl"
    assert main(["positive", "--annotations", str(corpus / "annotations.json"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "coverage: complete" in text
    m = read_manifest(out)
    assert m.records and all(r.kind == POSITIVE for r in m.records)


def test_positive_without_annotations_is_empty(tmp_path):
    ann = dump(tmp_path / "a.json", {"images": TINY["images"], "annotations": []})
    assert main(["positive", "--annotations", ann, "--out", str(tmp_path / "p.jsonl")]) == 0
    assert read_manifest(tmp_path / "p.jsonl").records == []


def test_exit_codes(tmp_path, corpus, capsys):
    assert main(["positive", "--annotations", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
    ann = str(corpus / "annotations.json")
    assert main(["negative", "--annotations", ann, "--out", str(tmp_path / "x")]) == 1
    bad = dump(tmp_path / "bad.json", {"images": [{"id": 1, "width": 10, "height": 10}], "annotations": [{"id": 1, "image_id": 2, "bbox": [0, 0, 1, 1], "category_id": 1}]})
    assert main(["positive", "--annotations", bad, "--out", str(tmp_path / "x")]) == 1
    assert main(["positive", "--annotations", ann, "--out", str(tmp_path / "x"), "--min-proposals", "0"]) == 1
    err = capsys.readouterr().err
    assert "annotations[0].image_id" in err


def test_negative_empty_when_proposals_are_covered(tmp_path):
    ann = dump(tmp_path / "a.json", TINY)
    props = jsonl(tmp_path / "p.jsonl", [{"image_id": 1, "bbox": [40, 60, 50, 50], "score": 0.9}] * 3)
    assert main(["negative", "--annotations", ann, "--proposals", props, "--out", str(tmp_path / "n.jsonl")]) == 0
    assert read_manifest(tmp_path / "n.jsonl").records == []


def test_negative_reproducible_and_capped(corpus, tmp_path):
    args = ["negative", "--annotations", str(corpus / "annotations.json"), "--proposals", str(corpus / "proposals.jsonl"), "--seed", "4"]
    for name in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / f"{name}.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert main(args + ["--epoch", "1", "--out", str(tmp_path / "e1.jsonl")]) == 0
    for name in ("a", "e1"):
        m = read_manifest(tmp_path / f"{name}.jsonl")
        per_image = {}
        for r in m.records:
            per_image[r.image_id] = per_image.get(r.image_id, 0) + 1
        assert m.records and max(per_image.values()) <= 2
    assert main(args + ["--workers", "3", "--out", str(tmp_path / "w.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "w.jsonl").read_bytes()


def _labels(tmp_path, proposals):
    ann = dump(tmp_path / "a.json", TINY)
    props = jsonl(tmp_path / "p.jsonl", proposals)
    assert main(["positive", "--annotations", ann, "--out", str(tmp_path / "pos.jsonl")]) == 0
    assert main(["labels", "--manifest", str(tmp_path / "pos.jsonl"), "--proposals", props, "--out", str(tmp_path / "l.jsonl")]) == 0
    return read_manifest(tmp_path / "l.jsonl")


def test_labels_gt_proposals_are_positive(tmp_path):
    m = _labels(tmp_path, [{"image_id": 1, "bbox": [40, 60, 50, 50], "score": 1.0}])
    assert {r.scale_index for r in m.records} == {2, 3}
    for r in m.records:
        assert [(lab.label, lab.matched_gt_id) for lab in r.labels] == [(Label.POSITIVE, 1)]


def test_labels_empty_proposals(tmp_path):
    m = _labels(tmp_path, [])
    assert m.records and all(r.labels == () for r in m.records)


def test_labels_out_of_range_are_ignored(tmp_path):
    m = _labels(tmp_path, [{"image_id": 1, "bbox": [0, 0, 300, 250], "score": 1.0}])
    labels = [lab.label for r in m.records for lab in r.labels]
    assert labels and set(labels) == {Label.IGNORE}


def test_labels_schema_mismatch(tmp_path, corpus):
    ann = str(corpus / "annotations.json")
    assert main(["positive", "--annotations", ann, "--out", str(tmp_path / "pos.jsonl")]) == 0
    stray = jsonl(tmp_path / "p.jsonl", [{"image_id": 999, "bbox": [0, 0, 5, 5], "score": 0.5}])
    base = ["labels", "--manifest", str(tmp_path / "pos.jsonl"), "--out", str(tmp_path / "l.jsonl")]
    assert main(base + ["--proposals", stray, "--annotations", ann]) == 1
    assert main(base + ["--proposals", str(corpus / "proposals.jsonl"), "--scales", "two_scale"]) == 1
    assert main(["positive", "--annotations", ann, "--flip", "--out", str(tmp_path / "f.jsonl")]) == 0
    flipped = ["labels", "--manifest", str(tmp_path / "f.jsonl"), "--proposals", str(corpus / "proposals.jsonl"), "--out", str(tmp_path / "l.jsonl")]
    assert main(flipped) == 1
    assert main(flipped + ["--annotations", ann, "--flip"]) == 0


def test_stats(tmp_path, capsys):
    ann = dump(tmp_path / "a.json", TINY)
    image = ImageInfo(1, 400, 300)
    m = Manifest({"config_hash": "x"}, [make_chip_record(image, 3, 3.0, 32 * k, 0, 512, POSITIVE, ()) for k in range(3)])
    write_manifest(m, tmp_path / "m.jsonl")
    args = ["stats", "--manifest", str(tmp_path / "m.jsonl"), "--annotations", ann]
    assert main(args + ["--out", str(tmp_path / "r1.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2.json")]) == 0
    rep = json.loads((tmp_path / "r1.json").read_text())
    assert rep["total_chip_pixels"] == 3 * 512**2
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    other = dump(tmp_path / "o.json", {"images": [{"id": 2, "width": 10, "height": 10}], "annotations": []})
    assert main(["stats", "--manifest", str(tmp_path / "m.jsonl"), "--annotations", other]) == 1
    assert "unknown image id 1" in capsys.readouterr().err


def test_config_precedence(tmp_path, corpus):
    run = dump(tmp_path / "run.json", {"seed": 5, "epoch": 3, "annotations": str(corpus / "annotations.json"), "proposals": str(corpus / "proposals.jsonl")})
    assert main(["negative", "--config", run, "--out", str(tmp_path / "a.jsonl")]) == 0
    assert read_manifest(tmp_path / "a.jsonl").header["seed"] == 5
    assert main(["negative", "--config", run, "--seed", "7", "--out", str(tmp_path / "b.jsonl")]) == 0
    head = read_manifest(tmp_path / "b.jsonl").header
    assert (head["seed"], head["epoch"]) == (7, 3)
    assert read_manifest(tmp_path / "b.jsonl").header["config"]["n_max_negatives"] == 2
    assert main(["negative", "--config", dump(tmp_path / "bad.json", {"sed": 1}), "--out", "x"]) == 1


def test_bench_and_module_entry(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "chipforge", "bench", "--images", "200", "--workers", "2", "--repeats", "1"],
        capture_output=True,
        text=True,
        env={"CHIPFORGE_LOG": "DEBUG", "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0, proc.stderr
    report = json.loads(proc.stdout)
    assert report["n_images"] == 200 and report["identical_to_single_worker"] is True
