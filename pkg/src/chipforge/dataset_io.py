"""COCO-subset annotations, proposal files, flip augmentation and manifests."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import MalformedInput, VersionMismatch
from .geometry import Box, flip_box
from .records import (
    KIND_ORDER,
    ChipRecord,
    CroppedGT,
    GroundTruth,
    ImageInfo,
    Label,
    Proposal,
    ProposalLabel,
    q,
)

log = logging.getLogger(__name__)

MANIFEST_VERSION = "chipforge/1"
FLIP_MARKER = "#flip"


@dataclass
class Dataset:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: dict[int, list[GroundTruth]] = field(default_factory=dict)
    dropped: int = 0

    @property
    def n_annotations(self) -> int:
        return sum(len(v) for v in self.annotations.values())

    def gts(self, image_id: int) -> list[GroundTruth]:
        return self.annotations.get(image_id, [])

    def image_map(self) -> dict[int, ImageInfo]:
        return {im.id: im for im in self.images}


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise MalformedInput(f"expected a finite number, got {value!r}", where)
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedInput(f"expected an integer, got {value!r}", where)
    return value


def _bbox(value, where: str) -> tuple[float, float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise MalformedInput("bbox must be [x, y, w, h]", where)
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(value))


def parse_annotations(data: Any) -> Dataset:
    """Validate and canonicalise an in-memory COCO-style annotation object."""
    if not isinstance(data, dict):
        raise MalformedInput("top level must be an object")
    raw_images = data.get("images")
    raw_anns = data.get("annotations", [])
    if not isinstance(raw_images, list):
        raise MalformedInput("missing or non-list 'images'", "images")
    if not isinstance(raw_anns, list):
        raise MalformedInput("'annotations' must be a list", "annotations")

    images: dict[int, ImageInfo] = {}
    for i, im in enumerate(raw_images):
        where = f"images[{i}]"
        if not isinstance(im, dict):
            raise MalformedInput("image entry must be an object", where)
        image_id = _integer(im.get("id"), f"{where}.id")
        width = _number(im.get("width"), f"{where}.width")
        height = _number(im.get("height"), f"{where}.height")
        if width < 1 or height < 1:
            raise MalformedInput(f"image size must be >= 1, got {width}x{height}", where)
        if image_id in images:
            raise MalformedInput(f"duplicate image id {image_id}", f"{where}.id")
        images[image_id] = ImageInfo(
            id=image_id,
            width=width,
            height=height,
            file_name=str(im.get("file_name", "")),
            flipped=bool(im.get("flipped", False)),
            source_id=im.get("source_id"),
        )

    annotations: dict[int, list[GroundTruth]] = {}
    seen: set[int] = set()
    dropped = 0
    for i, ann in enumerate(raw_anns):
        where = f"annotations[{i}]"
        if not isinstance(ann, dict):
            raise MalformedInput("annotation entry must be an object", where)
        ann_id = _integer(ann.get("id"), f"{where}.id")
        image_id = _integer(ann.get("image_id"), f"{where}.image_id")
        if image_id not in images:
            raise MalformedInput(f"unknown image_id {image_id}", f"{where}.image_id")
        if ann_id in seen:
            raise MalformedInput(f"duplicate annotation id {ann_id}", f"{where}.id")
        seen.add(ann_id)
        x, y, w, h = _bbox(ann.get("bbox"), f"{where}.bbox")
        category = _integer(ann.get("category_id"), f"{where}.category_id")
        crowd = ann.get("iscrowd", 0)
        if crowd not in (0, 1, True, False):
            raise MalformedInput(f"iscrowd must be 0 or 1, got {crowd!r}", f"{where}.iscrowd")
        if w <= 0 or h <= 0:
            dropped += 1
            continue
        annotations.setdefault(image_id, []).append(
            GroundTruth(ann_id, Box(x, y, w, h), category, bool(crowd))
        )
    if dropped:
        log.warning("dropped %d annotations with non-positive width or height", dropped)
    for gts in annotations.values():
        gts.sort(key=lambda g: g.id)
    return Dataset(
        images=sorted(images.values(), key=lambda im: im.id),
        annotations=dict(sorted(annotations.items())),
        dropped=dropped,
    )


def load_annotations(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc
    return parse_annotations(data)


def dataset_to_json(ds: Dataset) -> dict:
    images = []
    for im in ds.images:
        entry = {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
        if im.flipped:
            entry.update(flipped=True, source_id=im.source_id)
        images.append(entry)
    annotations = [
        {
            "id": g.id,
            "image_id": image_id,
            "bbox": g.box.as_list(),
            "category_id": g.category,
            "iscrowd": int(g.is_crowd),
        }
        for image_id, gts in ds.annotations.items()
        for g in gts
    ]
    return {"images": images, "annotations": annotations}


def parse_proposal_line(line: str, lineno: int) -> Proposal:
    where = f"line {lineno}"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"invalid JSON: {exc.msg}", where) from exc
    if not isinstance(obj, dict):
        raise MalformedInput("proposal must be an object", where)
    image_id = _integer(obj.get("image_id"), f"{where}: image_id")
    x, y, w, h = _bbox(obj.get("bbox"), f"{where}: bbox")
    if w <= 0 or h <= 0:
        raise MalformedInput(f"non-positive proposal size {w}x{h}", where)
    score = _number(obj.get("score"), f"{where}: score")
    if not 0.0 <= score <= 1.0:
        raise MalformedInput(f"score {score} outside [0, 1]", where)
    return Proposal(image_id, Box(x, y, w, h), score)


def iter_proposals(lines: Iterable[str]) -> Iterator[Proposal]:
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            yield parse_proposal_line(line, lineno)


def group_proposals(proposals: Iterable[Proposal]) -> dict[int, list[Proposal]]:
    grouped: dict[int, list[Proposal]] = {}
    for p in proposals:
        grouped.setdefault(p.image_id, []).append(p)
    return grouped


def load_proposals(path: str | Path) -> dict[int, list[Proposal]]:
    """Proposals grouped by image id, file order kept within each image."""
    with open(path, encoding="utf-8") as f:
        return group_proposals(iter_proposals(f))


def write_proposals(path: str | Path, proposals: dict[int, list[Proposal]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for image_id in sorted(proposals):
            for p in proposals[image_id]:
                f.write(json.dumps({"image_id": image_id, "bbox": p.box.as_list(), "score": p.score}) + "\n")


def flip_augment(ds: Dataset) -> Dataset:
    """Originals plus horizontally mirrored twins.

    Twin image ids are offset by ``max(image id) + 1`` and annotation ids by
    ``max(annotation id) + 1``, so ids stay unique and deterministic.
    """
    if not ds.images:
        return Dataset(dropped=ds.dropped)
    image_offset = max(im.id for im in ds.images) + 1
    ann_ids = [g.id for gts in ds.annotations.values() for g in gts]
    ann_offset = max(ann_ids) + 1 if ann_ids else 0
    images = list(ds.images)
    annotations = {k: list(v) for k, v in ds.annotations.items()}
    for im in ds.images:
        twin = ImageInfo(
            id=im.id + image_offset,
            width=im.width,
            height=im.height,
            file_name=im.file_name + FLIP_MARKER,
            flipped=True,
            source_id=im.id,
        )
        images.append(twin)
        if im.id in ds.annotations:
            annotations[twin.id] = [
                GroundTruth(g.id + ann_offset, flip_box(g.box, im.width), g.category, g.is_crowd)
                for g in ds.annotations[im.id]
            ]
    return Dataset(images=images, annotations=annotations, dropped=ds.dropped)


def flip_proposals(proposals: dict[int, list[Proposal]], ds: Dataset) -> dict[int, list[Proposal]]:
    """Add mirrored proposals for every flipped twin in a flip-augmented dataset."""
    out = dict(proposals)
    for im in ds.images:
        if im.flipped and im.source_id in proposals:
            out[im.id] = [
                Proposal(im.id, flip_box(p.box, im.width), p.score) for p in proposals[im.source_id]
            ]
    return out


# -- manifests -----------------------------------------------------------------


@dataclass
class Manifest:
    header: dict
    records: list[ChipRecord]

    def sorted(self) -> Manifest:
        return Manifest(self.header, sorted(self.records, key=ChipRecord.sort_key))


def _num(v: float) -> float | int:
    if isinstance(v, int):
        return v
    r = q(v)
    return int(r) if r.is_integer() else r


def _box_json(b: Box) -> list:
    return [_num(b.x), _num(b.y), _num(b.w), _num(b.h)]


def record_to_json(r: ChipRecord) -> dict:
    out = {
        "image_id": r.image_id,
        "kind": r.kind,
        "scale": r.scale_index,
        "factor": _num(r.factor),
        "rect_canvas": _box_json(r.rect_canvas),
        "rect_original": _box_json(r.rect_original),
        "flipped": r.flipped,
        "gts": [
            {"gt_id": g.gt_id, "category": g.category, "box": _box_json(g.box), "valid": g.valid}
            for g in r.gts
        ],
    }
    if r.n_proposals is not None:
        out["n_proposals"] = r.n_proposals
    if r.labels is not None:
        out["labels"] = [_label_json(lab) for lab in r.labels]
    return out


def _label_json(lab: ProposalLabel) -> dict:
    out = {"index": lab.proposal_index, "label": lab.label.value, "iou": _num(lab.iou)}
    if lab.label is Label.POSITIVE:
        out["category"] = lab.category
        out["gt_id"] = lab.matched_gt_id
        out["target"] = [_num(t) for t in lab.regression_target]
    return out


def _box_from(value, where: str) -> Box:
    x, y, w, h = _bbox(value, where)
    try:
        return Box(x, y, w, h)
    except ValueError as exc:
        raise MalformedInput(str(exc), where) from exc


def record_from_json(obj: dict, where: str) -> ChipRecord:
    try:
        kind = obj["kind"]
        if kind not in KIND_ORDER:
            raise MalformedInput(f"unknown chip kind {kind!r}", where)
        labels = None
        if "labels" in obj:
            labels = tuple(
                ProposalLabel(
                    proposal_index=lab["index"],
                    label=Label(lab["label"]),
                    iou=float(lab["iou"]),
                    category=lab.get("category"),
                    matched_gt_id=lab.get("gt_id"),
                    regression_target=(
                        tuple(float(t) for t in lab["target"]) if "target" in lab else None
                    ),
                )
                for lab in obj["labels"]
            )
        return ChipRecord(
            image_id=obj["image_id"],
            scale_index=obj["scale"],
            factor=float(obj["factor"]),
            rect_canvas=_box_from(obj["rect_canvas"], f"{where}: rect_canvas"),
            rect_original=_box_from(obj["rect_original"], f"{where}: rect_original"),
            kind=kind,
            gts=tuple(
                CroppedGT(g["gt_id"], g["category"], _box_from(g["box"], f"{where}: gts"), bool(g["valid"]))
                for g in obj["gts"]
            ),
            flipped=bool(obj["flipped"]),
            n_proposals=obj.get("n_proposals"),
            labels=labels,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedInput):
            raise
        raise MalformedInput(f"bad record: {exc!r}", where) from exc


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def manifest_lines(m: Manifest) -> Iterator[str]:
    header = dict(m.header)
    header["version"] = MANIFEST_VERSION
    header["n_records"] = len(m.records)
    yield _dumps({"header": header})
    for r in m.records:
        yield _dumps(record_to_json(r))


def write_manifest(m: Manifest, path: str | Path) -> None:
    """JSON Lines: one header line, then one record per line in canonical order."""
    m = m.sorted()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in manifest_lines(m):
            f.write(line)
            f.write("\n")


def read_manifest(path: str | Path) -> Manifest:
    with open(path, encoding="utf-8") as f:
        first = f.readline()
        if not first.strip():
            raise MalformedInput("empty manifest", f"{path}:1")
        try:
            head = json.loads(first)
            header = head["header"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedInput("first line must be a header object", f"{path}:1") from exc
        version = header.get("version")
        if version != MANIFEST_VERSION:
            raise VersionMismatch(
                f"manifest version {version!r}, expected {MANIFEST_VERSION!r}", f"{path}:1"
            )
        records = []
        for lineno, line in enumerate(f, 2):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedInput(f"invalid JSON: {exc.msg}", where) from exc
            records.append(record_from_json(obj, where))
    header = {k: v for k, v in header.items() if k not in ("version", "n_records")}
    return Manifest(header, records)
