"""Command-line front end: positive, negative, labels, stats, synth, bench."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .dataset_io import (
    Dataset,
    Manifest,
    dataset_to_json,
    flip_augment,
    flip_proposals,
    load_annotations,
    load_proposals,
    read_manifest,
    write_manifest,
    write_proposals,
)
from .errors import ChipforgeError, MalformedInput, UnknownImage
from .labels import DEFAULT_PROPOSAL_IOU, label_chip
from .negative import COVER_MODES, DEFAULT_MAX_NEGATIVES, DEFAULT_MIN_PROPOSALS
from .pipeline import MiningConfig, build_manifest, mine_dataset
from .pyramid import builtin_pyramid, load_pyramid, pyramid_from_json, pyramid_to_json
from .records import NEGATIVE, POSITIVE
from .stats import (
    SynthParams,
    bench_throughput,
    check_coverage,
    format_report,
    pixel_report,
    synth_scenes,
    write_histogram_csv,
)

log = logging.getLogger("chipforge")

# Built-in defaults, overridden by a --config file, overridden by flags.
DEFAULTS: dict[str, Any] = {
    "scales": "coco_3scale",
    "annotations": None,
    "proposals": None,
    "manifest": None,
    "out": None,
    "seed": 0,
    "epoch": 0,
    "neg_max": DEFAULT_MAX_NEGATIVES,
    "min_proposals": DEFAULT_MIN_PROPOSALS,
    "flip": False,
    "workers": 1,
    "cover_mode": "center",
    "score_floor": 0.0,
    "iou_pos": DEFAULT_PROPOSAL_IOU,
}


class UsageError(ChipforgeError, ValueError):
    pass


def _load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc
    if not isinstance(data, dict):
        raise MalformedInput("run config must be a JSON object", path)
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise MalformedInput(f"unknown run config keys: {', '.join(unknown)}", path)
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the --config file and explicit flags, in that order."""
    merged = dict(DEFAULTS)
    from_file = _load_run_config(args.config)
    merged.update(from_file)
    merged["explicit_scales"] = "scales" in from_file or args.scales is not None
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged["neg_max"] < 0:
        raise UsageError("--neg-max must be >= 0")
    if merged["min_proposals"] < 1:
        raise UsageError("--min-proposals must be >= 1")
    if merged["workers"] < 1:
        raise UsageError("--workers must be >= 1")
    return merged


def _pyramid(ref: str):
    if os.path.sep in ref or ref.endswith(".json") or os.path.exists(ref):
        return load_pyramid(ref)
    try:
        return builtin_pyramid(ref)
    except FileNotFoundError:
        raise UsageError(f"no such scale config: {ref!r}") from None


def mining_config(opts: dict) -> MiningConfig:
    return MiningConfig(
        pyramid=_pyramid(opts["scales"]),
        min_proposals=opts["min_proposals"],
        n_max_negatives=opts["neg_max"],
        score_floor=float(opts["score_floor"]),
        cover_mode=opts["cover_mode"],
        seed=opts["seed"],
        epoch=opts["epoch"],
    )


def _require(opts: dict, key: str, flag: str) -> str:
    if not opts[key]:
        raise UsageError(f"{flag} is required")
    return opts[key]


def _dataset(opts: dict) -> Dataset:
    ds = load_annotations(_require(opts, "annotations", "--annotations"))
    if ds.dropped:
        log.warning("dropped %d annotations with non-positive width or height", ds.dropped)
    return flip_augment(ds) if opts["flip"] else ds


def _proposals(opts: dict, ds: Dataset | None):
    props = load_proposals(_require(opts, "proposals", "--proposals"))
    if ds is not None:
        known = ds.image_map()
        for image_id in props:
            if image_id not in known:
                raise UnknownImage(f"proposal file references unknown image id {image_id}")
        if opts["flip"]:
            props = flip_proposals(props, ds)
    return props


def _write(m: Manifest, opts: dict) -> Path:
    out = Path(_require(opts, "out", "--out"))
    write_manifest(m, out)
    return out


def _per_image(n_records: int, n_images: int) -> float:
    return n_records / n_images if n_images else 0.0


def cmd_positive(opts: dict) -> int:
    config = mining_config(opts)
    ds = _dataset(opts)
    results = mine_dataset(ds, None, config, workers=opts["workers"])
    manifest = build_manifest(results, config, kinds=POSITIVE, flip=opts["flip"])
    out = _write(manifest, opts)
    cov = check_coverage(manifest.records, ds, config.pyramid)
    n = len(manifest.records)
    print(f"positive chips: {n} over {len(ds.images)} images ({_per_image(n, len(ds.images)):.3f}/image)")
    flag = "complete" if cov.complete else "INCOMPLETE"
    print(f"coverage: {flag} ({cov.covered}/{cov.required} range-valid boxes enclosed, "
          f"{len(cov.geometric_misses)} larger than a chip)")
    print(f"manifest: {out}")
    return 0


def cmd_negative(opts: dict) -> int:
    if not opts["proposals"]:
        raise UsageError("negative mining needs --proposals")
    config = mining_config(opts)
    ds = _dataset(opts)
    props = _proposals(opts, ds)
    results = mine_dataset(ds, props, config, workers=opts["workers"])
    manifest = build_manifest(results, config, kinds=NEGATIVE, flip=opts["flip"])
    out = _write(manifest, opts)
    n = len(manifest.records)
    pool = sum(r.pool_size for r in results)
    print(f"negative chips: {n} sampled from a pool of {pool} (seed {config.seed}, epoch {config.epoch})")
    print(f"manifest: {out}")
    return 0


def _merge(paths: Sequence[str]) -> Manifest:
    manifests = [read_manifest(p) for p in paths]
    hashes = {m.header.get("config_hash") for m in manifests}
    if len(hashes) > 1:
        raise MalformedInput("manifests were mined with different configs", ", ".join(paths))
    kinds = {m.header.get("kinds", "both") for m in manifests}
    header = dict(manifests[-1].header)
    header["kinds"] = kinds.pop() if len(kinds) == 1 else "both"
    records = [r for m in manifests for r in m.records]
    return Manifest(header, records).sorted()


def cmd_labels(opts: dict) -> int:
    paths = _require(opts, "manifest", "--manifest")
    manifest = _merge(paths)
    try:
        mined_with = pyramid_from_json(manifest.header["config"]["pyramid"])
    except (KeyError, TypeError) as exc:
        raise MalformedInput("manifest header lacks the pyramid config", paths[0]) from exc
    if opts["explicit_scales"] and pyramid_to_json(_pyramid(opts["scales"])) != pyramid_to_json(mined_with):
        raise MalformedInput("--scales differs from the pyramid the manifest was mined with")
    scales = {spec.index: spec for spec in mined_with}

    ds = _dataset(opts) if opts["annotations"] else None
    if ds is None and any(r.flipped for r in manifest.records):
        raise UsageError("manifest has flipped images; pass --annotations and --flip to map proposals")
    props = _proposals(opts, ds)
    if ds is not None:
        known = ds.image_map()
        for r in manifest.records:
            if r.image_id not in known:
                raise UnknownImage(f"manifest references unknown image id {r.image_id}")

    labeled = []
    for r in manifest.records:
        spec = scales.get(r.scale_index)
        if spec is None:
            raise MalformedInput(f"record scale {r.scale_index} not in the manifest pyramid")
        labeled.append(label_chip(r, props.get(r.image_id, ()), spec, opts["iou_pos"]))
    header = dict(manifest.header, labeled=True, iou_pos=opts["iou_pos"])
    out = _write(Manifest(header, labeled), opts)
    counts: dict[str, int] = {}
    for r in labeled:
        for lab in r.labels:
            counts[lab.label.value] = counts.get(lab.label.value, 0) + 1
    summary = ", ".join(f"{k}={counts[k]}" for k in sorted(counts)) or "no proposals in any chip"
    print(f"labeled chips: {len(labeled)} ({summary})")
    print(f"manifest: {out}")
    return 0


def cmd_stats(opts: dict) -> int:
    paths = _require(opts, "manifest", "--manifest")
    manifest = _merge(paths)
    ds = _dataset(opts)
    rep = pixel_report(manifest.records, ds)
    text = json.dumps(rep.to_json(), sort_keys=True, indent=2)
    print(format_report(rep))
    if opts["out"]:
        Path(opts["out"]).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if opts["histogram"]:
        write_histogram_csv(rep, opts["histogram"])
    return 0


def cmd_synth(opts: dict) -> int:
    out = Path(_require(opts, "out", "--out"))
    params = SynthParams(n_images=opts["images"], noise_rate=opts["noise_rate"], long_side=opts["long_side"])
    ds, props = synth_scenes(params, opts["seed"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "annotations.json", "w", encoding="utf-8") as f:
        json.dump(dataset_to_json(ds), f, sort_keys=True, separators=(",", ":"))
    write_proposals(out / "proposals.jsonl", props)
    print(f"synthetic corpus: {len(ds.images)} images, {ds.n_annotations} boxes -> {out}")
    return 0


def cmd_bench(opts: dict) -> int:
    config = mining_config(opts)
    if opts["annotations"]:
        ds = _dataset(opts)
        props = _proposals(opts, ds) if opts["proposals"] else None
    else:
        ds, props = synth_scenes(SynthParams.coco_shaped(opts["images"]), opts["seed"])
    res = bench_throughput(ds, props, config, workers=opts["workers"], repeats=opts["repeats"])
    report = res.to_json()
    if opts["workers"] > 1:
        single = build_manifest(mine_dataset(ds, props, config, workers=1), config)
        multi = build_manifest(mine_dataset(ds, props, config, workers=opts["workers"]), config)
        report["identical_to_single_worker"] = single == multi
    print(json.dumps(report, sort_keys=True))
    return 0


COMMANDS = {
    "positive": (cmd_positive, "mine positive chips and write a manifest"),
    "negative": (cmd_negative, "mine and sample negative chips for one (seed, epoch)"),
    "labels": (cmd_labels, "attach proposal labels to manifest records"),
    "stats": (cmd_stats, "pixel and chip accounting for a manifest"),
    "synth": (cmd_synth, "write a synthetic annotation and proposal corpus"),
    "bench": (cmd_bench, "measure mining throughput"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON; flags override its values")
    common.add_argument("--scales", help="pyramid config path or built-in name (coco_3scale, two_scale)")
    common.add_argument("--annotations", help="COCO-style annotation JSON")
    common.add_argument("--proposals", help="proposal JSON Lines file")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int)
    common.add_argument("--epoch", type=int)
    common.add_argument("--neg-max", dest="neg_max", type=int, help="negative chips sampled per image")
    common.add_argument("--min-proposals", dest="min_proposals", type=int, help="M, proposals a negative chip must hold")
    common.add_argument("--flip", action="store_const", const=True, help="add horizontally mirrored twins")
    common.add_argument("--workers", type=int)
    common.add_argument("--cover-mode", dest="cover_mode", choices=COVER_MODES)
    common.add_argument("--score-floor", dest="score_floor", type=float)

    parser = argparse.ArgumentParser(prog="chipforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"chipforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("labels", "stats"):
            p.add_argument("--manifest", action="append", help="input manifest (repeatable)")
        if name == "labels":
            p.add_argument("--iou-pos", dest="iou_pos", type=float)
        if name == "stats":
            p.add_argument("--histogram", help="write the chips-per-image histogram as CSV")
        if name in ("synth", "bench"):
            p.add_argument("--images", type=int, default=1000 if name == "synth" else 10000)
        if name == "synth":
            p.add_argument("--noise-rate", dest="noise_rate", type=float, default=SynthParams.noise_rate)
            p.add_argument("--long-side", dest="long_side", type=int, help="fix the long image side (COCO uses 640)")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=3)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("CHIPFORGE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        opts = resolve(args)
        for extra in ("images", "noise_rate", "long_side", "repeats", "histogram"):
            opts[extra] = getattr(args, extra, None)
        return handler(opts)
    except OSError as exc:
        print(f"chipforge: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ChipforgeError, ValueError) as exc:
        print(f"chipforge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
