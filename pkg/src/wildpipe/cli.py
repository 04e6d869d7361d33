"""Command-line entry point wiring the pipeline stages together.

Exit codes: 0 success, 1 domain error, 2 usage error. Diagnostics go to
stderr; data goes to the declared output files. Every subcommand is
idempotent: re-running with the same inputs and seeds produces
byte-identical outputs. Flags override values from an optional --config
document (a canonical-format JSON object keyed by flag name with
underscores, e.g. {"detect": {"checkpoint_dir": "..."}}).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .canonical import write_bytes_atomic, write_document
from .coco_ct import convert_foldered_labels, parse_dataset, serialize_dataset
from .crops import build_classifier_manifest, emit_crop_pixels, serialize_manifest
from .detection import OracleDetector, StubDetector, parse_detections, serialize_detections
from .errors import PipelineError
from .evaluation import per_region_report
from .filtering import filter_empty, threshold_sweep
from .orchestrator import (
    STRATEGIES,
    ExecDetector,
    plan_shards,
    resume_batch,
    run_batch,
)
from .rde import (
    RdeConfig,
    find_suspicious_clusters,
    load_allowlist,
    partition_suppressed,
    serialize_clusters,
)

logger = logging.getLogger(__name__)


def _confidence(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"confidence {value} outside [0, 1]")
    return value


def _threshold_list(text: str) -> list[float]:
    return [_confidence(part) for part in text.split(",") if part.strip()]


def _image_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wildpipe",
                                     description="camera-trap image pipeline")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config document; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert species-foldered images to a dataset")
    p.add_argument("--folders", type=Path, required=True, help="root of species folders")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--location-index", type=int, default=1,
                   help="path segment holding the camera location")
    p.add_argument("--image-size", type=_image_size, default=(1920, 1080),
                   help="assumed WIDTHxHEIGHT when not reading headers")
    p.add_argument("--read-sizes", action="store_true",
                   help="read actual dimensions from the image headers")

    p = sub.add_parser("detect", help="run a detector over the dataset in shards")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--detector", required=True,
                   help="stub | oracle | exec:<path-to-executable>")
    p.add_argument("--seed", type=int, default=None,
                   help="required for the stub and oracle detectors")
    p.add_argument("--workers", type=int, default=4, help="number of shards")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--strategy", choices=STRATEGIES, default="contiguous")
    p.add_argument("--checkpoint-dir", type=Path, default=None,
                   help="defaults to <out>.checkpoint")
    p.add_argument("--resume", action="store_true",
                   help="continue from an existing checkpoint")
    p.add_argument("--flip-prob", type=_confidence, default=0.0)
    p.add_argument("--conf-spread", type=_confidence, default=0.0)

    p = sub.add_parser("filter", help="split results into kept/eliminated at a threshold")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--threshold", type=_confidence, default=0.5)
    p.add_argument("--sweep", type=_threshold_list, default=None,
                   help="comma-separated ascending thresholds")
    p.add_argument("--out-kept", type=Path, default=None)
    p.add_argument("--out-eliminated", type=Path, default=None)
    p.add_argument("--report", type=Path, default=None)

    p = sub.add_parser("rde", help="find and suppress repeat detections")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--iou", type=_confidence, default=0.85)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--min-conf", type=_confidence, default=0.1)
    p.add_argument("--require-consecutive", action="store_true")
    p.add_argument("--allowlist", type=Path, default=None,
                   help="newline-delimited cluster ids to keep")
    p.add_argument("--clusters-out", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="suppressed results")
    p.add_argument("--suppressed-out", type=Path, default=None,
                   help="sidecar with only the removed detections")
    p.add_argument("--report", type=Path, default=None)

    p = sub.add_parser("crop", help="build a classifier manifest from confident detections")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--threshold", type=_confidence, default=0.5)
    p.add_argument("--padding", type=float, default=1.1)
    p.add_argument("--square", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--manifest-out", type=Path, required=True)
    p.add_argument("--emit-pixels", type=Path, default=None,
                   help="directory for actual crop images")
    p.add_argument("--media-root", type=Path, default=None)
    p.add_argument("--split-seed", type=int, default=None)

    p = sub.add_parser("eval", help="image-level average precision per region")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--region-map", type=Path, default=None,
                   help="two-column file: location region")
    p.add_argument("--report-out", type=Path, default=None)

    p = sub.add_parser("serve", help="host the review service and UI")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--verdict-log", type=Path, required=True)
    p.add_argument("--clusters", type=Path, default=None)
    p.add_argument("--media-root", type=Path, default=None)
    p.add_argument("--resolutions", type=Path, default=None,
                   help="cluster adjudication log (JSON lines)")
    p.add_argument("--allowlist-out", type=Path, default=None,
                   help="allowlist file rewritten on each adjudication")
    p.add_argument("--ui-dir", type=Path, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)

    sub.add_parser("version", help="print the version")
    return parser


def _merge_config(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    """Expand --config into synthetic flags for values not given on argv.

    Explicit flags always win because config flags are only appended when
    the flag is absent. Boolean config values become bare --flag /
    --no-flag switches; everything else is stringified.
    """
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        parser.error("--config needs a path")
    config_path = Path(argv[at + 1])
    rest = argv[:at] + argv[at + 2:]
    command = next((a for a in rest if not a.startswith("-")), None)
    try:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {config_path}: {exc}")
    section = doc.get(command, {}) if command else {}
    if not isinstance(section, dict):
        parser.error(f"config section '{command}' must be an object")
    extra: list[str] = []
    for key, value in section.items():
        flag = "--" + key.replace("_", "-")
        if flag in rest:
            continue
        if isinstance(value, bool):
            extra.append(flag if value else f"--no-{key.replace('_', '-')}")
        elif isinstance(value, list):
            extra.extend([flag, ",".join(str(v) for v in value)])
        else:
            extra.extend([flag, str(value)])
    return rest + extra


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    args = parser.parse_args(_merge_config(argv, parser))
    handler = {
        "ingest": cmd_ingest,
        "detect": cmd_detect,
        "filter": cmd_filter,
        "rde": cmd_rde,
        "crop": cmd_crop,
        "eval": cmd_eval,
        "serve": cmd_serve,
        "version": cmd_version,
    }[args.command]
    try:
        return handler(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


def cmd_version(args: argparse.Namespace) -> int:
    print(__version__)
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    root = args.folders
    if not root.is_dir():
        raise PipelineError(f"folder root {root} is not a directory")
    listing = sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())
    if args.read_sizes:
        from PIL import Image

        def size_of(rel: str) -> tuple[int, int]:
            with Image.open(root / rel) as img:
                return img.size

        dataset = convert_foldered_labels(listing, args.location_index, size_of)
    else:
        dataset = convert_foldered_labels(listing, args.location_index, args.image_size)
    write_bytes_atomic(args.out, serialize_dataset(dataset).encode("utf-8"))
    logger.info("ingested %d images, %d categories -> %s",
                len(dataset.images), len(dataset.categories), args.out)
    return 0


def _make_detector(args: argparse.Namespace, dataset) -> object:
    spec = args.detector
    if spec.startswith("exec:"):
        return ExecDetector(command=spec[len("exec:"):])
    if spec == "stub":
        if args.seed is None:
            raise PipelineError("--seed is required for the stub detector")
        return StubDetector(seed=args.seed)
    if spec == "oracle":
        if args.seed is None:
            raise PipelineError("--seed is required for the oracle detector")
        return OracleDetector(dataset=dataset, flip_prob=args.flip_prob,
                              conf_spread=args.conf_spread, seed=args.seed)
    raise PipelineError(f"unknown detector '{spec}' (expected stub, oracle, or exec:<path>)")


def cmd_detect(args: argparse.Namespace) -> int:
    dataset = parse_dataset(args.dataset.read_bytes())
    detector = _make_detector(args, dataset)
    plan = plan_shards(dataset, args.workers, args.strategy)
    checkpoint_dir = args.checkpoint_dir or Path(f"{args.out}.checkpoint")
    runner = resume_batch if args.resume else run_batch
    results, report = runner(dataset, plan, detector, parallelism=args.parallelism,
                             checkpoint_dir=checkpoint_dir)
    write_bytes_atomic(args.out, serialize_detections(results).encode("utf-8"))
    logger.info("processed %d images in %d shards (%d retries, %.1fs) -> %s",
                report.images_processed, report.shards_completed, report.retries,
                report.wall_time, args.out)
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    results = parse_detections(args.detections.read_bytes())
    if args.sweep:
        reports = threshold_sweep(results, args.sweep)
        doc = {"reports": [r.to_json() for r in reports]}
        if args.report:
            write_document(args.report, doc)
        else:
            print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    kept, eliminated, report = filter_empty(results, args.threshold)
    if args.out_kept:
        write_bytes_atomic(args.out_kept, serialize_detections(kept).encode("utf-8"))
    if args.out_eliminated:
        write_bytes_atomic(args.out_eliminated, serialize_detections(eliminated).encode("utf-8"))
    if args.report:
        write_document(args.report, report.to_json())
    logger.info("kept %d, eliminated %d of %d (%.1f%%)", report.kept, report.eliminated,
                report.total, 100 * report.eliminated_fraction)
    return 0


def cmd_rde(args: argparse.Namespace) -> int:
    results = parse_detections(args.detections.read_bytes())
    dataset = parse_dataset(args.dataset.read_bytes())
    config = RdeConfig(iou_threshold=args.iou, min_count=args.min_count,
                       min_conf=args.min_conf, require_consecutive=args.require_consecutive)
    clusters = find_suspicious_clusters(results, dataset, config)
    allowlist = load_allowlist(args.allowlist) if args.allowlist else set()
    kept, suppressed, report = partition_suppressed(results, clusters, allowlist)
    if args.clusters_out:
        write_bytes_atomic(args.clusters_out,
                           serialize_clusters(clusters, config).encode("utf-8"))
    if args.out:
        write_bytes_atomic(args.out, serialize_detections(kept).encode("utf-8"))
    if args.suppressed_out:
        write_bytes_atomic(args.suppressed_out,
                           serialize_detections(suppressed).encode("utf-8"))
    if args.report:
        write_document(args.report, report.to_json())
    logger.info("found %d clusters; suppressed %d detections in %d images",
                len(clusters), report.detections_suppressed, report.images_affected)
    return 0


def cmd_crop(args: argparse.Namespace) -> int:
    results = parse_detections(args.detections.read_bytes())
    dataset = parse_dataset(args.dataset.read_bytes())
    if args.padding < 1.0:
        raise PipelineError(f"--padding must be >= 1, got {args.padding}")
    manifest = build_classifier_manifest(results, dataset, conf_threshold=args.threshold,
                                         padding_scale=args.padding, square=args.square,
                                         split_seed=args.split_seed)
    write_bytes_atomic(args.manifest_out, serialize_manifest(manifest).encode("utf-8"))
    logger.info("manifest with %d entries -> %s", len(manifest.entries), args.manifest_out)
    if args.emit_pixels:
        if not args.media_root:
            raise PipelineError("--emit-pixels requires --media-root")
        image_id_of = {r.file_name: r.id for r in dataset.images}
        written = emit_crop_pixels(manifest, args.media_root, args.emit_pixels, image_id_of)
        logger.info("wrote %d crop images to %s", len(written), args.emit_pixels)
    return 0


def _read_region_map(path: Path) -> dict[str, str]:
    mapping = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise PipelineError(f"region map line must have two columns: {line!r}")
        mapping[parts[0]] = parts[1]
    return mapping


def cmd_eval(args: argparse.Namespace) -> int:
    results = parse_detections(args.detections.read_bytes())
    dataset = parse_dataset(args.dataset.read_bytes())
    if args.region_map:
        region_of = _read_region_map(args.region_map)
    else:
        region_of = {r.location: "all" for r in dataset.images}
    report = per_region_report(results, dataset, region_of)
    doc = report.to_json()
    if args.report_out:
        write_document(args.report_out, doc)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .rde import parse_clusters
    from .review import VerdictLog
    from .server import ReviewStore, serve

    dataset = parse_dataset(args.dataset.read_bytes())
    results = parse_detections(args.detections.read_bytes())
    clusters = ()
    if args.clusters:
        clusters, _ = parse_clusters(args.clusters.read_bytes())
    log = VerdictLog(args.verdict_log, dataset=dataset, results=results)
    store = ReviewStore(dataset=dataset, results=results, log=log, clusters=clusters,
                        media_root=args.media_root, resolutions_path=args.resolutions,
                        allowlist_path=args.allowlist_out)
    serve(store, host=args.host, port=args.port, ui_dir=args.ui_dir)
    return 0


if __name__ == "__main__":
    entrypoint()
