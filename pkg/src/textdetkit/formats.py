"""JSON file formats: detections, weighted labels, ground truth, and named
tensors.

All writers emit canonical UTF-8 bytes: fixed key order, no whitespace,
floats rendered with 17 significant digits (always with a decimal point or
exponent so they parse back as floats). 17 digits round-trip every IEEE
double exactly, and identical in-memory values always serialize to identical
bytes, which the CLI determinism tests rely on.

Masks travel as run-length encoding over row-major pixel order: ``counts``
alternates run lengths starting with the number of leading zeros. Polygons
travel as vertex lists. Readers accept either representation and prefer the
mask when both are present (polygons cannot represent holes).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .evaluate import GroundTruthSet
from .geometry import AxisBox, BitMask, Polygon, mask_to_polygons, polygon_to_mask
from .pseudolabel import PseudoLabel, ScoredDetection
from .suppress import DetectionSet

SCHEMA_VERSION = "1"
_BOUNDS_SLACK = 1.0 + 1e-9  # coordinates may overhang the canvas by 1 px


# ---------------------------------------------------------------------------
# canonical JSON


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite number {x}")
    s = format(float(x), ".17g")
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def _emit(obj, out: list) -> None:
    if isinstance(obj, dict):
        out.append("{")
        first = True
        for key, value in obj.items():
            if not first:
                out.append(",")
            first = False
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _emit(value, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, value in enumerate(obj):
            if i:
                out.append(",")
            _emit(value, out)
        out.append("]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif obj is None:
        out.append("null")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_canonical(obj) -> str:
    out: list = []
    _emit(obj, out)
    return "".join(out)


def write_canonical(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _check_schema(doc, path) -> None:
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top-level value must be an object")
    version = doc.get("schemaVersion")
    if version != SCHEMA_VERSION:
        raise ParseError(f"{path}: unrecognized schemaVersion {version!r}")


# ---------------------------------------------------------------------------
# run-length encoded masks


def rle_encode(mask: BitMask) -> dict:
    """Alternating run lengths over row-major order, starting from value 0."""
    flat = mask.bits.ravel()
    counts = []
    run_value = False
    run_length = 0
    for v in flat.tolist():
        if v == run_value:
            run_length += 1
        else:
            counts.append(run_length)
            run_value = v
            run_length = 1
    counts.append(run_length)
    return {"width": mask.width, "height": mask.height, "counts": counts}


def rle_decode(obj) -> BitMask:
    try:
        width = int(obj["width"])
        height = int(obj["height"])
        counts = [int(c) for c in obj["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid RLE mask: {exc}") from exc
    if width < 1 or height < 1:
        raise ParseError(f"invalid RLE mask dimensions {width}x{height}")
    if any(c < 0 for c in counts) or sum(counts) != width * height:
        raise ParseError(
            f"RLE counts sum {sum(counts)} != {width}x{height} = {width * height}"
        )
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    return BitMask(width=width, height=height, bits=flat.reshape(height, width))


# ---------------------------------------------------------------------------
# shared record helpers


def _box_to_json(box: AxisBox) -> list:
    return [box.xmin, box.ymin, box.xmax, box.ymax]


def _box_from_json(raw, width, height, path) -> AxisBox:
    if not isinstance(raw, list) or len(raw) != 4:
        raise ParseError(f"{path}: box must be a list of 4 numbers, got {raw!r}")
    try:
        vals = [float(v) for v in raw]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: non-numeric box coordinate") from exc
    xmin, ymin, xmax, ymax = vals
    if (xmin < -_BOUNDS_SLACK or ymin < -_BOUNDS_SLACK
            or xmax > width + _BOUNDS_SLACK or ymax > height + _BOUNDS_SLACK):
        raise ParseError(
            f"{path}: box {vals} outside image bounds {width}x{height} (+1 px slack)"
        )
    try:
        return AxisBox(xmin, ymin, xmax, ymax)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _polygon_points_from_json(raw, width, height, path) -> list:
    if not isinstance(raw, list) or len(raw) < 3:
        raise ParseError(f"{path}: polygon must list >= 3 points")
    pts = []
    for p in raw:
        try:
            x, y = float(p[0]), float(p[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad polygon point {p!r}") from exc
        if (x < -_BOUNDS_SLACK or y < -_BOUNDS_SLACK
                or x > width + _BOUNDS_SLACK or y > height + _BOUNDS_SLACK):
            raise ParseError(
                f"{path}: polygon point ({x}, {y}) outside image bounds "
                f"{width}x{height} (+1 px slack)"
            )
        # clamp the permitted 1 px overhang onto the canvas for rasterization
        pts.append((min(max(x, 0.0), float(width)), min(max(y, 0.0), float(height))))
    return pts


def _mask_from_record(record, width, height, path) -> BitMask:
    if "mask" in record:
        mask = rle_decode(record["mask"])
        if (mask.width, mask.height) != (width, height):
            raise ParseError(
                f"{path}: mask dimensions {mask.width}x{mask.height} != "
                f"image {width}x{height}"
            )
        return mask
    polys = record.get("polygons")
    if polys is None and "polygon" in record:
        polys = [record["polygon"]]
    if not polys:
        raise ParseError(f"{path}: record carries neither a mask nor polygons")
    bits = np.zeros((height, width), dtype=bool)
    for raw in polys:
        pts = _polygon_points_from_json(raw, width, height, path)
        try:
            poly = Polygon(tuple(pts))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        bits |= polygon_to_mask(poly, width, height).bits
    return BitMask(width=width, height=height, bits=bits)


def _unit_interval(record, key, path) -> float:
    try:
        value = float(record[key])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: missing or non-numeric {key!r}") from exc
    if not 0.0 <= value <= 1.0:
        raise ParseError(f"{path}: {key} {value} outside [0, 1]")
    return value


def _image_header(doc, path):
    try:
        image_id = str(doc["imageId"])
        width = int(doc["imageWidth"])
        height = int(doc["imageHeight"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad image header: {exc}") from exc
    if width < 1 or height < 1:
        raise ParseError(f"{path}: image dimensions must be positive, got {width}x{height}")
    return image_id, width, height


# ---------------------------------------------------------------------------
# detection files


def save_detection_file(path, det_set: DetectionSet, include_polygons: bool = False) -> None:
    if det_set.image_width is None or det_set.image_height is None:
        raise ValueError("detection set needs image_width/image_height to be saved")
    records = []
    for det in det_set.detections:
        record = {
            "box": _box_to_json(det.box),
            "score": det.score,
            "mask": rle_encode(det.mask),
        }
        if include_polygons:
            record["polygons"] = [
                [[x, y] for x, y in poly.vertices] for poly in mask_to_polygons(det.mask)
            ]
        records.append(record)
    write_canonical(path, {
        "schemaVersion": SCHEMA_VERSION,
        "imageId": det_set.image_id,
        "imageWidth": det_set.image_width,
        "imageHeight": det_set.image_height,
        "sourceTag": det_set.source_tag,
        "scaleFactor": det_set.scale_factor,
        "detections": records,
    })


def load_detection_file(path) -> DetectionSet:
    doc = read_json(path)
    _check_schema(doc, path)
    image_id, width, height = _image_header(doc, path)
    raw_dets = doc.get("detections")
    if not isinstance(raw_dets, list):
        raise ParseError(f"{path}: 'detections' must be a list")
    detections = []
    for record in raw_dets:
        if not isinstance(record, dict):
            raise ParseError(f"{path}: detection record must be an object")
        score = _unit_interval(record, "score", path)
        box = _box_from_json(record.get("box"), width, height, path)
        mask = _mask_from_record(record, width, height, path)
        det = ScoredDetection(mask=mask, box=box, score=score)
        try:
            det.validate()
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        detections.append(det)
    return DetectionSet(
        image_id=image_id,
        detections=detections,
        source_tag=str(doc.get("sourceTag", "")),
        image_width=width,
        image_height=height,
        scale_factor=float(doc.get("scaleFactor", 1.0)),
    )


# ---------------------------------------------------------------------------
# weighted label files


@dataclass
class WeightedLabelSet:
    image_id: str
    labels: list
    source_tag: str = ""
    image_width: int | None = None
    image_height: int | None = None


def save_weighted_label_file(path, labels, image_id: str, width: int, height: int,
                             source_tag: str = "fusion") -> None:
    records = []
    for label in labels:
        records.append({
            "box": _box_to_json(label.box),
            "weight": label.weight,
            "mask": rle_encode(label.mask),
            "polygons": [
                [[x, y] for x, y in poly.vertices] for poly in mask_to_polygons(label.mask)
            ],
        })
    write_canonical(path, {
        "schemaVersion": SCHEMA_VERSION,
        "imageId": image_id,
        "imageWidth": width,
        "imageHeight": height,
        "sourceTag": source_tag,
        "scaleFactor": 1.0,
        "labels": records,
    })


def load_weighted_label_file(path) -> WeightedLabelSet:
    doc = read_json(path)
    _check_schema(doc, path)
    image_id, width, height = _image_header(doc, path)
    raw = doc.get("labels")
    if not isinstance(raw, list):
        raise ParseError(f"{path}: 'labels' must be a list")
    labels = []
    for record in raw:
        if not isinstance(record, dict):
            raise ParseError(f"{path}: label record must be an object")
        weight = _unit_interval(record, "weight", path)
        box = _box_from_json(record.get("box"), width, height, path)
        mask = _mask_from_record(record, width, height, path)
        labels.append(PseudoLabel(mask=mask, box=box, weight=weight))
    return WeightedLabelSet(
        image_id=image_id,
        labels=labels,
        source_tag=str(doc.get("sourceTag", "")),
        image_width=width,
        image_height=height,
    )


# ---------------------------------------------------------------------------
# ground truth files


def save_ground_truth_file(path, gt: GroundTruthSet) -> None:
    if gt.image_width is None or gt.image_height is None:
        raise ValueError("ground truth set needs image_width/image_height to be saved")
    instances = []
    for poly, ignore in zip(gt.instances, gt.ignore_flags):
        instances.append({
            "polygon": [[x, y] for x, y in poly.vertices],
            "ignore": bool(ignore),
        })
    write_canonical(path, {
        "schemaVersion": SCHEMA_VERSION,
        "imageId": gt.image_id,
        "imageWidth": gt.image_width,
        "imageHeight": gt.image_height,
        "instances": instances,
    })


def load_ground_truth_file(path) -> GroundTruthSet:
    doc = read_json(path)
    _check_schema(doc, path)
    image_id, width, height = _image_header(doc, path)
    raw = doc.get("instances")
    if not isinstance(raw, list):
        raise ParseError(f"{path}: 'instances' must be a list")
    instances = []
    flags = []
    for record in raw:
        if not isinstance(record, dict):
            raise ParseError(f"{path}: instance record must be an object")
        pts = _polygon_points_from_json(record.get("polygon"), width, height, path)
        try:
            instances.append(Polygon(tuple(pts)))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        flags.append(bool(record.get("ignore", False)))
    return GroundTruthSet(
        image_id=image_id,
        instances=instances,
        ignore_flags=flags,
        image_width=width,
        image_height=height,
    )


# ---------------------------------------------------------------------------
# named tensor files


def _tensors_to_json(tensors: dict) -> dict:
    payload = {}
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float64))
        payload[name] = {
            "shape": [int(e) for e in arr.shape],
            "data": arr.ravel().tolist(),
        }
    return payload


def tensor_checksum(payload: dict) -> str:
    return hashlib.sha256(dumps_canonical(payload).encode("utf-8")).hexdigest()


def save_tensor_file(path, tensors: dict, module: str = "tensors", config=None) -> None:
    payload = _tensors_to_json(tensors)
    write_canonical(path, {
        "schemaVersion": SCHEMA_VERSION,
        "module": module,
        "config": config,
        "tensors": payload,
        "checksum": tensor_checksum(payload),
    })


def load_tensor_file(path):
    """Returns (module, config, {name: float64 array}); verifies the checksum."""
    doc = read_json(path)
    _check_schema(doc, path)
    raw = doc.get("tensors")
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: 'tensors' must be an object")
    payload = {}
    tensors = {}
    for name in sorted(raw):
        entry = raw[name]
        try:
            shape = [int(e) for e in entry["shape"]]
            data = [float(v) for v in entry["data"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad tensor {name!r}: {exc}") from exc
        if any(e < 1 for e in shape):
            raise ParseError(f"{path}: tensor {name!r} has an empty extent {shape}")
        expected = int(np.prod(shape))
        if expected != len(data):
            raise ParseError(
                f"{path}: tensor {name!r} declares shape {shape} "
                f"({expected} values) but carries {len(data)}"
            )
        payload[name] = {"shape": shape, "data": data}
        tensors[name] = np.asarray(data, dtype=np.float64).reshape(shape)
    stored = doc.get("checksum")
    actual = tensor_checksum(payload)
    if stored != actual:
        raise ParseError(f"{path}: checksum mismatch ({stored!r} != {actual!r})")
    return str(doc.get("module", "tensors")), doc.get("config"), tensors
