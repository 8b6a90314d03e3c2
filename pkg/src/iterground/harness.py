"""ScreenSpot-style benchmark: dataset loading, click scoring and reports."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import threading
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backends.base import GroundingBackend
from .errors import (
    DegenerateBBox,
    ImageMissing,
    IterGroundError,
    MalformedRecord,
    ManifestNotFound,
)
from .geometry import AbsPoint
from .pipeline import GroundingConfig, GroundingTrace, ground

log = logging.getLogger(__name__)

EMPTY_CELL = "—"


class Platform(str, enum.Enum):
    MOBILE = "mobile"
    DESKTOP = "desktop"
    WEB = "web"


class ElementType(str, enum.Enum):
    TEXT = "text"
    ICON = "icon"


class BBoxConvention(str, enum.Enum):
    XYXY = "xyxy"
    XYWH = "xywh"


METHODS = ("baseline", "ours")
CELLS = [(p, e) for p in Platform for e in ElementType]

_PLATFORM_TITLES = {Platform.MOBILE: "Mobile", Platform.DESKTOP: "Desktop", Platform.WEB: "Web"}


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBBox(f"degenerate bbox {self.as_list()}")

    @classmethod
    def from_convention(cls, values: Sequence[float], convention: BBoxConvention) -> BBox:
        a, b, c, d = (float(v) for v in values)
        if BBoxConvention(convention) is BBoxConvention.XYWH:
            return cls(a, b, a + c, b + d)
        return cls(a, b, c, d)

    @property
    def center(self) -> AbsPoint:
        return AbsPoint((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class BenchExample:
    example_id: str
    image_path: Path
    instruction: str
    bbox: BBox
    platform: Platform
    element_type: ElementType


@dataclass
class EvalOutcome:
    example_id: str
    method: str
    hit: bool
    final_point: AbsPoint | None
    trace: GroundingTrace | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "method": self.method,
            "hit": self.hit,
            "final_point": self.final_point.as_list() if self.final_point else None,
            "error": self.error,
            "trace": self.trace.to_dict() if self.trace else None,
        }


def score_point(p: AbsPoint, box: BBox) -> bool:
    """Click-in-box test with closed boundaries."""
    return box.x1 <= p.x_px <= box.x2 and box.y1 <= p.y_px <= box.y2


# -- dataset ---------------------------------------------------------------

_REQUIRED = ("id", "image", "instruction", "bbox", "platform", "element_type")


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


def load_dataset(manifest_path: str | Path,
                 bbox_convention: BBoxConvention | str = BBoxConvention.XYXY,
                 check_images: bool = True) -> list[BenchExample]:
    """Read a JSONL manifest into validated examples.

    Image paths are resolved relative to the manifest. Boxes are converted
    to XYXY and clipped to the image; a box that is empty after clipping is
    rejected.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestNotFound(f"manifest not found: {manifest_path}")
    if not isinstance(bbox_convention, BBoxConvention):
        bbox_convention = BBoxConvention(str(bbox_convention).lower())
    convention = bbox_convention
    examples = []
    seen = set()
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc}", lineno) from exc
            if not isinstance(rec, dict):
                raise MalformedRecord("record is not an object", lineno)
            missing = [k for k in _REQUIRED if k not in rec]
            if missing:
                raise MalformedRecord(f"missing fields {missing}", lineno)
            ex_id = str(rec["id"])
            if ex_id in seen:
                raise MalformedRecord(f"duplicate id {ex_id!r}", lineno)
            seen.add(ex_id)
            try:
                platform = Platform(str(rec["platform"]).lower())
                etype = ElementType(str(rec["element_type"]).lower())
            except ValueError as exc:
                raise MalformedRecord(str(exc), lineno) from exc
            bbox_vals = rec["bbox"]
            if not isinstance(bbox_vals, list) or len(bbox_vals) != 4:
                raise MalformedRecord("bbox must be a list of 4 numbers", lineno)
            try:
                bbox = BBox.from_convention(bbox_vals, convention)
            except DegenerateBBox as exc:
                raise DegenerateBBox(f"line {lineno}: {exc}") from None
            except (TypeError, ValueError) as exc:
                raise MalformedRecord(f"bad bbox: {exc}", lineno) from exc
            image_path = (manifest_path.parent / rec["image"]).resolve()
            if check_images:
                if not image_path.is_file():
                    raise ImageMissing(f"line {lineno}: image not found: {image_path}")
                w, h = _image_size(image_path)
                clipped = [max(bbox.x1, 0.0), max(bbox.y1, 0.0), min(bbox.x2, float(w)),
                           min(bbox.y2, float(h))]
                try:
                    bbox = BBox(*clipped)
                except DegenerateBBox:
                    raise DegenerateBBox(
                        f"line {lineno}: bbox {bbox.as_list()} lies outside {w}x{h} image") from None
            examples.append(BenchExample(ex_id, image_path, str(rec["instruction"]), bbox,
                                         platform, etype))
    return examples


_SCREENSPOT_SOURCES = {
    "ios": Platform.MOBILE, "android": Platform.MOBILE,
    "macos": Platform.DESKTOP, "windows": Platform.DESKTOP,
}


def convert_screenspot(annotation_path: str | Path, image_dir: str | Path,
                       platform: Platform | str | None = None) -> list[dict]:
    """Turn a published ScreenSpot annotation file into manifest records.

    ScreenSpot stores ``bbox`` as XYWH, so load the output with
    ``bbox_convention="xywh"``. When ``platform`` is omitted it is inferred
    from ``data_source`` (anything unrecognized counts as web).
    """
    with open(annotation_path, encoding="utf-8") as fh:
        items = json.load(fh)
    stem = Path(annotation_path).stem
    out = []
    for i, item in enumerate(items):
        if platform is not None:
            plat = Platform(platform)
        else:
            plat = _SCREENSPOT_SOURCES.get(str(item.get("data_source", "")).lower(), Platform.WEB)
        out.append({
            "id": f"{stem}-{i:05d}",
            "image": str(Path(image_dir) / item["img_filename"]),
            "instruction": item["instruction"],
            "bbox": list(item["bbox"]),
            "platform": plat.value,
            "element_type": ElementType(item["data_type"]).value,
        })
    return out


# -- report ----------------------------------------------------------------

def _cell_key(platform: Platform, etype: ElementType) -> str:
    return f"{platform.value}/{etype.value}"


def _empty_counts() -> dict[str, dict[str, int]]:
    return {_cell_key(p, e): {"hits": 0, "total": 0} for p, e in CELLS}


@dataclass
class BenchReport:
    label: str
    counts: dict[str, dict[str, dict[str, int]]]
    config: dict = field(default_factory=dict)
    outcomes: list[EvalOutcome] = field(default_factory=list, compare=False, repr=False)

    def cell(self, method: str, platform: Platform | str, etype: ElementType | str) -> dict:
        return self.counts[method][_cell_key(Platform(platform), ElementType(etype))]

    def accuracy(self, method: str, platform, etype) -> float | None:
        c = self.cell(method, platform, etype)
        return c["hits"] / c["total"] if c["total"] else None

    def overall_micro(self, method: str) -> float | None:
        hits = sum(c["hits"] for c in self.counts[method].values())
        total = sum(c["total"] for c in self.counts[method].values())
        return hits / total if total else None

    def overall_macro(self, method: str) -> float | None:
        accs = [self.accuracy(method, p, e) for p, e in CELLS]
        accs = [a for a in accs if a is not None]
        return sum(accs) / len(accs) if accs else None

    def has(self, method: str) -> bool:
        return any(c["total"] for c in self.counts[method].values())

    def to_dict(self) -> dict:
        summary = {}
        for m in METHODS:
            summary[m] = {
                "overall_micro": self.overall_micro(m),
                "overall_macro": self.overall_macro(m),
                "cells": {_cell_key(p, e): self.accuracy(m, p, e) for p, e in CELLS},
            }
        return {"label": self.label, "averaging": "micro (pooled examples); macro also reported",
                "counts": self.counts, "accuracy": summary, "config": self.config}

    @classmethod
    def from_dict(cls, d: dict) -> BenchReport:
        return cls(d["label"], d["counts"], d.get("config", {}))


def _evaluate(example: BenchExample, image: np.ndarray, backend: GroundingBackend,
              cfg: GroundingConfig, method: str) -> EvalOutcome:
    try:
        trace = ground(image, example.instruction, backend, cfg, target=example.bbox.center,
                       image_ref=str(example.image_path))
    except IterGroundError as exc:
        log.warning("example %s (%s) failed: %s", example.example_id, method, exc)
        return EvalOutcome(example.example_id, method, False, None, None,
                           f"{type(exc).__name__}: {exc}")
    return EvalOutcome(example.example_id, method, score_point(trace.final_point, example.bbox),
                       trace.final_point, trace)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def run_benchmark(examples: Sequence[BenchExample], backend: GroundingBackend,
                  cfg_ours: GroundingConfig, run_baseline: bool = True, workers: int = 1,
                  *, label: str = "model", outcomes_path: str | Path | None = None,
                  image_loader=load_image) -> BenchReport:
    """Evaluate every example with the iterative method and, optionally, the baseline.

    Failures count as misses. Outcomes are appended to ``outcomes_path`` as
    they complete; aggregation does not depend on completion order.
    """
    if not examples:
        raise ValueError("no examples to evaluate")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    methods = [("ours", cfg_ours)]
    if run_baseline:
        methods.insert(0, ("baseline", cfg_ours.baseline()))

    write_lock = threading.Lock()
    sink = open(outcomes_path, "a", encoding="utf-8") if outcomes_path else None

    def task(example: BenchExample) -> list[EvalOutcome]:
        image = image_loader(example.image_path)
        results = [_evaluate(example, image, backend, cfg, m) for m, cfg in methods]
        if sink is not None:
            with write_lock:
                for r in results:
                    sink.write(json.dumps(r.to_dict()) + "\n")
                sink.flush()
        return results

    try:
        if workers == 1:
            batches = [task(ex) for ex in examples]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batches = list(pool.map(task, examples))
    finally:
        if sink is not None:
            sink.close()

    counts = {m: _empty_counts() for m in METHODS}
    outcomes = []
    for ex, results in zip(examples, batches):
        key = _cell_key(ex.platform, ex.element_type)
        for r in results:
            counts[r.method][key]["total"] += 1
            counts[r.method][key]["hits"] += int(r.hit)
            outcomes.append(r)

    config = {
        "iterations_n": cfg_ours.iterations_n,
        "shrink_policy": asdict(cfg_ours.shrink_policy),
        "run_baseline": run_baseline,
        "examples": len(examples),
    }
    return BenchReport(label, counts, config, outcomes)


# -- serialization ---------------------------------------------------------

def _pct(acc: float | None) -> str:
    return EMPTY_CELL if acc is None else f"{100 * acc:.2f}"


def _method_pct(report: BenchReport, method: str, value: float | None) -> str:
    return _pct(value) if report.has(method) else EMPTY_CELL


def _markdown(reports: Sequence[BenchReport]) -> str:
    lines = ["#### Overall (micro average over pooled examples)", "",
             "| Models | Baseline | Ours |", "| --- | ---: | ---: |"]
    for r in reports:
        lines.append(f"| {r.label} | {_method_pct(r, 'baseline', r.overall_micro('baseline'))} "
                     f"| {_method_pct(r, 'ours', r.overall_micro('ours'))} |")
    lines += ["", "#### Overall (macro average over cells)", "",
              "| Models | Baseline | Ours |", "| --- | ---: | ---: |"]
    for r in reports:
        lines.append(f"| {r.label} | {_method_pct(r, 'baseline', r.overall_macro('baseline'))} "
                     f"| {_method_pct(r, 'ours', r.overall_macro('ours'))} |")
    for platform in Platform:
        lines += ["", f"#### {_PLATFORM_TITLES[platform]}", "",
                  "| Models | Text Baseline | Text Ours | Icon/Widget Baseline | Icon/Widget Ours |",
                  "| --- | ---: | ---: | ---: | ---: |"]
        for r in reports:
            cells = [_pct(r.accuracy(m, platform, e))
                     for e in ElementType for m in METHODS]
            lines.append(f"| {r.label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _csv(reports: Sequence[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "method", "platform", "element_type", "hits", "total", "accuracy"])
    for r in reports:
        for m in METHODS:
            for p, e in CELLS:
                c = r.cell(m, p, e)
                acc = r.accuracy(m, p, e)
                w.writerow([r.label, m, p.value, e.value, c["hits"], c["total"],
                            "" if acc is None else f"{acc:.6f}"])
    return buf.getvalue()


def emit_report(report: BenchReport | Iterable[BenchReport], fmt: str = "json") -> str:
    """Serialize one report (or several, one table row each) deterministically."""
    reports = [report] if isinstance(report, BenchReport) else list(report)
    if fmt == "json":
        payload = reports[0].to_dict() if len(reports) == 1 else [r.to_dict() for r in reports]
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if fmt in ("markdown", "markdown_table", "md"):
        return _markdown(reports)
    if fmt == "csv":
        return _csv(reports)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text: str) -> BenchReport:
    return BenchReport.from_dict(json.loads(text))
