"""Geometry intermediate representation of guideline flowchart pages.

The IR decouples document extraction from graph construction: a page is a
flat collection of text fragments, straight line segments, and arrowheads
in page coordinates (origin top-left, y grows downward, units are points).
Coordinates are stored with two decimal places; comparisons elsewhere use a
0.01 pt tolerance.

File format (JSON, field names are normative)::

    {"pages": [{"page_key": "NSCL-2", "page_index": 2,
                "width": 612.0, "height": 792.0,
                "fragments": [{"text": "...", "bbox": [x0, y0, x1, y1],
                               "font_size": 10.0, "bold": false}],
                "segments": [{"p0": [x, y], "p1": [x, y], "width": 1.0}],
                "arrowheads": [{"tip": [x, y], "direction": [dx, dy]}]}]}

A single page serializes as the bare page object (no ``pages`` wrapper).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError

COORD_DECIMALS = 2
COORD_TOL = 0.01
_UNIT_TOL = 1e-6

Point = tuple[float, float]


def _q(value: float) -> float:
    """Quantize a coordinate to the stored precision."""
    return round(float(value), COORD_DECIMALS)


@dataclass(frozen=True)
class TextFragment:
    """One extracted text run with its bounding box."""

    text: str
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1
    font_size: float
    bold: bool = False

    def validate(self, where: str = "fragment") -> None:
        x0, y0, x1, y1 = self.bbox
        if not self.text.strip():
            raise ValidationError(f"{where}.text: empty after trimming")
        if not x0 < x1:
            raise ValidationError(f"{where}.bbox: x0 must be < x1 (got {x0}, {x1})")
        if not y0 < y1:
            raise ValidationError(f"{where}.bbox: y0 must be < y1 (got {y0}, {y1})")
        if self.font_size <= 0:
            raise ValidationError(f"{where}.font_size: must be positive")


@dataclass(frozen=True)
class LineSegment:
    """A straight stroke between two points."""

    p0: Point
    p1: Point
    width: float = 1.0

    def validate(self, where: str = "segment") -> None:
        if self.p0 == self.p1:
            raise ValidationError(f"{where}: p0 and p1 coincide at {self.p0}")


@dataclass(frozen=True)
class ArrowHead:
    """An arrow tip with its pointing direction (unit vector)."""

    tip: Point
    direction: Point

    def validate(self, where: str = "arrowhead") -> None:
        norm = math.hypot(*self.direction)
        if abs(norm - 1.0) > _UNIT_TOL:
            raise ValidationError(
                f"{where}.direction: not a unit vector (|d| = {norm:.8f})"
            )


@dataclass
class PageIR:
    """All geometry extracted from one flowchart page."""

    page_key: str
    page_index: int
    width: float
    height: float
    fragments: list[TextFragment] = field(default_factory=list)
    segments: list[LineSegment] = field(default_factory=list)
    arrowheads: list[ArrowHead] = field(default_factory=list)

    def validate(self) -> None:
        if not self.page_key:
            raise ValidationError("page_key: must be non-empty")
        if self.page_index < 1:
            raise ValidationError(f"page_index: must be >= 1 (got {self.page_index})")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("width/height: must be positive")
        for i, frag in enumerate(self.fragments):
            frag.validate(f"fragments[{i}]")
            self._check_bounds(frag.bbox, f"fragments[{i}].bbox")
        for i, seg in enumerate(self.segments):
            seg.validate(f"segments[{i}]")
            self._check_bounds((*seg.p0, *seg.p1), f"segments[{i}]")
        for i, head in enumerate(self.arrowheads):
            head.validate(f"arrowheads[{i}]")
            self._check_bounds((*head.tip, *head.tip), f"arrowheads[{i}].tip")

    def _check_bounds(self, coords: tuple[float, ...], where: str) -> None:
        xs, ys = coords[0::2], coords[1::2]
        if min(xs) < 0 or max(xs) > self.width or min(ys) < 0 or max(ys) > self.height:
            raise ValidationError(
                f"{where}: geometry outside page bounds "
                f"[0, {self.width}] x [0, {self.height}]"
            )


def approx_equal(a: PageIR, b: PageIR, tol: float = COORD_TOL) -> bool:
    """Field-for-field equality with a coordinate tolerance."""

    def close(u: float, v: float) -> bool:
        return abs(u - v) <= tol

    def points_close(p: Point, q: Point) -> bool:
        return close(p[0], q[0]) and close(p[1], q[1])

    if (a.page_key, a.page_index) != (b.page_key, b.page_index):
        return False
    if not (close(a.width, b.width) and close(a.height, b.height)):
        return False
    if (
        len(a.fragments) != len(b.fragments)
        or len(a.segments) != len(b.segments)
        or len(a.arrowheads) != len(b.arrowheads)
    ):
        return False
    for fa, fb in zip(a.fragments, b.fragments):
        if fa.text != fb.text or fa.bold != fb.bold:
            return False
        if not close(fa.font_size, fb.font_size):
            return False
        if not all(close(u, v) for u, v in zip(fa.bbox, fb.bbox)):
            return False
    for sa, sb in zip(a.segments, b.segments):
        if not (
            points_close(sa.p0, sb.p0)
            and points_close(sa.p1, sb.p1)
            and close(sa.width, sb.width)
        ):
            return False
    for ha, hb in zip(a.arrowheads, b.arrowheads):
        if not points_close(ha.tip, hb.tip):
            return False
        if not all(abs(u - v) <= _UNIT_TOL + tol for u, v in zip(ha.direction, hb.direction)):
            return False
    return True


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------


def _require(obj: dict, key: str, kind: type | tuple, where: str):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    if key not in obj:
        raise ParseError(f"{where}.{key}: missing required field")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"{where}.{key}: wrong type (got {type(value).__name__})")
    return value


def _number(obj: dict, key: str, where: str) -> float:
    return float(_require(obj, key, (int, float), where))


def _point(value, where: str) -> Point:
    if not (isinstance(value, list) and len(value) == 2):
        raise ParseError(f"{where}: expected [x, y]")
    try:
        return (float(value[0]), float(value[1]))
    except (TypeError, ValueError):
        raise ParseError(f"{where}: non-numeric coordinate") from None


def _fragment_from_obj(obj: dict, where: str) -> TextFragment:
    text = _require(obj, "text", str, where)
    bbox = _require(obj, "bbox", list, where)
    if len(bbox) != 4:
        raise ParseError(f"{where}.bbox: expected [x0, y0, x1, y1]")
    try:
        coords = tuple(float(v) for v in bbox)
    except (TypeError, ValueError):
        raise ParseError(f"{where}.bbox: non-numeric coordinate") from None
    font_size = _number(obj, "font_size", where)
    bold = _require(obj, "bold", bool, where) if "bold" in obj else False
    return TextFragment(text=text, bbox=coords, font_size=font_size, bold=bold)


def page_from_obj(obj: dict, where: str = "page") -> PageIR:
    """Build and validate a PageIR from a decoded JSON object."""
    page = PageIR(
        page_key=_require(obj, "page_key", str, where),
        page_index=_require(obj, "page_index", int, where),
        width=_number(obj, "width", where),
        height=_number(obj, "height", where),
    )
    for i, f in enumerate(_require(obj, "fragments", list, where)):
        page.fragments.append(_fragment_from_obj(f, f"{where}.fragments[{i}]"))
    for i, s in enumerate(_require(obj, "segments", list, where)):
        w = f"{where}.segments[{i}]"
        page.segments.append(
            LineSegment(
                p0=_point(_require(s, "p0", list, w), f"{w}.p0"),
                p1=_point(_require(s, "p1", list, w), f"{w}.p1"),
                width=_number(s, "width", w) if "width" in s else 1.0,
            )
        )
    for i, h in enumerate(_require(obj, "arrowheads", list, where)):
        w = f"{where}.arrowheads[{i}]"
        page.arrowheads.append(
            ArrowHead(
                tip=_point(_require(h, "tip", list, w), f"{w}.tip"),
                direction=_point(_require(h, "direction", list, w), f"{w}.direction"),
            )
        )
    page.validate()
    return page


def page_to_obj(page: PageIR) -> dict:
    """Canonical JSON-ready object for one page (coordinates quantized)."""
    return {
        "page_key": page.page_key,
        "page_index": page.page_index,
        "width": _q(page.width),
        "height": _q(page.height),
        "fragments": [
            {
                "text": f.text,
                "bbox": [_q(v) for v in f.bbox],
                "font_size": _q(f.font_size),
                "bold": f.bold,
            }
            for f in page.fragments
        ],
        "segments": [
            {
                "p0": [_q(v) for v in s.p0],
                "p1": [_q(v) for v in s.p1],
                "width": _q(s.width),
            }
            for s in page.segments
        ],
        "arrowheads": [
            {
                "tip": [_q(v) for v in h.tip],
                "direction": [round(float(v), 6) for v in h.direction],
            }
            for h in page.arrowheads
        ],
    }


def _decode(data: bytes | str, what: str) -> dict:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{what}: top-level value must be an object")
    return obj


def load_page_ir(data: bytes | str) -> PageIR:
    """Parse and validate a single serialized page."""
    return page_from_obj(_decode(data, "page document"), "page")


def save_page_ir(page: PageIR) -> bytes:
    """Canonical serialization of one page; ``load_page_ir`` round-trips it."""
    page.validate()
    return (json.dumps(page_to_obj(page), indent=2) + "\n").encode("utf-8")


def load_pages(data: bytes | str) -> list[PageIR]:
    """Parse a guideline-version IR document: ``{"pages": [...]}``."""
    obj = _decode(data, "IR document")
    raw_pages = _require(obj, "pages", list, "document")
    pages = [page_from_obj(p, f"pages[{i}]") for i, p in enumerate(raw_pages)]
    seen: set[str] = set()
    for i, page in enumerate(pages):
        if page.page_key in seen:
            raise ValidationError(f"pages[{i}].page_key: duplicate key {page.page_key!r}")
        seen.add(page.page_key)
    return pages


def save_pages(pages: list[PageIR]) -> bytes:
    """Canonical serialization of a guideline-version IR document."""
    keys = [p.page_key for p in pages]
    if len(set(keys)) != len(keys):
        raise ValidationError("pages: duplicate page_key in document")
    for page in pages:
        page.validate()
    doc = {"pages": [page_to_obj(p) for p in pages]}
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
