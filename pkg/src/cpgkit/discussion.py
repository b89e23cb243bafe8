"""Paragraph extraction from discussion-section text with layout cues.

Input is a line-level IR (text, bbox, font size, bold flag per line).
Headings are lines that are large relative to the body size or bold;
nesting follows descending font size. Body lines merge into paragraphs,
breaking on headings or on vertical gaps, and continuing across column
and page boundaries. Hyphenated line ends join without the hyphen, and
lines repeated across most pages at the same height (running headers and
footers) are dropped.

Column detection assumes lines sit inside their column; full-width lines
on multi-column pages are not repositioned.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from statistics import median

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class TextLine:
    text: str
    bbox: tuple[float, float, float, float]
    font_size: float
    bold: bool = False


@dataclass
class DocPage:
    page_index: int
    lines: list[TextLine] = field(default_factory=list)


@dataclass
class DocTextIR:
    pages: list[DocPage] = field(default_factory=list)


@dataclass(frozen=True)
class Paragraph:
    para_id: int
    section_path: tuple[str, ...]
    text: str
    page_span: tuple[int, int]


@dataclass(frozen=True)
class HeadingConfig:
    """Heuristics for structure recovery."""

    heading_ratio: float = 1.15
    para_gap_factor: float = 1.6
    min_column_gap: float = 18.0
    header_footer_page_frac: float = 0.6
    header_footer_y_tol: float = 6.0


DEFAULT_HEADING_CONFIG = HeadingConfig()


# ---------------------------------------------------------------------------
# IR loading
# ---------------------------------------------------------------------------


def load_doc_text(data: bytes | str) -> DocTextIR:
    """Parse the line-level IR: {"pages": [{"page_index", "lines": [...]}]}."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"text IR: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("pages"), list):
        raise ParseError("text IR: expected an object with a 'pages' list")
    doc = DocTextIR()
    for i, page_obj in enumerate(obj["pages"]):
        where = f"pages[{i}]"
        if not isinstance(page_obj, dict) or "page_index" not in page_obj:
            raise ParseError(f"{where}: missing page_index")
        page = DocPage(page_index=int(page_obj["page_index"]))
        for j, line_obj in enumerate(page_obj.get("lines", [])):
            lwhere = f"{where}.lines[{j}]"
            try:
                bbox = tuple(float(v) for v in line_obj["bbox"])
                if len(bbox) != 4:
                    raise ParseError(f"{lwhere}.bbox: expected [x0, y0, x1, y1]")
                page.lines.append(
                    TextLine(
                        text=str(line_obj["text"]),
                        bbox=bbox,
                        font_size=float(line_obj["font_size"]),
                        bold=bool(line_obj.get("bold", False)),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{lwhere}: {exc}") from exc
        doc.pages.append(page)
    return doc


def save_doc_text(doc: DocTextIR) -> bytes:
    obj = {
        "pages": [
            {
                "page_index": p.page_index,
                "lines": [
                    {
                        "text": l.text,
                        "bbox": list(l.bbox),
                        "font_size": l.font_size,
                        "bold": l.bold,
                    }
                    for l in p.lines
                ],
            }
            for p in doc.pages
        ]
    }
    return (json.dumps(obj, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


_WS_RE = re.compile(r"\s+")
_DIGITS_RE = re.compile(r"\d+")


def _normalized(text: str) -> str:
    return _DIGITS_RE.sub("#", _WS_RE.sub(" ", text.strip().lower()))


def _repeated_furniture(doc: DocTextIR, config: HeadingConfig) -> set[tuple[int, int]]:
    """(page idx, line idx) of running headers/footers to drop."""
    if len(doc.pages) < 2:
        return set()
    groups: dict[str, list[tuple[int, int, float]]] = {}
    for pi, page in enumerate(doc.pages):
        for li, line in enumerate(page.lines):
            groups.setdefault(_normalized(line.text), []).append((pi, li, line.bbox[1]))
    drop: set[tuple[int, int]] = set()
    threshold = config.header_footer_page_frac * len(doc.pages)
    for occurrences in groups.values():
        pages_hit = {pi for pi, _li, _y in occurrences}
        if len(pages_hit) < 2 or len(pages_hit) < threshold:
            continue
        ys = [y for _pi, _li, y in occurrences]
        if max(ys) - min(ys) <= config.header_footer_y_tol:
            drop.update((pi, li) for pi, li, _y in occurrences)
    return drop


def _split_columns(lines: list[TextLine], min_gap: float) -> list[list[TextLine]]:
    """Split lines into columns at horizontal whitespace bands."""
    if len(lines) < 2:
        return [lines]
    intervals = sorted((l.bbox[0], l.bbox[2]) for l in lines)
    merged = [list(intervals[0])]
    for x0, x1 in intervals[1:]:
        if x0 <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], x1)
        else:
            merged.append([x0, x1])
    best = None
    for (a0, a1), (b0, b1) in zip(merged, merged[1:]):
        gap = b0 - a1
        if gap >= min_gap and (best is None or gap > best[0]):
            best = (gap, (a1 + b0) / 2)
    if best is None:
        return [lines]
    cut = best[1]
    left = [l for l in lines if (l.bbox[0] + l.bbox[2]) / 2 < cut]
    right = [l for l in lines if (l.bbox[0] + l.bbox[2]) / 2 >= cut]
    if not left or not right:
        return [lines]
    return _split_columns(left, min_gap) + _split_columns(right, min_gap)


def _append_text(acc: str, piece: str) -> str:
    piece = _WS_RE.sub(" ", piece.strip())
    if not acc:
        return piece
    if acc.endswith("-"):
        return acc[:-1] + piece
    return acc + " " + piece


def extract_paragraphs(
    doc: DocTextIR, config: HeadingConfig = DEFAULT_HEADING_CONFIG
) -> list[Paragraph]:
    """Recover the section/paragraph structure of a discussion document."""
    furniture = _repeated_furniture(doc, config)
    kept: list[tuple[int, TextLine]] = []  # (page_index, line)
    for pi, page in enumerate(doc.pages):
        for li, line in enumerate(page.lines):
            if (pi, li) not in furniture and line.text.strip():
                kept.append((page.page_index, line))
    if not kept:
        return []

    body_size = median(line.font_size for _p, line in kept)
    line_height = median(line.bbox[3] - line.bbox[1] for _p, line in kept)
    para_gap = config.para_gap_factor * line_height

    def is_heading(line: TextLine) -> bool:
        return line.font_size >= body_size * config.heading_ratio - 1e-9 or line.bold

    heading_sizes = sorted(
        {line.font_size for _p, line in kept if is_heading(line)}, reverse=True
    )
    level_of = {size: rank for rank, size in enumerate(heading_sizes, start=1)}

    # Reading order: page, then column left to right, then y.
    ordered: list[tuple[int, int, TextLine]] = []  # (page_index, column, line)
    for pi, page in enumerate(doc.pages):
        lines = [
            line
            for li, line in enumerate(page.lines)
            if (pi, li) not in furniture and line.text.strip()
        ]
        for col, column_lines in enumerate(_split_columns(lines, config.min_column_gap)):
            for line in sorted(column_lines, key=lambda l: (l.bbox[1], l.bbox[0])):
                ordered.append((page.page_index, col, line))

    paragraphs: list[Paragraph] = []
    section_stack: list[tuple[int, str]] = []
    text = ""
    span: list[int] = []
    prev: tuple[int, int, TextLine] | None = None

    def flush() -> None:
        nonlocal text, span
        if text:
            paragraphs.append(
                Paragraph(
                    para_id=len(paragraphs) + 1,
                    section_path=tuple(t for _lvl, t in section_stack),
                    text=text,
                    page_span=(min(span), max(span)),
                )
            )
        text = ""
        span = []

    for page_index, col, line in ordered:
        if is_heading(line):
            level = level_of[line.font_size]
            same_block = (
                prev is not None
                and is_heading(prev[2])
                and level_of[prev[2].font_size] == level
                and (page_index, col) == (prev[0], prev[1])
                and line.bbox[1] - prev[2].bbox[3] <= para_gap
            )
            flush()
            if same_block:
                merged = _append_text(section_stack[-1][1], line.text)
                section_stack[-1] = (level, merged)
            else:
                while section_stack and section_stack[-1][0] >= level:
                    section_stack.pop()
                section_stack.append((level, _WS_RE.sub(" ", line.text.strip())))
        else:
            breaks = False
            if text and prev is not None and (page_index, col) == (prev[0], prev[1]):
                breaks = line.bbox[1] - prev[2].bbox[3] > para_gap
            if breaks:
                flush()
            text = _append_text(text, line.text)
            span.append(page_index)
        prev = (page_index, col, line)
    flush()
    return paragraphs


# ---------------------------------------------------------------------------
# Paragraph store
# ---------------------------------------------------------------------------


def save_paragraphs(paragraphs: list[Paragraph]) -> bytes:
    out = [
        {
            "para_id": p.para_id,
            "section_path": list(p.section_path),
            "text": p.text,
            "page_span": list(p.page_span),
        }
        for p in paragraphs
    ]
    return (json.dumps(out, indent=2) + "\n").encode("utf-8")


def load_paragraphs(data: bytes | str) -> list[Paragraph]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"paragraph store: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, list):
        raise ParseError("paragraph store: expected a list")
    paragraphs = []
    last_id = 0
    for i, obj in enumerate(raw):
        try:
            para = Paragraph(
                para_id=int(obj["para_id"]),
                section_path=tuple(obj["section_path"]),
                text=str(obj["text"]),
                page_span=(int(obj["page_span"][0]), int(obj["page_span"][1])),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"paragraph store[{i}]: {exc}") from exc
        if not para.text:
            raise ValidationError(f"paragraph store[{i}]: empty text")
        if para.para_id <= last_id:
            raise ValidationError(f"paragraph store[{i}]: para_id not increasing")
        last_id = para.para_id
        paragraphs.append(para)
    return paragraphs
