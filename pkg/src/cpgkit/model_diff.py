"""Page-wise comparison of two knowledge-model versions.

Nodes with identical content hash pair up as unchanged; the rest are
paired greedily by a 0-100 similarity score. The score is the normalized
longest-common-subsequence ratio, i.e. the similarity form of the
insert/delete edit distance:

    score(a, b) = round(100 * 2 * lcs(a, b) / (len(a) + len(b)))

Scores of 95 and above count as unchanged content, 40 and below as an
added plus a removed node, anything between as a modification.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum

from .errors import ValidationError
from .graph_builder import NodeBlock, parse_node_id
from .knowledge_model import KnowledgeModel

UNCHANGED_MIN_SCORE = 95
ADDED_REMOVED_MAX_SCORE = 40


class DiffStatus(str, Enum):
    UNCHANGED = "unchanged"
    MODIFIED = "modified"
    ADDED = "added"
    REMOVED = "removed"


class ScoreClass(str, Enum):
    UNCHANGED = "unchanged"
    MODIFIED = "modified"
    ADDED_REMOVED = "added/removed"


@dataclass(frozen=True)
class DiffEntry:
    """One node-level comparison outcome."""

    status: DiffStatus
    node_id_old: str | None = None
    node_id_new: str | None = None
    content_old: str | None = None
    content_new: str | None = None
    score: int | None = None

    def to_obj(self) -> dict:
        return {
            "status": self.status.value,
            "node_id_old": self.node_id_old,
            "node_id_new": self.node_id_new,
            "content_old": self.content_old,
            "content_new": self.content_new,
            "score": self.score,
        }


@dataclass
class DiffReport:
    """All page diffs between two versions of one guideline."""

    guideline_id: str
    version_old: str
    version_new: str
    pages: dict[str, list[DiffEntry]]
    summary: dict[str, int]

    def to_obj(self) -> dict:
        return {
            "guideline_id": self.guideline_id,
            "version_old": self.version_old,
            "version_new": self.version_new,
            "pages": {k: [e.to_obj() for e in v] for k, v in self.pages.items()},
            "summary": self.summary,
        }

    def to_json(self) -> bytes:
        return (json.dumps(self.to_obj(), indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Scoring and classification
# ---------------------------------------------------------------------------


def _lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ch_a in a:
        cur = [0]
        for j, ch_b in enumerate(b, start=1):
            if ch_a == ch_b:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(cur[j - 1], prev[j]))
        prev = cur
    return prev[-1]


def similarity_score(a: str, b: str) -> int:
    """Content similarity between 0 and 100; 100 means identical."""
    if a == b:
        return 100
    total = len(a) + len(b)
    lcs = _lcs_length(a, b)
    # round half-up of 100 * 2 * lcs / total, in integer arithmetic
    return (400 * lcs + total) // (2 * total)


def classify(score: int) -> ScoreClass:
    """Map a similarity score onto the change categories."""
    if not 0 <= score <= 100:
        raise ValidationError(f"score {score} outside [0, 100]")
    if score >= UNCHANGED_MIN_SCORE:
        return ScoreClass.UNCHANGED
    if score <= ADDED_REMOVED_MAX_SCORE:
        return ScoreClass.ADDED_REMOVED
    return ScoreClass.MODIFIED


def content_hash(content: str) -> str:
    """Equality fast path; any collision-resistant digest works."""
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Page and model diff
# ---------------------------------------------------------------------------


def _entry_sort_key(entry: DiffEntry) -> tuple:
    def idx(node_id: str | None) -> float:
        return parse_node_id(node_id)[1] if node_id else float("inf")

    return (idx(entry.node_id_new), idx(entry.node_id_old))


def diff_page(old_nodes: list[NodeBlock], new_nodes: list[NodeBlock]) -> list[DiffEntry]:
    """Pair one page's nodes across versions and classify each pairing.

    Exact content matches pair first (in node-index order). Remaining
    candidates pair greedily by highest similarity while the score stays
    above the added/removed threshold; ties prefer smaller indices.
    Whatever is left on the old side was removed, on the new side added.
    """
    old = sorted(old_nodes, key=lambda n: n.index)
    new = sorted(new_nodes, key=lambda n: n.index)
    entries: list[DiffEntry] = []

    unused_new = list(range(len(new)))
    unused_old = []
    for i, old_node in enumerate(old):
        digest = content_hash(old_node.content)
        match = next(
            (j for j in unused_new if content_hash(new[j].content) == digest), None
        )
        if match is None:
            unused_old.append(i)
            continue
        unused_new.remove(match)
        entries.append(
            DiffEntry(
                status=DiffStatus.UNCHANGED,
                node_id_old=old_node.node_id,
                node_id_new=new[match].node_id,
                content_old=old_node.content,
                content_new=new[match].content,
                score=100,
            )
        )

    scored = sorted(
        (
            (-similarity_score(old[i].content, new[j].content), i, j)
            for i in unused_old
            for j in unused_new
        ),
    )
    paired_old: set[int] = set()
    paired_new: set[int] = set()
    for neg_score, i, j in scored:
        score = -neg_score
        if score <= ADDED_REMOVED_MAX_SCORE:
            break
        if i in paired_old or j in paired_new:
            continue
        paired_old.add(i)
        paired_new.add(j)
        status = (
            DiffStatus.UNCHANGED if score >= UNCHANGED_MIN_SCORE else DiffStatus.MODIFIED
        )
        entries.append(
            DiffEntry(
                status=status,
                node_id_old=old[i].node_id,
                node_id_new=new[j].node_id,
                content_old=old[i].content,
                content_new=new[j].content,
                score=score,
            )
        )

    for i in unused_old:
        if i not in paired_old:
            entries.append(
                DiffEntry(
                    status=DiffStatus.REMOVED,
                    node_id_old=old[i].node_id,
                    content_old=old[i].content,
                )
            )
    for j in unused_new:
        if j not in paired_new:
            entries.append(
                DiffEntry(
                    status=DiffStatus.ADDED,
                    node_id_new=new[j].node_id,
                    content_new=new[j].content,
                )
            )
    entries.sort(key=_entry_sort_key)
    return entries


def diff_models(old: KnowledgeModel, new: KnowledgeModel) -> DiffReport:
    """Page-by-page diff of two versions of the same guideline."""
    if old.guideline_id != new.guideline_id:
        raise ValidationError(
            f"cannot diff different guidelines: {old.guideline_id!r} vs {new.guideline_id!r}"
        )
    old_pages = old.nodes_by_page()
    new_pages = new.nodes_by_page()
    pages: dict[str, list[DiffEntry]] = {}
    summary = {status.value: 0 for status in DiffStatus}
    for page_key in sorted(set(old_pages) | set(new_pages)):
        entries = diff_page(old_pages.get(page_key, []), new_pages.get(page_key, []))
        pages[page_key] = entries
        for entry in entries:
            summary[entry.status.value] += 1
    return DiffReport(
        guideline_id=old.guideline_id,
        version_old=old.version,
        version_new=new.version,
        pages=pages,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_STATUS_WORDS = {
    DiffStatus.UNCHANGED: "Not changed",
    DiffStatus.MODIFIED: "Modified",
    DiffStatus.ADDED: "Added",
    DiffStatus.REMOVED: "Removed",
}


def render_report(report: DiffReport) -> str:
    """Human-readable per-page tables: Node Id | Status | new | old | Score."""
    lines = [
        f"Guideline {report.guideline_id}: "
        f"{report.version_old} -> {report.version_new}",
        "Summary: "
        + ", ".join(f"{k}={v}" for k, v in sorted(report.summary.items())),
    ]
    header = ("Node Id", "Status", f"Node Content (ver {report.version_new})",
              f"Node Content (ver {report.version_old})", "Score")
    for page_key, entries in report.pages.items():
        rows = [header]
        for e in entries:
            rows.append(
                (
                    e.node_id_new or e.node_id_old or "",
                    _STATUS_WORDS[e.status],
                    e.content_new or "",
                    e.content_old or "",
                    "" if e.score is None else str(e.score),
                )
            )
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        lines.append("")
        lines.append(f"Page {page_key}")
        for r, row in enumerate(rows):
            lines.append(" | ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
            if r == 0:
                lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
