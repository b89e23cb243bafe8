"""Node formation and directed-edge resolution for flowchart pages.

Pipeline per page: fragments are clustered into text-block nodes, raw line
segments are chained into polylines, arrowheads orient the polylines, and
oriented paths are attached to the nearest node boxes.

Edge resolution handles the three drawing styles found in guideline
flowcharts: plain multi-segment edges, chains of segments meeting end to
end, and fan-outs where one trunk line feeds several arrow-tipped
branches. Crossings are kept apart from fan-outs by pairing collinear
continuations at junction points: a line that passes straight through a
junction is one polyline, and only polylines that *end* at a junction
branch off the line they touch.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from statistics import median

from .errors import ValidationError
from .geometry_ir import ArrowHead, LineSegment, PageIR, Point, TextFragment

NODE_LABELS = ("condition", "evaluation", "treatment", "navigation", "other")

DEFAULT_TREATMENT_KEYWORDS = (
    "surgery",
    "resection",
    "chemotherapy",
    "radiation",
    "therapy",
    "ablation",
    "regimen",
)

# Page references look like "NSCL-2": an uppercase key, a dash, a page number.
PAGE_REF_RE = re.compile(r"([A-Z][A-Z0-9]{0,11}-\d+)")
SEE_REF_RE = re.compile(r"\bsee\s+([A-Za-z][A-Za-z0-9]{0,11}-\d+)", re.IGNORECASE)


@dataclass(frozen=True)
class LabelRules:
    """Keyword table for node labeling, checked in insertion order."""

    keywords: tuple[tuple[str, tuple[str, ...]], ...] = (
        ("treatment", DEFAULT_TREATMENT_KEYWORDS),
    )


DEFAULT_LABEL_RULES = LabelRules()


def label_for_content(content: str, rules: LabelRules = DEFAULT_LABEL_RULES) -> str:
    """Assign a node label from its text content."""
    stripped = content.strip()
    if PAGE_REF_RE.fullmatch(stripped) or SEE_REF_RE.search(stripped):
        return "navigation"
    low = content.lower()
    for label, keywords in rules.keywords:
        if any(k in low for k in keywords):
            return label
    return "other"


def parse_node_id(node_id: str) -> tuple[str, int]:
    """Split ``"PAGEKEY/index"`` into its parts."""
    page_key, _, idx = node_id.rpartition("/")
    if not page_key or not idx.isdigit():
        raise ValidationError(f"node_id {node_id!r}: expected 'PAGEKEY/index'")
    return page_key, int(idx)


@dataclass(frozen=True)
class NodeBlock:
    """One text block of the flowchart, identified as PAGEKEY/index.

    ``bbox`` is the union of the member fragment boxes; it is None for
    nodes restored from a serialized model that carried no geometry.
    """

    node_id: str
    page_key: str
    content: str
    label: str = "other"
    bbox: tuple[float, float, float, float] | None = None

    @property
    def index(self) -> int:
        return parse_node_id(self.node_id)[1]


@dataclass(frozen=True)
class DirectedEdgePath:
    """An oriented polyline; the head (arrow tip) is the last point."""

    polyline: tuple[Point, ...]

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise ValidationError("polyline: needs at least 2 points")
        for a, b in zip(self.polyline, self.polyline[1:]):
            if a == b:
                raise ValidationError("polyline: consecutive points coincide")

    @property
    def tail(self) -> Point:
        return self.polyline[0]

    @property
    def head(self) -> Point:
        return self.polyline[-1]


@dataclass(frozen=True)
class Connection:
    """A directed node-to-node relation resolved from one edge path."""

    source: str
    target: str

    def __post_init__(self):
        if self.source == self.target:
            raise ValidationError(f"connection: self-loop on {self.source}")


@dataclass(frozen=True)
class BuildWarning:
    """Diagnostics record for geometry the builder could not resolve."""

    page_key: str
    kind: str  # unattached-edge | orphan-arrowhead | self-loop | headless-segment
    coords: tuple[float, ...]
    detail: str = ""

    def to_obj(self) -> dict:
        return {
            "page_key": self.page_key,
            "kind": self.kind,
            "coords": list(self.coords),
            "detail": self.detail,
        }


@dataclass(frozen=True)
class BuilderParams:
    """Tolerances for node formation and edge resolution.

    ``gap_y``/``gap_x`` default to 0.8 x median font size and 2 x median
    character width of the page when left unset.
    """

    gap_y: float | None = None
    gap_x: float | None = None
    join_tol: float = 2.0
    attach_tol: float = 6.0
    angle_tol: float = 5.0
    label_rules: LabelRules = DEFAULT_LABEL_RULES


# ---------------------------------------------------------------------------
# Node formation
# ---------------------------------------------------------------------------


def _bbox_gap(a, b, axis: int) -> float:
    """Gap between two boxes along an axis; negative when they overlap."""
    a0, a1 = a[axis], a[axis + 2]
    b0, b1 = b[axis], b[axis + 2]
    return max(a0, b0) - min(a1, b1)


def _auto_gaps(fragments: list[TextFragment]) -> tuple[float, float]:
    font = median(f.font_size for f in fragments)
    char_w = median((f.bbox[2] - f.bbox[0]) / max(len(f.text), 1) for f in fragments)
    return 0.8 * font, 2.0 * char_w


def form_nodes(
    page: PageIR,
    gap_y: float | None = None,
    gap_x: float | None = None,
    label_rules: LabelRules = DEFAULT_LABEL_RULES,
) -> list[NodeBlock]:
    """Cluster fragments into nodes and id them in reading order.

    Two fragments join the same node when their boxes are closer than
    ``gap_y`` vertically while overlapping horizontally, or closer than
    ``gap_x`` horizontally while overlapping vertically. Indices run
    top-to-bottom then left-to-right by block top-left corner.
    """
    frags = page.fragments
    if not frags:
        return []
    if gap_y is None or gap_x is None:
        auto_y, auto_x = _auto_gaps(frags)
        gap_y = auto_y if gap_y is None else gap_y
        gap_x = auto_x if gap_x is None else gap_x

    parent = list(range(len(frags)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(frags)):
        for j in range(i + 1, len(frags)):
            a, b = frags[i].bbox, frags[j].bbox
            y_gap = _bbox_gap(a, b, axis=1)
            x_gap = _bbox_gap(a, b, axis=0)
            if (y_gap < gap_y and x_gap < 0) or (x_gap < gap_x and y_gap < 0):
                parent[find(i)] = find(j)

    clusters: dict[int, list[int]] = {}
    for i in range(len(frags)):
        clusters.setdefault(find(i), []).append(i)

    blocks = []
    for members in clusters.values():
        ordered = sorted(members, key=lambda i: (frags[i].bbox[1], frags[i].bbox[0]))
        texts = [" ".join(frags[i].text.split()) for i in ordered]
        bbox = (
            min(frags[i].bbox[0] for i in members),
            min(frags[i].bbox[1] for i in members),
            max(frags[i].bbox[2] for i in members),
            max(frags[i].bbox[3] for i in members),
        )
        blocks.append((bbox, " ".join(texts)))

    blocks.sort(key=lambda item: (item[0][1], item[0][0]))
    return [
        NodeBlock(
            node_id=f"{page.page_key}/{i}",
            page_key=page.page_key,
            content=content,
            label=label_for_content(content, label_rules),
            bbox=bbox,
        )
        for i, (bbox, content) in enumerate(blocks, start=1)
    ]


# ---------------------------------------------------------------------------
# Edge chaining
# ---------------------------------------------------------------------------


def _dist(p: Point, q: Point) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _cluster_points(points: list[Point], tol: float) -> tuple[list[Point], list[int]]:
    """Group near-coincident points; returns (centroids, point -> group)."""
    parent = list(range(len(points)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if _dist(points[i], points[j]) <= tol:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(len(points)):
        groups.setdefault(find(i), []).append(i)

    centroids: list[Point] = []
    assign = [0] * len(points)
    for gid, members in enumerate(sorted(groups.values(), key=min)):
        cx = sum(points[i][0] for i in members) / len(members)
        cy = sum(points[i][1] for i in members) / len(members)
        centroids.append((cx, cy))
        for i in members:
            assign[i] = gid
    return centroids, assign


def _point_segment_param(p: Point, a: Point, b: Point) -> tuple[float, float]:
    """(distance, projection parameter in [0, 1]) of p onto segment ab."""
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return _dist(p, a), 0.0
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    proj = (ax + t * dx, ay + t * dy)
    return _dist(p, proj), t


@dataclass
class _Polyline:
    vertices: list[int]  # vertex ids, in walk order
    heads: set[int] = field(default_factory=set)  # claimed position indices (0 or last)


class _SegmentWeb:
    """Working structure: clustered vertices, split sub-segments, polylines."""

    def __init__(self, segments: list[LineSegment], join_tol: float, angle_tol: float):
        self.join_tol = join_tol
        endpoints: list[Point] = []
        for seg in segments:
            endpoints.append(seg.p0)
            endpoints.append(seg.p1)
        self.vpos, assign = _cluster_points(endpoints, join_tol)
        raw = []
        for k in range(len(segments)):
            u, v = assign[2 * k], assign[2 * k + 1]
            if u != v:
                raw.append((u, v, k))
        self.subsegs = self._split_at_junctions(raw)
        self.degree: dict[int, int] = {}
        for u, v, _src in self.subsegs:
            self.degree[u] = self.degree.get(u, 0) + 1
            self.degree[v] = self.degree.get(v, 0) + 1
        self.polylines = self._chain(angle_tol)

    def _split_at_junctions(self, raw):
        """Split sub-segments where another vertex touches their interior."""
        out = []
        for u, v, src in raw:
            a, b = self.vpos[u], self.vpos[v]
            cuts = []
            for w in range(len(self.vpos)):
                if w in (u, v):
                    continue
                d, t = _point_segment_param(self.vpos[w], a, b)
                if d <= self.join_tol and 0.0 < t < 1.0:
                    cuts.append((t, w))
            chain = [u] + [w for _t, w in sorted(cuts)] + [v]
            for s, e in zip(chain, chain[1:]):
                if s != e:
                    out.append((s, e, src))
        return out

    def _chain(self, angle_tol: float) -> list[_Polyline]:
        """Pair sub-segment ends at shared vertices into maximal polylines.

        At degree-2 vertices the two ends always pair; at junctions only
        collinear continuations (within ``angle_tol`` of straight-through)
        pair, which keeps crossings from being read as branch points.
        """
        incident: dict[int, list[tuple[int, int]]] = {}  # vertex -> [(subseg, end)]
        for idx, (u, v, _src) in enumerate(self.subsegs):
            incident.setdefault(u, []).append((idx, 0))
            incident.setdefault(v, []).append((idx, 1))

        def away_dir(subseg_idx: int, end: int) -> tuple[float, float]:
            u, v, _src = self.subsegs[subseg_idx]
            a = self.vpos[u if end == 0 else v]
            b = self.vpos[v if end == 0 else u]
            d = (b[0] - a[0], b[1] - a[1])
            n = math.hypot(*d)
            return (d[0] / n, d[1] / n)

        partner: dict[tuple[int, int], tuple[int, int]] = {}
        for vid in sorted(incident):
            ends = incident[vid]
            if len(ends) == 2:
                e0, e1 = ends
                partner[e0] = e1
                partner[e1] = e0
                continue
            if len(ends) < 3:
                continue
            candidates = []
            for i in range(len(ends)):
                for j in range(i + 1, len(ends)):
                    di, dj = away_dir(*ends[i]), away_dir(*ends[j])
                    cos = -(di[0] * dj[0] + di[1] * dj[1])  # 1.0 = straight through
                    deviation = math.degrees(math.acos(max(-1.0, min(1.0, cos))))
                    if deviation <= angle_tol:
                        candidates.append((round(deviation, 9), i, j))
            used: set[int] = set()
            for _dev, i, j in sorted(candidates):
                if i in used or j in used:
                    continue
                partner[ends[i]] = ends[j]
                partner[ends[j]] = ends[i]
                used.update((i, j))

        polylines: list[_Polyline] = []
        visited: set[int] = set()
        for start in range(len(self.subsegs)):
            if start in visited:
                continue
            # walk to one extremity of the chain (or around a cycle)
            cur, end = start, 0
            seen = {start}
            while (cur, end) in partner:
                nxt, nxt_end = partner[(cur, end)]
                if nxt in seen:
                    break  # cycle: break it here
                seen.add(nxt)
                cur, end = nxt, 1 - nxt_end
            # walk forward from the extremity collecting vertices
            verts = []
            u, v, _src = self.subsegs[cur]
            first, nxt_v = (u, v) if end == 0 else (v, u)
            verts.extend((first, nxt_v))
            visited.add(cur)
            far_end = 1 - end
            while (cur, far_end) in partner:
                nxt, nxt_end = partner[(cur, far_end)]
                if nxt in visited:
                    break
                u, v, _src = self.subsegs[nxt]
                verts.append(v if nxt_end == 0 else u)
                visited.add(nxt)
                cur, far_end = nxt, 1 - nxt_end
            polylines.append(_Polyline(vertices=verts))
        return polylines


def chain_edges(
    segments: list[LineSegment],
    arrowheads: list[ArrowHead],
    join_tol: float = 2.0,
    angle_tol: float = 5.0,
    page_key: str = "",
) -> tuple[list[DirectedEdgePath], list[BuildWarning]]:
    """Resolve raw strokes and arrowheads into directed edge paths.

    Every emitted path runs from a free line end (tail) to an arrowhead
    tip (head). Fan-outs fall out naturally: all arrow-tipped branches
    fed by one trunk share the trunk's tail. Segments from which no
    arrowhead can be reached are discarded and reported.
    """
    warnings: list[BuildWarning] = []
    if not segments:
        for head in arrowheads:
            warnings.append(
                BuildWarning(page_key, "orphan-arrowhead", head.tip, "no segments on page")
            )
        return [], warnings

    web = _SegmentWeb(segments, join_tol, angle_tol)

    # Arrowheads claim the nearest polyline end within join_tol.
    claimed: list[tuple[int, int]] = []  # (polyline idx, end position)
    for head in arrowheads:
        best = None
        for pidx, poly in enumerate(web.polylines):
            for pos in (0, len(poly.vertices) - 1):
                d = _dist(head.tip, web.vpos[poly.vertices[pos]])
                if d <= join_tol and (best is None or (d, pidx, pos) < best):
                    best = (d, pidx, pos)
        if best is None:
            warnings.append(
                BuildWarning(page_key, "orphan-arrowhead", head.tip, "no line end within tolerance")
            )
            continue
        _d, pidx, pos = best
        web.polylines[pidx].heads.add(pos)
        if (pidx, pos) not in claimed:
            claimed.append((pidx, pos))

    # Expanded walk graph over (polyline, position) nodes. Flow may pass
    # between two polylines at a shared vertex unless it would hop from
    # interior to interior (that is a crossing, not a junction).
    station: dict[tuple[int, int], int] = {}
    by_vertex: dict[int, list[tuple[int, int]]] = {}
    for pidx, poly in enumerate(web.polylines):
        for pos, vid in enumerate(poly.vertices):
            station[(pidx, pos)] = vid
            by_vertex.setdefault(vid, []).append((pidx, pos))

    def neighbors(node: tuple[int, int]) -> list[tuple[int, int]]:
        pidx, pos = node
        poly = web.polylines[pidx]
        out = []
        if pos > 0:
            out.append((pidx, pos - 1))
        if pos < len(poly.vertices) - 1:
            out.append((pidx, pos + 1))
        here_interior = 0 < pos < len(poly.vertices) - 1
        for other in by_vertex[poly.vertices[pos]]:
            opidx, opos = other
            if opidx == pidx:
                continue
            other_interior = 0 < opos < len(web.polylines[opidx].vertices) - 1
            if here_interior and other_interior:
                continue
            out.append(other)
        return sorted(out)

    def is_source(node: tuple[int, int]) -> bool:
        pidx, pos = node
        poly = web.polylines[pidx]
        if pos not in (0, len(poly.vertices) - 1) or pos in poly.heads:
            return False
        return web.degree.get(poly.vertices[pos], 0) == 1

    paths: list[DirectedEdgePath] = []
    touched: set[int] = set()
    for head_node in claimed:
        # BFS back from the head; every reachable source yields one path.
        prev: dict[tuple[int, int], tuple[int, int]] = {head_node: head_node}
        queue = [head_node]
        sources = []
        while queue:
            node = queue.pop(0)
            if is_source(node) and node != head_node:
                sources.append(node)
                continue  # a tail terminates the flow; do not walk past it
            for nb in neighbors(node):
                if nb not in prev:
                    prev[nb] = node
                    queue.append(nb)
        for src in sorted(sources):
            walk = [src]
            while walk[-1] != head_node:
                walk.append(prev[walk[-1]])
            points = []
            for node in walk:
                touched.add(node[0])
                pt = web.vpos[station[node]]
                if not points or points[-1] != pt:
                    points.append(pt)
            if len(points) >= 2:
                paths.append(DirectedEdgePath(tuple(points)))

    for pidx, poly in enumerate(web.polylines):
        if pidx not in touched:
            ends = (web.vpos[poly.vertices[0]], web.vpos[poly.vertices[-1]])
            warnings.append(
                BuildWarning(
                    page_key,
                    "headless-segment",
                    (*ends[0], *ends[1]),
                    "no arrowhead reachable; segment discarded",
                )
            )
    return paths, warnings


# ---------------------------------------------------------------------------
# Node attachment
# ---------------------------------------------------------------------------


def _boundary_distance(pt: Point, bbox: tuple[float, float, float, float]) -> float:
    x, y = pt
    x0, y0, x1, y1 = bbox
    dx = max(x0 - x, 0.0, x - x1)
    dy = max(y0 - y, 0.0, y - y1)
    if dx > 0.0 or dy > 0.0:
        return math.hypot(dx, dy)
    return min(x - x0, x1 - x, y - y0, y1 - y)


def _nearest_node(pt: Point, nodes: list[NodeBlock], attach_tol: float) -> NodeBlock | None:
    best = None
    for node in nodes:
        d = _boundary_distance(pt, node.bbox)
        if d <= attach_tol and (best is None or (d, node.index) < best[:2]):
            best = (d, node.index, node)
    return best[2] if best else None


def connect_nodes(
    nodes: list[NodeBlock],
    edges: list[DirectedEdgePath],
    attach_tol: float = 6.0,
    page_key: str = "",
) -> tuple[list[Connection], list[BuildWarning]]:
    """Attach edge tails and heads to the nearest node boxes."""
    warnings: list[BuildWarning] = []
    connections: list[Connection] = []
    seen: set[tuple[str, str]] = set()
    for edge in edges:
        src = _nearest_node(edge.tail, nodes, attach_tol)
        dst = _nearest_node(edge.head, nodes, attach_tol)
        if src is None or dst is None:
            which = "tail" if src is None else "head"
            pt = edge.tail if src is None else edge.head
            warnings.append(
                BuildWarning(page_key, "unattached-edge", pt, f"no node within tolerance at {which}")
            )
            continue
        if src.node_id == dst.node_id:
            warnings.append(
                BuildWarning(page_key, "self-loop", edge.head, f"edge loops on {src.node_id}")
            )
            continue
        key = (src.node_id, dst.node_id)
        if key not in seen:
            seen.add(key)
            connections.append(Connection(source=src.node_id, target=dst.node_id))
    return connections, warnings


# ---------------------------------------------------------------------------
# Page pipeline and metrics
# ---------------------------------------------------------------------------


@dataclass
class PageGraph:
    """Per-page build result."""

    page_key: str
    nodes: list[NodeBlock]
    connections: list[Connection]
    edge_paths: list[DirectedEdgePath]
    warnings: list[BuildWarning]


def build_page_graph(page: PageIR, params: BuilderParams = BuilderParams()) -> PageGraph:
    """Run node formation, edge chaining, and attachment for one page."""
    nodes = form_nodes(page, params.gap_y, params.gap_x, params.label_rules)
    paths, chain_warnings = chain_edges(
        page.segments, page.arrowheads, params.join_tol, params.angle_tol, page.page_key
    )
    connections, attach_warnings = connect_nodes(nodes, paths, params.attach_tol, page.page_key)
    return PageGraph(
        page_key=page.page_key,
        nodes=nodes,
        connections=connections,
        edge_paths=paths,
        warnings=chain_warnings + attach_warnings,
    )


def extraction_accuracy(total_nodes: int, formation_errors: int) -> float:
    """Percent of correctly formed nodes, rounded half-up to one decimal."""
    if total_nodes <= 0:
        raise ValidationError("total_nodes must be positive")
    if not 0 <= formation_errors <= total_nodes:
        raise ValidationError("formation_errors must be within [0, total_nodes]")
    tenths = (2000 * (total_nodes - formation_errors) + total_nodes) // (2 * total_nodes)
    return tenths / 10.0
