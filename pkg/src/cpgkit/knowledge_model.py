"""The guideline knowledge model: a directed graph over flowchart nodes.

Per-page graphs are unioned into one model; navigation nodes ("See NSCL-7"
or a bare page-key token) link to the first node of the referenced page.
The model serializes to JSON-LD, supports keyword-driven treatment-node
detection with allow/block overrides, and answers shortest-path queries
from the start node.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass

from .errors import ParseError, ValidationError
from .graph_builder import (
    DEFAULT_TREATMENT_KEYWORDS,
    BuildWarning,
    Connection,
    NodeBlock,
    parse_node_id,
)

JSONLD_VOCAB = "https://cpgkit.dev/guideline#"
JSONLD_CONTEXT = {
    "guideline": JSONLD_VOCAB,
    "guidelineId": "guideline:guidelineId",
    "version": "guideline:version",
    "startNode": {"@id": "guideline:startNode", "@type": "@id"},
    "content": "guideline:content",
    "label": "guideline:label",
    "pageKey": "guideline:pageKey",
    "bbox": {"@id": "guideline:bbox", "@container": "@list"},
    "nextStep": {"@id": "guideline:nextStep", "@type": "@id", "@container": "@set"},
}
_ID_PREFIX = "guideline:"


@dataclass(frozen=True)
class NavigationRules:
    """Patterns that recognize cross-page references inside node text."""

    see_pattern: str = r"\bsee\s+([A-Za-z][A-Za-z0-9]{0,11}-\d+)"
    bare_pattern: str = r"[A-Za-z][A-Za-z0-9]{0,11}-\d+"


DEFAULT_NAVIGATION_RULES = NavigationRules()


@dataclass(frozen=True)
class TreatmentRuleSet:
    """Keyword detection plus manual-review overrides."""

    keywords: tuple[str, ...] = DEFAULT_TREATMENT_KEYWORDS
    allowlist: frozenset[str] = frozenset()
    blocklist: frozenset[str] = frozenset()

    def __post_init__(self):
        overlap = self.allowlist & self.blocklist
        if overlap:
            raise ValidationError(f"allowlist and blocklist overlap: {sorted(overlap)}")


@dataclass(frozen=True)
class PathSet:
    """All shortest paths from the start node to one target."""

    target: str
    paths: tuple[tuple[str, ...], ...]
    unreachable: bool = False


@dataclass
class KnowledgeModel:
    """Directed guideline graph with page provenance."""

    guideline_id: str
    version: str
    nodes: dict[str, NodeBlock]
    edges: set[Connection]
    start_node: str

    def validate(self) -> None:
        for conn in self.edges:
            for nid in (conn.source, conn.target):
                if nid not in self.nodes:
                    raise ValidationError(f"edge endpoint {nid!r} not in model")
        if self.start_node not in self.nodes:
            raise ValidationError(f"start_node {self.start_node!r} not in model")

    def successors(self, node_id: str) -> list[str]:
        return sorted(c.target for c in self.edges if c.source == node_id)

    def successor_map(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for conn in self.edges:
            out[conn.source].append(conn.target)
        for targets in out.values():
            targets.sort()
        return out

    def predecessor_map(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for conn in self.edges:
            out[conn.target].append(conn.source)
        for sources in out.values():
            sources.sort()
        return out

    def nodes_by_page(self) -> dict[str, list[NodeBlock]]:
        pages: dict[str, list[NodeBlock]] = {}
        for node in self.nodes.values():
            pages.setdefault(node.page_key, []).append(node)
        for blocks in pages.values():
            blocks.sort(key=lambda n: n.index)
        return pages


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _page_refs(content: str, rules: NavigationRules) -> list[str]:
    refs = []
    stripped = content.strip()
    if re.fullmatch(rules.bare_pattern, stripped):
        refs.append(stripped)
    for m in re.finditer(rules.see_pattern, content, re.IGNORECASE):
        refs.append(m.group(1))
    seen: set[str] = set()
    unique = []
    for r in refs:
        key = r.upper()
        if key not in seen:
            seen.add(key)
            unique.append(r)
    return unique


def assemble_model(
    pages: list[tuple[list[NodeBlock], list[Connection]]],
    guideline_id: str,
    version: str,
    links: NavigationRules = DEFAULT_NAVIGATION_RULES,
) -> tuple[KnowledgeModel, list[BuildWarning]]:
    """Union per-page graphs and wire navigation references across pages.

    The start node is the first node of the first page. A node whose
    content references another page's key gains an edge to that page's
    first node; dangling references produce warnings, not edges.
    """
    nodes: dict[str, NodeBlock] = {}
    edges: set[Connection] = set()
    warnings: list[BuildWarning] = []
    for page_nodes, page_conns in pages:
        for node in page_nodes:
            if node.node_id in nodes:
                raise ValidationError(f"duplicate node_id across pages: {node.node_id}")
            nodes[node.node_id] = node
        edges.update(page_conns)
    if not nodes:
        raise ValidationError("cannot assemble a model with no nodes")

    first_page_nodes, _ = pages[0]
    start_node = min(first_page_nodes, key=lambda n: n.index).node_id

    by_upper_key = {key.upper(): key for key in {n.page_key for n in nodes.values()}}
    for node in sorted(nodes.values(), key=lambda n: n.node_id):
        for ref in _page_refs(node.content, links):
            page_key = by_upper_key.get(ref.upper())
            if page_key == node.page_key:
                continue  # reference to its own page carries no new step
            target = f"{page_key}/1" if page_key else None
            if target is None or target not in nodes:
                warnings.append(
                    BuildWarning(
                        node.page_key,
                        "dangling-page-ref",
                        (),
                        f"{node.node_id} references unknown page {ref!r}",
                    )
                )
                continue
            edges.add(Connection(source=node.node_id, target=target))

    model = KnowledgeModel(
        guideline_id=guideline_id,
        version=version,
        nodes=nodes,
        edges=edges,
        start_node=start_node,
    )
    model.validate()
    return model, warnings


# ---------------------------------------------------------------------------
# JSON-LD serialization
# ---------------------------------------------------------------------------


def _node_sort_key(node: NodeBlock) -> tuple[str, int]:
    return (node.page_key, node.index)


def to_jsonld(model: KnowledgeModel) -> bytes:
    """Deterministic JSON-LD bytes for a model."""
    model.validate()
    successors = model.successor_map()
    graph = []
    for node in sorted(model.nodes.values(), key=_node_sort_key):
        obj = {
            "@id": _ID_PREFIX + node.node_id,
            "content": node.content,
            "label": node.label,
            "pageKey": node.page_key,
            "nextStep": [_ID_PREFIX + t for t in successors[node.node_id]],
        }
        if node.bbox is not None:
            obj["bbox"] = [round(v, 2) for v in node.bbox]
        graph.append(obj)
    doc = {
        "@context": JSONLD_CONTEXT,
        "guidelineId": model.guideline_id,
        "version": model.version,
        "startNode": _ID_PREFIX + model.start_node,
        "@graph": graph,
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _strip_id(value, where: str) -> str:
    if not isinstance(value, str) or not value.startswith(_ID_PREFIX):
        raise ParseError(f"{where}: expected an id prefixed {_ID_PREFIX!r}")
    return value[len(_ID_PREFIX):]


def from_jsonld(data: bytes | str) -> KnowledgeModel:
    """Parse model bytes; rejects documents with an unknown @context."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model document: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ParseError("model document: top-level value must be an object")
    if doc.get("@context") != JSONLD_CONTEXT:
        raise ParseError("model document: unknown or missing @context")
    for key in ("guidelineId", "version", "startNode", "@graph"):
        if key not in doc:
            raise ParseError(f"model document: missing {key}")

    nodes: dict[str, NodeBlock] = {}
    edges: set[Connection] = set()
    for i, obj in enumerate(doc["@graph"]):
        where = f"@graph[{i}]"
        if not isinstance(obj, dict):
            raise ParseError(f"{where}: expected an object")
        node_id = _strip_id(obj.get("@id"), f"{where}.@id")
        page_key, _idx = parse_node_id(node_id)
        for key in ("content", "label", "pageKey"):
            if not isinstance(obj.get(key), str):
                raise ParseError(f"{where}.{key}: missing or not a string")
        bbox = obj.get("bbox")
        if bbox is not None:
            if not (isinstance(bbox, list) and len(bbox) == 4):
                raise ParseError(f"{where}.bbox: expected [x0, y0, x1, y1]")
            bbox = tuple(float(v) for v in bbox)
        if node_id in nodes:
            raise ParseError(f"{where}.@id: duplicate node {node_id}")
        nodes[node_id] = NodeBlock(
            node_id=node_id,
            page_key=obj["pageKey"],
            content=obj["content"],
            label=obj["label"],
            bbox=bbox,
        )
        for step in obj.get("nextStep", []):
            edges.add(Connection(node_id, _strip_id(step, f"{where}.nextStep")))

    model = KnowledgeModel(
        guideline_id=doc["guidelineId"],
        version=doc["version"],
        nodes=nodes,
        edges=edges,
        start_node=_strip_id(doc["startNode"], "startNode"),
    )
    try:
        model.validate()
    except ValidationError as exc:
        raise ParseError(f"model document: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def detect_treatment_nodes(model: KnowledgeModel, rules: TreatmentRuleSet) -> list[str]:
    """Nodes labeled or keyword-matched as treatments, after overrides."""
    hits = {
        nid
        for nid, node in model.nodes.items()
        if node.label == "treatment"
        or any(k in node.content.lower() for k in rules.keywords)
    }
    hits -= rules.blocklist
    hits |= rules.allowlist & model.nodes.keys()
    return sorted(hits)


def shortest_paths(model: KnowledgeModel, target: str, cap: int = 8) -> PathSet:
    """All distinct shortest paths start -> target, in lexicographic order.

    At most ``cap`` paths are returned; the lexicographically smallest
    node-id sequences are kept.
    """
    if target not in model.nodes:
        raise ValidationError(f"target {target!r} not in model")
    if cap < 1:
        raise ValidationError("cap must be >= 1")
    start = model.start_node
    succ = model.successor_map()

    dist = {start: 0}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in succ[cur]:
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    if target not in dist:
        return PathSet(target=target, paths=(), unreachable=True)

    # Distance from each node to the target, over reversed edges, so the
    # forward enumeration only walks nodes that lie on a shortest path.
    pred = model.predecessor_map()
    back = {target: 0}
    queue = deque([target])
    while queue:
        cur = queue.popleft()
        for prv in pred[cur]:
            if prv not in back:
                back[prv] = back[cur] + 1
                queue.append(prv)

    total = dist[target]
    paths: list[tuple[str, ...]] = []

    def walk(node: str, trail: list[str]) -> bool:
        if len(paths) >= cap:
            return False
        if node == target:
            paths.append(tuple(trail))
            return len(paths) < cap
        for nxt in succ[node]:  # sorted: emits paths in lexicographic order
            if dist.get(nxt) == dist[node] + 1 and back.get(nxt, -1) + dist[nxt] == total:
                if not walk(nxt, trail + [nxt]):
                    return False
        return True

    walk(start, [start])
    return PathSet(target=target, paths=tuple(paths))
