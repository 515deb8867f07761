"""Road-network graph: parsing, bounding-box filtering, Euclidean queries.

Graph file format (text, line-oriented):
    nodes <N> edges <M>
    v <id> <lon> <lat>     (N lines)
    e <id_u> <id_v>        (M lines)
Tokens are whitespace-separated; ``#`` starts a comment line.

Coordinates are treated as planar degrees: the regions of interest are a
few degrees across and edge weights only need a consistent metric, so no
great-circle correction is applied.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


class GraphFormatError(ValueError):
    """Malformed graph file; carries the offending 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class BoundingBox:
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError("degenerate bounding box")

    def contains(self, lon: float, lat: float) -> bool:
        # Closed box: boundary nodes are kept.
        return (
            self.lon_min <= lon <= self.lon_max
            and self.lat_min <= lat <= self.lat_max
        )


class Graph:
    """Immutable undirected graph with node coordinates.

    Node ids are dense in [0, n).  ``original_ids[i]`` maps node i back to
    the id it carried in the source file.  Instances are safe to share
    read-only across threads.
    """

    def __init__(self, lons, lats, edges, original_ids=None):
        self.lons = np.asarray(lons, dtype=np.float64)
        self.lats = np.asarray(lats, dtype=np.float64)
        n = len(self.lons)
        if len(self.lats) != n:
            raise ValueError("lon/lat length mismatch")
        seen = set()
        cleaned = []
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) references unknown node")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add(key)
            cleaned.append(key)
        cleaned.sort()
        self.edges = np.array(cleaned, dtype=np.int64).reshape(len(cleaned), 2)
        if original_ids is None:
            original_ids = list(range(n))
        self.original_ids = list(original_ids)
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in cleaned:
            adj[u].append(v)
            adj[v].append(u)
        self.adjacency = [np.array(sorted(a), dtype=np.int64) for a in adj]

    @property
    def num_nodes(self) -> int:
        return len(self.lons)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> np.ndarray:
        return self.adjacency[u]

    def mean_degree(self) -> float:
        if self.num_nodes == 0:
            return 0.0
        return 2.0 * self.num_edges / self.num_nodes

    def euclid(self, a: int, b: int) -> float:
        """Planar Euclidean distance between two nodes, in degrees."""
        return math.hypot(
            self.lons[a] - self.lons[b], self.lats[a] - self.lats[b]
        )

    def path_cost(self, nodes) -> float:
        return sum(self.euclid(nodes[k], nodes[k + 1]) for k in range(len(nodes) - 1))

    def digest(self) -> str:
        """SHA-256 of the canonical serialization (id map excluded)."""
        return hashlib.sha256(serialize_graph(self).encode()).hexdigest()


def parse_graph(text: str) -> Graph:
    """Parse the line-oriented graph format, re-indexing ids densely."""
    header = None
    raw_nodes: dict[int, tuple[float, float]] = {}
    node_order: list[int] = []
    raw_edges: list[tuple[int, int, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if header is None:
            if len(parts) != 4 or parts[0] != "nodes" or parts[2] != "edges":
                raise GraphFormatError(lineno, "expected header 'nodes <N> edges <M>'")
            try:
                header = (int(parts[1]), int(parts[3]))
            except ValueError:
                raise GraphFormatError(lineno, "non-integer counts in header") from None
            continue
        kind = parts[0]
        if kind == "v":
            if len(parts) != 4:
                raise GraphFormatError(lineno, "expected 'v <id> <lon> <lat>'")
            try:
                nid, lon, lat = int(parts[1]), float(parts[2]), float(parts[3])
            except ValueError:
                raise GraphFormatError(lineno, "bad node fields") from None
            if nid in raw_nodes:
                raise GraphFormatError(lineno, f"duplicate node id {nid}")
            raw_nodes[nid] = (lon, lat)
            node_order.append(nid)
        elif kind == "e":
            if len(parts) != 3:
                raise GraphFormatError(lineno, "expected 'e <id_u> <id_v>'")
            try:
                raw_edges.append((int(parts[1]), int(parts[2]), lineno))
            except ValueError:
                raise GraphFormatError(lineno, "bad edge fields") from None
        else:
            raise GraphFormatError(lineno, f"unknown record kind {kind!r}")
    if header is None:
        raise GraphFormatError(1, "empty file")
    n_decl, m_decl = header
    if len(node_order) != n_decl:
        raise GraphFormatError(1, f"header declares {n_decl} nodes, found {len(node_order)}")
    if len(raw_edges) != m_decl:
        raise GraphFormatError(1, f"header declares {m_decl} edges, found {len(raw_edges)}")

    index = {nid: k for k, nid in enumerate(node_order)}
    lons = [raw_nodes[nid][0] for nid in node_order]
    lats = [raw_nodes[nid][1] for nid in node_order]
    edges = []
    for u_raw, v_raw, lineno in raw_edges:
        if u_raw not in index or v_raw not in index:
            raise GraphFormatError(lineno, f"edge ({u_raw},{v_raw}) references unknown node")
        if u_raw == v_raw:
            raise GraphFormatError(lineno, f"self-loop at node {u_raw}")
        edges.append((index[u_raw], index[v_raw]))
    try:
        return Graph(lons, lats, edges, original_ids=node_order)
    except ValueError as exc:
        raise GraphFormatError(1, str(exc)) from None


def serialize_graph(g: Graph) -> str:
    """Canonical text form; parse(serialize(g)) reproduces g exactly."""
    lines = [f"nodes {g.num_nodes} edges {g.num_edges}"]
    for i in range(g.num_nodes):
        lines.append(f"v {i} {float(g.lons[i])!r} {float(g.lats[i])!r}")
    for u, v in g.edges:
        lines.append(f"e {u} {v}")
    return "\n".join(lines) + "\n"


def filter_bbox(g: Graph, box: BoundingBox) -> Graph:
    """Subgraph induced by nodes inside the closed box, densely re-indexed."""
    keep = [
        i for i in range(g.num_nodes) if box.contains(g.lons[i], g.lats[i])
    ]
    if not keep:
        raise ValueError("bounding box selects no nodes (wrong box or units?)")
    remap = {old: new for new, old in enumerate(keep)}
    edges = [
        (remap[u], remap[v])
        for u, v in g.edges
        if u in remap and v in remap
    ]
    return Graph(
        [g.lons[i] for i in keep],
        [g.lats[i] for i in keep],
        edges,
        original_ids=[g.original_ids[i] for i in keep],
    )
