"""Location graph from geodesic proximity and street-segment membership.

Edges join locations closer than ``delta`` metres or snapped onto the same
street segment; edge weight is the inverse geodesic distance. ``normalize``
turns the graph into the symmetric propagation operator used by the GCN
layers, ``D^-1/2 (A + I) D^-1/2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InputError
from .geo import GeoPoint, local_projection, pairwise_distances, points_to_array

GRAPH_FORMAT = "aqcomplete-graph/1"
SNAP_TOLERANCE_M = 20.0
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class Segment:
    id: int
    points: tuple[GeoPoint, ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise InputError(f"segment {self.id} needs at least 2 points")


@dataclass(frozen=True)
class StreetNetwork:
    segments: tuple[Segment, ...]

    @classmethod
    def from_json(cls, doc) -> "StreetNetwork":
        try:
            segs = tuple(
                Segment(int(s["id"]), tuple(GeoPoint(float(a), float(b)) for a, b in s["points"]))
                for s in doc["segments"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed street network document: {exc}") from exc
        ids = [s.id for s in segs]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate segment ids in street network")
        return cls(segs)

    def to_json(self) -> dict:
        return {"segments": [{"id": s.id, "points": [[p.lat, p.lon] for p in s.points]} for s in self.segments]}

    @classmethod
    def load(cls, path) -> "StreetNetwork":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read street network {path}: {exc}") from exc
        return cls.from_json(doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class StreetGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...]
    node_segment: tuple[int | None, ...] | None = None

    def __post_init__(self):
        seen = set()
        for i, j, w in self.edges:
            if not (0 <= i < j < self.n):
                raise InputError(f"edge ({i}, {j}) must satisfy 0 <= i < j < n")
            if not (np.isfinite(w) and w > 0):
                raise InputError(f"edge ({i}, {j}) has invalid weight {w}")
            if (i, j) in seen:
                raise InputError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    def adjacency(self) -> sp.csr_matrix:
        if not self.edges:
            return sp.csr_matrix((self.n, self.n))
        e = np.array(self.edges, dtype=np.float64)
        i, j, w = e[:, 0].astype(np.int64), e[:, 1].astype(np.int64), e[:, 2]
        a = sp.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        return a.tocsr()

    def degrees(self) -> np.ndarray:
        """Unweighted neighbour counts per node."""
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j, _ in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def stats(self) -> dict:
        deg = self.degrees()
        hist = np.bincount(deg) if self.n else np.zeros(1, dtype=np.int64)
        return {
            "nodes": self.n,
            "edge_count": len(self.edges),
            "isolated_nodes": int((deg == 0).sum()),
            "mean_degree": float(deg.mean()) if self.n else 0.0,
            "degree_histogram": {str(k): int(c) for k, c in enumerate(hist) if c},
        }

    def to_json(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "n": self.n,
            "edges": [[i, j, w] for i, j, w in self.edges],
            "node_segment": None if self.node_segment is None else list(self.node_segment),
            "stats": self.stats(),
        }

    @classmethod
    def from_json(cls, doc) -> "StreetGraph":
        try:
            if doc.get("format") != GRAPH_FORMAT:
                raise ValueError(f"unknown format tag {doc.get('format')!r}")
            edges = tuple((int(i), int(j), float(w)) for i, j, w in doc["edges"])
            seg = doc.get("node_segment")
            seg = None if seg is None else tuple(None if s is None else int(s) for s in seg)
            return cls(int(doc["n"]), edges, seg)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InputError(f"malformed graph document: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StreetGraph":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read graph {path}: {exc}") from exc
        return cls.from_json(doc)


def snap_to_segments(coords, network: StreetNetwork, tolerance: float = SNAP_TOLERANCE_M) -> list[int | None]:
    """Id of the nearest segment within ``tolerance`` metres of each point.

    Distances use a local equirectangular projection, which is accurate far
    beyond the metre-scale tolerances involved.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if len(coords) == 0 or not network.segments:
        return [None] * len(coords)
    origin = (float(coords[:, 0].mean()), float(coords[:, 1].mean()))
    xy = local_projection(coords, origin)
    starts, ends, owner = [], [], []
    for s in network.segments:
        pts = local_projection(points_to_array(s.points), origin)
        starts.append(pts[:-1])
        ends.append(pts[1:])
        owner.extend([s.id] * (len(pts) - 1))
    a = np.vstack(starts)
    b = np.vstack(ends)
    owner = np.asarray(owner)
    ab = b - a
    ab2 = np.maximum((ab ** 2).sum(axis=1), 1e-12)
    out: list[int | None] = []
    for p in xy:
        t = np.clip(((p - a) * ab).sum(axis=1) / ab2, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.hypot(*(p - proj).T)
        k = int(d.argmin())
        out.append(int(owner[k]) if d[k] <= tolerance else None)
    return out


def build_graph(locations, network: StreetNetwork | None = None, delta: float = 200.0,
                snap_tolerance: float = SNAP_TOLERANCE_M) -> StreetGraph:
    """Weighted location graph; weight = 1 / max(distance, 1 m)."""
    if not locations:
        raise InputError("graph needs at least one location")
    if not delta > 0:
        raise InputError(f"delta must be positive, got {delta}")
    coords = points_to_array(locations)
    n = len(coords)
    dist = pairwise_distances(coords)
    adj = dist < delta
    node_segment = None
    if network is not None:
        node_segment = snap_to_segments(coords, network, snap_tolerance)
        assigned = np.array([s is not None for s in node_segment])
        # the placeholder for unsnapped nodes may collide with a real id, hence the mask
        seg = np.array([0 if s is None else s for s in node_segment])
        adj |= (seg[:, None] == seg[None, :]) & assigned[:, None] & assigned[None, :]
    iu, ju = np.nonzero(np.triu(adj, k=1))
    w = 1.0 / np.maximum(dist[iu, ju], MIN_DISTANCE_M)
    edges = tuple(zip(iu.tolist(), ju.tolist(), w.tolist()))
    return StreetGraph(n, edges, None if node_segment is None else tuple(node_segment))


@dataclass(frozen=True, eq=False)
class PropagationOperator:
    """Symmetric normalized operator ``D^-1/2 (A + I) D^-1/2`` (sparse CSR)."""

    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other

    @classmethod
    def identity(cls, n: int) -> "PropagationOperator":
        return cls(sp.identity(n, format="csr", dtype=np.float64))

    @classmethod
    def from_dense(cls, p) -> "PropagationOperator":
        return cls(sp.csr_matrix(np.asarray(p, dtype=np.float64)))


def normalize(graph: StreetGraph) -> PropagationOperator:
    a_tilde = (graph.adjacency() + sp.identity(graph.n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    p = (d_inv_sqrt @ a_tilde @ d_inv_sqrt).tocsr()
    p.sort_indices()
    return PropagationOperator(p)
