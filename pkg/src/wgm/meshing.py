"""Second-order meshes of the medial half-plane.

The internal generator builds a constrained Delaunay-style triangulation per
subdomain (lattice seeding, boundary-edge enforcement with retry, Laplacian
smoothing) and then inserts edge midpoints to obtain 6-node triangles.
Structured 9-node quadrilateral meshes are available for single-rectangle
geometries; unstructured quads can be imported from MSH files.

Meshes are immutable once built and safe to share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree
from shapely.geometry import LineString, MultiLineString, Polygon
from shapely.ops import unary_union

from .elements import line3_shape, quad9_shape, quad_rule, tri6_shape, tri_rule
from .geometry import Geometry, Wall

__all__ = ["Mesh", "MeshError", "generate_mesh", "refine_uniform"]

_SMOOTH_ITERS = 3
_BOUNDARY_CLEARANCE = 0.72  # interior seeds keep this * h away from boundary seeds


class MeshError(RuntimeError):
    pass


@dataclass
class Mesh:
    """Quadratic mesh with subdomain ids and tagged boundary edges.

    nodes        : (N, 2) coordinates in meters
    tris         : (T, 6) int connectivity (corners, then midside 01, 12, 20)
    tri_domain   : (T,) subdomain index
    quads        : (Q, 9) int connectivity (gmsh quad9 order)
    quad_domain  : (Q,) subdomain index
    edges        : (B, 3) int boundary edges (end, end, midside)
    edge_wall    : tuple of Wall, one per boundary edge
    edge_normal  : (B, 2) outward unit normals
    domain_names : subdomain names, indexed by domain id
    """

    nodes: np.ndarray
    tris: np.ndarray
    tri_domain: np.ndarray
    quads: np.ndarray
    quad_domain: np.ndarray
    edges: np.ndarray
    edge_wall: tuple
    edge_normal: np.ndarray
    domain_names: tuple

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.tris) + len(self.quads)

    def element_count_by_domain(self):
        out = {}
        for name in self.domain_names:
            out[name] = 0
        for d in self.tri_domain:
            out[self.domain_names[d]] += 1
        for d in self.quad_domain:
            out[self.domain_names[d]] += 1
        return out

    def check(self):
        """Raise MeshError if basic mesh invariants are violated."""
        if np.any(self.nodes[:, 0] < 0):
            raise MeshError("node with negative radius")
        if len(self.tris):
            a = _tri_signed_areas(self.nodes, self.tris)
            if np.any(a <= 0):
                raise MeshError("non-positive triangle Jacobian")
        if len(self.quads):
            pts, _ = quad_rule(5)
            _, dN = quad9_shape(pts)
            coords = self.nodes[self.quads]
            J = np.einsum("eni,qnj->eqij", coords, dN)
            det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
            if np.any(det <= 0):
                raise MeshError("non-positive quad Jacobian")
        nrm = np.hypot(self.edge_normal[:, 0], self.edge_normal[:, 1])
        if len(nrm) and np.max(np.abs(nrm - 1.0)) > 1e-12:
            raise MeshError("boundary normal not unit length")
        on_axis = set(np.nonzero(self.nodes[:, 0] == 0.0)[0])
        axis_ok = set()
        for e, w in zip(self.edges, self.edge_wall):
            if w.kind == "axis":
                axis_ok.update(e)
        boundary_nodes = set(self.edges.ravel())
        bad = (on_axis & boundary_nodes) - axis_ok
        if bad:
            raise MeshError(f"r=0 boundary node(s) not on an axis edge: {sorted(bad)[:5]}")
        return self


def _tri_signed_areas(nodes, tris):
    p = nodes[tris[:, :3]]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


# ---------------------------------------------------------------------------
# size field


class _SizeField:
    def __init__(self, base: float, boxes):
        self.base = float(base)
        self.boxes = [tuple(map(float, b)) for b in boxes]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        h = np.full(len(pts), self.base)
        for r0, z0, r1, z1, s in self.boxes:
            inside = (
                (pts[:, 0] >= r0)
                & (pts[:, 0] <= r1)
                & (pts[:, 1] >= z0)
                & (pts[:, 1] <= z1)
            )
            h[inside] = np.minimum(h[inside], s)
        return h

    def at(self, p) -> float:
        return float(self(np.asarray(p, dtype=float)[None, :])[0])


# ---------------------------------------------------------------------------
# boundary discretization


def _noded_pieces(geo: Geometry):
    """Split all subdomain boundaries into unique straight pieces."""
    rings = []
    for s in geo.subdomains:
        rings.append(s.polygon.exterior)
        rings.extend(s.polygon.interiors)
    lw = unary_union(rings)
    if isinstance(lw, LineString):
        lw = MultiLineString([lw])
    pieces = []
    for line in lw.geoms:
        coords = np.asarray(line.coords)
        for a, b in zip(coords[:-1], coords[1:]):
            pieces.append((tuple(a), tuple(b)))
    return pieces


class _PieceSet:
    """Discretized boundary pieces with a shared, exact point registry."""

    def __init__(self, pieces, size_field, scale):
        self.size = size_field
        self.scale = scale
        self.revision = 0  # bumped whenever a chain is refined
        self.registry = {}  # coordinate tuple -> node id
        self.points = []  # list of coordinates
        self.chains = []  # per piece: list of node ids along the piece
        for a, b in pieces:
            self.chains.append(self._discretize(a, b))

    def _node(self, p):
        key = (float(p[0]), float(p[1]))
        idx = self.registry.get(key)
        if idx is None:
            idx = len(self.points)
            self.registry[key] = idx
            self.points.append(key)
        return idx

    def _discretize(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        length = float(np.hypot(*(b - a)))
        h = self.size.at(0.5 * (a + b))
        n = max(1, int(math.ceil(length / max(h, 1e-300) - 1e-9)))
        # sample local size along the piece so refinement boxes bite
        if n > 1:
            ts = (np.arange(n) + 0.5) / n
            hs = self.size(a[None, :] + ts[:, None] * (b - a)[None, :])
            n = max(1, int(math.ceil(length / max(float(hs.min()), 1e-300) - 1e-9)))
        ids = [self._node(a)]
        for k in range(1, n):
            t = k / n
            ids.append(self._node(a * (1.0 - t) + b * t))
        ids.append(self._node(b))
        return ids

    def split_segment(self, chain_idx, seg_idx):
        """Insert the midpoint of one sub-segment (boundary recovery retry)."""
        chain = self.chains[chain_idx]
        a = np.asarray(self.points[chain[seg_idx]])
        b = np.asarray(self.points[chain[seg_idx + 1]])
        mid = self._node(0.5 * (a + b))
        self.chains[chain_idx] = chain[: seg_idx + 1] + [mid] + chain[seg_idx + 1 :]
        self.revision += 1

    def segments(self):
        segs = []
        for ci, chain in enumerate(self.chains):
            for si in range(len(chain) - 1):
                segs.append((ci, si, chain[si], chain[si + 1]))
        return segs


# ---------------------------------------------------------------------------
# per-subdomain triangulation


def _hex_lattice(bounds, h, rng):
    r0, z0, r1, z1 = bounds
    dy = h * math.sqrt(3.0) / 2.0
    nx = int((r1 - r0) / h) + 2
    ny = int((z1 - z0) / dy) + 2
    if nx * ny > 4_000_000:
        raise MeshError("target element size implies an excessive mesh")
    xs = r0 + h * np.arange(nx)
    ys = z0 + dy * np.arange(ny)
    X = np.repeat(xs[None, :], ny, axis=0)
    X[1::2] += 0.5 * h
    Y = np.repeat(ys[:, None], nx, axis=1)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts += rng.uniform(-0.12 * h, 0.12 * h, size=pts.shape)
    return pts


def _interior_points(poly, size_field, boundary_pts, rng):
    bounds = poly.bounds
    base = size_field.base
    cands = [_hex_lattice(bounds, base, rng)]
    keep_base = np.ones(len(cands[0]), dtype=bool)
    for r0, z0, r1, z1, s in size_field.boxes:
        bb = (max(bounds[0], r0), max(bounds[1], z0), min(bounds[2], r1), min(bounds[3], z1))
        if bb[0] >= bb[2] or bb[1] >= bb[3]:
            continue
        fine = _hex_lattice(bb, s, rng)
        inbox = (
            (fine[:, 0] >= r0) & (fine[:, 0] <= r1) & (fine[:, 1] >= z0) & (fine[:, 1] <= z1)
        )
        cands.append(fine[inbox])
        p0 = cands[0]
        drop = (
            (p0[:, 0] >= r0 - 0.55 * base)
            & (p0[:, 0] <= r1 + 0.55 * base)
            & (p0[:, 1] >= z0 - 0.55 * base)
            & (p0[:, 1] <= z1 + 0.55 * base)
        )
        keep_base &= ~drop
    cands[0] = cands[0][keep_base]
    pts = np.vstack(cands) if cands else np.empty((0, 2))
    if not len(pts):
        return pts
    inside = shapely.contains_xy(poly, pts[:, 0], pts[:, 1])
    pts = pts[inside]
    if not len(pts):
        return pts
    tree = cKDTree(boundary_pts)
    d, _ = tree.query(pts, k=1)
    h_loc = size_field(pts)
    return pts[d >= _BOUNDARY_CLEARANCE * h_loc]


def _triangulate_once(poly, b_ids, b_pts, segs, interior):
    """Delaunay + clip to polygon.

    Returns (points, tris) on success, else (None, missing constraint segs).
    If every constraint edge appears in the triangulation, planarity
    guarantees no triangle crosses the boundary, so the centroid test is
    exact and the exposed edges coincide with the constraints.
    """
    all_pts = np.vstack([b_pts, interior]) if len(interior) else np.asarray(b_pts)
    if len(all_pts) < 3:
        raise MeshError("degenerate subdomain (too few points)")
    dt = Delaunay(all_pts)
    tris = dt.simplices
    cent = all_pts[tris].mean(axis=1)
    keep = shapely.contains_xy(poly, cent[:, 0], cent[:, 1])
    tris = tris[keep]
    edge_count = {}
    for t in tris:
        for i in range(3):
            e = (min(t[i], t[(i + 1) % 3]), max(t[i], t[(i + 1) % 3]))
            edge_count[e] = edge_count.get(e, 0) + 1
    exposed = {e for e, c in edge_count.items() if c == 1}
    wanted = {}
    for s in segs:
        ea, eb = b_ids[s[2]], b_ids[s[3]]
        wanted[(min(ea, eb), max(ea, eb))] = s
    missing = [s for e, s in wanted.items() if e not in exposed]
    if missing:
        return None, missing
    if exposed != set(wanted):
        # degenerate leftovers: refine every constraint and retry
        return None, segs
    return all_pts, tris


def _smooth(all_pts, tris, n_fixed, iters):
    pts = all_pts.copy()
    for _ in range(iters):
        acc = np.zeros_like(pts)
        cnt = np.zeros(len(pts))
        for i in range(3):
            a = tris[:, i]
            b = tris[:, (i + 1) % 3]
            np.add.at(acc, a, pts[b])
            np.add.at(acc, b, pts[a])
            np.add.at(cnt, a, 1)
            np.add.at(cnt, b, 1)
        mov = cnt > 0
        mov[:n_fixed] = False
        pts[mov] = acc[mov] / cnt[mov, None]
    return pts


def _mesh_subdomain(poly, pieces, size_field, rng):
    """Triangulate one subdomain; returns (points, tris) with local indices.

    pieces: the global _PieceSet; only chains on this polygon's boundary are
    used as constraints.
    """
    boundary = poly.boundary
    scale = math.hypot(poly.bounds[2] - poly.bounds[0], poly.bounds[3] - poly.bounds[1])
    tol = 1e-9 * max(scale, 1.0)
    mine = []
    for ci, chain in enumerate(pieces.chains):
        a = np.asarray(pieces.points[chain[0]])
        b = np.asarray(pieces.points[chain[-1]])
        mid = shapely.geometry.Point(0.5 * (a + b))
        if boundary.distance(mid) <= tol:
            mine.append(ci)
    if not mine:
        raise MeshError("subdomain has no boundary pieces")

    for attempt in range(6):
        # local boundary nodes (global piece registry ids -> local ids)
        b_ids = {}
        b_pts = []
        segs = []
        for ci in mine:
            chain = pieces.chains[ci]
            for pid in chain:
                if pid not in b_ids:
                    b_ids[pid] = len(b_pts)
                    b_pts.append(pieces.points[pid])
            for si in range(len(chain) - 1):
                segs.append((ci, si, chain[si], chain[si + 1]))
        b_pts = np.asarray(b_pts)
        interior = _interior_points(poly, size_field, b_pts, rng)
        got, missing = _triangulate_once(poly, b_ids, b_pts, segs, interior)
        if got is None:
            for (ci, si, _, _) in sorted(missing, key=lambda s: (s[0], -s[1])):
                pieces.split_segment(ci, si)
            continue
        all_pts, tris = got
        smoothed = _smooth(all_pts, tris, len(b_pts), _SMOOTH_ITERS)
        got2, _ = _triangulate_once(poly, b_ids, smoothed[: len(b_pts)], segs, smoothed[len(b_pts):])
        if got2 is not None:
            all_pts, tris = got2
        # map local boundary ids back to global registry ids for merging
        global_of_local = {v: k for k, v in b_ids.items()}
        return all_pts, tris, len(b_pts), global_of_local
    raise MeshError("boundary recovery failed (zero-width gap below target size?)")


# ---------------------------------------------------------------------------
# public entry points


def generate_mesh(geo: Geometry, size: float | None = None, boxes=None) -> Mesh:
    """Generate a conforming second-order mesh of the geometry.

    size/boxes override the geometry's mesh controls.  Boxes are
    (r0, z0, r1, z1, size) tuples.  The structured-quad path is taken when
    the geometry requests it and consists of a single rectangle.
    """
    from .geometry import validate_geometry

    diags = [d for d in validate_geometry(geo) if d.rule != "warning"]
    if diags:
        raise MeshError("invalid geometry: " + "; ".join(map(str, diags)))

    base = size if size is not None else geo.mesh.size
    if not base or base <= 0:
        base = geo.scale / 20.0
    boxes = geo.mesh.boxes if boxes is None else boxes
    field_ = _SizeField(base, boxes)

    if geo.mesh.quads:
        return _structured_quads(geo, field_)

    pieces = _PieceSet(_noded_pieces(geo), field_, geo.scale)
    coord_of = {}  # global node id -> coordinates
    node_ids = {}  # exact coordinate tuple -> global node id

    def global_node(p):
        key = (float(p[0]), float(p[1]))
        idx = node_ids.get(key)
        if idx is None:
            idx = len(coord_of)
            node_ids[key] = idx
            coord_of[idx] = key
        return idx

    # a boundary-recovery split while meshing one subdomain invalidates the
    # interfaces of previously meshed ones, so restart the pass on change
    tri_conn = tri_dom = None
    for _pass in range(6):
        rev = pieces.revision
        tri_conn = []
        tri_dom = []
        for d, sub in enumerate(geo.subdomains):
            rng = np.random.default_rng(0x5EED + d)
            pts, tris, n_b, _ = _mesh_subdomain(sub.polygon, pieces, field_, rng)
            gids = np.empty(len(pts), dtype=np.int64)
            for i, p in enumerate(pts):
                gids[i] = global_node(p)
            for t in tris:
                tri_conn.append(gids[t])
                tri_dom.append(d)
        if pieces.revision == rev:
            break
        coord_of.clear()
        node_ids.clear()
    else:
        raise MeshError("mesh generation did not stabilize")

    nodes = np.array([coord_of[i] for i in range(len(coord_of))], dtype=float)
    tris3 = np.asarray(tri_conn, dtype=np.int64)
    areas = _tri_signed_areas(nodes, tris3)
    flip = areas <= 0
    tris3[flip] = tris3[flip][:, [0, 2, 1]]

    nodes, tris6 = _insert_midside_tris(nodes, tris3)
    # snap tiny radii produced by arithmetic back onto the axis
    snap = 1e-12 * max(geo.scale, 1.0)
    nodes[:, 0][np.abs(nodes[:, 0]) < snap] = 0.0

    edges, walls, normals = _tag_boundary(nodes, tris6, np.empty((0, 9), dtype=np.int64), geo)
    mesh = Mesh(
        nodes=nodes,
        tris=tris6,
        tri_domain=np.asarray(tri_dom, dtype=np.int64),
        quads=np.empty((0, 9), dtype=np.int64),
        quad_domain=np.empty(0, dtype=np.int64),
        edges=edges,
        edge_wall=walls,
        edge_normal=normals,
        domain_names=tuple(s.name for s in geo.subdomains),
    )
    return mesh.check()


def _insert_midside_tris(nodes, tris3):
    node_list = [tuple(p) for p in nodes]
    mid_of = {}

    def midside(a, b):
        key = (min(a, b), max(a, b))
        idx = mid_of.get(key)
        if idx is None:
            pa, pb = nodes[a], nodes[b]
            node_list.append(((pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0))
            idx = len(node_list) - 1
            mid_of[key] = idx
        return idx

    tris6 = np.empty((len(tris3), 6), dtype=np.int64)
    tris6[:, :3] = tris3
    for e, t in enumerate(tris3):
        tris6[e, 3] = midside(t[0], t[1])
        tris6[e, 4] = midside(t[1], t[2])
        tris6[e, 5] = midside(t[2], t[0])
    return np.asarray(node_list, dtype=float), tris6


def _point_segment_dist(pts, a, b):
    """Distances from pts (N,2) to segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(pts[:, 0] - proj[:, 0], pts[:, 1] - proj[:, 1])


def _tag_boundary(nodes, tris6, quads9, geo: Geometry):
    """Find exposed corner edges, match them to tagged geometry segments."""
    count = {}
    owner = {}
    if len(tris6):
        for e, t in enumerate(tris6):
            for i in range(3):
                a, b = t[i], t[(i + 1) % 3]
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
                owner[key] = (("t", e, i), t[3 + i])
    if len(quads9):
        for e, q in enumerate(quads9):
            for i in range(4):
                a, b = q[i], q[(i + 1) % 4]
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
                owner[key] = (("q", e, i), q[4 + i])
    exposed = [(k, owner[k]) for k, c in count.items() if c == 1]

    tol = 1e-9 * max(geo.scale, 1.0)
    edges = []
    walls = []
    normals = []
    for (a, b), ((kind, e, i), mid) in exposed:
        probe = np.vstack([nodes[a], nodes[b], nodes[mid]])
        wall = None
        for seg in geo.boundaries:
            d = _point_segment_dist(probe, seg.points[0], seg.points[1])
            if np.all(d <= tol):
                wall = seg.wall
                break
        if wall is None:
            raise MeshError(f"exposed edge not on any tagged boundary near {nodes[mid]}")
        # orient by the element the edge belongs to
        if kind == "t":
            elem = tris6[e]
            centroid = nodes[elem[:3]].mean(axis=0)
            va, vb = elem[i], elem[(i + 1) % 3]
        else:
            elem = quads9[e]
            centroid = nodes[elem[:4]].mean(axis=0)
            va, vb = elem[i], elem[(i + 1) % 4]
        tvec = nodes[vb] - nodes[va]
        n = np.array([tvec[1], -tvec[0]])
        n /= np.hypot(*n)
        midpt = 0.5 * (nodes[va] + nodes[vb])
        if np.dot(n, midpt - centroid) < 0:
            n = -n
        edges.append((va, vb, mid))
        walls.append(wall)
        normals.append(n)
    order = np.lexsort(
        (np.asarray([e[1] for e in edges]), np.asarray([e[0] for e in edges]))
    )
    edges = np.asarray(edges, dtype=np.int64)[order]
    walls = tuple(walls[i] for i in order)
    normals = np.asarray(normals, dtype=float)[order]
    return edges, walls, normals


def _structured_quads(geo: Geometry, field_: _SizeField) -> Mesh:
    if len(geo.subdomains) != 1:
        raise MeshError("structured quads support a single rectangular subdomain")
    poly = geo.subdomains[0].polygon
    r0, z0, r1, z1 = poly.bounds
    if abs(poly.area - (r1 - r0) * (z1 - z0)) > 1e-12 * poly.area:
        raise MeshError("structured quads require a rectangular subdomain")
    h = field_.base
    nr = max(1, round((r1 - r0) / h))
    nz = max(1, round((z1 - z0) / h))
    rs = np.linspace(r0, r1, 2 * nr + 1)
    zs = np.linspace(z0, z1, 2 * nz + 1)
    R, Z = np.meshgrid(rs, zs, indexing="ij")
    nodes = np.column_stack([R.ravel(), Z.ravel()])
    nid = np.arange(len(nodes)).reshape(len(rs), len(zs))
    quads = []
    for i in range(nr):
        for j in range(nz):
            a, c = 2 * i, 2 * j
            quads.append(
                (
                    nid[a, c], nid[a + 2, c], nid[a + 2, c + 2], nid[a, c + 2],
                    nid[a + 1, c], nid[a + 2, c + 1], nid[a + 1, c + 2], nid[a, c + 1],
                    nid[a + 1, c + 1],
                )
            )
    quads9 = np.asarray(quads, dtype=np.int64)
    edges, walls, normals = _tag_boundary(nodes, np.empty((0, 6), dtype=np.int64), quads9, geo)
    mesh = Mesh(
        nodes=nodes,
        tris=np.empty((0, 6), dtype=np.int64),
        tri_domain=np.empty(0, dtype=np.int64),
        quads=quads9,
        quad_domain=np.zeros(len(quads9), dtype=np.int64),
        edges=edges,
        edge_wall=walls,
        edge_normal=normals,
        domain_names=(geo.subdomains[0].name,),
    )
    return mesh.check()


# ---------------------------------------------------------------------------
# uniform refinement


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle/quad into four; boundary tags are inherited."""
    nodes = [tuple(p) for p in mesh.nodes]
    new_of = {}

    def child_node(a, b, coords):
        key = (min(a, b), max(a, b))
        idx = new_of.get(key)
        if idx is None:
            nodes.append(tuple(coords))
            idx = len(nodes) - 1
            new_of[key] = idx
        return idx

    def edge_point(na, nb, nm, t):
        # quadratic edge evaluated with its own three nodes: both elements
        # sharing the edge produce bit-identical coordinates
        N, _ = line3_shape([t])
        pts = np.array([mesh.nodes[na], mesh.nodes[nb], mesh.nodes[nm]])
        return (N[0] @ pts)

    tris = []
    tri_dom = []
    for t, dom in zip(mesh.tris, mesh.tri_domain):
        v0, v1, v2, m01, m12, m20 = t
        sub = {}
        for (a, b, m) in ((v0, v1, m01), (v1, v2, m12), (v2, v0, m20)):
            sub[(a, m)] = child_node(a, m, edge_point(a, b, m, -0.5))
            sub[(m, b)] = child_node(m, b, edge_point(a, b, m, +0.5))
        # interior midside nodes of the four children
        tcoords = mesh.nodes[list(t)]

        def interior(xi, eta):
            N, _ = tri6_shape([(xi, eta)])
            return N[0] @ tcoords

        c34 = child_node(m01, m12, interior(0.5, 0.25))
        c45 = child_node(m12, m20, interior(0.25, 0.5))
        c53 = child_node(m20, m01, interior(0.25, 0.25))
        t1 = (v0, m01, m20, sub[(v0, m01)], c53, sub[(m20, v0)])
        t2 = (m01, v1, m12, sub[(m01, v1)], sub[(v1, m12)], c34)
        t3 = (m20, m12, v2, c45, sub[(m12, v2)], sub[(v2, m20)])
        t4 = (m01, m12, m20, c34, c45, c53)
        tris.extend((t1, t2, t3, t4))
        tri_dom.extend((dom, dom, dom, dom))

    quads = []
    quad_dom = []
    for q, dom in zip(mesh.quads, mesh.quad_domain):
        qcoords = mesh.nodes[list(q)]

        def qpt(u, v):
            N, _ = quad9_shape([(u, v)])
            return N[0] @ qcoords

        c0, c1, c2, c3, m4, m5, m6, m7, cc = q
        sub = {}
        for (a, b, m) in ((c0, c1, m4), (c1, c2, m5), (c2, c3, m6), (c3, c0, m7)):
            sub[(a, m)] = child_node(a, m, edge_point(a, b, m, -0.5))
            sub[(m, b)] = child_node(m, b, edge_point(a, b, m, +0.5))
        i4 = child_node(m4, cc, qpt(0.0, -0.5))
        i5 = child_node(m5, cc, qpt(0.5, 0.0))
        i6 = child_node(m6, cc, qpt(0.0, 0.5))
        i7 = child_node(m7, cc, qpt(-0.5, 0.0))
        centers = [qpt(-0.5, -0.5), qpt(0.5, -0.5), qpt(0.5, 0.5), qpt(-0.5, 0.5)]
        ctr = []
        for k, c in enumerate(centers):
            nodes.append(tuple(c))
            ctr.append(len(nodes) - 1)
        quads.extend(
            (
                (c0, m4, cc, m7, sub[(c0, m4)], i4, i7, sub[(m7, c0)], ctr[0]),
                (m4, c1, m5, cc, sub[(m4, c1)], sub[(c1, m5)], i5, i4, ctr[1]),
                (cc, m5, c2, m6, i5, sub[(m5, c2)], sub[(c2, m6)], i6, ctr[2]),
                (m7, cc, m6, c3, i7, i6, sub[(m6, c3)], sub[(c3, m7)], ctr[3]),
            )
        )
        quad_dom.extend((dom, dom, dom, dom))

    edges = []
    walls = []
    normals = []
    for (a, b, m), w, n in zip(mesh.edges, mesh.edge_wall, mesh.edge_normal):
        edges.append((a, m, new_of[(min(a, m), max(a, m))]))
        edges.append((m, b, new_of[(min(m, b), max(m, b))]))
        walls.extend((w, w))
        normals.extend((n, n))

    return Mesh(
        nodes=np.asarray(nodes, dtype=float),
        tris=np.asarray(tris, dtype=np.int64) if tris else np.empty((0, 6), dtype=np.int64),
        tri_domain=np.asarray(tri_dom, dtype=np.int64),
        quads=np.asarray(quads, dtype=np.int64) if quads else np.empty((0, 9), dtype=np.int64),
        quad_domain=np.asarray(quad_dom, dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64),
        edge_wall=tuple(walls),
        edge_normal=np.asarray(normals, dtype=float),
        domain_names=mesh.domain_names,
    ).check()
