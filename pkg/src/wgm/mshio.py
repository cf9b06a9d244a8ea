"""MSH v2 ASCII import/export (6-node triangles, 9-node quads, 3-node lines).

Files written here embed $PhysicalNames of the form ``domain:<name>`` and
``wall:<kind>[:<theta_mix>:<f_ref>]`` so they re-import without an external
group table.  Externally produced files need a ``group_map`` argument mapping
physical ids (or names) to subdomain names or Wall tags.
"""
from __future__ import annotations

import io

import numpy as np

from .geometry import Wall
from .meshing import Mesh, MeshError

__all__ = ["write_msh", "read_msh"]

_LINE3, _TRI6, _QUAD9 = 8, 9, 10
_NNODES = {_LINE3: 3, _TRI6: 6, _QUAD9: 9}


def _wall_name(w: Wall) -> str:
    if w.kind == "impedance":
        fref = "" if w.f_ref is None else f":{w.f_ref!r}"
        return f"wall:impedance:{w.theta_mix!r}{fref}"
    return f"wall:{w.kind}"


def _wall_from_name(name: str) -> Wall:
    parts = name.split(":")
    kind = parts[1]
    if kind == "impedance":
        theta = float(parts[2]) if len(parts) > 2 else 0.0
        f_ref = float(parts[3]) if len(parts) > 3 else None
        return Wall("impedance", theta_mix=theta, f_ref=f_ref)
    return Wall(kind)


def write_msh(mesh: Mesh, path_or_file) -> None:
    out = io.StringIO()
    wall_ids = {}
    for w in mesh.edge_wall:
        name = _wall_name(w)
        if name not in wall_ids:
            wall_ids[name] = 101 + len(wall_ids)
    out.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    out.write("$PhysicalNames\n")
    out.write(f"{len(mesh.domain_names) + len(wall_ids)}\n")
    for i, name in enumerate(mesh.domain_names):
        out.write(f'2 {i + 1} "domain:{name}"\n')
    for name, pid in wall_ids.items():
        out.write(f'1 {pid} "{name}"\n')
    out.write("$EndPhysicalNames\n")
    out.write("$Nodes\n")
    out.write(f"{mesh.n_nodes}\n")
    for i, (r, z) in enumerate(mesh.nodes, start=1):
        out.write(f"{i} {r!r} {z!r} 0\n")
    out.write("$EndNodes\n")
    out.write("$Elements\n")
    n_elem = len(mesh.edges) + len(mesh.tris) + len(mesh.quads)
    out.write(f"{n_elem}\n")
    eid = 1
    for (a, b, m), w in zip(mesh.edges, mesh.edge_wall):
        pid = wall_ids[_wall_name(w)]
        out.write(f"{eid} {_LINE3} 2 {pid} {pid} {a + 1} {b + 1} {m + 1}\n")
        eid += 1
    for conn, dom in zip(mesh.tris, mesh.tri_domain):
        nodes = " ".join(str(n + 1) for n in conn)
        out.write(f"{eid} {_TRI6} 2 {dom + 1} {dom + 1} {nodes}\n")
        eid += 1
    for conn, dom in zip(mesh.quads, mesh.quad_domain):
        nodes = " ".join(str(n + 1) for n in conn)
        out.write(f"{eid} {_QUAD9} 2 {dom + 1} {dom + 1} {nodes}\n")
        eid += 1
    out.write("$EndElements\n")
    if hasattr(path_or_file, "write"):
        path_or_file.write(out.getvalue())
    else:
        with open(path_or_file, "w") as fh:
            fh.write(out.getvalue())


def read_msh(path_or_file, group_map: dict | None = None) -> Mesh:
    """Read an MSH v2 ASCII file.

    group_map maps physical-group ids or names to either a subdomain name
    (str) or a Wall.  Embedded ``domain:``/``wall:`` physical names are
    understood without a map.
    """
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    lines = text.splitlines()
    sections = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j >= len(lines):
                raise MeshError(f"MSH: unterminated section {name}")
            sections[name] = lines[i + 1 : j]
            i = j + 1
        else:
            i += 1
    if "MeshFormat" not in sections or not sections["MeshFormat"][0].startswith("2."):
        raise MeshError("MSH: only v2 ASCII is supported")
    if "Nodes" not in sections or "Elements" not in sections:
        raise MeshError("MSH: missing Nodes or Elements")

    phys_names = {}
    for line in sections.get("PhysicalNames", [])[1:]:
        parts = line.split(None, 2)
        if len(parts) == 3:
            phys_names[int(parts[1])] = parts[2].strip().strip('"')

    def resolve(pid):
        if group_map:
            if pid in group_map:
                return group_map[pid]
            name = phys_names.get(pid)
            if name is not None and name in group_map:
                return group_map[name]
        name = phys_names.get(pid)
        if name is None:
            return None
        if name.startswith("wall:"):
            return _wall_from_name(name)
        if name.startswith("domain:"):
            return name[len("domain:") :]
        return None

    node_lines = sections["Nodes"]
    n_nodes = int(node_lines[0])
    ids = np.empty(n_nodes, dtype=np.int64)
    coords = np.empty((n_nodes, 2))
    for k, line in enumerate(node_lines[1 : 1 + n_nodes]):
        parts = line.split()
        ids[k] = int(parts[0])
        coords[k] = (float(parts[1]), float(parts[2]))
    remap = {int(v): k for k, v in enumerate(ids)}

    elem_lines = sections["Elements"]
    n_elem = int(elem_lines[0])
    tris, tri_dom, quads, quad_dom, raw_edges = [], [], [], [], []
    domain_ids = {}
    for line in elem_lines[1 : 1 + n_elem]:
        parts = [int(x) for x in line.split()]
        etype, ntags = parts[1], parts[2]
        tags = parts[3 : 3 + ntags]
        conn = parts[3 + ntags :]
        if etype not in _NNODES:
            raise MeshError(f"MSH: unsupported element type {etype}")
        if len(conn) != _NNODES[etype]:
            raise MeshError("MSH: wrong node count for element")
        conn = [remap[c] for c in conn]
        pid = tags[0] if tags else 0
        target = resolve(pid)
        if etype == _LINE3:
            if not isinstance(target, Wall):
                raise MeshError(f"MSH: untagged boundary (physical group {pid})")
            raw_edges.append((conn, target))
        else:
            if not isinstance(target, str):
                raise MeshError(f"MSH: surface element with unmapped group {pid}")
            dom = domain_ids.setdefault(target, len(domain_ids))
            if etype == _TRI6:
                tris.append(conn)
                tri_dom.append(dom)
            else:
                quads.append(conn)
                quad_dom.append(dom)

    tris = np.asarray(tris, dtype=np.int64) if tris else np.empty((0, 6), dtype=np.int64)
    quads = np.asarray(quads, dtype=np.int64) if quads else np.empty((0, 9), dtype=np.int64)

    # recompute outward normals from the adjacent surface element
    owner = {}
    for e, t in enumerate(tris):
        for i in range(3):
            key = (min(t[i], t[(i + 1) % 3]), max(t[i], t[(i + 1) % 3]))
            owner[key] = ("t", e, i)
    for e, q in enumerate(quads):
        for i in range(4):
            key = (min(q[i], q[(i + 1) % 4]), max(q[i], q[(i + 1) % 4]))
            owner[key] = ("q", e, i)
    edges, walls, normals = [], [], []
    for conn, wall in raw_edges:
        a, b, m = conn
        key = (min(a, b), max(a, b))
        if key not in owner:
            raise MeshError("MSH: boundary edge not attached to any element")
        kind, e, i = owner[key]
        elem = tris[e] if kind == "t" else quads[e]
        ncorner = 3 if kind == "t" else 4
        centroid = coords[elem[:ncorner]].mean(axis=0)
        tvec = coords[b] - coords[a]
        n = np.array([tvec[1], -tvec[0]])
        norm = np.hypot(*n)
        if norm == 0:
            raise MeshError("MSH: degenerate boundary edge")
        n /= norm
        if np.dot(n, 0.5 * (coords[a] + coords[b]) - centroid) < 0:
            n = -n
        edges.append((a, b, m))
        walls.append(wall)
        normals.append(n)

    names = [None] * len(domain_ids)
    for name, d in domain_ids.items():
        names[d] = name
    mesh = Mesh(
        nodes=coords,
        tris=tris,
        tri_domain=np.asarray(tri_dom, dtype=np.int64),
        quads=quads,
        quad_domain=np.asarray(quad_dom, dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64) if edges else np.empty((0, 3), dtype=np.int64),
        edge_wall=tuple(walls),
        edge_normal=np.asarray(normals) if normals else np.empty((0, 2)),
        domain_names=tuple(names),
    )
    return mesh.check()
