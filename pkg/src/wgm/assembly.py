"""Element matrices and global assembly of the generalized eigenproblem.

Unknowns are the three real field amplitudes (H^r, H^phi, H^z) per node, with
the azimuthal phase exp(i M phi) and the factor i on the azimuthal component
folded out of the discrete problem.  With that convention the curl, penalty
and mass forms are all real symmetric; an impedance wall adds an imaginary
surface term.

Eigenvalues are lambda = (2 pi f / c)^2, i.e. the free-space wavenumber
squared.  The divergence penalty enters K with the opposite sign to the curl
term: divergence-carrying (spurious) solutions then acquire negative lambda,
i.e. imaginary frequency, and leave the physical band entirely, for any
penalty weight.  Flipping the sign instead parks them amid the physical
spectrum (at alpha times the Neumann Laplacian eigenvalues); the cylinder
bring-up test in tests/test_assembly.py pins this behavior.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.constants import c as C0

from .elements import line3_shape, line_rule, quad9_shape, quad_rule, tri6_shape, tri_rule
from .geometry import Geometry, Material, Wall
from .meshing import Mesh

__all__ = [
    "PENALTY_SIGN",
    "AssembledSystem",
    "AssemblyError",
    "element_curl_matrix",
    "element_penalty_matrix",
    "element_mass_matrix",
    "boundary_constraints",
    "constraint_basis",
    "boundary_tangential_matrix",
    "impedance_boundary_matrix",
    "assemble",
]

log = logging.getLogger(__name__)

# Sign with which alpha * (div, div) enters K relative to the curl term.
PENALTY_SIGN = -1.0

# Axis regularity: for M = 1 the combination H^r - H^phi must vanish at
# r = 0 (it scales like r^2); H^r + H^phi is the regular, unconstrained one.
# This follows from the integrability of the 1/r weak terms, whose M = 1
# coefficients are (H^phi - H^r)^2, and is verified against the analytic
# cylinder spectrum.
_AXIS_M1_ROW = (1.0, -1.0, 0.0)


class AssemblyError(RuntimeError):
    pass


def _shape(kind: str, degree: int):
    if kind == "tri":
        pts, wts = tri_rule(degree)
        N, dN = tri6_shape(pts)
    else:
        pts, wts = quad_rule(degree)
        N, dN = quad9_shape(pts)
    return N, dN, wts


def _geom_factors(coords, dN_hat):
    """Jacobians, physical gradients and radii for a batch of elements.

    coords : (E, n, 2); dN_hat : (Q, n, 2).
    Returns detJ (E, Q), dN (E, Q, n, 2).
    """
    J = np.einsum("qnb,ena->eqab", dN_hat, coords)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    inv[..., 1, 1] = J[..., 0, 0]
    inv /= det[..., None, None]
    dN = np.einsum("qnb,eqba->eqna", dN_hat, inv)
    return det, dN


def _element_batch(coords, kind, eps_perp, eps_par, M, alpha, degree,
                   want=("curl", "penalty", "mass")):
    """Curl/penalty/mass element matrices for a batch of elements.

    coords (E, n, 2); eps_* (E,).  Local dofs are component-major:
    [H^r x n, H^phi x n, H^z x n].  Returns a dict of (E, 3n, 3n) arrays.
    """
    coords = np.asarray(coords, dtype=float)
    E, n, _ = coords.shape
    N, dN_hat, wts = _shape(kind, degree)
    det, dN = _geom_factors(coords, dN_hat)
    if np.any(det <= 0):
        raise AssemblyError("non-positive Jacobian")
    r = np.einsum("qn,en->eq", N, coords[..., 0])
    if np.any(r <= 0):
        raise AssemblyError("quadrature point at r <= 0")

    out = {key: np.zeros((E, 3 * n, 3 * n)) for key in want}
    R, P, Z = 0, 1, 2  # component block indices

    def add(mat, cr, cc, coeff, term):
        # term: (n, n) or (E, n, n); coeff: (E,)
        blk = mat[:, cr * n : (cr + 1) * n, cc * n : (cc + 1) * n]
        if term.ndim == 2:
            blk += coeff[:, None, None] * term[None, :, :]
        else:
            blk += coeff[:, None, None] * term

    Mf = float(M)
    for q in range(len(wts)):
        w = wts[q]
        Nq = N[q]
        dNr = dN[:, q, :, 0]
        dNz = dN[:, q, :, 1]
        rq = r[:, q]
        dq = det[:, q]
        NN = np.outer(Nq, Nq)
        NdNr = np.einsum("i,ej->eij", Nq, dNr)
        NdNz = np.einsum("i,ej->eij", Nq, dNz)
        dNrN = NdNr.transpose(0, 2, 1)
        dNzN = NdNz.transpose(0, 2, 1)
        dNrdNr = np.einsum("ei,ej->eij", dNr, dNr)
        dNzdNz = np.einsum("ei,ej->eij", dNz, dNz)
        dNrdNz = np.einsum("ei,ej->eij", dNr, dNz)
        dNzdNr = dNrdNz.transpose(0, 2, 1)

        if "curl" in want:
            K = out["curl"]
            inv = 1.0 / (eps_perp * eps_par)
            a = w * dq / rq * inv
            b = w * dq * inv
            c = w * dq * rq * inv
            ap, al = a * eps_perp, a * eps_par
            bp, bl = b * eps_perp, b * eps_par
            cp, cl = c * eps_perp, c * eps_par
            add(K, P, P, ap, NN)
            add(K, P, R, -Mf * ap, NN)
            add(K, R, P, -Mf * ap, NN)
            add(K, R, R, Mf * Mf * ap, NN)
            add(K, Z, Z, Mf * Mf * al, NN)
            add(K, P, P, bp, dNrN + NdNr)
            add(K, P, R, -Mf * bp, dNrN)
            add(K, R, P, -Mf * bp, NdNr)
            add(K, Z, P, -Mf * bl, NdNz)
            add(K, P, Z, -Mf * bl, dNzN)
            add(K, P, P, cp, dNrdNr)
            add(K, P, P, cl, dNzdNz)
            add(K, Z, Z, cl, dNrdNr)
            add(K, R, R, cl, dNzdNz)
            add(K, Z, R, -cl, dNrdNz)
            add(K, R, Z, -cl, dNzdNr)

        if "penalty" in want:
            G = out["penalty"]
            d_ = w * dq / rq * alpha
            e_ = w * dq * alpha
            f_ = w * dq * rq * alpha
            add(G, R, R, d_, NN)
            add(G, R, P, -Mf * d_, NN)
            add(G, P, R, -Mf * d_, NN)
            add(G, P, P, Mf * Mf * d_, NN)
            add(G, R, R, e_, dNrN + NdNr)
            add(G, Z, R, e_, dNzN)
            add(G, R, Z, e_, NdNz)
            add(G, R, P, -Mf * e_, dNrN)
            add(G, P, R, -Mf * e_, NdNr)
            add(G, Z, P, -Mf * e_, dNzN)
            add(G, P, Z, -Mf * e_, NdNz)
            add(G, R, R, f_, dNrdNr)
            add(G, R, Z, f_, dNrdNz)
            add(G, Z, R, f_, dNzdNr)
            add(G, Z, Z, f_, dNzdNz)

        if "mass" in want:
            T = out["mass"]
            m_ = w * dq * rq
            add(T, R, R, m_, NN)
            add(T, P, P, m_, NN)
            add(T, Z, Z, m_, NN)

    return out


def _single(coords):
    coords = np.asarray(coords, dtype=float)
    if coords.shape == (6, 2):
        return coords[None, :, :], "tri"
    if coords.shape == (9, 2):
        return coords[None, :, :], "quad"
    raise AssemblyError("element must be a 6-node triangle or 9-node quad")


def element_curl_matrix(coords, material: Material, M: int, degree: int = 5):
    """Curl-curl element matrix (A/r + B + r C) / (eps_perp eps_par)."""
    batch, kind = _single(coords)
    ep = np.array([material.eps_perp], dtype=float)
    el = np.array([material.eps_par], dtype=float)
    return _element_batch(batch, kind, ep, el, M, 0.0, degree, want=("curl",))["curl"][0]


def element_penalty_matrix(coords, alpha: float, M: int, degree: int = 5):
    """Divergence-penalty element matrix alpha (D/r + E + r F)."""
    if not (0.01 <= alpha <= 10.0):
        log.warning("penalty weight alpha=%g outside the usual range [0.01, 10]", alpha)
    batch, kind = _single(coords)
    one = np.ones(1)
    return _element_batch(batch, kind, one, one, M, alpha, degree, want=("penalty",))["penalty"][0]


def element_mass_matrix(coords, degree: int = 5):
    """Component-diagonal mass matrix with blocks int N_i N_j r dr dz."""
    batch, kind = _single(coords)
    one = np.ones(1)
    return _element_batch(batch, kind, one, one, 0, 0.0, degree, want=("mass",))["mass"][0]


# ---------------------------------------------------------------------------
# constraints


def _normalize_row(row):
    row = np.asarray(row, dtype=float)
    nrm = np.linalg.norm(row)
    row = row / nrm
    for v in row:
        if abs(v) > 1e-12:
            return row if v > 0 else -row
    raise AssemblyError("zero constraint row")


def boundary_constraints(mesh: Mesh, M: int):
    """Essential nodal constraints for every tagged wall and the axis.

    Electric and impedance walls pin the normal field (H.n = 0); magnetic
    walls pin both tangential components; axis edges apply the M-dependent
    regularity rules.  Returns a sorted list of (node, coeffs) pairs.
    """
    rows = {}

    def put(node, row):
        row = _normalize_row(row)
        bucket = rows.setdefault(int(node), [])
        if not any(np.allclose(row, r, atol=1e-12) for r in bucket):
            bucket.append(row)

    for (a, b, m), wall, nvec in zip(mesh.edges, mesh.edge_wall, mesh.edge_normal):
        nr, nz = nvec
        # theta_mix = pi/2 degenerates to a magnetic wall (essential, no
        # surface term); anything else keeps the electric-wall normal pin.
        kind = wall.kind
        if kind == "impedance" and abs(math.cos(wall.theta_mix)) < 1e-12:
            kind = "magnetic"
        for node in (a, b, m):
            if kind in ("electric", "impedance"):
                put(node, (nr, 0.0, nz))
            elif kind == "magnetic":
                put(node, (0.0, 1.0, 0.0))
                put(node, (-nz, 0.0, nr))
            elif kind == "axis":
                if M == 0:
                    put(node, (1.0, 0.0, 0.0))
                    put(node, (0.0, 1.0, 0.0))
                elif M == 1:
                    put(node, (0.0, 0.0, 1.0))
                    put(node, _AXIS_M1_ROW)
                else:
                    put(node, (1.0, 0.0, 0.0))
                    put(node, (0.0, 1.0, 0.0))
                    put(node, (0.0, 0.0, 1.0))
    out = []
    for node in sorted(rows):
        for row in rows[node]:
            out.append((node, row))
    return out


def constraint_basis(n_nodes: int, constraints):
    """Sparse basis T for the nullspace of the constraint set.

    Columns of T span the admissible subspace; K_red = T' K T.  Constraints
    are node-local, so the nullspace is computed per node by SVD.
    """
    per_node = {}
    for node, row in constraints:
        per_node.setdefault(node, []).append(row)
    rows_idx, cols_idx, vals = [], [], []
    col = 0
    for node in range(n_nodes):
        if node in per_node:
            R = np.asarray(per_node[node])
            u, s, vt = np.linalg.svd(R)
            rank = int(np.sum(s > 1e-10 * s[0]))
            if rank < len(R):
                log.debug("node %d: %d constraint rows, rank %d", node, len(R), rank)
            basis = vt[rank:].T  # (3, 3 - rank)
        else:
            basis = np.eye(3)
        for k in range(basis.shape[1]):
            for c in range(3):
                v = basis[c, k]
                if v != 0.0:
                    rows_idx.append(3 * node + c)
                    cols_idx.append(col)
                    vals.append(v)
            col += 1
    T = sp.coo_matrix((vals, (rows_idx, cols_idx)), shape=(3 * n_nodes, col))
    return T.tocsr()


# ---------------------------------------------------------------------------
# boundary (surface) matrices


def _edge_blocks(mesh: Mesh, edge_idx, degree: int = 5):
    """r-weighted tangential 'mass' on selected boundary edges (full space).

    Integrand: Ht~ . Ht with Ht = (H^phi, H^z n_r - H^r n_z); the normal
    component is handled by the essential constraint.
    """
    n_dof = 3 * mesh.n_nodes
    if len(edge_idx) == 0:
        return sp.csr_matrix((n_dof, n_dof))
    tq, wq = line_rule(degree)
    N, dN = line3_shape(tq)
    rows, cols, vals = [], [], []
    for ei in edge_idx:
        conn = mesh.edges[ei]
        nr, nz = mesh.edge_normal[ei]
        pts = mesh.nodes[conn]
        dxy = np.einsum("qn,nk->qk", dN, pts)
        jac = np.hypot(dxy[:, 0], dxy[:, 1])
        rr = N @ pts[:, 0]
        w = wq * jac * rr
        NN = np.einsum("q,qi,qj->ij", w, N, N)
        blocks = {
            (1, 1): NN,
            (0, 0): nz * nz * NN,
            (0, 2): -nz * nr * NN,
            (2, 0): -nr * nz * NN,
            (2, 2): nr * nr * NN,
        }
        for (ci, cj), blk in blocks.items():
            for i in range(3):
                for j in range(3):
                    rows.append(3 * conn[i] + ci)
                    cols.append(3 * conn[j] + cj)
                    vals.append(blk[i, j])
    S = sp.coo_matrix((vals, (rows, cols)), shape=(n_dof, n_dof))
    return S.tocsr()


def boundary_tangential_matrix(mesh: Mesh, edge_idx, degree: int = 5):
    """Quadratic form of int |Ht|^2 r dl over the given boundary edges."""
    return _edge_blocks(mesh, edge_idx, degree)


def impedance_boundary_matrix(mesh: Mesh, theta_mix: float, f_ref: float, degree: int = 5):
    """Complex surface term added to K for impedance-tagged edges.

    Implements the mixed wall condition with the mode frequency replaced by
    f_ref: K += i (2 pi f_ref / c) tan(theta_mix) S, where S is the
    tangential boundary mass.  theta_mix = 0 reduces to the electric-wall
    natural condition (no term); theta_mix = pi/2 is a magnetic wall and is
    handled by constraints instead.
    """
    if f_ref is None or f_ref <= 0:
        raise AssemblyError("impedance wall: f_ref must be positive")
    idx = [i for i, w in enumerate(mesh.edge_wall) if w.kind == "impedance"]
    S = _edge_blocks(mesh, idx, degree)
    cbar = 2.0 * math.pi / C0
    return (1j * cbar * f_ref * math.tan(theta_mix)) * S


# ---------------------------------------------------------------------------
# global assembly


@dataclass
class AssembledSystem:
    """Reduced generalized eigenproblem K h = lambda Mmat h.

    K and Mmat live on the constrained subspace; T expands reduced vectors
    to the full (3 x n_nodes) nodal space.  lambda = (2 pi f / c)^2.
    Impedance walls contribute s_terms = [(tan_theta, f_ref, S_red), ...]
    composed as K + i (2 pi f / c) tan_theta S at solve time.
    """

    K: sp.csr_matrix
    Mmat: sp.csr_matrix
    T: sp.csr_matrix
    constraints: tuple
    M_azimuthal: int
    alpha: float
    complex_flag: bool
    s_terms: tuple = ()
    mass_full: sp.csr_matrix | None = None
    n_nodes: int = 0

    @property
    def n_reduced(self) -> int:
        return self.K.shape[0]

    def dof_map(self, node: int, comp: int) -> int:
        """Full-space index of (node, component)."""
        return 3 * node + comp

    def k_at(self, f_ref: float | None = None):
        """K including impedance terms evaluated at the given frequency."""
        if not self.s_terms:
            return self.K
        cbar = 2.0 * math.pi / C0
        K = self.K.astype(complex)
        for tan_t, fr, S in self.s_terms:
            f_use = f_ref if f_ref is not None else fr
            K = K + (1j * cbar * f_use * tan_t) * S
        return K


def _materials_for(mesh: Mesh, geo: Geometry):
    by_name = {s.name: s.material for s in geo.subdomains}
    by_label = {s.material.label: s.material for s in geo.subdomains}
    mats = []
    for name in mesh.domain_names:
        if name in by_name:
            mats.append(by_name[name])
        elif name in by_label:
            mats.append(by_label[name])
        else:
            raise AssemblyError(f"mesh domain {name!r} not present in geometry")
    return mats


def _scatter(conn, n_comp_nodes):
    """Global dof indices (E, 3n) for component-major local ordering."""
    E, n = conn.shape
    g = np.empty((E, 3 * n), dtype=np.int64)
    for c in range(3):
        g[:, c * n : (c + 1) * n] = 3 * conn + c
    return g


def assemble(mesh: Mesh, geo: Geometry, M: int, alpha: float = 1.0,
             degree: int = 5, penalty_sign: float = PENALTY_SIGN) -> AssembledSystem:
    """Assemble and reduce the global system for azimuthal order M."""
    if M < 0:
        raise AssemblyError("azimuthal order M must be >= 0")
    mats = _materials_for(mesh, geo)
    n_dof = 3 * mesh.n_nodes
    K = sp.csr_matrix((n_dof, n_dof))
    Mm = sp.csr_matrix((n_dof, n_dof))

    for conn, dom, kind in (
        (mesh.tris, mesh.tri_domain, "tri"),
        (mesh.quads, mesh.quad_domain, "quad"),
    ):
        if not len(conn):
            continue
        ep = np.array([mats[d].eps_perp for d in dom])
        el = np.array([mats[d].eps_par for d in dom])
        parts = _element_batch(mesh.nodes[conn], kind, ep, el, M, alpha, degree)
        Kel = parts["curl"] + penalty_sign * parts["penalty"]
        g = _scatter(conn, conn.shape[1])
        rows = np.repeat(g, g.shape[1], axis=1).ravel()
        cols = np.tile(g, (1, g.shape[1])).ravel()
        K = K + sp.coo_matrix((Kel.ravel(), (rows, cols)), shape=(n_dof, n_dof)).tocsr()
        Mm = Mm + sp.coo_matrix(
            (parts["mass"].ravel(), (rows, cols)), shape=(n_dof, n_dof)
        ).tocsr()

    constraints = boundary_constraints(mesh, M)
    T = constraint_basis(mesh.n_nodes, constraints)
    if T.shape[1] == 0:
        raise AssemblyError("all degrees of freedom are constrained")

    s_terms = []
    complex_flag = False
    groups = {}
    for i, w in enumerate(mesh.edge_wall):
        if w.kind == "impedance" and abs(math.cos(w.theta_mix)) > 1e-12 \
                and abs(math.tan(w.theta_mix)) > 1e-14:
            groups.setdefault((w.theta_mix, w.f_ref), []).append(i)
    for (theta, f_ref), idx in sorted(groups.items()):
        S = _edge_blocks(mesh, idx, degree)
        s_terms.append((math.tan(theta), f_ref, (T.T @ S @ T).tocsr()))
        complex_flag = True

    K_red = (T.T @ K @ T).tocsr()
    M_red = (T.T @ Mm @ T).tocsr()
    # enforce exact symmetry of the real parts (roundoff only)
    K_red = (K_red + K_red.T) * 0.5
    M_red = (M_red + M_red.T) * 0.5

    return AssembledSystem(
        K=K_red,
        Mmat=M_red,
        T=T,
        constraints=tuple((int(n), tuple(map(float, r))) for n, r in constraints),
        M_azimuthal=int(M),
        alpha=float(alpha),
        complex_flag=complex_flag,
        s_terms=tuple(s_terms),
        mass_full=Mm,
        n_nodes=mesh.n_nodes,
    )
