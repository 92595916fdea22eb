"""Quadratic-velocity / linear-pressure spaces on a triangulated channel.

Velocity uses continuous piecewise quadratics on the six-node triangle
(vertices plus edge midpoints), pressure continuous piecewise linears on the
vertices — an inf-sup stable pair.  Velocity DOFs are interleaved,
``dof = 2 * node + component``.  The convective term is kept in divergence
form: the assembled trilinear evaluator computes

    C(a, b) = (b . grad) a + (div b) a     (weak-tested, not by parts)

so that the momentum nonlinearity is exactly the divergence of the momentum
flux.  The viscous stiffness carries the cylinder-diameter factor 0.1 so
that the coefficient multiplying it is 1/Re directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..exceptions import ConfigError, NumericalError
from .mesh import CYLINDER_CENTER, Mesh, inflow_profile

VISCOUS_LENGTH = 0.1  # cylinder diameter; nu = VISCOUS_LENGTH / Re

# degree-5 quadrature on the reference triangle: 7 points, weights sum to 1
_S15 = np.sqrt(15.0)
_QA = (6.0 + _S15) / 21.0
_QB = (6.0 - _S15) / 21.0
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [1 - 2 * _QA, _QA, _QA], [_QA, 1 - 2 * _QA, _QA], [_QA, _QA, 1 - 2 * _QA],
    [1 - 2 * _QB, _QB, _QB], [_QB, 1 - 2 * _QB, _QB], [_QB, _QB, 1 - 2 * _QB],
])
QUAD_W = np.array([9 / 40,
                   (155.0 + _S15) / 1200, (155.0 + _S15) / 1200,
                   (155.0 + _S15) / 1200,
                   (155.0 - _S15) / 1200, (155.0 - _S15) / 1200,
                   (155.0 - _S15) / 1200])

# edge quadrature (2-point Gauss on [0, 1]) for boundary tractions
EDGE_QP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_QW = np.array([0.5, 0.5])


def _p2_basis(bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and reference gradients of the six quadratic shape functions.

    Local node order: three vertices, then midpoints of edges (1,2), (2,0),
    (0,1).  Returns (nq, 6) values and (nq, 6, 2) gradients w.r.t. (xi, eta).
    """
    L0, L1, L2 = bary[:, 0], bary[:, 1], bary[:, 2]
    vals = np.column_stack([
        L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1),
        4 * L1 * L2, 4 * L2 * L0, 4 * L0 * L1])
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(bary)
    grads = np.zeros((nq, 6, 2))
    for i in range(3):
        grads[:, i] = (4 * bary[:, [i]] - 1) * dL[i]
    pairs = ((1, 2), (2, 0), (0, 1))
    for k, (a, b) in enumerate(pairs):
        grads[:, 3 + k] = 4 * (bary[:, [a]] * dL[b] + bary[:, [b]] * dL[a])
    return vals, grads


@dataclass
class FemProblem:
    """Assembled Taylor–Hood operators on one mesh.

    All velocity operators act on the full interleaved velocity vector of
    length ``2 * n_p2``; Dirichlet handling is by restriction to
    ``free_vel_dofs`` (both components of every constrained node removed).
    Pressure carries no essential conditions: the natural outlet condition
    fixes its level.
    """

    mesh: Mesh
    p2_coords: np.ndarray          # (n_p2, 2)
    tri_nodes: np.ndarray          # (nt, 6) P2 connectivity
    mass_scalar: sp.csr_matrix     # P2 scalar mass
    velocity_mass: sp.csr_matrix   # vector mass, 2 n_p2
    stiffness: sp.csr_matrix       # vector grad-grad, 2 n_p2
    visc_stiffness: sp.csr_matrix  # VISCOUS_LENGTH * stiffness
    div: sp.csr_matrix             # (n_p1, 2 n_p2): row i = int L_i div(u)
    conv_tensor: np.ndarray        # (nt, 6, 6, 6, 2)
    quad_weights: np.ndarray       # (nt, nq) physical weights
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray   # (n_dir, 2)
    free_vel_dofs: np.ndarray
    full_to_free: np.ndarray
    p1_mass_lu: object = field(default=None, repr=False)
    _grad_phys: np.ndarray = field(default=None, repr=False)  # (nt, nq, 6, 2)

    @property
    def n_p2(self) -> int:
        return len(self.p2_coords)

    @property
    def n_p1(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_vel(self) -> int:
        return 2 * self.n_p2

    @property
    def n_free(self) -> int:
        return len(self.free_vel_dofs)

    @property
    def domain_area(self) -> float:
        return float(self.mesh.element_areas().sum())

    # -- velocity vectors ---------------------------------------------------

    def dirichlet_lift(self) -> np.ndarray:
        """Full velocity vector carrying the inflow data, zero elsewhere."""
        u = np.zeros(self.n_vel)
        u[2 * self.dirichlet_nodes] = self.dirichlet_values[:, 0]
        u[2 * self.dirichlet_nodes + 1] = self.dirichlet_values[:, 1]
        return u

    def expand_velocity(self, u_free: np.ndarray) -> np.ndarray:
        """Insert free values into a full vector with zeros on constraints."""
        u = np.zeros(self.n_vel, dtype=u_free.dtype)
        u[self.free_vel_dofs] = u_free
        return u

    def restrict_velocity(self, u_full: np.ndarray) -> np.ndarray:
        return u_full[self.free_vel_dofs]

    def expand_state(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split a DAE state [free velocity, pressure, parameter] into full
        perturbation fields (du, dp)."""
        nf = self.n_free
        return self.expand_velocity(y[:nf]), y[nf:nf + self.n_p1]

    # -- convection ---------------------------------------------------------

    def _local(self, u_full: np.ndarray) -> np.ndarray:
        """(nt, 6, 2) local nodal values of a full velocity vector."""
        out = np.empty((*self.tri_nodes.shape, 2), dtype=u_full.dtype)
        out[..., 0] = u_full[2 * self.tri_nodes]
        out[..., 1] = u_full[2 * self.tri_nodes + 1]
        return out

    def convection(self, a_full: np.ndarray, b_full: np.ndarray) -> np.ndarray:
        """Weak divergence-form convection: rows of int N_m [div(a ⊗ b)]."""
        a_loc = self._local(a_full)
        b_loc = self._local(b_full)
        out_loc = np.einsum("emnrd,enc,erd->emc", self.conv_tensor,
                            a_loc, b_loc, optimize=True)
        out = np.zeros(self.n_vel, dtype=out_loc.dtype)
        np.add.at(out, 2 * self.tri_nodes, out_loc[..., 0])
        np.add.at(out, 2 * self.tri_nodes + 1, out_loc[..., 1])
        return out

    def convection_matrix_fixed_second(self, b_full: np.ndarray) -> sp.csr_matrix:
        """Sparse matrix L with L @ a = convection(a, b)."""
        b_loc = self._local(b_full)
        T = np.einsum("emnrd,erd->emn", self.conv_tensor, b_loc,
                      optimize=True)
        g = self.tri_nodes
        rows = np.repeat(g[:, :, None], 6, axis=2)
        cols = np.repeat(g[:, None, :], 6, axis=1)
        r = np.concatenate([2 * rows.ravel(), 2 * rows.ravel() + 1])
        c = np.concatenate([2 * cols.ravel(), 2 * cols.ravel() + 1])
        v = np.concatenate([T.ravel(), T.ravel()])
        return sp.coo_matrix((v, (r, c)),
                             shape=(self.n_vel, self.n_vel)).tocsr()

    def convection_matrix_fixed_first(self, a_full: np.ndarray) -> sp.csr_matrix:
        """Sparse matrix R with R @ b = convection(a, b)."""
        a_loc = self._local(a_full)
        T = np.einsum("emnrd,enc->emcrd", self.conv_tensor, a_loc,
                      optimize=True)
        g = self.tri_nodes
        m = np.broadcast_to(g[:, :, None, None, None], T.shape)
        rnode = np.broadcast_to(g[:, None, None, :, None], T.shape)
        comp_c = np.broadcast_to(np.arange(2)[None, None, :, None, None], T.shape)
        comp_d = np.broadcast_to(np.arange(2)[None, None, None, None, :], T.shape)
        rows = (2 * m + comp_c).ravel()
        cols = (2 * rnode + comp_d).ravel()
        return sp.coo_matrix((T.ravel(), (rows, cols)),
                             shape=(self.n_vel, self.n_vel)).tocsr()

    # -- postprocessing -----------------------------------------------------

    def locate(self, point) -> tuple[int, np.ndarray]:
        """Element containing ``point`` and its barycentric coordinates."""
        p = np.asarray(point, dtype=float)
        verts = self.mesh.vertices[self.mesh.triangles]
        v0, v1, v2 = verts[:, 0], verts[:, 1], verts[:, 2]
        d = ((v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1])
             - (v2[:, 0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1]))
        w1 = ((p[0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1])
              - (v2[:, 0] - v0[:, 0]) * (p[1] - v0[:, 1])) / d
        w2 = ((v1[:, 0] - v0[:, 0]) * (p[1] - v0[:, 1])
              - (p[0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])) / d
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-10) & (w1 >= -1e-10) & (w2 >= -1e-10)
        hits = np.nonzero(inside)[0]
        if len(hits) == 0:
            raise ConfigError(f"point {tuple(p)} lies outside the mesh")
        e = int(hits[0])
        return e, np.array([w0[e], w1[e], w2[e]])

    def velocity_probe(self, point) -> sp.csr_matrix:
        """Row operator (2, n_vel): probe @ u_full = velocity at ``point``."""
        e, bary = self.locate(point)
        vals, _ = _p2_basis(bary[None, :])
        nodes = self.tri_nodes[e]
        rows = np.concatenate([np.zeros(6, int), np.ones(6, int)])
        cols = np.concatenate([2 * nodes, 2 * nodes + 1])
        data = np.concatenate([vals[0], vals[0]])
        return sp.coo_matrix((data, (rows, cols)),
                             shape=(2, self.n_vel)).tocsr()

    def vorticity_p1(self, u_full: np.ndarray) -> np.ndarray:
        """L2-projection of curl(u) = du_y/dx - du_x/dy onto the P1 space."""
        u_loc = self._local(u_full)
        Lref = QUAD_BARY  # P1 basis values at the quadrature points
        curl_q = (np.einsum("eqrd,erd->eq", self._grad_phys[..., [0]],
                            u_loc[..., [1]])
                  - np.einsum("eqrd,erd->eq", self._grad_phys[..., [1]],
                              u_loc[..., [0]]))
        rhs_loc = np.einsum("eq,qi,eq->ei", self.quad_weights, Lref, curl_q)
        rhs = np.zeros(self.n_p1, dtype=u_full.dtype)
        np.add.at(rhs, self.mesh.triangles, rhs_loc)
        if np.iscomplexobj(rhs):
            return (self.p1_mass_lu.solve(rhs.real)
                    + 1j * self.p1_mass_lu.solve(rhs.imag))
        return self.p1_mass_lu.solve(rhs)

    def vorticity_rms_envelope(self, fields) -> np.ndarray:
        """Phase-free spatial signature of a set of velocity fields: the RMS
        over samples of the nodal P1 vorticity."""
        acc = None
        count = 0
        for u in fields:
            w = self.vorticity_p1(np.asarray(u, dtype=float))
            acc = w * w if acc is None else acc + w * w
            count += 1
        if count == 0:
            raise ConfigError("vorticity envelope of an empty field set")
        return np.sqrt(acc / count)

    def surface_force(self, u_full: np.ndarray, p: np.ndarray,
                      re: float) -> np.ndarray:
        """Traction force on the cylinder: loop over cylinder boundary edges
        of the consistent flux nu du/dn - p n, n pointing into the fluid."""
        nu = VISCOUS_LENGTH / re
        edge_elem = self.mesh.meta["cyl_edge_elem"]
        force = np.zeros(2)
        for (va, vb), e in edge_elem:
            pa, pb = self.mesh.vertices[va], self.mesh.vertices[vb]
            tang = pb - pa
            length = np.linalg.norm(tang)
            normal = np.array([tang[1], -tang[0]]) / length
            if np.dot(normal, 0.5 * (pa + pb) - CYLINDER_CENTER) < 0:
                normal = -normal
            verts = self.mesh.vertices[self.mesh.triangles[e]]
            J = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
            JinvT = np.linalg.inv(J).T
            u_loc = self._local(u_full)[e]
            p_loc = p[self.mesh.triangles[e]]
            for t, w in zip(EDGE_QP, EDGE_QW):
                x = pa + t * tang
                ref = np.linalg.solve(J, x - verts[0])
                bary = np.array([[1 - ref[0] - ref[1], ref[0], ref[1]]])
                _, gref = _p2_basis(bary)
                gphys = gref[0] @ JinvT.T
                grad_u = u_loc.T @ gphys            # (2 comp, 2 deriv)
                p_val = bary[0] @ p_loc
                traction = nu * (grad_u @ normal) - p_val * normal
                force += w * length * traction
        return force


def build_fem(mesh: Mesh) -> FemProblem:
    """Number the quadratic space, assemble all static operators and the
    per-element convection tensor, and record the Dirichlet data."""
    nv = mesh.n_vertices
    tris = mesh.triangles
    nt = len(tris)

    edge_id: dict[tuple[int, int], int] = {}
    for tri in tris:
        for a, b in ((tri[1], tri[2]), (tri[2], tri[0]), (tri[0], tri[1])):
            key = (min(a, b), max(a, b))
            if key not in edge_id:
                edge_id[key] = nv + len(edge_id)
    n_p2 = nv + len(edge_id)
    tri_nodes = np.empty((nt, 6), dtype=int)
    tri_nodes[:, :3] = tris
    for e, tri in enumerate(tris):
        for k, (a, b) in enumerate(((tri[1], tri[2]), (tri[2], tri[0]),
                                    (tri[0], tri[1]))):
            tri_nodes[e, 3 + k] = edge_id[(min(a, b), max(a, b))]
    p2_coords = np.empty((n_p2, 2))
    p2_coords[:nv] = mesh.vertices
    for (a, b), idx in edge_id.items():
        p2_coords[idx] = 0.5 * (mesh.vertices[a] + mesh.vertices[b])

    # geometry caches
    verts = mesh.vertices[tris]
    J = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]],
                 axis=2)                               # (nt, 2, 2), columns
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(detJ <= 0):
        raise NumericalError("mesh contains non-CCW or degenerate triangles")
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / detJ
    Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
    Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
    Jinv[:, 1, 1] = J[:, 0, 0] / detJ

    Nref, dNref = _p2_basis(QUAD_BARY)
    # physical gradients: grad_x N = Jinv^T grad_ref N
    grad = np.einsum("qik,ekd->eqid", dNref, Jinv, optimize=True)
    wq = QUAD_W[None, :] * (0.5 * detJ)[:, None]       # (nt, nq)

    mass_loc = np.einsum("eq,qi,qj->eij", wq, Nref, Nref, optimize=True)
    stiff_loc = np.einsum("eq,eqid,eqjd->eij", wq, grad, grad, optimize=True)
    Lref = QUAD_BARY
    div_loc = np.einsum("eq,qi,eqjd->eijd", wq, Lref, grad, optimize=True)
    p1_mass_loc = np.einsum("eq,qi,qj->eij", wq, Lref, Lref, optimize=True)

    S = (np.einsum("eq,qm,eqnd,qr->emnrd", wq, Nref, grad, Nref,
                   optimize=True)
         + np.einsum("eq,qm,qn,eqrd->emnrd", wq, Nref, Nref, grad,
                     optimize=True))

    def scatter_scalar(loc, conn, n):
        rows = np.repeat(conn[:, :, None], conn.shape[1], axis=2)
        cols = np.repeat(conn[:, None, :], conn.shape[1], axis=1)
        return sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(n, n)).tocsr()

    def vectorize(scalar_mat):
        return sp.kron(scalar_mat, sp.identity(2), format="csr")

    mass_scalar = scatter_scalar(mass_loc, tri_nodes, n_p2)
    stiff_scalar = scatter_scalar(stiff_loc, tri_nodes, n_p2)
    velocity_mass = vectorize(mass_scalar)
    stiffness = vectorize(stiff_scalar)
    p1_mass = scatter_scalar(p1_mass_loc, tris, nv)

    rows = np.repeat(tris[:, :, None], 6, axis=2)
    cols = np.repeat(tri_nodes[:, None, :], 3, axis=1)
    div = sp.coo_matrix(
        (np.concatenate([div_loc[..., 0].ravel(), div_loc[..., 1].ravel()]),
         (np.concatenate([rows.ravel(), rows.ravel()]),
          np.concatenate([2 * cols.ravel(), 2 * cols.ravel() + 1]))),
        shape=(nv, 2 * n_p2)).tocsr()

    # Dirichlet data: inlet profile; homogeneous on walls and cylinder
    dir_map: dict[int, np.ndarray] = {}
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tag == "outlet":
            continue
        mid = edge_id[(min(a, b), max(a, b))]
        for node in (a, b, mid):
            y = p2_coords[node, 1]
            val = inflow_profile(y) if tag == "inlet" else np.zeros(2)
            if node in dir_map and tag != "inlet":
                # wall/cylinder zero wins at inlet corners (y = 0 or H there,
                # where the profile vanishes anyway)
                dir_map[node] = np.zeros(2)
            else:
                dir_map.setdefault(node, val)
    dirichlet_nodes = np.array(sorted(dir_map), dtype=int)
    dirichlet_values = np.array([dir_map[n] for n in dirichlet_nodes])

    constrained = np.zeros(2 * n_p2, dtype=bool)
    constrained[2 * dirichlet_nodes] = True
    constrained[2 * dirichlet_nodes + 1] = True
    free_vel_dofs = np.nonzero(~constrained)[0]
    full_to_free = -np.ones(2 * n_p2, dtype=int)
    full_to_free[free_vel_dofs] = np.arange(len(free_vel_dofs))

    # cylinder boundary edge -> adjacent element (for traction integrals)
    edge_to_elem: dict[tuple[int, int], int] = {}
    for e, tri in enumerate(tris):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edge_to_elem[(min(a, b), max(a, b))] = e
    cyl_edge_elem = [((a, b), edge_to_elem[(min(a, b), max(a, b))])
                     for (a, b), tag in zip(mesh.boundary_edges,
                                            mesh.boundary_tags)
                     if tag == "cylinder"]
    mesh.meta["cyl_edge_elem"] = cyl_edge_elem

    return FemProblem(
        mesh=mesh, p2_coords=p2_coords, tri_nodes=tri_nodes,
        mass_scalar=mass_scalar, velocity_mass=velocity_mass,
        stiffness=stiffness, visc_stiffness=VISCOUS_LENGTH * stiffness,
        div=div, conv_tensor=S, quad_weights=wq,
        dirichlet_nodes=dirichlet_nodes, dirichlet_values=dirichlet_values,
        free_vel_dofs=free_vel_dofs, full_to_free=full_to_free,
        p1_mass_lu=spla.splu(p1_mass.tocsc()), _grad_phys=grad)
