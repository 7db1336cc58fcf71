"""P1 finite elements on a uniform triangulation of the unit square.

The mesh has ``(n+1)**2`` nodes numbered row by row (``i + j*(n+1)`` is the
node at ``(i/n, j/n)``); every cell is split along its lower-left to
upper-right diagonal.  Coefficients live on triangles, solution fields on
nodes.  Boundary quantities are indexed by position in
``Mesh.boundary_nodes``, which walks the boundary counter-clockwise starting
at the origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleDataError, InvalidArgumentError

__all__ = [
    "Mesh",
    "build_uniform_mesh",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_neumann_load",
    "boundary_weights",
    "edge_values",
    "solve_neumann_elliptic",
    "interpolate",
    "export_mesh_text",
]


@dataclass(frozen=True, eq=False)
class Mesh:
    n: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    boundary_edges: np.ndarray
    edge_lengths: np.ndarray
    edge_side: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three hat functions on each triangle, shape (T, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.signed_areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([gx, gy], axis=2) / two_area[:, None, None]

    @cached_property
    def boundary_edge_local(self) -> np.ndarray:
        """Boundary edges as pairs of positions into ``boundary_nodes``."""
        m = len(self.boundary_nodes)
        k = np.arange(m)
        return np.stack([k, (k + 1) % m], axis=1)

    @cached_property
    def lumped_node_areas(self) -> np.ndarray:
        """Row sums of the consistent mass matrix (area/3 per adjacent triangle)."""
        out = np.zeros(self.n_nodes)
        np.add.at(out, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return out

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Element-constant gradient of the P1 field ``u``, shape (T, 2)."""
        return np.einsum("tk,tkd->td", u[self.triangles], self.basis_gradients)

    def grid(self, u: np.ndarray) -> np.ndarray:
        """View nodal values as an ``(n+1, n+1)`` array indexed ``[j, i]``."""
        return u.reshape(self.n + 1, self.n + 1)


def build_uniform_mesh(n: int) -> Mesh:
    if int(n) != n or n < 2:
        raise InvalidArgumentError(f"need an integer n >= 2, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    # exact grid coordinates, so boundary nodes sit exactly on 0 or 1
    nodes[:, 0] = np.tile(np.arange(n + 1), n + 1) / n
    nodes[:, 1] = np.repeat(np.arange(n + 1), n + 1) / n

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + j * (n + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    k = np.arange(n)
    bottom = k
    right = n + k * (n + 1)
    top = (n - k) + n * (n + 1)
    left = (n - k) * (n + 1)
    boundary_nodes = np.concatenate([bottom, right, top, left]).astype(np.int64)
    edges = np.column_stack([boundary_nodes, np.roll(boundary_nodes, -1)])
    lengths = np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1)
    side = np.repeat(np.arange(4), n)
    return Mesh(n, nodes, triangles, boundary_nodes, edges, lengths, side)


def _scatter_matrix(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    N = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * ref[None]
    return _scatter_matrix(mesh, local)


def _check_element_field(mesh: Mesh, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = np.full(mesh.n_triangles, float(a))
    if a.shape != (mesh.n_triangles,):
        raise InvalidArgumentError(
            f"element field has shape {a.shape}, expected ({mesh.n_triangles},)"
        )
    return a


def assemble_stiffness(mesh: Mesh, a) -> sp.csr_matrix:
    """Stiffness matrix of ``-div(a grad u)`` with natural (Neumann) conditions.

    ``a`` holds one positive value per triangle (a scalar is broadcast).
    """
    a = _check_element_field(mesh, a)
    if not np.all(a > 0):
        raise InvalidArgumentError("diffusion coefficient must be strictly positive")
    G = mesh.basis_gradients
    local = np.einsum("tid,tjd->tij", G, G) * (a * mesh.areas)[:, None, None]
    return _scatter_matrix(mesh, local)


def edge_values(mesh: Mesh, func) -> np.ndarray:
    """Sample ``func(x, y, nx, ny)`` at both ends of every boundary edge.

    Returns an array of shape ``(n_edges, 2)``; corner nodes receive the
    value seen from each adjacent side, so normal-dependent data such as
    ``nu . grad w`` are represented exactly.
    """
    normals = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])[mesh.edge_side]
    out = np.empty((len(mesh.boundary_edges), 2))
    for end in range(2):
        p = mesh.nodes[mesh.boundary_edges[:, end]]
        out[:, end] = func(p[:, 0], p[:, 1], normals[:, 0], normals[:, 1])
    return out


def _as_edge_values(mesh: Mesh, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    m = len(mesh.boundary_nodes)
    if eta.shape == (m,):
        return eta[mesh.boundary_edge_local]
    if eta.shape == (m, 2):
        return eta
    raise InvalidArgumentError(
        f"boundary data has shape {eta.shape}; expected ({m},) nodal or ({m}, 2) per-edge values"
    )


def assemble_neumann_load(mesh: Mesh, eta, quadrature: str = "trapezoid") -> np.ndarray:
    """Load vector ``b_i = \\int_{\\partial\\Omega} eta phi_i dS``.

    ``eta`` is given either per boundary node (length ``4n``) or per edge end
    (shape ``(4n, 2)``, see :func:`edge_values`).  The default nodal
    trapezoidal rule is the one used by the time stepper and the misfit;
    ``quadrature="exact"`` integrates the piecewise-linear ``eta`` exactly.
    """
    ev = _as_edge_values(mesh, eta)
    L = mesh.edge_lengths
    if quadrature == "trapezoid":
        c0 = 0.5 * L * ev[:, 0]
        c1 = 0.5 * L * ev[:, 1]
    elif quadrature == "exact":
        c0 = L * (2.0 * ev[:, 0] + ev[:, 1]) / 6.0
        c1 = L * (ev[:, 0] + 2.0 * ev[:, 1]) / 6.0
    else:
        raise InvalidArgumentError(f"unknown quadrature {quadrature!r}")
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.boundary_edges[:, 0], c0)
    np.add.at(b, mesh.boundary_edges[:, 1], c1)
    return b


def boundary_weights(mesh: Mesh) -> np.ndarray:
    """Trapezoidal weights of the boundary nodes (half the adjacent edge lengths)."""
    w = np.zeros(len(mesh.boundary_nodes))
    loc = mesh.boundary_edge_local
    np.add.at(w, loc[:, 0], 0.5 * mesh.edge_lengths)
    np.add.at(w, loc[:, 1], 0.5 * mesh.edge_lengths)
    return w


def solve_neumann_elliptic(mesh: Mesh, a, eta, rtol: float = 1e-10) -> np.ndarray:
    """Mean-zero solution of ``-div(a grad w) = 0``, ``a dw/dn = eta``.

    The constraint ``1^T M w = 0`` enters through one Lagrange multiplier.
    Raises :class:`IncompatibleDataError` when ``sum(b)`` is not zero
    relative to ``sum(|b|)``.
    """
    K = assemble_stiffness(mesh, a)
    b = assemble_neumann_load(mesh, eta)
    defect = abs(b.sum())
    scale = np.abs(b).sum()
    if scale == 0.0:
        return np.zeros(mesh.n_nodes)
    if defect > rtol * scale:
        raise IncompatibleDataError(
            f"Neumann data violate compatibility: |sum b| = {defect:.3e}", defect
        )
    m = mesh.lumped_node_areas  # = M @ 1
    A = sp.bmat([[K, sp.csr_matrix(m[:, None])], [sp.csr_matrix(m[None, :]), None]], format="csc")
    rhs = np.concatenate([b, [0.0]])
    sol = spla.spsolve(A, rhs)
    return sol[:-1]


def interpolate(mesh: Mesh, func) -> np.ndarray:
    """Nodal interpolant of ``func(x, y)``."""
    return np.asarray(func(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float) * np.ones(mesh.n_nodes)


def export_mesh_text(mesh: Mesh, path) -> None:
    """Write nodes then triangles, one record per line."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for k, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{k} {x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for k, (p, q, r) in enumerate(mesh.triangles):
            fh.write(f"{k} {p} {q} {r}\n")
