"""Q1 finite elements on Cartesian grids.

Stiffness/mass assembly with elementwise-constant coefficients, piecewise
constant projection, zero-Dirichlet solves, harmonic extensions and norms.
Element integrals are closed-form (tensor products of the exact 1D Q1
matrices), so there is no quadrature error for elementwise-constant data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import coefficient as coeff_mod
from .mesh import CartesianMesh, ConfigurationError, Patch, build_mesh, full_patch


@dataclass
class FineFunction:
    """Nodal Q1 function on a (fine) Cartesian mesh, flat axis-0-fastest order."""

    mesh: CartesianMesh
    values: np.ndarray

    def export_csv(self, path) -> None:
        coords = self.mesh.node_coords()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node"] + [f"x{i}" for i in range(self.mesh.d)] + ["value"])
            for j, v in enumerate(self.values):
                writer.writerow([j] + [repr(c) for c in coords[j]] + [repr(float(v))])


@dataclass
class P0Function:
    """Piecewise constant function on a coarse mesh, one value per element."""

    mesh: CartesianMesh
    values: np.ndarray


def _local_stiffness(d: int, h: float) -> np.ndarray:
    k1 = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    m1 = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    if d == 1:
        return k1
    return np.kron(m1, k1) + np.kron(k1, m1)


def _local_mass(d: int, h: float) -> np.ndarray:
    m1 = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    if d == 1:
        return m1
    return np.kron(m1, m1)


def _element_node_table(elem_shape, node_shape) -> np.ndarray:
    """(n_elements, 2^d) local node ids of each element's corners."""
    d = len(elem_shape)
    ne = int(np.prod(elem_shape))
    el = np.stack(np.unravel_index(np.arange(ne), elem_shape, order="F"), axis=-1)
    corners = np.stack(np.unravel_index(np.arange(2 ** d), (2,) * d, order="F"), axis=-1)
    node_multi = el[:, None, :] + corners[None, :, :]
    return np.ravel_multi_index(
        tuple(node_multi[..., i] for i in range(d)), node_shape, order="F"
    )


def _assemble(local_mat, table, weights, n_nodes) -> sp.csr_matrix:
    ne, nl = table.shape
    rows = np.repeat(table, nl, axis=1).ravel()
    cols = np.tile(table, (1, nl)).ravel()
    vals = (np.asarray(weights)[:, None, None] * local_mat[None]).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()


class PatchGrid:
    """Fine Q1 grid covering one coarse patch.

    Local node/element numbering is lexicographic with axis 0 fastest over the
    patch box.  Boundary nodes of the patch are split into ``gamma1``
    (on the patch boundary but not on the domain boundary; carries boundary
    sampling data) and ``gamma2`` (on the domain boundary; homogeneous
    Dirichlet).  Nodes on both are assigned to gamma2.
    """

    def __init__(self, patch: Patch, fine_level: int):
        mesh = patch.mesh
        if fine_level < mesh.p:
            raise ConfigurationError(
                f"fine level {fine_level} below coarse level {mesh.p}"
            )
        self.patch = patch
        self.fine_level = fine_level
        self.r = 2 ** (fine_level - mesh.p)
        widths = [hi - lo + 1 for lo, hi in zip(patch.lo, patch.hi)]
        self.widths = tuple(widths)
        self.elem_shape = tuple(w * self.r for w in widths)
        self.node_shape = tuple(s + 1 for s in self.elem_shape)
        self.h = 2.0 ** -fine_level
        self.d = mesh.d
        self.n_elements = int(np.prod(self.elem_shape))
        self.n_nodes = int(np.prod(self.node_shape))
        self.origin = tuple(lo * self.r for lo in patch.lo)
        self.n_coarse = patch.n_elements

    @cached_property
    def node_multi(self) -> np.ndarray:
        return np.stack(
            np.unravel_index(np.arange(self.n_nodes), self.node_shape, order="F"),
            axis=-1,
        )

    @cached_property
    def element_nodes(self) -> np.ndarray:
        return _element_node_table(self.elem_shape, self.node_shape)

    @cached_property
    def _classification(self):
        local = self.node_multi
        nf = 2 ** self.fine_level
        glob = local + np.asarray(self.origin)
        on_patch_bnd = np.zeros(self.n_nodes, dtype=bool)
        on_domain_bnd = np.zeros(self.n_nodes, dtype=bool)
        for i in range(self.d):
            on_patch_bnd |= (local[:, i] == 0) | (local[:, i] == self.node_shape[i] - 1)
            on_domain_bnd |= (glob[:, i] == 0) | (glob[:, i] == nf)
        gamma2 = on_patch_bnd & on_domain_bnd
        gamma1 = on_patch_bnd & ~on_domain_bnd
        interior = ~on_patch_bnd
        return (
            np.flatnonzero(gamma1),
            np.flatnonzero(gamma2),
            np.flatnonzero(interior),
        )

    @property
    def gamma1(self) -> np.ndarray:
        return self._classification[0]

    @property
    def gamma2(self) -> np.ndarray:
        return self._classification[1]

    @property
    def interior(self) -> np.ndarray:
        return self._classification[2]

    @cached_property
    def global_nodes(self) -> np.ndarray:
        """Flat ids of the patch nodes in the full fine mesh."""
        glob = self.node_multi + np.asarray(self.origin)
        fine_shape = (2 ** self.fine_level + 1,) * self.d
        return np.ravel_multi_index(
            tuple(glob[:, i] for i in range(self.d)), fine_shape, order="F"
        )

    @cached_property
    def coarse_of_fine(self) -> np.ndarray:
        """Local coarse element index of each local fine element."""
        el = np.stack(
            np.unravel_index(np.arange(self.n_elements), self.elem_shape, order="F"),
            axis=-1,
        )
        coarse = el // self.r
        return np.ravel_multi_index(
            tuple(coarse[:, i] for i in range(self.d)), self.widths, order="F"
        )

    @cached_property
    def projection(self) -> sp.csr_matrix:
        """Sparse (n_coarse x n_nodes) map from nodal values to element means."""
        H = self.patch.mesh.H
        w = self.h ** self.d / (2 ** self.d * H ** self.d)
        table = self.element_nodes
        rows = np.repeat(self.coarse_of_fine, table.shape[1])
        cols = table.ravel()
        vals = np.full(rows.shape, w)
        return sp.coo_matrix(
            (vals, (rows, cols)), shape=(self.n_coarse, self.n_nodes)
        ).tocsr()

    def coefficient_values(self, field: coeff_mod.CoefficientField) -> np.ndarray:
        """Per-local-fine-element values of a coefficient field."""
        if self.fine_level < field.eps_level:
            raise ConfigurationError("fine level does not resolve the coefficient")
        el = np.stack(
            np.unravel_index(np.arange(self.n_elements), self.elem_shape, order="F"),
            axis=-1,
        )
        glob = el + np.asarray(self.origin)
        eps = glob // (2 ** (self.fine_level - field.eps_level))
        eps_flat = np.ravel_multi_index(
            tuple(eps[:, i] for i in range(self.d)),
            field.eps_mesh.elem_shape,
            order="F",
        )
        return field.values[eps_flat]

    def node_coords(self) -> np.ndarray:
        return (self.node_multi + np.asarray(self.origin)) * self.h


@dataclass
class SparseOperator:
    """Symmetric stiffness restricted to the free (non-Dirichlet) nodes."""

    matrix: sp.csr_matrix
    free: np.ndarray
    grid: PatchGrid | None = None

    def __post_init__(self):
        self._lu = None

    def solve(self, rhs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Direct sparse solve; raises on a singular factorization."""
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except RuntimeError as exc:
                raise RuntimeError(f"singular stiffness factorization: {exc}") from exc
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        return x


class PatchProblem:
    """All assembled operators for one patch at one fine level.

    Caches the interior factorization so the many right-hand sides of the
    sampling step reuse it.
    """

    def __init__(self, patch: Patch, field: coeff_mod.CoefficientField, fine_level: int):
        self.grid = PatchGrid(patch, fine_level)
        self.field = field
        self.avals = self.grid.coefficient_values(field)

    @property
    def patch(self) -> Patch:
        return self.grid.patch

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        g = self.grid
        return _assemble(
            _local_stiffness(g.d, g.h), g.element_nodes, self.avals, g.n_nodes
        )

    @cached_property
    def stiffness_unit(self) -> sp.csr_matrix:
        g = self.grid
        return _assemble(
            _local_stiffness(g.d, g.h),
            g.element_nodes,
            np.ones(g.n_elements),
            g.n_nodes,
        )

    @cached_property
    def mass(self) -> sp.csr_matrix:
        g = self.grid
        return _assemble(
            _local_mass(g.d, g.h), g.element_nodes, np.ones(g.n_elements), g.n_nodes
        )

    @cached_property
    def h1_form(self) -> sp.csr_matrix:
        return self.mass + self.stiffness_unit

    @cached_property
    def _lu_interior(self):
        g = self.grid
        if g.interior.size == 0:
            raise ConfigurationError("patch has no interior nodes")
        K_ii = self.stiffness[g.interior][:, g.interior]
        return spla.splu(K_ii.tocsc())

    def solve_dirichlet_zero(self, rhs: np.ndarray) -> np.ndarray:
        """Solve with zero Dirichlet data on the whole patch boundary.

        ``rhs`` is a full nodal load vector (or a stack of them); the result
        is a full nodal vector vanishing on the patch boundary.
        """
        g = self.grid
        rhs = np.asarray(rhs, dtype=float)
        x = np.zeros(rhs.shape)
        x[g.interior] = self._lu_interior.solve(rhs[g.interior])
        return x

    def harmonic_extension(self, boundary_values: np.ndarray) -> np.ndarray:
        """A-harmonic extension of nodal data given on gamma1.

        The result matches the data on gamma1, is zero on gamma2, and its
        interior residual against every interior hat function vanishes.
        Accepts a (n_gamma1,) vector or a (n_gamma1, m) stack.
        """
        g = self.grid
        s = np.asarray(boundary_values, dtype=float)
        if s.shape[0] != g.gamma1.size:
            raise ConfigurationError("boundary data must cover all gamma1 nodes")
        K_ib = self.stiffness[g.interior][:, g.gamma1]
        out_shape = (g.n_nodes,) + s.shape[1:]
        x = np.zeros(out_shape)
        x[g.gamma1] = s
        x[g.interior] = self._lu_interior.solve(-(K_ib @ s))
        return x

    def p0_load(self, coords: np.ndarray) -> np.ndarray:
        """Exact load vector of a P0 source with the given element coordinates."""
        H = self.patch.mesh.H
        return H ** self.grid.d * (self.grid.projection.T @ np.asarray(coords, float))

    def project_P0(self, nodal: np.ndarray) -> np.ndarray:
        """Element means of the Q1 interpolant (exact L2 projection onto P0)."""
        return self.grid.projection @ np.asarray(nodal, dtype=float)

    def energy_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.stiffness @ v), 0.0)))

    def l2_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.mass @ v), 0.0)))

    def h1_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.h1_form @ v), 0.0)))


def global_problem(
    coarse: CartesianMesh, field: coeff_mod.CoefficientField, fine_level: int
) -> PatchProblem:
    """PatchProblem on the full domain; local node ids equal global fine ids."""
    return PatchProblem(full_patch(coarse), field, fine_level)


# ---------------------------------------------------------------------------
# spec-level convenience wrappers

def assemble_stiffness(
    grid: PatchGrid, coeff_values: np.ndarray, dirichlet: np.ndarray
) -> SparseOperator:
    """Stiffness over a patch grid with Dirichlet rows/columns eliminated."""
    K = _assemble(
        _local_stiffness(grid.d, grid.h), grid.element_nodes, coeff_values, grid.n_nodes
    )
    mask = np.ones(grid.n_nodes, dtype=bool)
    mask[np.asarray(dirichlet, dtype=int)] = False
    free = np.flatnonzero(mask)
    if free.size == 0:
        raise ConfigurationError("empty interior node set")
    return SparseOperator(K[free][:, free].tocsr(), free, grid)


def assemble_load(grid: PatchGrid, g) -> np.ndarray:
    """Load vector (g, phi_j) for a P0 source (exact) or a nodal function."""
    if isinstance(g, P0Function):
        H = g.mesh.H
        return H ** grid.d * (grid.projection.T @ g.values)
    values = g.values if isinstance(g, FineFunction) else np.asarray(g, dtype=float)
    M = _assemble(
        _local_mass(grid.d, grid.h), grid.element_nodes, np.ones(grid.n_elements),
        grid.n_nodes,
    )
    return M @ values


def solve_dirichlet(op: SparseOperator, rhs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    x = op.solve(rhs, tol)
    res = np.linalg.norm(op.matrix @ x - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > max(tol, 1e-9) * scale:
        raise RuntimeError(f"Dirichlet solve residual {res:.3e} above tolerance")
    return x


def harmonic_extension(problem: PatchProblem, boundary_values: np.ndarray) -> np.ndarray:
    return problem.harmonic_extension(boundary_values)


def project_P0(v, coarse: CartesianMesh, fine_level: int | None = None) -> P0Function:
    """Exact L2 projection onto piecewise constants of the coarse mesh.

    ``v`` may be a FineFunction (projected via exact integration of its Q1
    interpolant) or a callable, which is interpolated on the fine mesh of
    ``fine_level`` first.
    """
    if isinstance(v, FineFunction):
        grid = PatchGrid(full_patch(coarse), v.mesh.p)
        return P0Function(coarse, grid.projection @ v.values)
    if callable(v):
        if fine_level is None:
            raise ConfigurationError("fine_level required to project a callable")
        fine = build_mesh(coarse.d, fine_level)
        vals = np.asarray(v(fine.node_coords()), dtype=float)
        return project_P0(FineFunction(fine, vals), coarse)
    raise TypeError(f"cannot project object of type {type(v)!r}")


def _norm_via(v: FineFunction, field: coeff_mod.CoefficientField | None, which: str) -> float:
    coarse = build_mesh(v.mesh.d, 0)
    if field is None:
        field = coeff_mod.constant(1.0, d=v.mesh.d)
    problem = PatchProblem(full_patch(coarse), field, v.mesh.p)
    return getattr(problem, which)(v.values)


def energy_norm(v: FineFunction, field: coeff_mod.CoefficientField) -> float:
    return _norm_via(v, field, "energy_norm")


def l2_norm(v: FineFunction) -> float:
    return _norm_via(v, None, "l2_norm")


def h1_norm(v: FineFunction) -> float:
    return _norm_via(v, None, "h1_norm")
