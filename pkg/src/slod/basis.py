"""Localized basis functions: patch solves for selected sources, LOD baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficient import CoefficientField
from .fem import FineFunction, PatchProblem
from .localizer import sample_harmonic_space, select_sources
from .mesh import CartesianMesh, ConfigurationError, Patch, build_mesh, full_patch, patch as make_patch, group_patches


@dataclass
class LocalBasis:
    """One localized basis function with its piecewise-constant source.

    ``phi_local`` is the fine nodal vector on the patch grid (zero on the
    whole patch boundary); ``g_local`` holds the source coordinates w.r.t.
    the characteristic functions of the patch's coarse elements.
    """

    element: int
    patch: Patch
    ell: int
    fine_level: int
    g_local: np.ndarray
    phi_local: np.ndarray
    sigma: float
    method: str  # "slod" | "lod"

    def g_global(self) -> np.ndarray:
        """Source coordinates on the full coarse mesh (zero outside the patch)."""
        out = np.zeros(self.patch.mesh.n_elements)
        out[self.patch.elements] = self.g_local
        return out

    def phi_global(self) -> np.ndarray:
        """Fine nodal vector on the full fine mesh (exact zeros off-patch)."""
        from .fem import PatchGrid

        grid = PatchGrid(self.patch, self.fine_level)
        fine = build_mesh(self.patch.mesh.d, self.fine_level)
        out = np.zeros(fine.n_nodes)
        out[grid.global_nodes] = self.phi_local
        return out

    def phi_sparse(self, n_fine_nodes: int) -> sp.csc_matrix:
        from .fem import PatchGrid

        grid = PatchGrid(self.patch, self.fine_level)
        return sp.csc_matrix(
            (self.phi_local, grid.global_nodes, [0, grid.n_nodes]),
            shape=(n_fine_nodes, 1),
        )


def solve_patch_problem(
    problem: PatchProblem, g_coords: np.ndarray, element: int | None = None,
    sigma: float = float("nan"), method: str = "slod",
) -> LocalBasis:
    """Galerkin projection of the response to g onto the zero-boundary patch space."""
    patch = problem.patch
    if np.shape(g_coords) != (patch.n_elements,):
        raise ConfigurationError("source coordinates must match the patch elements")
    rhs = problem.p0_load(g_coords)
    phi = problem.solve_dirichlet_zero(rhs)
    return LocalBasis(
        element if element is not None else patch.center,
        patch,
        patch.ell,
        problem.grid.fine_level,
        np.asarray(g_coords, dtype=float),
        phi,
        sigma,
        method,
    )


def _global_fallback_basis(
    mesh: CartesianMesh, field: CoefficientField, elements, fine_level: int, ell: int
) -> list[LocalBasis]:
    """Ideal-method basis for groups whose patch covers the whole domain.

    With g = 1_T (L2-normalized) the coarse solve is exact for piecewise
    constant data, so sigma is reported as zero.
    """
    problem = PatchProblem(full_patch(mesh), field, fine_level)
    H = mesh.H
    out = []
    for T in elements:
        coords = np.zeros(mesh.n_elements)
        coords[T] = H ** (-mesh.d / 2)  # unit L2 norm
        basis = solve_patch_problem(problem, coords, element=T, sigma=0.0)
        basis = LocalBasis(
            T, basis.patch, ell, fine_level, basis.g_local, basis.phi_local, 0.0, "slod"
        )
        out.append(basis)
    return out


def _touches_boundary(p: Patch) -> bool:
    n = p.mesh.n_per_axis
    return any(l == 0 for l in p.lo) or any(h == n - 1 for h in p.hi)


def build_slod_basis(
    mesh: CartesianMesh,
    field: CoefficientField,
    ell: int,
    fine_level: int,
    seed: int,
    samples_multiplier: int = 5,
) -> list[LocalBasis]:
    """One super-localized basis function per coarse element.

    Patches are grouped; per group the k sources belonging to the k smallest
    singular values are computed on the representative patch and one patch
    problem is solved per source.  Groups are processed smallest patch first
    and every selection on a patch that contains a previously handled patch
    is restricted to the L2-orthogonal complement of the sources chosen
    there: nested boundary patches would otherwise rediscover the same
    near-orthogonal sources and render the global source set singular.
    Output is ordered by element index.
    """
    out: list[LocalBasis] = []
    groups = sorted(
        group_patches(mesh, ell),
        key=lambda g: (g.representative.n_elements, g.representative.center),
    )
    # sources selected on boundary-touching patches, kept for deflation
    pool: list[tuple[Patch, np.ndarray]] = []
    for group in groups:
        rep = group.representative
        if group.is_global or rep.is_global:
            out.extend(
                _global_fallback_basis(mesh, field, group.members, fine_level, ell)
            )
            continue
        deflate = None
        if _touches_boundary(rep):
            nested = [G for (p, G) in pool if rep.contains(p)]
            if nested:
                # restrict global source columns to the patch elements
                deflate = np.concatenate(nested, axis=1)[rep.elements]
        problem = PatchProblem(rep, field, fine_level)
        N = rep.n_elements
        X = sample_harmonic_space(problem, samples_multiplier * N, seed)
        members = sorted(group.members)
        sel = select_sources(
            X, group.k, anchor=group.anchor, deflate=deflate, members=members
        )
        if _touches_boundary(rep):
            G = np.zeros((mesh.n_elements, group.k))
            G[rep.elements] = sel.g_coords
            pool.append((rep, G))
        for i, T in enumerate(members):
            out.append(
                solve_patch_problem(
                    problem, sel.g_coords[:, i], element=T, sigma=float(sel.sigma[i])
                )
            )
    out.sort(key=lambda b: b.element)
    return out


def bubble(mesh: CartesianMesh, T: int, fine_level: int) -> FineFunction:
    """Nonnegative tensor-product bubble supported in element T with unit mean.

    The profile is the Q1 interpolant of the 1D hat peaking at the element
    center, so the bubble lives in the fine space exactly.
    """
    if fine_level < mesh.p + 1:
        raise ConfigurationError("fine level must refine the coarse mesh")
    fine = build_mesh(mesh.d, fine_level)
    r = 2 ** (fine_level - mesh.p)
    from .mesh import element_multi

    t = element_multi(mesh, T)
    # 1D hat profile on the r+1 local fine nodes of the element
    xi = np.linspace(0.0, 1.0, r + 1)
    profile = 1.0 - np.abs(2.0 * xi - 1.0)
    # mean of the hat over [0, 1]
    mean_1d = 0.5
    if mesh.d == 1:
        block = profile
    else:
        block = np.outer(profile, profile)
    slices = tuple(
        slice(ti * r, ti * r + r + 1) for ti in np.atleast_1d(t)
    )
    full = np.zeros(fine.node_shape, order="F")
    full[slices] = block / mean_1d ** mesh.d
    return FineFunction(fine, full.ravel(order="F"))


def build_lod_basis(
    mesh: CartesianMesh, field: CoefficientField, ell: int, fine_level: int
) -> list[LocalBasis]:
    """Classical LOD basis via the patch saddle-point problem.

    Per element the function minimizing the energy subject to prescribed
    element averages (1 on T, 0 elsewhere in the patch) is computed; the
    negative Lagrange multiplier is the piecewise constant source of the
    basis function.
    """
    out = []
    for T in range(mesh.n_elements):
        pt = make_patch(mesh, T, ell)
        problem = PatchProblem(pt, field, fine_level)
        out.append(_lod_element(problem, T))
    return out


def _lod_element(problem: PatchProblem, T: int) -> LocalBasis:
    grid = problem.grid
    patch = problem.patch
    H = patch.mesh.H
    d = patch.mesh.d
    interior = grid.interior
    K_ii = problem.stiffness[interior][:, interior]
    # constraint matrix: exact integrals of hats over coarse patch elements
    C = (H ** d * problem.grid.projection)[:, interior]
    N = patch.n_elements
    sys = sp.bmat([[K_ii, C.T], [C, None]], format="csc")
    rhs = np.zeros(K_ii.shape[0] + N)
    local_T = int(np.searchsorted(patch.elements, T))
    rhs[K_ii.shape[0] + local_T] = H ** d  # mean over T equals one
    try:
        sol = spla.splu(sys).solve(rhs)
    except RuntimeError as exc:
        raise RuntimeError(f"saddle-point factorization failed: {exc}") from exc
    phi = np.zeros(grid.n_nodes)
    phi[interior] = sol[: K_ii.shape[0]]
    g = -sol[K_ii.shape[0] :]
    return LocalBasis(
        T, patch, patch.ell, grid.fine_level, g, phi, float("nan"), "lod"
    )
