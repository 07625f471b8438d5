"""Global coarse solves (Galerkin and collocation), references and diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .basis import LocalBasis
from .coefficient import CoefficientField
from .fem import (
    FineFunction,
    P0Function,
    PatchProblem,
    build_mesh,
    global_problem,
    project_P0,
)
from .mesh import CartesianMesh, ConfigurationError

GRAM_CONDITION_LIMIT = 1e12


class StabilityError(RuntimeError):
    """Coarse system numerically singular (basis not a stable Riesz system)."""

    def __init__(self, message: str, condition: float, sigma_spectrum: np.ndarray):
        super().__init__(message)
        self.condition = condition
        self.sigma_spectrum = sigma_spectrum


@dataclass
class HomogenizedSolution:
    """Coarse coefficients and their fine-grid realization."""

    mesh: CartesianMesh
    fine_level: int
    coefficients: np.ndarray
    u: FineFunction
    method: str  # "galerkin" | "collocation"
    riesz_cond: float = float("nan")
    sigma_max: float = float("nan")
    energy_err: float = dc_field(default=float("nan"))


def basis_matrix(basis: list[LocalBasis], fine_level: int) -> sp.csc_matrix:
    """Sparse (n_fine_nodes, N) matrix of the localized basis vectors."""
    if not basis:
        raise ConfigurationError("empty basis")
    mesh = basis[0].patch.mesh
    fine = build_mesh(mesh.d, fine_level)
    cols = [b.phi_sparse(fine.n_nodes) for b in basis]
    return sp.hstack(cols, format="csc")


def source_matrix(basis: list[LocalBasis]) -> np.ndarray:
    """(N_elements, N_basis) matrix of P0 source coordinates in global frame."""
    return np.column_stack([b.g_global() for b in basis])


def riesz_condition(basis: list[LocalBasis]) -> float:
    """2-norm condition number of the Gram matrix of the L2-normalized sources.

    The sources live in P0 of the coarse mesh, whose L2 inner product is
    H^d times the Euclidean one; normalization cancels that factor.
    """
    B = source_matrix(basis)
    norms = np.linalg.norm(B, axis=0)
    if np.any(norms == 0):
        return float("inf")
    G = (B / norms).T @ (B / norms)
    w = np.linalg.eigvalsh(G)
    if w[0] <= 0:
        return float("inf")
    return float(w[-1] / w[0])


def _sigma_max(basis: list[LocalBasis]) -> float:
    sig = np.array([b.sigma for b in basis])
    finite = sig[np.isfinite(sig)]
    return float(finite.max()) if finite.size else float("nan")


def _load_vector(problem: PatchProblem, f) -> np.ndarray:
    """Fine load vector for P0 data (exact), callables, nodal arrays or scalars."""
    if isinstance(f, P0Function):
        if f.mesh != problem.patch.mesh:
            raise ConfigurationError("P0 data must live on the coarse mesh of the basis")
        # exact integration of piecewise constants against the fine hats
        return problem.p0_load(f.values)
    if np.isscalar(f):
        ones = np.full(problem.patch.n_elements, float(f))
        return problem.p0_load(ones)
    if callable(f):
        vals = np.asarray(f(problem.grid.node_coords()), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != (problem.grid.n_nodes,):
            raise ConfigurationError("nodal source has wrong length")
    return problem.mass @ vals


def _check_gram(G: np.ndarray, basis: list[LocalBasis], what: str) -> float:
    w = np.linalg.eigvalsh((G + G.T) / 2)
    cond = float("inf") if w[0] <= 0 else float(w[-1] / w[0])
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        sig = np.array([b.sigma for b in basis])
        raise StabilityError(
            f"{what} condition {cond:.3e} exceeds {GRAM_CONDITION_LIMIT:.0e}; "
            "basis is numerically linearly dependent",
            cond,
            sig,
        )
    return cond


def solve_galerkin(
    basis: list[LocalBasis], f, coeff: CoefficientField, fine_level: int
) -> HomogenizedSolution:
    """Coarse Galerkin solve in the span of the localized basis."""
    mesh = basis[0].patch.mesh
    problem = global_problem(mesh, coeff, fine_level)
    Phi = basis_matrix(basis, fine_level)
    G = np.asarray((Phi.T @ (problem.stiffness @ Phi)).todense())
    _check_gram(G, basis, "coarse stiffness")
    load = Phi.T @ _load_vector(problem, f)
    c = np.linalg.solve(G, load)
    res = np.linalg.norm(G @ c - load)
    if res > 1e-10 * max(np.linalg.norm(load), 1.0):
        raise RuntimeError(f"coarse solve residual {res:.3e} above tolerance")
    u = FineFunction(build_mesh(mesh.d, fine_level), np.asarray(Phi @ c).ravel())
    return HomogenizedSolution(
        mesh, fine_level, c, u, "galerkin",
        riesz_cond=riesz_condition(basis),
        sigma_max=_sigma_max(basis),
    )


def solve_collocation(
    basis: list[LocalBasis], f, coeff: CoefficientField, fine_level: int
) -> HomogenizedSolution:
    """Coarse collocation solve: match element averages of the data.

    The coefficients solve B c = proj(f) where column T of B holds the P0
    coordinates of the source of basis function T; only the coarse sources
    are needed to assemble the system.
    """
    mesh = basis[0].patch.mesh
    B = source_matrix(basis)
    norms = np.linalg.norm(B, axis=0)
    if np.any(norms == 0):
        raise StabilityError(
            "zero source column in collocation system", float("inf"),
            np.array([b.sigma for b in basis]),
        )
    _check_gram((B / norms).T @ (B / norms), basis, "source Gram")
    fbar = _p0_of(f, mesh, fine_level)
    c = np.linalg.solve(B, fbar)
    res = np.linalg.norm(B @ c - fbar)
    if res > 1e-10 * max(np.linalg.norm(fbar), 1.0):
        raise RuntimeError(f"collocation residual {res:.3e} above tolerance")
    Phi = basis_matrix(basis, fine_level)
    u = FineFunction(build_mesh(mesh.d, fine_level), np.asarray(Phi @ c).ravel())
    return HomogenizedSolution(
        mesh, fine_level, c, u, "collocation",
        riesz_cond=riesz_condition(basis),
        sigma_max=_sigma_max(basis),
    )


def _p0_of(f, mesh: CartesianMesh, fine_level: int) -> np.ndarray:
    if isinstance(f, P0Function):
        if f.mesh != mesh:
            raise ConfigurationError("P0 data must live on the coarse mesh")
        return np.asarray(f.values, dtype=float)
    if np.isscalar(f):
        return np.full(mesh.n_elements, float(f))
    return project_P0(f, mesh, fine_level).values


def reference_solve(f, coeff: CoefficientField, fine_level: int, d: int | None = None) -> FineFunction:
    """Global fine-grid Dirichlet solve used as the error reference."""
    d = coeff.d if d is None else d
    # any full-domain patch problem assembles the same fine system; use the
    # data's own coarse mesh so P0 loads integrate exactly
    coarse = f.mesh if isinstance(f, P0Function) else build_mesh(d, 0)
    problem = global_problem(coarse, coeff, fine_level)
    rhs = _load_vector(problem, f)
    u = problem.solve_dirichlet_zero(rhs)
    res = problem.stiffness @ u - rhs
    interior = problem.grid.interior
    scale = max(np.linalg.norm(rhs), 1.0)
    if np.linalg.norm(res[interior]) > 1e-9 * scale:
        raise RuntimeError("reference solve residual above tolerance")
    return FineFunction(build_mesh(d, fine_level), u)


def energy_error(u: HomogenizedSolution, ref: FineFunction, coeff: CoefficientField) -> float:
    """Energy norm of the difference between a coarse solution and a reference."""
    if u.u.mesh != ref.mesh:
        raise ConfigurationError("solution and reference live on different meshes")
    problem = global_problem(build_mesh(ref.mesh.d, 0), coeff, ref.mesh.p)
    return problem.energy_norm(u.u.values - ref.values)
