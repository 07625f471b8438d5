"""Selection of optimal piecewise-constant source terms on patches.

The discrete space of A-harmonic functions on a patch (vanishing on the
domain-boundary part of the patch boundary) is probed with random boundary
samples; projecting the samples onto piecewise constants and taking an SVD
yields source terms that are nearly L2-orthogonal to the whole harmonic
space, together with the quasi-orthogonality measure sigma.  A dense
(sampling-free) realization of the same operator serves as the oracle for
sigma measurements, and a Steklov eigenproblem probe exposes the boundary
spectrum that drives the localization decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .coefficient import CoefficientField
from .fem import PatchProblem, _assemble, _element_node_table, _local_mass
from .mesh import ConfigurationError, Patch


class GlobalPatchError(RuntimeError):
    """The patch covers the whole domain; there is no boundary to sample."""


@dataclass
class HarmonicSampleMatrix:
    """Columns are P0 projections of random unit-H1 discrete harmonic functions.

    ``X`` is stored in the L2-orthonormal P0 frame (coordinates of the
    projection against 1_T / sqrt(|T|)), so its singular values are directly
    comparable with the operator formulation.  ``gram`` holds the H1 inner
    products of the underlying extensions; it lets the selection step
    re-orthonormalize the sampled harmonic subspace without keeping the fine
    vectors around.
    """

    patch: Patch
    fine_level: int
    m: int
    X: np.ndarray
    n_gamma1: int
    gram: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class SourceSelection:
    """The k smallest-singular-value source terms of one patch (group)."""

    patch: Patch
    k: int
    g_coords: np.ndarray  # (N, k) coordinates w.r.t. {1_K}; columns unit L2 norm
    sigma: np.ndarray  # (k,) per column; nondecreasing unless member-aligned
    full_spectrum: np.ndarray  # all singular value estimates, nonincreasing

    @property
    def sigma_T(self) -> float:
        """Worst (largest) selected singular value, the group's sigma."""
        return float(np.max(self.sigma))


#: number of boundary smoothing passes applied to raw samples when the sample
#: count cannot span the whole discrete harmonic space (m < #gamma1 nodes).
#: Smoothing concentrates the samples on the low-frequency part of the
#: boundary, whose harmonic extensions dominate the coarse projection.
SMOOTHING_PASSES = 2


def _column_rng(seed: int, patch_center: int, column: int) -> np.random.Generator:
    # per-column seeding keyed by (seed, patch, column): schedule independent
    return np.random.default_rng([seed, patch_center, column])


def _gamma1_smoother(grid) -> sp.csr_matrix:
    """One damped-Jacobi pass along the gamma1 polyline of the patch boundary.

    Adjacent boundary nodes average with weights (1/2, 1/4, 1/4); neighbors
    on gamma2 contribute their (zero) Dirichlet value.
    """
    g1 = grid.gamma1
    n = g1.size
    multi = grid.node_multi
    shape = grid.node_shape
    pos_of = -np.ones(grid.n_nodes, dtype=int)
    pos_of[g1] = np.arange(n)
    rows, cols = [], []
    for axis in range(grid.d):
        step = np.zeros(grid.d, dtype=int)
        step[axis] = 1
        for sgn in (-1, 1):
            nb = multi[g1] + sgn * step
            ok = np.all((nb >= 0) & (nb < np.asarray(shape)), axis=1)
            nb_flat = np.full(n, -1, dtype=int)
            nb_flat[ok] = np.ravel_multi_index(
                tuple(nb[ok, i] for i in range(grid.d)), shape, order="F"
            )
            valid = nb_flat >= 0
            nb_pos = np.where(valid, pos_of[np.where(valid, nb_flat, 0)], -1)
            sel = nb_pos >= 0
            rows.append(np.flatnonzero(sel))
            cols.append(nb_pos[sel])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    A = sp.coo_matrix(
        (np.full(rows.shape, 0.25), (rows, cols)), shape=(n, n)
    ).tocsr()
    return (0.5 * sp.identity(n, format="csr") + A).tocsr()


def sample_harmonic_space(
    problem: PatchProblem, m: int, seed: int
) -> HarmonicSampleMatrix:
    """Assemble the N x m sample matrix X for one patch.

    Each column draws i.i.d. standard normal nodal values on gamma1
    (smoothed along the boundary when m cannot span the full harmonic
    space), extends them A-harmonically, scales the extension to unit H1
    norm and projects onto the patch piecewise constants.
    """
    grid = problem.grid
    n_g1 = grid.gamma1.size
    if n_g1 == 0:
        raise GlobalPatchError("patch has empty gamma1; use the exactness fallback")
    N = grid.n_coarse
    if m < N:
        raise ConfigurationError(f"need at least N={N} samples, got m={m}")
    patch = problem.patch
    S = np.empty((n_g1, m))
    for j in range(m):
        S[:, j] = _column_rng(seed, patch.center, j).standard_normal(n_g1)
    if m < n_g1 and grid.d > 1 and SMOOTHING_PASSES > 0:
        Sm = _gamma1_smoother(grid)
        for _ in range(SMOOTHING_PASSES):
            S = Sm @ S
    E = problem.harmonic_extension(S)
    h1_sq = np.einsum("ij,ij->j", E, problem.h1_form @ E)
    E /= np.sqrt(h1_sq)[None, :]
    H = patch.mesh.H
    X = H ** (grid.d / 2) * (problem.project_P0(E))
    gram = E.T @ (problem.h1_form @ E)
    return HarmonicSampleMatrix(patch, grid.fine_level, m, X, n_g1, gram)


def _deflation_complement(deflate: np.ndarray | None, N: int, H: float, d: int):
    """Orthonormal basis of the P0 complement of already-selected sources.

    ``deflate`` holds unit-L2 source coordinate columns (same frame as
    ``g_coords``); returns None when there is nothing to deflate.
    """
    if deflate is None or deflate.size == 0:
        return None
    D = np.asarray(deflate, dtype=float) * H ** (d / 2)  # Euclidean frame
    U_D, s_D, _ = np.linalg.svd(D, full_matrices=True)
    r = int(np.count_nonzero(s_D > max(s_D.max(), 1.0) * 1e-10))
    if r == 0:
        return None
    return U_D[:, r:]


#: relative threshold below which singular directions count as numerically
#: degenerate: within such a tail the SVD's choice of directions is
#: arbitrary, and overlapping patches would pick correlated sources.
DEGENERACY_FLOOR = 1e-6


def _member_indicators(patch: Patch, members) -> np.ndarray:
    """Unit-L2 element indicators of the member elements, patch P0 frame."""
    elements = patch.elements
    E = np.zeros((elements.size, len(members)))
    for j, T in enumerate(members):
        pos = int(np.searchsorted(elements, T))
        if pos >= elements.size or elements[pos] != T:
            raise ConfigurationError(f"member element {T} not contained in the patch")
        E[pos, j] = 1.0
    return E


def _svd_tail(
    M: np.ndarray, k: int, dim: int, targets: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source directions for the k smallest singular values of M.

    Without ``targets`` this is the plain SVD tail (columns ordered by
    nondecreasing singular value).  With ``targets`` (dim x k unit element
    indicators of the group members) and a numerically degenerate tail of
    more than k directions, the k sources are instead chosen inside the
    whole degenerate subspace as the orthonormal set closest to the
    targets (orthogonal Procrustes): within such a subspace the singular
    directions carry no information, and aligning them with the member
    elements keeps selections on overlapping patches distinct.
    """
    U, s, _ = np.linalg.svd(M, full_matrices=M.shape[1] < dim)
    if s.size < dim:
        s = np.pad(s, (0, dim - s.size))
    r = k
    if targets is not None and s[0] > 0:
        r = max(k, int(np.count_nonzero(s <= DEGENERACY_FLOOR * s[0])))
    if targets is None or r <= k:
        cols = U[:, dim - k :][:, ::-1]  # nondecreasing singular values
        sigma = s[dim - k :][::-1].copy()
        return cols, sigma, s
    Ur = U[:, dim - r :]
    M_fit = Ur.T @ targets
    A, _, Bt = np.linalg.svd(M_fit, full_matrices=False)
    Q = A @ Bt  # best orthonormal fit of the targets inside the subspace
    cols = Ur @ Q
    tail = s[dim - r :]
    sigma = np.sqrt(np.einsum("i,ij->j", tail ** 2, Q ** 2))
    return cols, sigma, s


def select_sources(
    X: HarmonicSampleMatrix,
    k: int,
    anchor: int | None = None,
    deflate: np.ndarray | None = None,
    members=None,
) -> SourceSelection:
    """SVD-based selection of the k sources least visible to harmonic functions.

    The sampled harmonic subspace is first orthonormalized in H1 through the
    stored Gram matrix (whenever m >= #gamma1 this makes the decomposition
    the exact SVD of the localization operator); the singular values are
    scaled by sqrt(#gamma1 / rank) to account for the dimensions of the
    harmonic space the samples could not reach, so they estimate the sup of
    (g, v) over the unit H1 ball of the whole space.

    ``deflate`` (optional, (N, r) unit-L2 source columns) restricts the
    selection to the L2-orthogonal complement of sources already chosen on
    contained patches.  Without it, nested boundary patches re-discover the
    contained patches' near-orthogonal sources and the global source set
    degenerates.  ``members`` (optional, the group's sorted member elements)
    enables the degenerate-tail alignment of :func:`_svd_tail`; the returned
    columns then correspond to the members in that order.
    """
    N = X.n
    H = X.patch.mesh.H
    d = X.patch.mesh.d
    Wc = _deflation_complement(deflate, N, H, d)
    dim = N if Wc is None else Wc.shape[1]
    if not 1 <= k <= dim:
        raise ConfigurationError(f"need 1 <= k <= {dim}, got k={k}")
    w, V = np.linalg.eigh(X.gram)
    keep = w > w.max() * 1e-12
    W = V[:, keep] / np.sqrt(w[keep])
    X_orth = X.X @ W
    rank = X_orth.shape[1]
    targets = None
    if members is not None:
        targets = _member_indicators(X.patch, members)
        if Wc is not None:
            targets = Wc.T @ targets
    if Wc is not None:
        X_orth = Wc.T @ X_orth
    cols, sigma, s = _svd_tail(X_orth, k, dim, targets)
    scale = np.sqrt(X.n_gamma1 / rank)
    spectrum = s * scale
    sigma = sigma * scale
    if Wc is not None:
        cols = Wc @ cols
    coords = cols * H ** (-d / 2)  # unit L2 norm as P0 functions
    coords = _fix_signs(coords, X.patch, anchor)
    return SourceSelection(X.patch, k, coords, sigma, spectrum)


def _fix_signs(coords: np.ndarray, patch: Patch, anchor: int | None) -> np.ndarray:
    """Make the entry on the anchor element nonnegative (first nonzero if zero)."""
    if anchor is None:
        anchor = patch.center
    elements = patch.elements
    pos = int(np.searchsorted(elements, anchor))
    if pos >= elements.size or elements[pos] != anchor:
        raise ConfigurationError("anchor element not contained in the patch")
    out = coords.copy()
    for j in range(out.shape[1]):
        v = out[:, j]
        ref = v[pos]
        if ref == 0.0:
            nz = np.flatnonzero(v)
            ref = v[nz[0]] if nz.size else 1.0
        if ref < 0:
            out[:, j] = -v
    return out


# ---------------------------------------------------------------------------
# dense oracle

def harmonic_basis(problem: PatchProblem) -> np.ndarray:
    """Extensions of every gamma1 nodal hat: a basis of the harmonic space."""
    n_g1 = problem.grid.gamma1.size
    if n_g1 == 0:
        raise GlobalPatchError("patch has empty gamma1")
    return problem.harmonic_extension(np.eye(n_g1))


def oracle_operator(problem: PatchProblem) -> tuple[np.ndarray, np.ndarray]:
    """Exact matrix of the P0 projection restricted to the harmonic space.

    Returns (Mop, Z): ``Z`` holds the harmonic basis columns and ``Mop`` is
    the N x q matrix of the projection in an H1-orthonormal basis of the
    harmonic space and the L2-orthonormal P0 frame; its SVD is the exact
    discrete singular value decomposition of the localization operator.
    """
    Z = harmonic_basis(problem)
    G = Z.T @ (problem.h1_form @ Z)
    L = np.linalg.cholesky(G)
    H = problem.patch.mesh.H
    A_proj = H ** (problem.grid.d / 2) * (problem.project_P0(Z))
    Mop = sla.solve_triangular(L, A_proj.T, lower=True).T
    return Mop, Z


def oracle_selection(
    problem: PatchProblem,
    k: int,
    anchor: int | None = None,
    deflate: np.ndarray | None = None,
    members=None,
) -> SourceSelection:
    """Sampling-free counterpart of sample_harmonic_space + select_sources."""
    Mop, _ = oracle_operator(problem)
    N = Mop.shape[0]
    H = problem.patch.mesh.H
    d = problem.grid.d
    Wc = _deflation_complement(deflate, N, H, d)
    dim = N if Wc is None else Wc.shape[1]
    if not 1 <= k <= dim:
        raise ConfigurationError(f"need 1 <= k <= {dim}, got k={k}")
    targets = None
    if members is not None:
        targets = _member_indicators(problem.patch, members)
        if Wc is not None:
            targets = Wc.T @ targets
    if Wc is not None:
        Mop = Wc.T @ Mop
    cols, sigma, s = _svd_tail(Mop, k, dim, targets)
    if Wc is not None:
        cols = Wc @ cols
    coords = cols * H ** (-d / 2)
    coords = _fix_signs(coords, problem.patch, anchor)
    return SourceSelection(problem.patch, k, coords, sigma, s)


def measure_sigma(g_coords: np.ndarray, problem: PatchProblem) -> float:
    """Exact sup of (g, v)_L2 over unit-H1 A-harmonic v, for a unit-L2 g.

    Computed against the dense harmonic basis: with the H1 Gram factorized as
    G = L L^T, the sup equals the norm of L^{-1} Z^T m_g where m_g is the
    load vector of g.
    """
    Z = harmonic_basis(problem)
    G = Z.T @ (problem.h1_form @ Z)
    L = np.linalg.cholesky(G)
    m_g = problem.p0_load(np.asarray(g_coords, dtype=float))
    r = sla.solve_triangular(L, Z.T @ m_g, lower=True)
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# Steklov spectral probe

def _boundary_mass_gamma1(problem: PatchProblem) -> np.ndarray:
    """L2(Gamma1) mass matrix, restricted to the gamma1 nodes.

    In 2D this assembles 1D edge masses along the patch boundary; in 1D the
    boundary measure is counting measure on the gamma1 points.
    """
    grid = problem.grid
    g1 = grid.gamma1
    if grid.d == 1:
        return np.eye(g1.size)
    # collect boundary edges of the patch box, axis by axis
    m1 = _local_mass(1, grid.h)
    n_nodes = grid.n_nodes
    M = sp.coo_matrix((n_nodes, n_nodes))
    shape = grid.node_shape
    blocks = []
    for axis in range(2):
        other = 1 - axis
        for side in (0, shape[other] - 1):
            # edges run along `axis` at fixed index `side` on the other axis
            n_edges = shape[axis] - 1
            starts = np.arange(n_edges)
            multi_a = np.empty((n_edges, 2), dtype=int)
            multi_b = np.empty((n_edges, 2), dtype=int)
            multi_a[:, axis] = starts
            multi_b[:, axis] = starts + 1
            multi_a[:, other] = side
            multi_b[:, other] = side
            na = np.ravel_multi_index((multi_a[:, 0], multi_a[:, 1]), shape, order="F")
            nb = np.ravel_multi_index((multi_b[:, 0], multi_b[:, 1]), shape, order="F")
            table = np.stack([na, nb], axis=1)
            blocks.append(
                _assemble(m1, table, np.ones(n_edges), n_nodes)
            )
    M = sum(blocks[1:], blocks[0])
    return M[g1][:, g1].toarray()


def steklov_spectrum(
    problem: PatchProblem, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """First eigenpairs of the patch Steklov problem.

    Interior and gamma2 nodes are eliminated into the boundary Schur
    complement (the discrete Dirichlet-to-Neumann map on gamma1), and the
    dense symmetric generalized eigenproblem against the gamma1 boundary mass
    matrix is solved.  Returns nondecreasing eigenvalues and the full nodal
    eigenfunctions (harmonic extensions of the L2(Gamma1)-orthonormal
    boundary eigenvectors), as (count,) and (n_nodes, count) arrays.
    """
    grid = problem.grid
    g1, inner = grid.gamma1, grid.interior
    if g1.size == 0:
        raise GlobalPatchError("patch has empty gamma1")
    count = min(count, g1.size)
    K = problem.stiffness
    K_bb = K[g1][:, g1].toarray()
    K_bi = K[g1][:, inner].toarray()
    T = problem._lu_interior.solve(K_bi.T)
    S = K_bb - K_bi @ T
    S = 0.5 * (S + S.T)
    Mb = _boundary_mass_gamma1(problem)
    lam, vecs = sla.eigh(S, Mb, subset_by_index=(0, count - 1))
    psi = problem.harmonic_extension(vecs)
    return lam, psi
