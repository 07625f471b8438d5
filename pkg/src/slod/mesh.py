"""Uniform Cartesian meshes on (0,1)^d, element patches and patch grouping.

Elements and nodes are indexed lexicographically with axis 0 varying fastest
(Fortran order); a flat index and a multi-index are used interchangeably
through :func:`element_multi` / :func:`element_flat`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np


class ConfigurationError(ValueError):
    """Invalid mesh or experiment configuration."""


@dataclass(frozen=True)
class CartesianMesh:
    """Uniform mesh of (0,1)^d with 2**p elements of side length H = 2**-p per axis."""

    d: int
    p: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.d}")
        if not 0 <= self.p <= 12:
            raise ConfigurationError(f"mesh level must be in [0, 12], got {self.p}")

    @property
    def n_per_axis(self) -> int:
        return 2 ** self.p

    @property
    def H(self) -> float:
        return 2.0 ** -self.p

    @property
    def n_elements(self) -> int:
        return self.n_per_axis ** self.d

    @property
    def n_nodes(self) -> int:
        return (self.n_per_axis + 1) ** self.d

    @property
    def elem_shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.d

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.n_per_axis + 1,) * self.d

    def node_coords(self) -> np.ndarray:
        """(n_nodes, d) array of node coordinates in flat (axis-0-fastest) order."""
        axes = [np.linspace(0.0, 1.0, self.n_per_axis + 1)] * self.d
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)


def build_mesh(d: int, p: int) -> CartesianMesh:
    """Construct a CartesianMesh, rejecting unsupported dimensions/levels."""
    return CartesianMesh(d, p)


def element_multi(mesh: CartesianMesh, flat) -> np.ndarray:
    """Multi-index (or -indices) of flat element index, axis 0 fastest."""
    return np.stack(np.unravel_index(flat, mesh.elem_shape, order="F"), axis=-1)


def element_flat(mesh: CartesianMesh, multi) -> np.ndarray:
    multi = np.asarray(multi)
    return np.ravel_multi_index(tuple(multi.T), mesh.elem_shape, order="F")


def element_distance_to_boundary(mesh: CartesianMesh, multi) -> int:
    """Number of element layers between an element and the domain boundary."""
    n = mesh.n_per_axis
    multi = np.asarray(multi)
    return int(min(min(t, n - 1 - t) for t in multi))


@dataclass(frozen=True)
class Patch:
    """Box of coarse elements within Chebyshev distance ell of a center element.

    ``lo``/``hi`` are inclusive per-axis element index bounds after clipping to
    the domain.  Fine-grid boundary classification (which nodes of the patch
    boundary carry sampling data versus the homogeneous Dirichlet condition)
    lives with the fine discretization, see :class:`slod.fem.PatchGrid`.
    """

    mesh: CartesianMesh
    center: int
    ell: int
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @cached_property
    def elements(self) -> np.ndarray:
        """Sorted flat indices of the coarse elements in the patch."""
        ranges = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grids = np.meshgrid(*ranges, indexing="ij")
        multi = np.stack([g.ravel(order="F") for g in grids], axis=1)
        return np.sort(element_flat(self.mesh, multi))

    @property
    def n_elements(self) -> int:
        return int(np.prod([h - l + 1 for l, h in zip(self.lo, self.hi)]))

    @property
    def is_global(self) -> bool:
        """True if the patch covers the whole domain (no sampling boundary)."""
        n = self.mesh.n_per_axis
        return all(l == 0 and h == n - 1 for l, h in zip(self.lo, self.hi))

    def contains(self, other: "Patch") -> bool:
        return all(
            sl <= ol and oh <= sh
            for sl, ol, oh, sh in zip(self.lo, other.lo, other.hi, self.hi)
        )


def patch(mesh: CartesianMesh, T: int, ell: int) -> Patch:
    """The ell-th order element patch around T, clipped to the domain."""
    if ell < 1:
        raise ConfigurationError(f"oversampling parameter must be >= 1, got {ell}")
    if not 0 <= T < mesh.n_elements:
        raise ConfigurationError(f"element index {T} out of range")
    n = mesh.n_per_axis
    t = element_multi(mesh, T)
    lo = tuple(int(max(ti - ell, 0)) for ti in t)
    hi = tuple(int(min(ti + ell, n - 1)) for ti in t)
    return Patch(mesh, T, ell, lo, hi)


def full_patch(mesh: CartesianMesh) -> Patch:
    """Patch covering the entire domain (used for global solves)."""
    n = mesh.n_per_axis
    return Patch(mesh, 0, n, (0,) * mesh.d, (n - 1,) * mesh.d)


@dataclass(frozen=True)
class PatchGroup:
    """Patches computed together on the representative's (largest) patch."""

    representative: Patch
    members: tuple[int, ...]
    is_global: bool = False

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def anchor(self) -> int:
        """Canonical member (smallest flat index), fixes sign conventions."""
        return min(self.members)


def _eligible_axis_range(t: int, ell: int, n: int) -> range:
    """Per-axis representative positions r whose clipped interval contains t's."""
    t_lo, t_hi = max(t - ell, 0), min(t + ell, n - 1)
    lo = hi = None
    for r in range(n):
        if max(r - ell, 0) <= t_lo and min(r + ell, n - 1) >= t_hi:
            if lo is None:
                lo = r
            hi = r
    if lo is None:
        raise AssertionError("no containing representative position on axis")
    return range(lo, hi + 1)


def group_patches(mesh: CartesianMesh, ell: int) -> list[PatchGroup]:
    """Partition the coarse elements into patch groups.

    Elements at distance >= ell layers from the boundary get singleton
    groups; elements at distance ell-1 become representatives; the remaining
    boundary elements join the lexicographically smallest representative whose
    patch contains their own.  If every patch covers the whole domain, a
    single group flagged global is returned.
    """
    if ell < 1:
        raise ConfigurationError(f"oversampling parameter must be >= 1, got {ell}")
    n = mesh.n_per_axis
    if ell >= n - 1:
        # every element's clipped box spans all of (0,1)^d
        return [
            PatchGroup(full_patch(mesh), tuple(range(mesh.n_elements)), is_global=True)
        ]

    groups: dict[int, list[int]] = {}
    singletons: list[int] = []
    assigned: list[tuple[int, int]] = []
    for T in range(mesh.n_elements):
        t = element_multi(mesh, T)
        dist = element_distance_to_boundary(mesh, t)
        if dist >= ell:
            singletons.append(T)
        elif dist == ell - 1:
            groups.setdefault(T, [])
        else:
            rep = _find_representative(mesh, t, ell)
            assigned.append((rep, T))
    for rep, T in assigned:
        groups.setdefault(rep, []).append(T)

    out = [PatchGroup(patch(mesh, T, ell), (T,)) for T in singletons]
    for rep in sorted(groups):
        members = tuple(sorted(groups[rep] + [rep]))
        out.append(PatchGroup(patch(mesh, rep, ell), members))
    out.sort(key=lambda g: g.representative.center)
    return out


def _find_representative(mesh: CartesianMesh, t: np.ndarray, ell: int) -> int:
    """Smallest representative (distance ell-1) whose patch contains t's patch."""
    n = mesh.n_per_axis
    candidates = []
    for r in product(*[_eligible_axis_range(int(ti), ell, n) for ti in t]):
        if element_distance_to_boundary(mesh, r) == ell - 1:
            candidates.append(element_flat(mesh, np.asarray(r)))
    if not candidates:
        raise AssertionError(f"element {tuple(t)} has no containing representative")
    return int(min(candidates))
