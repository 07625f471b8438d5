"""Mesh, patch and patch-grouping unit and property tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slod.mesh import (
    CartesianMesh,
    ConfigurationError,
    build_mesh,
    element_distance_to_boundary,
    element_flat,
    element_multi,
    full_patch,
    group_patches,
    patch,
)


class TestBuildMesh:
    def test_1d_counting(self):
        mesh = build_mesh(1, 1)
        assert mesh.n_elements == 2
        assert mesh.n_nodes == 3

    def test_2d_counting(self):
        mesh = build_mesh(2, 2)
        assert mesh.n_elements == 16
        assert mesh.n_nodes == 25

    def test_single_element(self):
        mesh = build_mesh(2, 0)
        assert mesh.n_elements == 1
        assert mesh.H == 1.0

    def test_rejects_bad_dimension(self):
        for d in (0, 3, -1):
            with pytest.raises(ConfigurationError):
                build_mesh(d, 2)

    def test_rejects_bad_level(self):
        with pytest.raises(ConfigurationError):
            build_mesh(2, -1)
        with pytest.raises(ConfigurationError):
            build_mesh(2, 13)

    def test_node_coords_axis0_fastest(self):
        mesh = build_mesh(2, 1)
        coords = mesh.node_coords()
        # flat index advances along axis 0 first
        assert np.allclose(coords[0], [0.0, 0.0])
        assert np.allclose(coords[1], [0.5, 0.0])
        assert np.allclose(coords[3], [0.0, 0.5])


class TestElementIndexing:
    @given(st.integers(1, 2), st.integers(0, 5), st.data())
    @settings(max_examples=50, deadline=None)
    def test_flat_multi_roundtrip(self, d, p, data):
        mesh = build_mesh(d, p)
        T = data.draw(st.integers(0, mesh.n_elements - 1))
        assert int(element_flat(mesh, element_multi(mesh, T))) == T

    def test_distance_to_boundary(self):
        mesh = build_mesh(2, 3)
        assert element_distance_to_boundary(mesh, (0, 0)) == 0
        assert element_distance_to_boundary(mesh, (4, 4)) == 3
        assert element_distance_to_boundary(mesh, (1, 5)) == 1


class TestPatch:
    def test_interior_patch_size_2d(self):
        mesh = build_mesh(2, 3)
        T = int(element_flat(mesh, np.array([4, 4])))
        assert patch(mesh, T, 1).n_elements == 9

    def test_corner_patch_clipped(self):
        mesh = build_mesh(2, 3)
        assert patch(mesh, 0, 1).n_elements == 4

    def test_interior_patch_size_1d(self):
        mesh = build_mesh(1, 3)
        assert patch(mesh, 4, 1).n_elements == 3

    def test_rejects_bad_args(self):
        mesh = build_mesh(2, 2)
        with pytest.raises(ConfigurationError):
            patch(mesh, 0, 0)
        with pytest.raises(ConfigurationError):
            patch(mesh, mesh.n_elements, 1)

    @given(st.integers(1, 2), st.integers(1, 4), st.integers(1, 3), st.data())
    @settings(max_examples=60, deadline=None)
    def test_center_contained_and_nested(self, d, p, ell, data):
        mesh = build_mesh(d, p)
        T = data.draw(st.integers(0, mesh.n_elements - 1))
        pt = patch(mesh, T, ell)
        assert T in pt.elements
        bigger = patch(mesh, T, ell + 1)
        assert bigger.contains(pt)
        assert set(pt.elements) <= set(bigger.elements)

    def test_recursive_definition_matches_box(self):
        """N^ell(T) equals ell applications of the one-layer neighborhood."""
        for d in (1, 2):
            for p in range(1, 4):
                mesh = build_mesh(d, p)
                for ell in range(1, 4):
                    for T in range(mesh.n_elements):
                        expected = _recursive_patch(mesh, T, ell)
                        got = set(patch(mesh, T, ell).elements.tolist())
                        assert got == expected

    def test_full_patch_is_global(self):
        mesh = build_mesh(2, 2)
        assert full_patch(mesh).is_global
        assert not patch(mesh, 0, 1).is_global


def _recursive_patch(mesh, T, ell):
    """Reference implementation: N^1 applied ell times to {T}."""
    current = {T}
    for _ in range(ell):
        grown = set()
        for S in current:
            grown |= set(patch(mesh, S, 1).elements.tolist())
        current = grown
    return current


class TestGroupPatches:
    def test_corner_group_2d(self):
        """Frozen 2D corner group: the four near-corner elements share the
        representative one layer in, here ell=2 on an 8x8 mesh."""
        mesh = build_mesh(2, 3)
        groups = group_patches(mesh, 2)
        rep_flat = int(element_flat(mesh, np.array([1, 1])))
        corner = [g for g in groups if g.representative.center == rep_flat]
        assert len(corner) == 1
        expected = {
            int(element_flat(mesh, np.array(m)))
            for m in [(0, 0), (1, 0), (0, 1), (1, 1)]
        }
        assert set(corner[0].members) == expected
        assert corner[0].k == 4

    def test_deep_interior_singleton_2d(self):
        mesh = build_mesh(2, 3)
        groups = group_patches(mesh, 2)
        T = int(element_flat(mesh, np.array([3, 3])))
        g = [g for g in groups if T in g.members]
        assert len(g) == 1
        assert g[0].members == (T,)

    def test_1d_ell1_all_representatives(self):
        # with ell=1 the boundary elements are their own representatives
        # (distance 0 = ell-1), so every group is a singleton
        mesh = build_mesh(1, 2)
        groups = group_patches(mesh, 1)
        assert sorted(g.members for g in groups) == [(0,), (1,), (2,), (3,)]

    def test_1d_ell2_boundary_groups(self):
        mesh = build_mesh(1, 3)
        groups = group_patches(mesh, 2)
        by_member = {m: g for g in groups for m in g.members}
        # element 0 (distance 0) joins representative 1 (distance 1)
        assert by_member[0].representative.center == 1
        assert set(by_member[0].members) == {0, 1}
        assert by_member[7].representative.center == 6

    def test_global_fallback(self):
        mesh = build_mesh(2, 1)
        groups = group_patches(mesh, 2)
        assert len(groups) == 1
        assert groups[0].is_global
        assert groups[0].members == tuple(range(4))

    @given(st.integers(1, 2), st.integers(1, 4), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_partition_and_containment(self, d, p, ell):
        mesh = build_mesh(d, p)
        groups = group_patches(mesh, ell)
        members = sorted(m for g in groups for m in g.members)
        assert members == list(range(mesh.n_elements))
        for g in groups:
            if g.is_global:
                continue
            for m in g.members:
                assert g.representative.contains(patch(mesh, m, ell))

    @given(st.integers(1, 2), st.integers(1, 4), st.integers(1, 3))
    @settings(max_examples=20, deadline=None)
    def test_anchor_is_smallest_member(self, d, p, ell):
        mesh = build_mesh(d, p)
        for g in group_patches(mesh, ell):
            assert g.anchor == min(g.members)
