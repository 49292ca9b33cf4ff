"""Strided-box tuple domains: set algebra, exclusion, enumeration."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorbind.domains import Box, TupleDomain, _progression_intersect


def points_of(dom):
    return set(dom.iter_points())


class TestProgressionIntersect:
    def test_basic_overlap(self):
        # {0,2,4,6,8} ∩ {0,3,6,9} = {0,6}
        assert _progression_intersect(0, 2, 5, 0, 3, 4) == (0, 6, 2)

    def test_disjoint_residues(self):
        # {0,2,4} ∩ {1,3,5} = {}
        assert _progression_intersect(0, 2, 3, 1, 2, 3) is None

    def test_exhaustive_small(self):
        for a, s, n, b, t, m in itertools.product(
            range(3), (1, 2, 3), (1, 2, 4), range(3), (1, 2, 3), (1, 2, 4)
        ):
            left = {a + s * i for i in range(n)}
            right = {b + t * j for j in range(m)}
            want = left & right
            got = _progression_intersect(a, s, n, b, t, m)
            got_set = (
                set() if got is None
                else {got[0] + got[1] * i for i in range(got[2])}
            )
            assert got_set == want, (a, s, n, b, t, m)


class TestBox:
    def test_size_and_contains(self):
        b = Box(((0, 2, 3), (1, 1, 4)))
        assert b.size() == 12
        assert b.contains((4, 4))
        assert not b.contains((3, 4))  # off-stride
        assert not b.contains((6, 1))  # beyond count

    def test_bounds_and_corner(self):
        b = Box(((1, 3, 2), (0, 1, 5)))
        assert b.bounds() == ((1, 4), (0, 4))
        assert b.corner() == (1, 0)

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            Box(((0, 0, 2),))
        with pytest.raises(ValueError):
            Box(((0, 1, 0),))

    def test_split_out_point_partitions(self):
        b = Box(((0, 1, 3), (0, 2, 3)))
        p = (1, 2)
        pieces = b.split_out_point(p)
        covered = [q for piece in pieces for q in piece.iter_points((0, 1))]
        assert len(covered) == len(set(covered))  # disjoint
        assert set(covered) == set(b.iter_points((0, 1))) - {p}

    def test_iter_points_significance_order(self):
        b = Box(((0, 1, 2), (0, 1, 2)))
        # dim 1 most significant: second coordinate varies slowest
        assert list(b.iter_points((1, 0))) == [(0, 0), (1, 0), (0, 1), (1, 1)]


class TestTupleDomain:
    def test_from_extents(self):
        d = TupleDomain.from_extents((2, 3))
        assert d.size() == 6
        assert points_of(d) == set(itertools.product(range(2), range(3)))

    def test_from_bounds_half_open(self):
        d = TupleDomain.from_bounds(((1, 3), (0, 2)))
        assert points_of(d) == {(1, 0), (1, 1), (2, 0), (2, 1)}

    def test_remove_point_excluded_semantics(self):
        d = TupleDomain.from_extents((2, 2))
        d2 = d.remove_point((0, 1))
        assert d2.size() == 3
        assert not d2.contains((0, 1))
        assert (0, 1) not in list(d2.iter_points())
        # removing an absent point is a no-op returning the same object
        assert d2.remove_point((9, 9)) is d2

    def test_excluded_until_singleton_assigned(self):
        d = TupleDomain.from_extents((2, 2))
        for p in [(0, 0), (0, 1), (1, 0)]:
            d = d.remove_point(p)
        assert d.size() == 1
        assert d.assigned_value() == (1, 1)

    def test_assigned_value_none_when_multiple(self):
        assert TupleDomain.from_extents((2, 1)).assigned_value() is None
        assert TupleDomain.singleton((3, 4)).assigned_value() == (3, 4)

    def test_intersect_carries_excluded(self):
        d = TupleDomain.from_extents((4, 4)).remove_point((1, 1))
        clipped = d.intersect_box(Box(((0, 1, 2), (0, 1, 2))))
        assert points_of(clipped) == {(0, 0), (0, 1), (1, 0)}

    def test_intersect_domains(self):
        a = TupleDomain.from_bounds(((0, 4),))
        b = TupleDomain(1, (Box(((1, 2, 4),)),))  # {1,3,5,7}
        assert points_of(a.intersect(b)) == {(1,), (3,)}

    def test_union_box_disjointness(self):
        d = TupleDomain.from_boxes(1, [Box(((0, 1, 4),)), Box(((2, 1, 4),))])
        assert d.size() == 6
        assert points_of(d) == {(v,) for v in range(6)}

    def test_union_box_restores_excluded(self):
        d = TupleDomain.from_extents((3,)).remove_point((1,))
        d = d.union_box(Box(((1, 1, 1),)))
        assert d.contains((1,))
        assert d.size() == 3

    def test_iter_points_merges_boxes_in_order(self):
        d = TupleDomain.from_boxes(1, [Box(((4, 1, 2),)), Box(((0, 1, 2),))])
        assert list(d.iter_points()) == [(0,), (1,), (4,), (5,)]

    def test_iter_points_custom_order(self):
        d = TupleDomain.from_extents((2, 3))
        got = list(d.iter_points(order=(1, 0)))
        want = sorted(points_of(d), key=lambda p: (p[1], p[0]))
        assert got == want

    def test_equality_structural_and_pointwise(self):
        a = TupleDomain.from_extents((2, 2))
        b = TupleDomain.from_boxes(
            2, [Box(((0, 1, 1), (0, 1, 2))), Box(((1, 1, 1), (0, 1, 2)))])
        assert a == b
        assert a != a.remove_point((0, 0))


@settings(max_examples=200, deadline=None)
@given(
    extents=st.lists(st.integers(1, 4), min_size=1, max_size=3),
    data=st.data(),
)
def test_remove_points_matches_set_semantics(extents, data):
    universe = list(itertools.product(*(range(e) for e in extents)))
    removals = data.draw(st.lists(st.sampled_from(universe), max_size=6))
    dom = TupleDomain.from_extents(extents)
    model = set(universe)
    for p in removals:
        dom = dom.remove_point(p)
        model.discard(p)
    assert dom.size() == len(model)
    assert points_of(dom) == model
    assert list(dom.iter_points()) == sorted(model)


@settings(max_examples=200, deadline=None)
@given(
    dims_a=st.lists(st.tuples(st.integers(0, 3), st.integers(1, 3),
                              st.integers(1, 4)), min_size=2, max_size=2),
    dims_b=st.lists(st.tuples(st.integers(0, 3), st.integers(1, 3),
                              st.integers(1, 4)), min_size=2, max_size=2),
)
def test_box_intersection_is_set_intersection(dims_a, dims_b):
    a, b = Box(tuple(dims_a)), Box(tuple(dims_b))
    pa = set(a.iter_points((0, 1)))
    pb = set(b.iter_points((0, 1)))
    hit = a.intersect(b)
    got = set() if hit is None else set(hit.iter_points((0, 1)))
    assert got == (pa & pb)
