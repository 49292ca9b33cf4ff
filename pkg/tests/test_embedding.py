"""Placement search: context building, mapping extraction, ranking."""

import math

import pytest

from tensorbind import (
    InfeasibleEmbeddingError,
    Mode,
    OverheadVector,
    SearchConfig,
    assemble,
    compute_overhead,
    search_candidates,
)
from tensorbind.embedding import (
    _strategy_orders,
    build_context,
    check_feasible,
    intrinsic_invocations,
    score,
    score_and_select,
)
from tensorbind.presets import conv2d, gemm_intrinsic, matmul


def top_mapping(w, i, mode, strategy="none", k=1, **kwargs):
    out = search_candidates(assemble(w, i, mode),
                            SearchConfig(candidate_count=k),
                            strategy=strategy, **kwargs)
    assert out.candidates
    return out


def entries_dict(mapping):
    return {name: ents for name, ents in mapping.entries}


class TestContext:
    def test_strict_mode_never_pads(self):
        ctx = build_context(matmul("m", 3, 5, 7), gemm_intrinsic(1, 2, 2),
                            Mode.STRICT)
        assert ctx.virtual_extents == {"i": 3, "j": 5, "k": 7}
        assert all(p == 0 for p in ctx.iterator_pads.values())

    def test_relaxed_mode_pads_small_iterators(self):
        ctx = build_context(matmul("m", 16, 16, 1), gemm_intrinsic(1, 16, 16),
                            Mode.RELAXED)
        assert ctx.virtual_extents["k"] == 16
        assert ctx.iterator_pads["k"] == 15
        # extent padding begins right after the single real k value
        assert ctx.tensor_pad_from["a"] == (16, 1)

    def test_relaxed_mode_widens_tensor_bounds(self):
        ctx = build_context(matmul("m", 16, 16, 1), gemm_intrinsic(1, 16, 16),
                            Mode.RELAXED)
        assert ctx.tensor_bounds["a"] == ((0, 16), (0, 16))

    def test_add_pad_from_tracks_real_extents(self):
        ctx = build_context(matmul("m", 3, 5, 7), gemm_intrinsic(1, 2, 2),
                            Mode.RELAXED)
        assert ctx.add_pad_from == (3, 5)

    def test_infeasible_strict_pair_detected(self):
        ctx = build_context(matmul("m", 2, 2, 2), gemm_intrinsic(1, 16, 16),
                            Mode.STRICT)
        with pytest.raises(InfeasibleEmbeddingError):
            check_feasible(ctx)

    def test_same_pair_feasible_when_padding_allowed(self):
        ctx = build_context(matmul("m", 2, 2, 2), gemm_intrinsic(1, 16, 16),
                            Mode.RELAXED)
        check_feasible(ctx)  # padding lifts every extent to 16


class TestMappingExtraction:
    def test_matmul_dense_tiles(self):
        out = top_mapping(matmul("m", 32, 32, 32), gemm_intrinsic(1, 16, 16),
                          Mode.STRICT)
        ents = entries_dict(out.candidates[0].mapping)
        (ey,) = ents["y"]
        (ez,) = ents["z"]
        assert (ey.iterator, ey.tile, ey.stride, ey.pad, ey.grid) == \
            ("j", 16, 1, 0, 2)
        assert (ez.iterator, ez.tile, ez.stride, ez.pad, ez.grid) == \
            ("k", 16, 1, 0, 2)

    def test_grid_formula_covers_nondivisible_extent(self):
        # extent 6 tiled by 2 with stride 2: two phases x ceil coverage
        out = search_candidates(
            assemble(matmul("m", 6, 6, 6), gemm_intrinsic(1, 2, 2),
                     Mode.RELAXED),
            SearchConfig(candidate_count=10**6), exhaustive=True)
        for cand in out.candidates:
            for _, ents in cand.mapping.entries:
                for e in ents:
                    span = e.tile * e.stride
                    want_grid = e.stride * -(-max(6, span) // span)
                    assert e.grid == want_grid
                    assert e.pad == e.grid * e.tile - 6

    def test_padded_mapping_reports_pad(self):
        out = top_mapping(matmul("m", 16, 16, 1), gemm_intrinsic(1, 16, 16),
                          Mode.RELAXED)
        ents = entries_dict(out.candidates[0].mapping)
        (ez,) = ents["z"]
        assert (ez.iterator, ez.tile, ez.pad, ez.grid) == ("k", 16, 15, 1)


class TestOverhead:
    def test_zero_overhead_for_exact_cover(self):
        out = top_mapping(matmul("m", 32, 32, 32), gemm_intrinsic(1, 16, 16),
                          Mode.STRICT)
        assert out.candidates[0].overhead == OverheadVector(0, 0)
        assert out.candidates[0].score == 0.0

    def test_padding_overhead_is_exact(self):
        w = matmul("m", 16, 16, 1)
        out = top_mapping(w, gemm_intrinsic(1, 16, 16), Mode.RELAXED)
        cand = out.candidates[0]
        mac_min = 16 * 16 * 1
        assert cand.overhead.o_mac == 15 * mac_min
        calls = intrinsic_invocations(cand.mapping, w)
        assert calls * (1 * 16 * 16) == mac_min + cand.overhead.o_mac

    def test_overhead_vector_rejects_negative(self):
        with pytest.raises(ValueError):
            OverheadVector(-1, 0)

    def test_score_is_weighted_norm(self):
        v = OverheadVector(3, 4)
        assert score(v, (1.0, 1.0)) == 5.0
        assert score(v, (2.0, 0.0)) == 6.0

    def test_score_and_select_orders_and_truncates(self):
        out = search_candidates(
            assemble(matmul("m", 6, 6, 6), gemm_intrinsic(1, 2, 2),
                     Mode.RELAXED),
            SearchConfig(candidate_count=10**6), exhaustive=True)
        assert len(out.candidates) > 3
        ranked = score_and_select(out.candidates, 3, (1.0, 1.0))
        assert len(ranked) == 3
        assert [c.score for c in ranked] == \
            sorted(c.score for c in ranked)
        assert ranked[0].score == min(c.score for c in out.candidates)

    def test_tied_scores_sort_without_error(self):
        out = search_candidates(
            assemble(conv2d("pw", 1, 4, 4, 1, 16, 1, 1), gemm_intrinsic(1, 16, 16),
                     Mode.RELAXED),
            SearchConfig(candidate_count=4), strategy="A")
        scores = [c.score for c in out.candidates]
        assert scores == sorted(scores)


class TestStrategies:
    def test_strategy_orders_single_without_portfolio(self):
        ep = assemble(conv2d("c", 1, 6, 6, 16, 16, 3, 3),
                      gemm_intrinsic(1, 16, 16), Mode.STRICT)
        assert _strategy_orders(ep, False) == [ep.base_order]

    def test_conv_gemm_portfolio_has_36_assets(self):
        ep = assemble(conv2d("c", 1, 6, 6, 16, 16, 3, 3),
                      gemm_intrinsic(1, 16, 16), Mode.STRICT)
        orders = _strategy_orders(ep, True)
        # 4 spatial pick 2 ordered x 3 reduction pick 1
        assert len(orders) == (4 * 3) * 3 == 36

    def test_unknown_strategy_rejected(self):
        ep = assemble(matmul("m", 4, 4, 4), gemm_intrinsic(1, 2, 2),
                      Mode.STRICT)
        with pytest.raises(ValueError):
            search_candidates(ep, SearchConfig(), strategy="Z")

    def test_all_strategies_find_the_same_top_candidate(self):
        w = matmul("m", 32, 32, 32)
        i = gemm_intrinsic(1, 16, 16)
        keys = set()
        for strategy in ("none", "A", "B", "AB"):
            out = top_mapping(w, i, Mode.STRICT, strategy=strategy)
            keys.add(out.candidates[0].mapping.key())
        assert len(keys) == 1

    def test_exhaustive_matches_first_success_top(self):
        w = matmul("m", 4, 4, 4)
        i = gemm_intrinsic(1, 2, 2)
        fast = top_mapping(w, i, Mode.STRICT, strategy="A")
        full = search_candidates(assemble(w, i, Mode.STRICT),
                                 SearchConfig(candidate_count=1),
                                 strategy="A", exhaustive=True)
        assert fast.candidates[0].score == full.candidates[0].score

    def test_max_assets_truncates_portfolio(self):
        ep = assemble(matmul("m", 4, 4, 4), gemm_intrinsic(1, 2, 2),
                      Mode.STRICT)
        out = search_candidates(ep, SearchConfig(candidate_count=10**6),
                                strategy="A", max_assets=2, exhaustive=True)
        assert {idx for idx, _, _ in out.asset_stats} <= {0, 1}
