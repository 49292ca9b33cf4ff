"""Interpreters: naive reference, tile model, plan execution, oracles."""

import numpy as np
import pytest

from tensorbind import (
    Mode,
    OracleGuardError,
    SearchConfig,
    assemble,
    brute_force_embeddings,
    derive_plan,
    random_operand,
    read_tensor,
    run_intrinsic_model,
    run_naive,
    run_plan,
    search_candidates,
    write_tensor,
)
from tensorbind.executor import ExecStats, ShapeMismatchError
from tensorbind.presets import conv2d, gemm_intrinsic, matmul


def operands_for(w, seed):
    return {
        op.tensor: random_operand(w.tensor(op.tensor).shape, seed)
        for op in w.statement.operands
    }


class TestRunNaive:
    def test_matmul_equals_numpy(self):
        w = matmul("m", 5, 7, 3)
        inputs = operands_for(w, 0)
        want = inputs["a"].astype(np.int32) @ inputs["b"].astype(np.int32)
        assert np.array_equal(run_naive(w, inputs), want)

    def test_transposed_matmul(self):
        w = matmul("m", 5, 7, 3, transpose_b=True)
        inputs = operands_for(w, 1)
        want = inputs["a"].astype(np.int32) @ inputs["b"].astype(np.int32).T
        assert np.array_equal(run_naive(w, inputs), want)

    def test_conv_equals_direct_loops(self):
        w = conv2d("c", 1, 5, 5, 2, 3, 3, 3)
        inputs = operands_for(w, 2)
        data = inputs["data"].astype(np.int32)
        wgt = inputs["weight"].astype(np.int32)
        want = np.zeros((1, 3, 3, 3), dtype=np.int32)
        for oc in range(3):
            for oh in range(3):
                for ow in range(3):
                    want[0, oc, oh, ow] = (
                        data[0, :, oh:oh + 3, ow:ow + 3] * wgt[oc]
                    ).sum()
        assert np.array_equal(run_naive(w, inputs), want)

    def test_boundary_padding_reads_zero(self):
        w = conv2d("c", 1, 4, 4, 1, 1, 3, 3, pad=1)
        inputs = {
            "data": np.ones((1, 1, 4, 4), dtype=np.int8),
            "weight": np.ones((1, 1, 3, 3), dtype=np.int8),
        }
        out = run_naive(w, inputs)
        assert out.shape == (1, 1, 4, 4)
        assert out[0, 0, 0, 0] == 4  # corner window sees only 2x2 real data
        assert out[0, 0, 1, 1] == 9

    def test_shape_mismatch_rejected(self):
        w = matmul("m", 2, 2, 2)
        with pytest.raises(ShapeMismatchError):
            run_naive(w, {"a": np.zeros((2, 3), dtype=np.int8),
                          "b": np.zeros((2, 2), dtype=np.int8)})


class TestIntrinsicModel:
    def test_gemm_is_transposed_contraction(self):
        i = gemm_intrinsic(2, 3, 4)
        inp = random_operand((2, 4), 3)
        wgt = random_operand((3, 4), 4)
        got = run_intrinsic_model(i, [inp, wgt])
        want = inp.astype(np.int32) @ wgt.astype(np.int32).T
        assert np.array_equal(got, want)

    def test_accumulates_in_place(self):
        i = gemm_intrinsic(1, 2, 2)
        inp = np.ones((1, 2), dtype=np.int8)
        wgt = np.ones((2, 2), dtype=np.int8)
        acc = np.full((1, 2), 5, dtype=np.int32)
        assert np.array_equal(run_intrinsic_model(i, [inp, wgt], acc),
                              np.full((1, 2), 7, dtype=np.int32))

    def test_tile_shape_checked(self):
        i = gemm_intrinsic(1, 2, 2)
        with pytest.raises(ShapeMismatchError):
            run_intrinsic_model(i, [np.zeros((2, 2), dtype=np.int8),
                                    np.zeros((2, 2), dtype=np.int8)])


class TestRunPlan:
    def plan_for(self, w, i, mode, strategy="A"):
        out = search_candidates(assemble(w, i, mode),
                                SearchConfig(candidate_count=1),
                                strategy=strategy)
        return derive_plan(out.candidates[0].mapping, w, i)

    def test_matmul_matches_naive_and_counts_calls(self):
        w = matmul("m", 32, 32, 32)
        i = gemm_intrinsic(1, 16, 16)
        plan = self.plan_for(w, i, Mode.STRICT)
        inputs = operands_for(w, 5)
        stats = ExecStats()
        got = run_plan(plan, w, i, inputs, stats=stats)
        assert np.array_equal(got, run_naive(w, inputs))
        # 32 x-invocations x 2 y-tiles x 2 z-tiles
        assert stats.intrinsic_calls == 32 * 2 * 2

    def test_padded_layer_calls_match_overhead_accounting(self):
        w = matmul("m", 16, 16, 1)
        i = gemm_intrinsic(1, 16, 16)
        out = search_candidates(assemble(w, i, Mode.RELAXED),
                                SearchConfig(candidate_count=1), strategy="A")
        cand = out.candidates[0]
        plan = derive_plan(cand.mapping, w, i)
        inputs = operands_for(w, 6)
        stats = ExecStats()
        got = run_plan(plan, w, i, inputs, stats=stats)
        assert np.array_equal(got, run_naive(w, inputs))
        mac_min = 16 * 16 * 1
        assert stats.intrinsic_calls * (16 * 16) == \
            mac_min + cand.overhead.o_mac


class TestBruteForceOracle:
    def test_counts_known_instances(self):
        assert len(brute_force_embeddings(
            matmul("m", 2, 2, 2), gemm_intrinsic(1, 1, 1), Mode.STRICT)) == 1
        assert len(brute_force_embeddings(
            matmul("m", 2, 4, 2), gemm_intrinsic(2, 2, 2), Mode.RELAXED,
            limit=2**34)) == 3

    def test_infeasible_pair_yields_empty_set(self):
        assert brute_force_embeddings(
            matmul("m", 2, 2, 2), gemm_intrinsic(1, 16, 16),
            Mode.STRICT) == set()

    def test_guard_fires_on_large_instances(self):
        with pytest.raises(OracleGuardError, match="guard"):
            brute_force_embeddings(matmul("m", 16, 16, 16),
                                   gemm_intrinsic(1, 16, 16), Mode.STRICT,
                                   limit=1000)


class TestTensorFiles:
    def test_round_trip_int8_and_int32(self, tmp_path):
        for dtype in (np.int8, np.int32):
            arr = np.arange(24, dtype=dtype).reshape(2, 3, 4)
            path = tmp_path / f"t_{np.dtype(dtype).name}.bin"
            write_tensor(path, arr)
            back = read_tensor(path)
            assert back.dtype == arr.dtype
            assert np.array_equal(back, arr)
            meta = (tmp_path / (path.name + ".meta")).read_text()
            assert "[2, 3, 4]" in meta

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_tensor(path)
