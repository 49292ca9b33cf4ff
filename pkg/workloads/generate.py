"""Regenerate the JSON fixtures in this directory from the presets."""

import json
from pathlib import Path

from tensorbind.presets import conv2d_dict, gemm_intrinsic_dict, matmul_dict

HERE = Path(__file__).parent

FIXTURES = {
    # strict-mode staples
    "conv3x3_nchw_c64.json": conv2d_dict(
        "conv3x3_nchw_c64", 1, 14, 14, 64, 64, 3, 3, layout="NCHW"),
    "conv3x3_nhwc_c32.json": conv2d_dict(
        "conv3x3_nhwc_c32", 1, 8, 8, 32, 32, 3, 3, layout="NHWC"),
    "conv3x3_hwnc_c16.json": conv2d_dict(
        "conv3x3_hwnc_c16", 1, 8, 8, 16, 16, 3, 3, layout="HWNC"),
    "matmul_32.json": matmul_dict("matmul_32", 32, 32, 32),
    "matmul_16x16x32_tb.json": matmul_dict(
        "matmul_16x16x32_tb", 16, 16, 32, transpose_b=True),
    # relaxed-mode layers with a single input channel (DeepBench-style
    # speech-recognition shapes, spatially scaled to stay interpretable)
    "conv3x3_speech_ic1.json": conv2d_dict(
        "conv3x3_speech_ic1", 1, 32, 16, 1, 16, 3, 3, layout="NCHW"),
    "conv20x5_speech_ic1.json": conv2d_dict(
        "conv20x5_speech_ic1", 1, 44, 21, 1, 32, 20, 5, stride=2,
        layout="NCHW"),
    "matmul_k1.json": matmul_dict("matmul_k1", 16, 16, 1),
    # small instances for brute-force oracle comparisons
    "matmul_2.json": matmul_dict("matmul_2", 2, 2, 2),
    "matmul_4.json": matmul_dict("matmul_4", 4, 4, 4),
    "matmul_2x4x2.json": matmul_dict("matmul_2x4x2", 2, 4, 2),
    # instructions
    "gemm_1x16x16.json": gemm_intrinsic_dict(1, 16, 16),
    "gemm_1x2x2.json": gemm_intrinsic_dict(1, 2, 2),
    "gemm_2x2x2.json": gemm_intrinsic_dict(2, 2, 2),
}


def main():
    for fname, doc in FIXTURES.items():
        path = HERE / fname
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print("wrote", path)


if __name__ == "__main__":
    main()
