"""Builders for common workloads and instruction shapes.

Everything here returns plain JSON-able dicts in the document format that
`workload_from_dict` / `intrinsic_from_dict` accept, so the same builders
feed tests, fixture files, and CLI examples.
"""

from __future__ import annotations

from .workload import IntrinsicSpec, Workload, intrinsic_from_dict, workload_from_dict

CONV_LAYOUTS = ("NCHW", "NHWC", "HWNC")


def conv_out_extent(size: int, kernel: int, stride: int, pad: int, dilation: int) -> int:
    return (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


def _axis_expr(stride: int, outer: str, dilation: int, inner: str, pad: int) -> str:
    s = f"{stride}*{outer}" if stride != 1 else outer
    d = f"{dilation}*{inner}" if dilation != 1 else inner
    expr = f"{s} + {d}"
    if pad:
        expr += f" - {pad}"
    return expr


def conv2d_dict(
    name: str,
    n: int,
    h: int,
    w: int,
    c_in: int,
    c_out: int,
    kh: int,
    kw: int,
    stride: int = 1,
    pad: int = 0,
    dilation: int = 1,
    layout: str = "NCHW",
) -> dict:
    """Direct 2-D convolution as a single multiply-accumulate nest.

    `layout` permutes both the tensor dimension orders and the iterator
    declaration order (which is the default search significance order).
    """
    if layout not in CONV_LAYOUTS:
        raise ValueError(f"layout must be one of {CONV_LAYOUTS}")
    oh = conv_out_extent(h, kh, stride, pad, dilation)
    ow = conv_out_extent(w, kw, stride, pad, dilation)
    if oh < 1 or ow < 1:
        raise ValueError("kernel does not fit in the input")

    h_expr = _axis_expr(stride, "oh", dilation, "kh", pad)
    w_expr = _axis_expr(stride, "ow", dilation, "kw", pad)
    padded = pad > 0

    if layout == "NCHW":
        spatial = [("n", n), ("oc", c_out), ("oh", oh), ("ow", ow)]
        data_shape, data_pad = [n, c_in, h, w], [False, False, padded, padded]
        data_access = ["n", "ic", h_expr, w_expr]
        wgt_shape = [c_out, c_in, kh, kw]
        wgt_access = ["oc", "ic", "kh", "kw"]
        out_shape = [n, c_out, oh, ow]
        out_access = ["n", "oc", "oh", "ow"]
    elif layout == "NHWC":
        spatial = [("n", n), ("oh", oh), ("ow", ow), ("oc", c_out)]
        data_shape, data_pad = [n, h, w, c_in], [False, padded, padded, False]
        data_access = ["n", h_expr, w_expr, "ic"]
        wgt_shape = [kh, kw, c_in, c_out]
        wgt_access = ["kh", "kw", "ic", "oc"]
        out_shape = [n, oh, ow, c_out]
        out_access = ["n", "oh", "ow", "oc"]
    else:  # HWNC
        spatial = [("oh", oh), ("ow", ow), ("n", n), ("oc", c_out)]
        data_shape, data_pad = [h, w, n, c_in], [padded, padded, False, False]
        data_access = [h_expr, w_expr, "n", "ic"]
        wgt_shape = [kh, kw, c_in, c_out]
        wgt_access = ["kh", "kw", "ic", "oc"]
        out_shape = [oh, ow, n, c_out]
        out_access = ["oh", "ow", "n", "oc"]

    return {
        "name": name,
        "iterators": (
            [{"name": nm, "extent": e, "kind": "spatial"} for nm, e in spatial]
            + [
                {"name": "ic", "extent": c_in, "kind": "reduction"},
                {"name": "kh", "extent": kh, "kind": "reduction"},
                {"name": "kw", "extent": kw, "kind": "reduction"},
            ]
        ),
        "tensors": [
            {"name": "data", "shape": data_shape, "pad": data_pad, "elem_type": "int8"},
            {"name": "weight", "shape": wgt_shape,
             "pad": [False] * 4, "elem_type": "int8"},
            {"name": "out", "shape": out_shape,
             "pad": [False] * 4, "elem_type": "int32"},
        ],
        "statement": {
            "output": {"tensor": "out", "access": out_access},
            "ops": ["mul", "add"],
            "operands": [
                {"tensor": "data", "access": data_access},
                {"tensor": "weight", "access": wgt_access},
            ],
        },
    }


def matmul_dict(name: str, m: int, n: int, k: int, transpose_b: bool = False) -> dict:
    """out[i, j] += A[i, k] * B[k, j] (or B[j, k] when transposed)."""
    b_shape = [n, k] if transpose_b else [k, n]
    b_access = ["j", "k"] if transpose_b else ["k", "j"]
    return {
        "name": name,
        "iterators": [
            {"name": "i", "extent": m, "kind": "spatial"},
            {"name": "j", "extent": n, "kind": "spatial"},
            {"name": "k", "extent": k, "kind": "reduction"},
        ],
        "tensors": [
            {"name": "a", "shape": [m, k], "pad": [False, False], "elem_type": "int8"},
            {"name": "b", "shape": b_shape, "pad": [False, False], "elem_type": "int8"},
            {"name": "out", "shape": [m, n], "pad": [False, False], "elem_type": "int32"},
        ],
        "statement": {
            "output": {"tensor": "out", "access": ["i", "j"]},
            "ops": ["mul", "add"],
            "operands": [
                {"tensor": "a", "access": ["i", "k"]},
                {"tensor": "b", "access": b_access},
            ],
        },
    }


def gemm_intrinsic_dict(x: int = 1, y: int = 16, z: int = 16,
                        name: str | None = None) -> dict:
    """Fixed-shape GEMM instruction: acc[x, y] += inp[x, z] * wgt[y, z].

    The weight buffer is stored output-major (transposed relative to a
    plain matmul B), matching typical accelerator weight layouts.
    """
    return {
        "name": name or f"gemm_{x}x{y}x{z}",
        "workload": {
            "name": name or f"gemm_{x}x{y}x{z}",
            "iterators": [
                {"name": "x", "extent": x, "kind": "spatial"},
                {"name": "y", "extent": y, "kind": "spatial"},
                {"name": "z", "extent": z, "kind": "reduction"},
            ],
            "tensors": [
                {"name": "inp", "shape": [x, z], "pad": [False, False],
                 "elem_type": "int8"},
                {"name": "wgt", "shape": [y, z], "pad": [False, False],
                 "elem_type": "int8"},
                {"name": "acc", "shape": [x, y], "pad": [False, False],
                 "elem_type": "int32"},
            ],
            "statement": {
                "output": {"tensor": "acc", "access": ["x", "y"]},
                "ops": ["mul", "add"],
                "operands": [
                    {"tensor": "inp", "access": ["x", "z"]},
                    {"tensor": "wgt", "access": ["y", "z"]},
                ],
            },
        },
        "operand_roles": ["inp", "wgt"],
        "transposed_operands": [False, True],
        "accumulate_in_place": True,
    }


def conv2d(name: str, *args, **kwargs) -> Workload:
    return workload_from_dict(conv2d_dict(name, *args, **kwargs))


def matmul(name: str, m: int, n: int, k: int, **kwargs) -> Workload:
    return workload_from_dict(matmul_dict(name, m, n, k, **kwargs))


def gemm_intrinsic(x: int = 1, y: int = 16, z: int = 16) -> IntrinsicSpec:
    return intrinsic_from_dict(gemm_intrinsic_dict(x, y, z))


def vta_gemm() -> IntrinsicSpec:
    return gemm_intrinsic(1, 16, 16)
