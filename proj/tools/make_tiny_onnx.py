#!/usr/bin/env python3
"""Writes a tiny 4-stage convolutional backbone as ONNX plus its JSON sidecar.

Test fixture for the ONNX extractor path. Stage strides are 4/8/16/32 with
channel widths 4/8/16/32 and LeakyReLU after every convolution. The protobuf
is encoded by hand so the script only needs numpy.
"""
import json
import pathlib
import struct
import sys

import numpy as np


def _varint(v: int) -> bytes:
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _key(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def f_int(field: int, v: int) -> bytes:
    return _key(field, 0) + _varint(v)


def f_bytes(field: int, payload: bytes) -> bytes:
    return _key(field, 2) + _varint(len(payload)) + payload


def f_str(field: int, s: str) -> bytes:
    return f_bytes(field, s.encode())


def f_float(field: int, v: float) -> bytes:
    return _key(field, 5) + struct.pack("<f", v)


def tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    msg = b"".join(f_int(1, d) for d in arr.shape)
    msg += f_int(2, 1)  # FLOAT
    msg += f_str(8, name)
    msg += f_bytes(9, arr.tobytes())
    return msg


def attr_ints(name: str, values) -> bytes:
    return f_bytes(5, f_str(1, name) + b"".join(f_int(8, v) for v in values) + f_int(20, 7))


def attr_float(name: str, v: float) -> bytes:
    return f_bytes(5, f_str(1, name) + f_float(2, v) + f_int(20, 1))


def node(op: str, inputs, outputs, name: str, attrs=b"") -> bytes:
    msg = b"".join(f_str(1, i) for i in inputs) + b"".join(f_str(2, o) for o in outputs)
    return f_bytes(1, msg + f_str(3, name) + f_str(4, op) + attrs)


def value_info(name: str, shape) -> bytes:
    dims = b"".join(f_bytes(1, f_int(1, d)) for d in shape)
    tensor_type = f_int(1, 1) + f_bytes(2, dims)
    return f_str(1, name) + f_bytes(2, f_bytes(1, tensor_type))


def probe_input(size: int) -> np.ndarray:
    """Deterministic RGB probe in [0, 1), shape (3, size, size)."""
    c, y, x = np.meshgrid(np.arange(3), np.arange(size), np.arange(size), indexing="ij")
    return ((x * 7 + y * 3 + c * 11) % 50) / 50.0


def conv_leaky(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    k = w.shape[2]
    oh = (x.shape[1] - k) // stride + 1
    ow = (x.shape[2] - k) // stride + 1
    out = np.zeros((w.shape[0], oh, ow))
    for i in range(k):
        for j in range(k):
            win = x[:, i : i + stride * oh : stride, j : j + stride * ow : stride]
            out += np.einsum("oc,chw->ohw", w[:, :, i, j], win)
    out += b[:, None, None]
    return np.where(out > 0, out, 0.1 * out)


def build(out_dir: pathlib.Path, input_size: int = 64, seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    layers = []
    widths = [4, 8, 16, 32]
    graph = b""
    inits = b""
    prev, prev_c, side = "input", 3, input_size
    for i, c in enumerate(widths, start=1):
        k, s, p = (4, 4, 0) if i == 1 else (3, 2, 1)
        w = rng.normal(0.0, np.sqrt(2.0 / (prev_c * k * k)), size=(c, prev_c, k, k))
        b = rng.normal(0.0, 0.05, size=(c,))
        layers.append((w.astype(np.float32).astype(np.float64), b.astype(np.float32).astype(np.float64), s, p))
        inits += f_bytes(5, tensor(f"w{i}", w)) + f_bytes(5, tensor(f"b{i}", b))
        attrs = attr_ints("kernel_shape", [k, k]) + attr_ints("strides", [s, s]) + attr_ints("pads", [p, p, p, p])
        graph += node("Conv", [prev, f"w{i}", f"b{i}"], [f"conv{i}"], f"conv{i}", attrs)
        graph += node("LeakyRelu", [f"conv{i}"], [f"stage{i}"], f"stage{i}", attr_float("alpha", 0.1))
        side = (side + 2 * p - k) // s + 1
        prev, prev_c = f"stage{i}", c
    graph += f_str(2, "tiny_backbone") + inits
    graph += f_bytes(11, value_info("input", [1, 3, input_size, input_size]))
    graph += f_bytes(12, value_info("stage4", [1, widths[-1], side, side]))
    model = f_int(1, 6) + f_str(2, "histosim-fixture") + f_bytes(7, graph) + f_bytes(8, f_str(1, "") + f_int(2, 11))

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tiny_backbone.onnx").write_bytes(model)
    sidecar = {
        "model_path": "tiny_backbone.onnx",
        "input_size": input_size,
        "stage_names": ["stage1", "stage2", "stage3", "stage4"],
        "mean": [0.485, 0.456, 0.406],
        "std": [0.229, 0.224, 0.225],
    }
    (out_dir / "tiny_backbone.json").write_text(json.dumps(sidecar, indent=2) + "\n")

    # Reference activations for the probe input, computed independently of any ONNX runtime.
    x = (probe_input(input_size) - np.array(sidecar["mean"])[:, None, None]) / np.array(sidecar["std"])[:, None, None]
    stages = []
    for w, b, s, p in layers:
        x = conv_leaky(x, w, b, s, p)
        stages.append({"shape": list(x.shape), "data": [float(v) for v in x.ravel()]})
    (out_dir / "tiny_backbone_expected.json").write_text(json.dumps({"stages": stages}) + "\n")


if __name__ == "__main__":
    build(pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data"))
