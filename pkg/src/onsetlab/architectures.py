"""Convolutional onset-detection architectures, parameter counts and model files.

Every architecture maps a ``[1, 80, 15]`` log-mel context to one sigmoid unit.
Front-ends use valid convolutions and frequency-only max-pooling; the deep
back-ends use 'same' convolutions, each followed by batch normalization.

Model file layout::

    b"ONSETNN1"  u32le header_len  header_json  float32le tensors...

The JSON header carries ``format_version``, the architecture name, the layer
list with output shapes and a tensor directory of ``name/shape/offset/length``.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, CorruptionError, FormatError
from .nn_core import (LayerSpec, init_weights, pipeline_param_shapes, pipeline_shapes)

INPUT_SHAPE = (1, 80, 15)
MODEL_MAGIC = b"ONSETNN1"
FORMAT_VERSION = 1
FROZEN_PREFIX = "src/"

ARCHITECTURES = ("baseline", "relu_dense", "no_dense", "temporal", "cnn9", "cnn5",
                 "feat_extractor_a", "feat_extractor_b")

# Trainable parameter totals reported for the published models.
REFERENCE_PARAMS = {
    "baseline": 289273,
    "relu_dense": 289273,
    "no_dense": 3161,
    "temporal": 283687,
    "cnn9": 288286,
    "cnn5": 81541,
}


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    layers: tuple
    input_shape: tuple = INPUT_SHAPE

    def shapes(self):
        return pipeline_shapes(self.layers, self.input_shape)

    def to_dict(self):
        shapes = self.shapes()
        layers = []
        for spec, shape in zip(self.layers, shapes[1:]):
            d = spec.to_dict()
            d["output_shape"] = list(shape)
            layers.append(d)
        return {"name": self.name, "input_shape": list(self.input_shape), "layers": layers}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(LayerSpec.from_dict(l) for l in d["layers"]),
                   tuple(d["input_shape"]))


def _conv(name, filters, kernel, padding="valid"):
    return LayerSpec("conv2d", name, filters=filters, kernel=kernel, padding=padding)


def front_end_a(prefix=""):
    return (
        _conv(f"{prefix}fa_conv1", 10, (3, 7)),
        LayerSpec("relu", f"{prefix}fa_relu1"),
        LayerSpec("maxpool2d", f"{prefix}fa_pool1", pool=(3, 1)),
        _conv(f"{prefix}fa_conv2", 20, (3, 3)),
        LayerSpec("relu", f"{prefix}fa_relu2"),
        LayerSpec("maxpool2d", f"{prefix}fa_pool2", pool=(3, 1)),
        LayerSpec("dropout", f"{prefix}fa_drop", rate=0.5),
    )


_TEMPORAL_GROUPS = ((24, (1, 7)), (12, (3, 7)), (6, (5, 7)),
                    (24, (1, 12)), (12, (3, 12)), (6, (5, 12)))


def front_end_b(prefix=""):
    branches = tuple(
        (_conv(f"{prefix}fb_group{i}", n, k, "same"), LayerSpec("relu", f"{prefix}fb_relu{i}"))
        for i, (n, k) in enumerate(_TEMPORAL_GROUPS))
    return (
        LayerSpec("concat_parallel", f"{prefix}fb_concat", branches=branches),
        LayerSpec("maxpool2d", f"{prefix}fb_pool1", pool=(5, 1)),
        _conv(f"{prefix}fb_conv2", 20, (3, 3)),
        LayerSpec("relu", f"{prefix}fb_relu"),
        LayerSpec("maxpool2d", f"{prefix}fb_pool2", pool=(3, 1)),
        LayerSpec("dropout", f"{prefix}fb_drop", rate=0.5),
    )


def back_end_a(activation):
    return (
        LayerSpec("flatten", "ba_flatten"),
        LayerSpec("dense", "ba_dense", units=256),
        LayerSpec(activation, "ba_act"),
        LayerSpec("dropout", "ba_drop", rate=0.5),
    )


def _conv_bn_stack(tag, widths, prefix):
    layers = []
    for i, width in enumerate(widths, start=1):
        layers += [
            _conv(f"{prefix}{tag}_conv{i}", width, (3, 3), "same"),
            LayerSpec("relu", f"{prefix}{tag}_relu{i}"),
            LayerSpec("batchnorm", f"{prefix}{tag}_bn{i}"),
        ]
    layers += [LayerSpec("flatten", f"{prefix}{tag}_flatten"),
               LayerSpec("dropout", f"{prefix}{tag}_drop", rate=0.5)]
    return tuple(layers)


def back_end_c(prefix=""):
    return _conv_bn_stack("bc", (40, 40, 40, 80, 80, 80, 135), prefix)


def back_end_d(prefix=""):
    return _conv_bn_stack("bd", (60, 60, 60), prefix)


def output_unit():
    return (LayerSpec("dense", "out_dense", units=1), LayerSpec("sigmoid", "out_sigmoid"))


def build(name):
    """Layer pipeline for one of :data:`ARCHITECTURES`."""
    if name == "baseline":
        layers = front_end_a() + back_end_a("sigmoid")
    elif name == "relu_dense":
        layers = front_end_a() + back_end_a("relu")
    elif name == "no_dense":
        layers = front_end_a() + (LayerSpec("flatten", "nd_flatten"),)
    elif name == "temporal":
        layers = front_end_b() + back_end_a("sigmoid")
    elif name == "cnn9":
        layers = front_end_a() + back_end_c()
    elif name == "cnn5":
        layers = front_end_a() + back_end_d()
    elif name == "feat_extractor_a":
        both = LayerSpec("concat_parallel", "fx_concat",
                         branches=(front_end_a(FROZEN_PREFIX), front_end_a()),
                         frozen=(True, False))
        layers = (both,) + back_end_d()
    elif name == "feat_extractor_b":
        both = LayerSpec("concat_parallel", "fx_concat",
                         branches=(front_end_a(FROZEN_PREFIX) + back_end_d(FROZEN_PREFIX),
                                   front_end_a() + back_end_d()),
                         frozen=(True, False))
        layers = (both,)
    else:
        raise KeyError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    spec = ArchitectureSpec(name, layers + output_unit())
    if spec.shapes()[-1] != (1,):
        raise ContractViolation(f"{name} does not end in a single unit")
    return spec


def count_params(spec):
    """Total number of trainable parameters (frozen branches and running stats excluded)."""
    trainable, _ = pipeline_param_shapes(spec.layers, spec.input_shape)
    return int(sum(int(np.prod(s)) for s in trainable.values()))


def tensor_shapes(spec):
    trainable, state = pipeline_param_shapes(spec.layers, spec.input_shape)
    return {**trainable, **state}


def init_model(spec, seed=0):
    return init_weights(spec.layers, spec.input_shape, seed)


# ---------------------------------------------------------------------------
# Serialization

def encode_model(spec, weights):
    shapes = tensor_shapes(spec)
    directory = []
    blobs = []
    offset = 0
    for name, shape in shapes.items():
        if name not in weights:
            raise ContractViolation(f"missing weight tensor {name}")
        arr = np.ascontiguousarray(weights[name], dtype="<f4")
        if arr.shape != tuple(shape):
            raise ContractViolation(f"weight {name} has shape {arr.shape}, expected {shape}")
        blob = arr.tobytes()
        directory.append({"name": name, "shape": list(shape), "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": spec.to_dict(),
        "tensors": directory,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MODEL_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)


def decode_model(data):
    if len(data) < len(MODEL_MAGIC) + 4 or data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError("not an onset model file")
    pos = len(MODEL_MAGIC)
    (head_len,) = struct.unpack("<I", data[pos:pos + 4])
    pos += 4
    if pos + head_len > len(data):
        raise CorruptionError("model header is truncated")
    try:
        header = json.loads(data[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable model header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {header.get('format_version')}")
    spec = ArchitectureSpec.from_dict(header["architecture"])
    body = data[pos + head_len:]
    expected = sum(t["length"] for t in header["tensors"])
    if len(body) != expected:
        raise CorruptionError(f"model payload holds {len(body)} bytes, header declares {expected}")
    weights = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"]))
        if t["length"] != 4 * n or t["offset"] + t["length"] > len(body):
            raise CorruptionError(f"tensor {t['name']} size disagrees with its shape")
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=t["offset"])
        weights[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
    missing = set(tensor_shapes(spec)) - set(weights)
    if missing:
        raise CorruptionError(f"model file lacks tensors {sorted(missing)}")
    return spec, weights


def save_model(spec, weights, path):
    data = encode_model(spec, weights)
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path):
    with open(path, "rb") as fh:
        return decode_model(fh.read())
