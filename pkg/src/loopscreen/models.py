"""The three classifier architectures and the .sczm weight file format.

custom_cnn      three conv/pool stages into a dense head (canvas-sized).
mini_inception  stem + two 4-branch inception blocks, global average pooled.
mini_effnet     stem + two MBConv blocks with squeeze-excitation.

All are trained from scratch; no pretrained weights exist for this format.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadConfig,
    BadMagic,
    CrcMismatch,
    NonFiniteTensor,
    SchemaMismatch,
    ShapeMismatch,
    UnsupportedVersion,
)
from .imaging import Image
from .nn import (
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool2,
    MaxPoolSame3,
    ReLU,
    SigmoidGate,
    head_uniform,
    softmax,
)

ARCHS = ("custom_cnn", "mini_inception", "mini_effnet")

MAGIC = b"SCZM"
FORMAT_VERSION = 1

CLASS_NAMES = ("control", "patient")


def _check_arch(arch: str) -> None:
    if arch not in ARCHS:
        raise BadConfig(f"unknown architecture {arch!r}; expected one of {ARCHS}")


class SqueezeExcite:
    """Channel attention: global pool -> bottleneck dense pair -> sigmoid scale."""

    def __init__(self, channels, reduction, *, rng, dtype=np.float32):
        squeezed = max(1, channels // reduction)
        self.squeeze = Dense(channels, squeezed, rng=rng, dtype=dtype)
        self.relu = ReLU()
        self.excite = Dense(squeezed, channels, rng=rng, dtype=dtype)
        self.gate = SigmoidGate()
        self._saved = None

    def forward(self, x, training=False):
        pooled = x.mean(axis=(1, 2))
        gate = self.gate.forward(
            self.excite.forward(self.relu.forward(self.squeeze.forward(pooled, training), training), training),
            training,
        )
        if training:
            self._saved = (x, gate)
        return x * gate[:, None, None, :]

    def backward(self, grad_out):
        x, gate = self._saved
        h, w = x.shape[1], x.shape[2]
        grad_x = grad_out * gate[:, None, None, :]
        grad_gate = (grad_out * x).sum(axis=(1, 2))
        grad_pooled = self.squeeze.backward(
            self.relu.backward(self.excite.backward(self.gate.backward(grad_gate)))
        )
        grad_x += grad_pooled[:, None, None, :] / (h * w)
        return grad_x

    def parameters(self):
        out = {}
        for prefix, layer in (("squeeze", self.squeeze), ("excite", self.excite)):
            for key, value in layer.parameters().items():
                out[f"{prefix}.{key}"] = value
        return out

    def gradients(self):
        out = {}
        for prefix, layer in (("squeeze", self.squeeze), ("excite", self.excite)):
            for key, value in layer.gradients().items():
                out[f"{prefix}.{key}"] = value
        return out


class InceptionBlock:
    """Parallel 1x1 / 3x3 / 5x5 / pooled-1x1 branches, channel-concatenated."""

    BRANCH_CHANNELS = 8

    def __init__(self, in_channels, *, rng, dtype=np.float32):
        ch = self.BRANCH_CHANNELS
        self.b1x1 = Conv2d(in_channels, ch, 1, rng=rng, dtype=dtype)
        self.b3x3 = Conv2d(in_channels, ch, 3, padding=1, rng=rng, dtype=dtype)
        self.b5x5 = Conv2d(in_channels, ch, 5, padding=2, rng=rng, dtype=dtype)
        self.pool = MaxPoolSame3()
        self.pool_proj = Conv2d(in_channels, ch, 1, rng=rng, dtype=dtype)
        self.relus = [ReLU() for _ in range(4)]
        self.out_channels = 4 * ch

    def forward(self, x, training=False):
        parts = [
            self.relus[0].forward(self.b1x1.forward(x, training), training),
            self.relus[1].forward(self.b3x3.forward(x, training), training),
            self.relus[2].forward(self.b5x5.forward(x, training), training),
            self.relus[3].forward(
                self.pool_proj.forward(self.pool.forward(x, training), training), training
            ),
        ]
        return np.concatenate(parts, axis=3)

    def backward(self, grad_out):
        ch = self.BRANCH_CHANNELS
        chunks = [grad_out[..., i * ch:(i + 1) * ch] for i in range(4)]
        grad_x = self.b1x1.backward(self.relus[0].backward(chunks[0]))
        grad_x = grad_x + self.b3x3.backward(self.relus[1].backward(chunks[1]))
        grad_x = grad_x + self.b5x5.backward(self.relus[2].backward(chunks[2]))
        grad_x = grad_x + self.pool.backward(
            self.pool_proj.backward(self.relus[3].backward(chunks[3]))
        )
        return grad_x

    def _named(self):
        return (
            ("b1x1", self.b1x1),
            ("b3x3", self.b3x3),
            ("b5x5", self.b5x5),
            ("pool_proj", self.pool_proj),
        )

    def parameters(self):
        return {f"{name}.{key}": value
                for name, layer in self._named()
                for key, value in layer.parameters().items()}

    def gradients(self):
        return {f"{name}.{key}": value
                for name, layer in self._named()
                for key, value in layer.gradients().items()}


class MBConvBlock:
    """Inverted bottleneck: expand, depthwise, squeeze-excitation, project;
    residual only when input and output shapes already match."""

    def __init__(self, in_channels, out_channels, *, rng,
                 expand_ratio=4, se_reduction=4, dtype=np.float32):
        mid = in_channels * expand_ratio
        self.expand = Conv2d(in_channels, mid, 1, rng=rng, dtype=dtype)
        self.relu1 = ReLU()
        self.depthwise = DepthwiseConv2d(mid, 3, padding=1, rng=rng, dtype=dtype)
        self.relu2 = ReLU()
        self.se = SqueezeExcite(mid, se_reduction, rng=rng, dtype=dtype)
        self.project = Conv2d(mid, out_channels, 1, rng=rng, dtype=dtype)
        self.residual = in_channels == out_channels

    def forward(self, x, training=False):
        t = self.relu1.forward(self.expand.forward(x, training), training)
        t = self.relu2.forward(self.depthwise.forward(t, training), training)
        t = self.se.forward(t, training)
        out = self.project.forward(t, training)
        if self.residual:
            out = out + x
        return out

    def backward(self, grad_out):
        grad = self.project.backward(grad_out)
        grad = self.se.backward(grad)
        grad = self.relu2.backward(grad)
        grad = self.depthwise.backward(grad)
        grad = self.relu1.backward(grad)
        grad = self.expand.backward(grad)
        if self.residual:
            grad = grad + grad_out
        return grad

    def _named(self):
        return (
            ("expand", self.expand),
            ("depthwise", self.depthwise),
            ("se", self.se),
            ("project", self.project),
        )

    def parameters(self):
        return {f"{name}.{key}": value
                for name, part in self._named()
                for key, value in part.parameters().items()}

    def gradients(self):
        return {f"{name}.{key}": value
                for name, part in self._named()
                for key, value in part.gradients().items()}


class Model:
    """An ordered stage list mapping [B, H, W, 1] inputs to [B, 2] logits."""

    def __init__(self, arch, input_hw, stages, dtype=np.float32):
        self.arch = arch
        self.input_hw = tuple(input_hw)
        self.stages = stages
        self.class_count = 2
        self.dtype = dtype
        self.file_crc: int | None = None
        names = list(self.parameters())
        if len(names) != len(set(names)):
            raise BadConfig("duplicate parameter names in model")

    def forward(self, x, training=False):
        for name, component in self.stages:
            x = component.forward(x, training)
            # A single-pass sum is finite iff no NaN/Inf snuck in (overflow of
            # the sum itself would equally signal divergence).
            if not np.isfinite(float(x.sum())):
                raise NonFiniteTensor(f"non-finite activations after stage {name!r}")
        return x

    def backward(self, grad):
        for _, component in reversed(self.stages):
            grad = component.backward(grad)
        return grad

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, component in self.stages:
            for key, value in component.parameters().items():
                out[f"{name}.{key}"] = value
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, component in self.stages:
            for key, value in component.gradients().items():
                out[f"{name}.{key}"] = value
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for name, value in snap.items():
            params[name][...] = value


def build(arch: str, seed: int, canvas: tuple[int, int] = (128, 128)) -> Model:
    """Construct a freshly He-initialized model for a (height, width) canvas."""
    _check_arch(arch)
    h, w = canvas
    if h % 8 or w % 8 or h < 16 or w < 16:
        raise ShapeMismatch(f"canvas sides must be multiples of 8 and >= 16, got {h}x{w}")
    rng = np.random.default_rng(seed)
    if arch == "custom_cnn":
        flat = 64 * (h // 8) * (w // 8)
        stages = [
            ("conv1", Conv2d(1, 16, 3, padding=1, rng=rng)),
            ("relu1", ReLU()),
            ("pool1", MaxPool2()),
            ("conv2", Conv2d(16, 32, 3, padding=1, rng=rng)),
            ("relu2", ReLU()),
            ("pool2", MaxPool2()),
            ("conv3", Conv2d(32, 64, 3, padding=1, rng=rng)),
            ("relu3", ReLU()),
            ("pool3", MaxPool2()),
            ("flatten", Flatten()),
            ("fc1", Dense(flat, 128, rng=rng)),
            ("relu4", ReLU()),
            ("dropout", Dropout(0.5, seed=seed)),
            ("fc2", Dense(128, 2, rng=rng, init=head_uniform)),
        ]
    elif arch == "mini_inception":
        block1 = InceptionBlock(16, rng=rng)
        block2 = InceptionBlock(block1.out_channels, rng=rng)
        stages = [
            ("stem", Conv2d(1, 16, 3, padding=1, rng=rng)),
            ("stem_relu", ReLU()),
            ("stem_pool", MaxPool2()),
            ("incep1", block1),
            ("pool", MaxPool2()),
            ("incep2", block2),
            ("gap", GlobalAvgPool()),
            ("head", Dense(block2.out_channels, 2, rng=rng, init=head_uniform)),
        ]
    else:  # mini_effnet
        stages = [
            ("stem", Conv2d(1, 16, 3, padding=1, rng=rng)),
            ("stem_relu", ReLU()),
            ("stem_pool", MaxPool2()),
            ("mbconv1", MBConvBlock(16, 24, rng=rng)),
            ("pool", MaxPool2()),
            ("mbconv2", MBConvBlock(24, 24, rng=rng)),
            ("gap", GlobalAvgPool()),
            ("head", Dense(24, 2, rng=rng, init=head_uniform)),
        ]
    return Model(arch, (h, w), stages)


@dataclass(frozen=True)
class Prediction:
    p_control: float
    p_patient: float
    label: str


def predict(model: Model, img: Image) -> Prediction:
    """Class probabilities for a preprocessed image; ties score as patient."""
    if (img.height, img.width) != model.input_hw:
        raise ShapeMismatch(
            f"image {img.height}x{img.width} does not match model input {model.input_hw}"
        )
    x = img.pixels.astype(model.dtype)[None, :, :, None]
    logits = model.forward(x, training=False)[0]
    probs = softmax(logits.astype(np.float64))
    p_patient = float(probs[1])
    label = "patient" if p_patient >= 0.5 else "control"
    return Prediction(p_control=float(probs[0]), p_patient=p_patient, label=label)


# ---------------------------------------------------------------------------
# .sczm serialization: magic, version, arch, input dims, named float32 tensors,
# trailing CRC-32 of everything before it. Little-endian throughout.


def save(model: Model, path: str | Path) -> int:
    """Write the model; returns the file's CRC-32."""
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    arch_bytes = model.arch.encode("utf-8")
    parts.append(struct.pack("<I", len(arch_bytes)))
    parts.append(arch_bytes)
    parts.append(struct.pack("<II", model.input_hw[0], model.input_hw[1]))
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))
    model.file_crc = crc
    return crc


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CrcMismatch("model file is truncated")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load(path: str | Path, expect_arch: str | None = None) -> Model:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{path} is not a model file (bad magic)")
    if len(data) < 12:
        raise CrcMismatch("model file is truncated")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CrcMismatch(f"CRC-32 {actual_crc:08x} does not match stored {stored_crc:08x}")
    reader = _Reader(data[:-4])
    reader.take(4)  # magic
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}; this build reads {FORMAT_VERSION}")
    arch = reader.take(reader.u32()).decode("utf-8")
    if arch not in ARCHS:
        raise SchemaMismatch(f"file carries unknown architecture {arch!r}")
    if expect_arch is not None and arch != expect_arch:
        raise SchemaMismatch(f"expected a {expect_arch} model, file carries {arch}")
    input_h, input_w = reader.u32(), reader.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        raw = reader.take(4 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    model = build(arch, seed=0, canvas=(input_h, input_w))
    params = model.parameters()
    if list(params.keys()) != list(tensors.keys()):
        raise SchemaMismatch(
            f"tensor names do not match the {arch} schema "
            f"(file has {len(tensors)}, schema has {len(params)})"
        )
    for name, tensor in tensors.items():
        if params[name].shape != tensor.shape:
            raise SchemaMismatch(
                f"tensor {name} has shape {tensor.shape}, schema wants {params[name].shape}"
            )
        params[name][...] = tensor
    model.file_crc = stored_crc
    return model
