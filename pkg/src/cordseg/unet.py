"""Encoder-decoder segmentation network assembled from tensor_core layers.

The contracting path is `depth` double-conv blocks with 2x2 max pooling,
the expanding path mirrors them with learned 2x2 up-convolutions and skip
concatenations, and a 1x1 convolution plus sigmoid produces per-pixel
probabilities. With depth=4 and base_channels=64 the network has exactly
23 convolutional layers.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor_core import (
    ConvParams,
    OptimState,
    Tensor,
    adam_step,
    bce_loss,
    concat_channels,
    conv2d,
    conv2d_backward,
    init_optim_state,
    maxpool2x2,
    maxpool2x2_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    split_channels,
    upconv2x2,
    upconv2x2_backward,
)

WEIGHT_MAGIC = b"CSEGW1\x00\x00"

UNetWeights = dict[str, ConvParams]


class WeightFileError(ValueError):
    """Base for weight-file problems."""


class BadMagicError(WeightFileError):
    pass


class TruncatedWeightsError(WeightFileError):
    pass


class CorruptWeightsError(WeightFileError):
    """Checksum mismatch: bytes were altered after writing."""


class WeightShapeError(WeightFileError):
    """Stored tensor names/shapes do not match the expected architecture."""


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 2
    base_channels: int = 8
    tile: int = 64
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.tile % (1 << self.depth) != 0:
            raise ValueError(
                f"tile side {self.tile} not divisible by 2^depth = {1 << self.depth}"
            )

    def channels_at(self, level: int) -> int:
        return self.base_channels << level


FULL_SCALE_CONFIG = UNetConfig(depth=4, base_channels=64, tile=256)
DESK_CONFIG = UNetConfig(depth=2, base_channels=8, tile=64)


@dataclass
class TrainRecord:
    epoch: int
    mean_loss: float
    val_iou: float | None = None


def conv_layer_count(config: UNetConfig) -> int:
    """Total convolutions: (depth+1) double-convs, depth up-convs, one 1x1 head."""
    return 5 * config.depth + 3


def parameter_spec(config: UNetConfig) -> list[tuple[str, tuple[int, int, int, int]]]:
    """Ordered (name, kernel shape) for every convolution in the network."""
    d, c0 = config.depth, config.base_channels
    spec: list[tuple[str, tuple[int, int, int, int]]] = []
    ch_in = config.in_channels
    for k in range(d):
        ch = c0 << k
        spec.append((f"enc{k}.conv1", (ch, ch_in, 3, 3)))
        spec.append((f"enc{k}.conv2", (ch, ch, 3, 3)))
        ch_in = ch
    ch_bot = c0 << d
    spec.append(("bot.conv1", (ch_bot, ch_in, 3, 3)))
    spec.append(("bot.conv2", (ch_bot, ch_bot, 3, 3)))
    ch_in = ch_bot
    for k in reversed(range(d)):
        ch = c0 << k
        spec.append((f"dec{k}.up", (ch, ch_in, 2, 2)))
        spec.append((f"dec{k}.conv1", (ch, 2 * ch, 3, 3)))
        spec.append((f"dec{k}.conv2", (ch, ch, 3, 3)))
        ch_in = ch
    spec.append(("head", (config.out_channels, ch_in, 1, 1)))
    return spec


def build(config: UNetConfig, seed: int = 0) -> UNetWeights:
    """He-initialized weights: kernels ~ N(0, 2/(in_ch*kh*kw)), biases zero."""
    rng = np.random.default_rng(seed)
    weights: UNetWeights = {}
    for name, shape in parameter_spec(config):
        oc, ic, kh, kw = shape
        std = np.sqrt(2.0 / (ic * kh * kw))
        kernel = rng.normal(0.0, std, size=shape).astype(np.float32)
        bias = np.zeros(oc, dtype=np.float32)
        weights[name] = ConvParams(kernel, bias)
    return weights


def config_from_weights(weights: UNetWeights, tile: int) -> UNetConfig:
    """Recover depth and base width from weight names/shapes; tile is caller's."""
    depth = sum(1 for name in weights if name.endswith(".up"))
    if "head" not in weights or depth < 1:
        raise WeightShapeError("weights do not describe a recognizable network")
    base = weights["head"].in_channels
    config = UNetConfig(depth=depth, base_channels=base, tile=tile)
    validate_weights(weights, config)
    return config


def validate_weights(weights: UNetWeights, config: UNetConfig) -> None:
    expected = parameter_spec(config)
    names = [n for n, _ in expected]
    if list(weights.keys()) != names:
        raise WeightShapeError(
            f"weight names {list(weights.keys())} do not match expected {names}"
        )
    for name, shape in expected:
        if weights[name].kernel.shape != shape:
            raise WeightShapeError(
                f"{name}: kernel shape {weights[name].kernel.shape}, expected {shape}"
            )


def _double_conv(params1: ConvParams, params2: ConvParams, x: Tensor):
    z1 = conv2d(x, params1, "same")
    a1 = relu(z1)
    z2 = conv2d(a1, params2, "same")
    a2 = relu(z2)
    return a2, (x, z1, a1, z2)


def _double_conv_backward(params1, params2, cache, grad_out):
    x, z1, a1, z2 = cache
    g = relu_backward(z2, grad_out)
    g, gk2, gb2 = conv2d_backward(a1, params2, g, "same")
    g = relu_backward(z1, g)
    g, gk1, gb1 = conv2d_backward(x, params1, g, "same")
    return g, (gk1, gb1), (gk2, gb2)


def _forward_trace(weights: UNetWeights, config: UNetConfig, x: Tensor):
    d = config.depth
    skips, pool_records, caches = [], [], {}
    a = x
    for k in range(d):
        a, caches[f"enc{k}"] = _double_conv(
            weights[f"enc{k}.conv1"], weights[f"enc{k}.conv2"], a
        )
        skips.append(a)
        a, rec = maxpool2x2(a)
        pool_records.append(rec)
    a, caches["bot"] = _double_conv(weights["bot.conv1"], weights["bot.conv2"], a)
    for k in reversed(range(d)):
        caches[f"dec{k}.up_in"] = a
        up = upconv2x2(a, weights[f"dec{k}.up"])
        cat = concat_channels(up, skips[k])
        caches[f"dec{k}.up_ch"] = up.shape[1]
        a, caches[f"dec{k}"] = _double_conv(
            weights[f"dec{k}.conv1"], weights[f"dec{k}.conv2"], cat
        )
    caches["head_in"] = a
    logits = conv2d(a, weights["head"], "same")
    probs = sigmoid(logits)
    caches["probs"] = probs
    return probs, skips, pool_records, caches


def forward(weights: UNetWeights, config: UNetConfig, x: Tensor) -> Tensor:
    """Per-pixel probabilities in (0, 1); spatial shape is preserved.

    x is (n, in_channels, s, s) with s == config.tile (any batch size works).
    """
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ValueError(f"expected (n, {config.in_channels}, s, s), got {x.shape}")
    if x.shape[2] != config.tile or x.shape[3] != config.tile:
        raise ValueError(
            f"tile side {x.shape[2]}x{x.shape[3]} does not match config tile {config.tile}"
        )
    probs, _, _, _ = _forward_trace(weights, config, x)
    return probs


def loss_and_grads(
    weights: UNetWeights, config: UNetConfig, x: Tensor, target: Tensor
) -> tuple[float, dict[str, np.ndarray]]:
    """BCE loss of forward(x) against target, plus gradients for every tensor.

    Gradient keys are '<conv name>.kernel' and '<conv name>.bias'.
    """
    probs, skips, pool_records, caches = _forward_trace(weights, config, x)
    loss, g = bce_loss(probs, target)
    g = sigmoid_backward(probs, g)

    grads: dict[str, np.ndarray] = {}

    def put(name: str, gk: np.ndarray, gb: np.ndarray) -> None:
        grads[f"{name}.kernel"] = gk
        grads[f"{name}.bias"] = gb

    g, gk, gb = conv2d_backward(caches["head_in"], weights["head"], g, "same")
    put("head", gk, gb)
    d = config.depth
    for k in range(d):
        g, g1, g2 = _double_conv_backward(
            weights[f"dec{k}.conv1"], weights[f"dec{k}.conv2"], caches[f"dec{k}"], g
        )
        put(f"dec{k}.conv1", *g1)
        put(f"dec{k}.conv2", *g2)
        g_up, g_skip = split_channels(g, caches[f"dec{k}.up_ch"])
        g, gk, gb = upconv2x2_backward(
            caches[f"dec{k}.up_in"], weights[f"dec{k}.up"], np.ascontiguousarray(g_up)
        )
        put(f"dec{k}.up", gk, gb)
        # the skip branch joins the encoder gradient at level k
        caches[f"skip_grad{k}"] = g_skip
    g, g1, g2 = _double_conv_backward(
        weights["bot.conv1"], weights["bot.conv2"], caches["bot"], g
    )
    put("bot.conv1", *g1)
    put("bot.conv2", *g2)
    for k in reversed(range(d)):
        g = maxpool2x2_backward(pool_records[k], g)
        g = g + caches[f"skip_grad{k}"]
        g, g1, g2 = _double_conv_backward(
            weights[f"enc{k}.conv1"], weights[f"enc{k}.conv2"], caches[f"enc{k}"], g
        )
        put(f"enc{k}.conv1", *g1)
        put(f"enc{k}.conv2", *g2)
    return loss, grads


def flatten_params(weights: UNetWeights) -> dict[str, np.ndarray]:
    flat: dict[str, np.ndarray] = {}
    for name, params in weights.items():
        flat[f"{name}.kernel"] = params.kernel
        flat[f"{name}.bias"] = params.bias
    return flat


def unflatten_params(flat: dict[str, np.ndarray]) -> UNetWeights:
    weights: UNetWeights = {}
    for key in flat:
        if key.endswith(".kernel"):
            name = key[: -len(".kernel")]
            weights[name] = ConvParams(flat[key], flat[f"{name}.bias"])
    return weights


def _as_input(image: np.ndarray) -> np.ndarray:
    x = image.astype(np.float32)
    if image.dtype == np.uint8:
        x /= 255.0
    return x[None, None]


def train(
    weights: UNetWeights,
    config: UNetConfig,
    dataset: Sequence[tuple[np.ndarray, np.ndarray]],
    epochs: int,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[UNetWeights, list[TrainRecord]]:
    """Shuffled single-sample adaptive-moment training.

    dataset is (image, mask) pairs of 2D arrays with side config.tile; uint8
    images are scaled to [0, 1]. The input weights are not mutated.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    for img, mask in dataset:
        if img.shape != (config.tile, config.tile) or mask.shape != img.shape:
            raise ValueError(
                f"dataset sample shape {img.shape}/{mask.shape} does not match "
                f"tile side {config.tile}"
            )
    params = {k: v.copy() for k, v in flatten_params(weights).items()}
    state = init_optim_state(params)
    rng = np.random.default_rng(seed)
    records: list[TrainRecord] = []
    inputs = [_as_input(img) for img, _ in dataset]
    targets = [np.asarray(mask, dtype=np.float32)[None, None] for _, mask in dataset]
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for i in order:
            loss, grads = loss_and_grads(unflatten_params(params), config, inputs[i], targets[i])
            params, state = adam_step(params, grads, state, lr)
            losses.append(loss)
        records.append(TrainRecord(epoch=epoch, mean_loss=float(np.mean(losses))))
    return unflatten_params(params), records


def save_weights(weights: UNetWeights, path: str | Path) -> None:
    """Write the bit-exact binary weight format (see load_weights)."""
    out = bytearray()
    out += WEIGHT_MAGIC
    tensors = list(flatten_params(weights).items())
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", data.ndim)
        out += struct.pack(f"<{data.ndim}I", *data.shape)
        out += data.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedWeightsError(
                f"weight file ends at byte {len(self.blob)}, "
                f"needed {self.pos + n}"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_weights(path: str | Path, config: UNetConfig | None = None) -> UNetWeights:
    """Read a weight file; round-trips with save_weights bit-exactly.

    Layout: magic CSEGW1\\0\\0, u32 LE tensor count, then per tensor a u16 LE
    name length, UTF-8 name, u8 rank, rank u32 LE dims and raw little-endian
    float32 data; a trailing u32 LE CRC-32 of all preceding bytes.

    If config is given the tensor names and shapes are validated against it.
    """
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(len(WEIGHT_MAGIC)) != WEIGHT_MAGIC:
        raise BadMagicError(f"{path}: not a weight file (bad magic)")
    (count,) = struct.unpack("<I", r.take(4))
    flat: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        name = r.take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n_values = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * n_values), dtype="<f4").reshape(dims)
        flat[name] = data.astype(np.float32)
    body_end = r.pos
    (stored_crc,) = struct.unpack("<I", r.take(4))
    if stored_crc != zlib.crc32(blob[:body_end]):
        raise CorruptWeightsError(f"{path}: CRC-32 mismatch")
    try:
        weights = unflatten_params(flat)
        for name, params in weights.items():
            assert f"{name}.bias" in flat
    except (KeyError, ValueError, AssertionError) as exc:
        raise WeightShapeError(f"{path}: inconsistent tensor table: {exc}") from exc
    if config is not None:
        validate_weights(weights, config)
    return weights
