"""Siamese matching-cost networks evaluated fully convolutionally.

Two architectures share one code path: a narrow net whose five 3x3 valid
convolutions see an 11x11 window, and a wide net that additionally pyramid
pools the trunk features (default sizes 27, 9, 3, 1) before the decision
layers, growing the effective patch to 37x37 without losing resolution.
Both ingest zero-mean unit-variance grayscale and emit a similarity in
[0, 1]; matching cost is 1 - similarity.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import config as kvmod
from .errors import ConfigError, ShapeError, WeightsFormatError
from .pyramid import pyramid_pool, validate_pool_sizes
from .tensor import (
    ConvLayer,
    as_tensor,
    concat_channels,
    conv2d,
    relu,
    sigmoid,
)
from .util import COST_SENTINEL, atomic_write_bytes, parallel_map

WEIGHTS_MAGIC = b"W4PS"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; the weights container stores its hash."""

    trunk_layers: int = 5
    trunk_channels: int = 112
    head_layers: int = 3
    head_channels: int = 384
    fourp_sizes: Tuple[int, ...] = ()
    pooling_mode: str = "max"
    fourp_after_concat: bool = False

    def validate(self) -> "NetworkSpec":
        if self.trunk_layers < 1 or self.trunk_channels < 1:
            raise ConfigError("trunk must have at least one layer and channel")
        if self.head_layers < 1 or self.head_channels < 1:
            raise ConfigError("head must have at least one layer and channel")
        if self.fourp_sizes:
            try:
                validate_pool_sizes(self.fourp_sizes, strict_decreasing=True)
            except ShapeError as exc:
                raise ConfigError(str(exc)) from exc
        if self.pooling_mode not in ("max", "mean"):
            raise ConfigError(f"pooling_mode must be max or mean, got {self.pooling_mode}")
        return self

    @property
    def trunk_receptive_field(self) -> int:
        """Five 3x3 valid convolutions see 2 * layers + 1 = 11 pixels."""
        return 2 * self.trunk_layers + 1

    @property
    def total_patch(self) -> int:
        """Effective input window per output pixel; pooling widens the trunk
        field by its largest window minus one (11 + 27 - 1 = 37)."""
        widen = (max(self.fourp_sizes) - 1) if self.fourp_sizes else 0
        return self.trunk_receptive_field + widen

    @property
    def pyramid_scales(self) -> int:
        return len(self.fourp_sizes) if self.fourp_sizes else 1

    @property
    def head_input_channels(self) -> int:
        return 2 * self.trunk_channels * self.pyramid_scales

    def head_widths(self) -> List[int]:
        return [self.head_channels] * (self.head_layers - 1) + [1]


def narrow_tiny_spec() -> NetworkSpec:
    return NetworkSpec(trunk_channels=16, head_channels=32)


def wide_tiny_spec() -> NetworkSpec:
    return NetworkSpec(trunk_channels=16, head_channels=32,
                       fourp_sizes=(27, 9, 3, 1))


def narrow_full_spec() -> NetworkSpec:
    return NetworkSpec()


def wide_full_spec() -> NetworkSpec:
    return NetworkSpec(fourp_sizes=(27, 9, 3, 1))


SPEC_PRESETS = {
    "narrow-tiny": narrow_tiny_spec,
    "wide-tiny": wide_tiny_spec,
    "narrow-full": narrow_full_spec,
    "wide-full": wide_full_spec,
}


def spec_preset(name: str) -> NetworkSpec:
    try:
        return SPEC_PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown network preset {name!r}; choose from {sorted(SPEC_PRESETS)}")


def spec_to_kv(spec: NetworkSpec) -> Dict[str, str]:
    return {
        "trunk_layers": str(spec.trunk_layers),
        "trunk_channels": str(spec.trunk_channels),
        "head_layers": str(spec.head_layers),
        "head_channels": str(spec.head_channels),
        "fourp_sizes": ",".join(str(s) for s in spec.fourp_sizes) or "none",
        "pooling_mode": spec.pooling_mode,
        "fourp_after_concat": str(spec.fourp_after_concat).lower(),
    }


def spec_from_kv(pairs: Dict[str, str]) -> NetworkSpec:
    base = NetworkSpec()
    spec = NetworkSpec(
        trunk_layers=kvmod.get_int(pairs, "trunk_layers", base.trunk_layers),
        trunk_channels=kvmod.get_int(pairs, "trunk_channels", base.trunk_channels),
        head_layers=kvmod.get_int(pairs, "head_layers", base.head_layers),
        head_channels=kvmod.get_int(pairs, "head_channels", base.head_channels),
        fourp_sizes=tuple(kvmod.get_int_list(pairs, "fourp_sizes", [])),
        pooling_mode=pairs.get("pooling_mode", base.pooling_mode),
        fourp_after_concat=kvmod.get_bool(pairs, "fourp_after_concat",
                                          base.fourp_after_concat),
    )
    return spec.validate()


def write_spec(path, spec: NetworkSpec) -> None:
    kvmod.write_kv_file(path, spec_to_kv(spec))


def read_spec(path) -> NetworkSpec:
    return spec_from_kv(kvmod.read_kv_file(path))


def spec_hash(spec: NetworkSpec) -> bytes:
    text = kvmod.format_kv(spec_to_kv(spec))
    return hashlib.sha256(text.encode("utf-8")).digest()


# ---------------------------------------------------------------------------
# Weights


def _layer_shapes(spec: NetworkSpec) -> List[Tuple[int, int, int, int]]:
    """Kernel shapes in blob order: trunk layers then head layers."""
    shapes = []
    cin = 1
    for _ in range(spec.trunk_layers):
        shapes.append((3, 3, cin, spec.trunk_channels))
        cin = spec.trunk_channels
    cin = spec.head_input_channels
    for cout in spec.head_widths():
        shapes.append((1, 1, cin, cout))
        cin = cout
    return shapes


@dataclass
class Weights:
    """Parameter blobs for one NetworkSpec, plus provenance metadata."""

    spec: NetworkSpec
    trunk: List[ConvLayer]
    head: List[ConvLayer]
    provenance: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def random(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Weights":
        spec.validate()
        shapes = _layer_shapes(spec)
        layers = [ConvLayer.random(kh, kw, cin, cout, rng)
                  for kh, kw, cin, cout in shapes]
        trunk = layers[: spec.trunk_layers]
        head = layers[spec.trunk_layers:]
        return cls(spec=spec, trunk=trunk, head=head)

    def layers(self) -> List[ConvLayer]:
        return list(self.trunk) + list(self.head)

    def astype(self, dtype) -> "Weights":
        return Weights(spec=self.spec,
                       trunk=[l.astype(dtype) for l in self.trunk],
                       head=[l.astype(dtype) for l in self.head],
                       provenance=dict(self.provenance))

    def copy(self) -> "Weights":
        return Weights(spec=self.spec,
                       trunk=[ConvLayer(l.kernel.copy(), l.bias.copy(), l.padding)
                              for l in self.trunk],
                       head=[ConvLayer(l.kernel.copy(), l.bias.copy(), l.padding)
                             for l in self.head],
                       provenance=dict(self.provenance))

    def validate_shapes(self) -> "Weights":
        expected = _layer_shapes(self.spec)
        actual = [tuple(l.kernel.shape) for l in self.layers()]
        if actual != expected:
            raise WeightsFormatError(
                f"blob shapes {actual} do not match the network spec {expected}")
        return self


def save_weights(weights: Weights, path) -> None:
    """Container layout: magic, version, spec hash, JSON metadata, then raw
    little-endian float32 blobs (kernel then bias per layer, trunk first)."""
    weights.validate_shapes()
    meta = {
        "spec": spec_to_kv(weights.spec),
        "provenance": dict(weights.provenance),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [WEIGHTS_MAGIC,
             struct.pack("<I", WEIGHTS_VERSION),
             spec_hash(weights.spec),
             struct.pack("<Q", len(meta_bytes)),
             meta_bytes]
    for layer in weights.layers():
        parts.append(np.ascontiguousarray(layer.kernel, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_weights(path, spec: Optional[NetworkSpec] = None) -> Weights:
    """Read and validate a weights container.

    When `spec` is given its hash must match the stored one; otherwise the
    spec embedded in the metadata is used. Truncated or corrupt files are
    rejected without partial state.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 + 4 + 32 + 8:
        raise WeightsFormatError(f"{path}: file shorter than the fixed header")
    if data[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {data[:4]!r}")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    stored_hash = data[8:40]
    meta_len = struct.unpack_from("<Q", data, 40)[0]
    meta_end = 48 + meta_len
    if meta_end > len(data):
        raise WeightsFormatError(f"{path}: metadata truncated")
    try:
        meta = json.loads(data[48:meta_end].decode("utf-8"))
        embedded = spec_from_kv({k: str(v) for k, v in meta["spec"].items()})
    except (ValueError, KeyError) as exc:
        raise WeightsFormatError(f"{path}: corrupt metadata ({exc})") from exc
    if spec_hash(embedded) != stored_hash:
        raise WeightsFormatError(f"{path}: spec hash does not match metadata")
    if spec is not None and spec_hash(spec) != stored_hash:
        raise WeightsFormatError(
            f"{path}: weights were saved for a different network spec")
    use_spec = spec if spec is not None else embedded

    shapes = _layer_shapes(use_spec)
    offset = meta_end
    layers = []
    for shape in shapes:
        ksize = int(np.prod(shape)) * 4
        bsize = shape[3] * 4
        if offset + ksize + bsize > len(data):
            raise WeightsFormatError(
                f"{path}: blob data truncated at byte {offset}")
        kernel = np.frombuffer(data[offset: offset + ksize], dtype="<f4").reshape(shape)
        offset += ksize
        bias = np.frombuffer(data[offset: offset + bsize], dtype="<f4")
        offset += bsize
        layers.append(ConvLayer(kernel.astype(np.float32), bias.astype(np.float32)))
    if offset != len(data):
        raise WeightsFormatError(
            f"{path}: {len(data) - offset} unexpected trailing bytes")
    provenance = {k: str(v) for k, v in meta.get("provenance", {}).items()}
    return Weights(spec=use_spec, trunk=layers[: use_spec.trunk_layers],
                   head=layers[use_spec.trunk_layers:],
                   provenance=provenance).validate_shapes()


# ---------------------------------------------------------------------------
# Forward passes


def extract_features(image, spec: NetworkSpec, weights: Weights,
                     counter: Optional[Dict[str, int]] = None) -> np.ndarray:
    """Trunk features of one image: each 3x3 valid convolution is followed by
    a ReLU, shrinking each spatial dim by trunk_receptive_field - 1 total.
    The caller provides an already-normalized grayscale image."""
    x = np.asarray(image)
    if x.ndim == 2:
        x = x[:, :, None]
    x = as_tensor(x, "image")
    if x.shape[2] != 1:
        raise ShapeError(f"expected grayscale input, got {x.shape[2]} channels")
    rf = spec.trunk_receptive_field
    if x.shape[0] < rf or x.shape[1] < rf:
        raise ShapeError(
            f"image {x.shape[:2]} smaller than the {rf}x{rf} receptive field")
    if counter is not None:
        counter["extract_features"] = counter.get("extract_features", 0) + 1
    for layer in weights.trunk:
        x = relu(conv2d(x, layer))
    return x


def _pool_features(feat: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    if not spec.fourp_sizes or spec.fourp_after_concat:
        return feat
    return pyramid_pool(feat, spec.fourp_sizes, spec.pooling_mode)


def decision_head(left_feat, right_feat, spec: NetworkSpec, weights: Weights,
                  pooled: bool = False) -> np.ndarray:
    """Similarity map from two aligned feature tensors.

    With the default placement each stream is pyramid pooled before the
    channel concatenation (set pooled=True when that already happened);
    with fourp_after_concat the concatenated tensor is pooled instead. The
    head is a stack of 1x1 convolutions, ReLU between, logistic at the end.
    """
    left_feat = as_tensor(left_feat, "left features")
    right_feat = as_tensor(right_feat, "right features")
    if left_feat.shape != right_feat.shape:
        raise ShapeError(
            f"feature shapes differ: {left_feat.shape} vs {right_feat.shape}")
    if not pooled:
        left_feat = _pool_features(left_feat, spec)
        right_feat = _pool_features(right_feat, spec)
    x = concat_channels([left_feat, right_feat])
    if spec.fourp_sizes and spec.fourp_after_concat:
        x = pyramid_pool(x, spec.fourp_sizes, spec.pooling_mode)
    if x.shape[2] != spec.head_input_channels:
        raise ShapeError(
            f"head expects {spec.head_input_channels} channels, got {x.shape[2]}")
    for layer in weights.head[:-1]:
        x = relu(conv2d(x, layer))
    return sigmoid(conv2d(x, weights.head[-1]))


def score_pair(left_patch, right_patch, spec: NetworkSpec, weights: Weights) -> float:
    """Similarity of one normalized patch pair: the center pixel of the
    fully-convolutional similarity map over the patches."""
    lf = extract_features(left_patch, spec, weights)
    rf = extract_features(right_patch, spec, weights)
    sim = decision_head(lf, rf, spec, weights)
    cy, cx = sim.shape[0] // 2, sim.shape[1] // 2
    return float(sim[cy, cx, 0])


def compute_cost_volume(left, right, ndisp: int, spec: NetworkSpec,
                        weights: Weights, threads: int = 1,
                        counter: Optional[Dict[str, int]] = None,
                        normalized: bool = False) -> np.ndarray:
    """Cost volume cost(y, x, d) = 1 - similarity(left at (y, x), right at
    (y, x - d)).

    Inputs are unit-range images standardized internally (pass
    normalized=True to skip). Features for each image are computed exactly
    once and shifted per disparity; entries whose source window leaves the
    image, including the trunk's border rim, hold the invalid-cost sentinel.
    """
    from .util import standardize_image

    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.ndim == 3 and left.shape[2] == 1:
        left = left[:, :, 0]
    if right.ndim == 3 and right.shape[2] == 1:
        right = right[:, :, 0]
    if left.shape != right.shape or left.ndim != 2:
        raise ShapeError(f"image shapes differ: {left.shape} vs {right.shape}")
    ndisp = int(ndisp)
    if ndisp < 1:
        raise ConfigError(f"ndisp must be >= 1, got {ndisp}")
    if not normalized:
        left = standardize_image(left)
        right = standardize_image(right)

    h, w = left.shape
    margin = (spec.trunk_receptive_field - 1) // 2
    lf = _pool_features(
        extract_features(left.astype(np.float32), spec, weights, counter), spec)
    rfeat = _pool_features(
        extract_features(right.astype(np.float32), spec, weights, counter), spec)
    fh, fw = lf.shape[:2]

    volume = np.full((h, w, ndisp), COST_SENTINEL, dtype=np.float32)

    def one_disparity(d: int) -> Optional[np.ndarray]:
        if d >= fw:
            return None
        sim = decision_head(lf[:, d:, :], rfeat[:, : fw - d, :], spec, weights,
                            pooled=not spec.fourp_after_concat)
        return 1.0 - sim[:, :, 0]

    slices = parallel_map(one_disparity, list(range(ndisp)), threads=threads)
    for d, cost in enumerate(slices):
        if cost is None:
            continue
        volume[margin: margin + fh, margin + d: margin + fw, d] = cost
    return volume
