"""Patch sampling, SGD training, head-only fine-tuning, gradient checks.

Training operates on patch pairs: a left patch, a right patch that either
does (label 1) or does not (label 0) show the same surface point, and a
binary cross-entropy loss on the network's similarity output. The loss is
evaluated at the single center pixel of the patch, which is exactly the
value the fully-convolutional inference path produces at that pixel, so a
net trained here drops straight into cost-volume construction.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import format_kv, get_float, get_int, read_kv_file
from .errors import ConfigError, DataError, ShapeError, TrainingDivergedError
from .network import NetworkSpec, Weights, _layer_shapes
from .tensor import ConvLayer, concat_channels, conv2d, conv2d_backward, relu, relu_backward
from .util import atomic_write_text, standardize_image, write_csv

PATCH_SIZE = 37
LOSS_KINDS = ("bce", "hinge")


@dataclass
class PatchSample:
    """One training example: two patches, a label, and where it came from."""

    left: np.ndarray
    right: np.ndarray
    label: float
    y: int = 0
    x: int = 0
    disparity: int = 0
    offset: int = 0


@dataclass
class TrainSchedule:
    """Four epochs by default; the last two run at the decreased rate."""

    epochs: int = 4
    lr_initial: float = 0.003
    lr_final: float = 0.0003
    lr_drop_epoch: int = 3
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    loss: str = "bce"

    def validate(self) -> "TrainSchedule":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.lr_initial < 0 or self.lr_final < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lr_final > self.lr_initial:
            raise ConfigError(
                f"final rate {self.lr_final} exceeds initial rate {self.lr_initial}")
        if self.lr_drop_epoch < 1:
            raise ConfigError(
                f"lr_drop_epoch must be positive, got {self.lr_drop_epoch}; "
                f"a value past the last epoch means the rate never drops")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss}")
        return self

    def rate_for_epoch(self, epoch: int) -> float:
        """Epochs are 1-based; epochs at or past the drop use the final rate."""
        return self.lr_initial if epoch < self.lr_drop_epoch else self.lr_final


def schedule_to_kv(s: TrainSchedule) -> Dict[str, str]:
    return {
        "epochs": str(s.epochs),
        "lr_initial": repr(s.lr_initial),
        "lr_final": repr(s.lr_final),
        "lr_drop_epoch": str(s.lr_drop_epoch),
        "batch_size": str(s.batch_size),
        "momentum": repr(s.momentum),
        "seed": str(s.seed),
        "loss": s.loss,
    }


def schedule_from_kv(pairs: Dict[str, str]) -> TrainSchedule:
    base = TrainSchedule()
    return TrainSchedule(
        epochs=get_int(pairs, "epochs", base.epochs),
        lr_initial=get_float(pairs, "lr_initial", base.lr_initial),
        lr_final=get_float(pairs, "lr_final", base.lr_final),
        lr_drop_epoch=get_int(pairs, "lr_drop_epoch", base.lr_drop_epoch),
        batch_size=get_int(pairs, "batch_size", base.batch_size),
        momentum=get_float(pairs, "momentum", base.momentum),
        seed=get_int(pairs, "seed", base.seed),
        loss=pairs.get("loss", base.loss),
    ).validate()


def write_schedule(path, schedule: TrainSchedule) -> None:
    atomic_write_text(path, format_kv(schedule_to_kv(schedule)))


def read_schedule(path) -> TrainSchedule:
    return schedule_from_kv(read_kv_file(path))


def sample_patches(dataset, count: int, seed: int, jitter: int = 1,
                   neg_min: int = 2, neg_max: int = 8,
                   patch_size: int = PATCH_SIZE) -> List[PatchSample]:
    """Draw a balanced, seeded set of positive/negative patch pairs.

    Each drawn center pixel emits one positive (right patch centered at the
    true correspondence, jittered by at most `jitter`) and one negative
    (offset by a magnitude in [neg_min, neg_max], random sign). Patches are
    cropped from per-image standardized planes so they match what inference
    feeds the network. Candidate centers keep every possible offset fully
    inside the right image, so all emitted patches are in bounds.
    """
    if count < 2 or count % 2 != 0:
        raise ConfigError(f"count must be a positive even number, got {count}")
    if not 0 <= jitter < neg_min <= neg_max:
        raise ConfigError(
            f"offsets must satisfy 0 <= jitter < neg_min <= neg_max, "
            f"got jitter={jitter} neg_min={neg_min} neg_max={neg_max}")
    r = patch_size // 2
    planes = []
    candidates = []
    for item in dataset:
        if item.gt is None:
            raise DataError(f"sample {item.name} has no ground-truth disparities")
        h, w = item.left.shape
        ys, xs = np.nonzero(np.isfinite(item.gt))
        d = np.rint(item.gt[ys, xs]).astype(np.int64)
        xr = xs - d
        ok = ((ys >= r) & (ys < h - r) & (xs >= r) & (xs < w - r)
              & (xr - r - neg_max >= 0) & (xr + r + neg_max <= w - 1))
        if ok.any():
            planes.append((standardize_image(item.left).astype(np.float32),
                           standardize_image(item.right).astype(np.float32)))
            candidates.append((ys[ok], xs[ok], d[ok]))
    if not candidates:
        raise DataError(
            f"dataset too small: no pixel admits a {patch_size}x{patch_size} patch "
            f"with offsets up to {neg_max} px; needs a ground-truth region of at "
            f"least {patch_size} rows by {patch_size + 2 * neg_max} columns past "
            f"the disparity")
    rng = np.random.default_rng(seed)
    out: List[PatchSample] = []
    for _ in range(count // 2):
        i = int(rng.integers(len(candidates)))
        ys, xs, ds = candidates[i]
        j = int(rng.integers(len(ys)))
        y, x, d = int(ys[j]), int(xs[j]), int(ds[j])
        o_pos = int(rng.integers(-jitter, jitter + 1))
        o_neg = int(rng.integers(neg_min, neg_max + 1)) * (1 if rng.integers(2) else -1)
        lstd, rstd = planes[i]
        lpatch = lstd[y - r: y + r + 1, x - r: x + r + 1]
        for label, o in ((1.0, o_pos), (0.0, o_neg)):
            c = x - d + o
            rpatch = rstd[y - r: y + r + 1, c - r: c + r + 1]
            out.append(PatchSample(left=lpatch.copy(), right=rpatch.copy(),
                                   label=label, y=y, x=x, disparity=d, offset=o))
    return out


def crop_center(patch: np.ndarray, size: int) -> np.ndarray:
    """Center crop; the patch center pixel stays the center pixel."""
    h, w = patch.shape[:2]
    if h < size or w < size or (h - size) % 2 or (w - size) % 2:
        raise ShapeError(f"cannot center-crop {h}x{w} patch to {size}x{size}")
    o = (h - size) // 2
    return patch[o: o + size, o: o + size]


# ---------------------------------------------------------------------------
# Center-pixel forward/backward. Inference pools whole feature maps; here only
# the center pixel's descriptor matters, so pooling touches one clipped window
# per scale. Values agree with the full pyramid at that pixel.
# ---------------------------------------------------------------------------


def _center_windows(shape, sizes):
    h, w, _ = shape
    cy, cx = h // 2, w // 2
    wins = []
    for s in sizes:
        half = s // 2
        wins.append((max(0, cy - half), min(h, cy + half + 1),
                     max(0, cx - half), min(w, cx + half + 1)))
    return wins


def _center_descriptor(feat: np.ndarray, sizes, mode: str):
    """Pooled center-pixel vector (one slab per size) plus backward cache."""
    c = feat.shape[2]
    wins = _center_windows(feat.shape, sizes)
    parts = []
    cache = []
    for (y0, y1, x0, x1), s in zip(wins, sizes):
        win = feat[y0:y1, x0:x1, :].reshape(-1, c)
        if mode == "max":
            idx = np.argmax(win, axis=0)
            parts.append(win[idx, np.arange(c)])
            cache.append(("max", (y0, y1, x0, x1), idx))
        else:
            parts.append(win.astype(np.float64).mean(axis=0).astype(feat.dtype))
            cache.append(("mean", (y0, y1, x0, x1), win.shape[0]))
    return np.concatenate(parts), cache


def _center_descriptor_backward(gvec: np.ndarray, feat_shape, cache) -> np.ndarray:
    c = feat_shape[2]
    gfeat = np.zeros(feat_shape, dtype=np.float64)
    for k, (kind, (y0, y1, x0, x1), info) in enumerate(cache):
        g = np.asarray(gvec[k * c: (k + 1) * c], dtype=np.float64)
        ww = x1 - x0
        if kind == "max":
            ys = y0 + info // ww
            xs = x0 + info % ww
            gfeat[ys, xs, np.arange(c)] += g
        else:
            gfeat[y0:y1, x0:x1, :] += g / info
    return gfeat


def _trunk_forward(patch: np.ndarray, trunk: Sequence[ConvLayer]):
    x = patch[:, :, None] if patch.ndim == 2 else patch
    cache = []
    for layer in trunk:
        pre = conv2d(x, layer)
        cache.append((x, pre))
        x = relu(pre)
    return x, cache


def _trunk_backward(gfeat: np.ndarray, cache, trunk, grads, prefix: str):
    gy = gfeat
    for i in reversed(range(len(trunk))):
        x, pre = cache[i]
        gy = relu_backward(gy, pre)
        gy, gk, gb = conv2d_backward(gy, x, trunk[i])
        _accumulate(grads, f"{prefix}{i}", gk, gb)


def _accumulate(grads: Dict[str, list], key: str, gk, gb) -> None:
    if key in grads:
        grads[key][0] += gk
        grads[key][1] += gb
    else:
        grads[key] = [gk, gb]


def _pool_sizes(spec: NetworkSpec):
    return spec.fourp_sizes if spec.fourp_sizes else (1,)


def _descriptor_pair(pl: np.ndarray, pr: np.ndarray, spec: NetworkSpec, w: Weights):
    """Head input vector at the patch centers, plus trunk/pool caches."""
    fl, cl = _trunk_forward(pl, w.trunk)
    fr, cr = _trunk_forward(pr, w.trunk)
    sizes = _pool_sizes(spec)
    if spec.fourp_after_concat:
        cat = concat_channels([fl, fr])
        vec, pool_cache = _center_descriptor(cat, sizes, spec.pooling_mode)
        pools = (pool_cache, None)
    else:
        vl, pc_l = _center_descriptor(fl, sizes, spec.pooling_mode)
        vr, pc_r = _center_descriptor(fr, sizes, spec.pooling_mode)
        vec = np.concatenate([vl, vr])
        pools = (pc_l, pc_r)
    return vec, (fl, cl, fr, cr, pools)


def _forward_logit(pl: np.ndarray, pr: np.ndarray, spec: NetworkSpec, w: Weights):
    """Similarity logit at the patch center, with every cache backward needs."""
    vec, (fl, cl, fr, cr, pools) = _descriptor_pair(pl, pr, spec, w)
    u = vec[None, None, :]
    head_cache = []
    for i, layer in enumerate(w.head):
        pre = conv2d(u, layer)
        head_cache.append((u, pre))
        u = relu(pre) if i < len(w.head) - 1 else pre
    z = float(u[0, 0, 0])
    return z, (fl, cl, fr, cr, pools, head_cache)


def _backward_logit(dz: float, caches, spec: NetworkSpec, w: Weights,
                    grads: Dict[str, list], head_only: bool) -> None:
    fl, cl, fr, cr, pools, head_cache = caches
    gy = np.array([[[dz]]], dtype=np.float64)
    for i in reversed(range(len(w.head))):
        x, pre = head_cache[i]
        if i < len(w.head) - 1:
            gy = relu_backward(gy, pre)
        gy, gk, gb = conv2d_backward(gy, x, w.head[i])
        _accumulate(grads, f"head{i}", gk, gb)
    if head_only:
        return
    gvec = gy[0, 0, :]
    sizes = _pool_sizes(spec)
    if spec.fourp_after_concat:
        cat_shape = (fl.shape[0], fl.shape[1], fl.shape[2] + fr.shape[2])
        gcat = _center_descriptor_backward(gvec, cat_shape, pools[0])
        gfl, gfr = gcat[:, :, : fl.shape[2]], gcat[:, :, fl.shape[2]:]
    else:
        half = gvec.shape[0] // 2
        gfl = _center_descriptor_backward(gvec[:half], fl.shape, pools[0])
        gfr = _center_descriptor_backward(gvec[half:], fr.shape, pools[1])
    _trunk_backward(gfl, cl, w.trunk, grads, "trunk")
    _trunk_backward(gfr, cr, w.trunk, grads, "trunk")


def _loss_and_slope(z: float, label: float, kind: str) -> Tuple[float, float]:
    """Loss value and dloss/dlogit for one sample."""
    if kind == "bce":
        loss = max(z, 0.0) - z * label + math.log1p(math.exp(-abs(z)))
        s = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        return loss, s - label
    sign = 2.0 * label - 1.0
    margin = 1.0 - sign * z
    if margin > 0:
        return margin, -sign
    return 0.0, 0.0


def _loss_and_slope_batch(z: np.ndarray, labels: np.ndarray, kind: str):
    """Vectorized loss and dloss/dlogit over a batch of logits."""
    from scipy.special import expit

    z = np.asarray(z, dtype=np.float64)
    if kind == "bce":
        loss = np.maximum(z, 0.0) - z * labels + np.log1p(np.exp(-np.abs(z)))
        return loss, expit(z) - labels
    sign = 2.0 * labels - 1.0
    margin = 1.0 - sign * z
    return np.maximum(margin, 0.0), np.where(margin > 0, -sign, 0.0)


@dataclass
class TrainResult:
    """Trained weights plus the loss trace (one row per optimizer step)."""

    weights: Weights
    rows: List[Tuple[int, int, float, float]] = field(default_factory=list)
    epoch_mean_loss: List[float] = field(default_factory=list)

    def write_loss_csv(self, path) -> None:
        formatted = [(e, s, f"{lr:.6g}", f"{loss:.8g}") for e, s, lr, loss in self.rows]
        write_csv(path, ["epoch", "step", "lr", "loss"], formatted)


def _trainable(w: Weights, head_only: bool) -> List[Tuple[str, ConvLayer]]:
    items = []
    if not head_only:
        items.extend((f"trunk{i}", layer) for i, layer in enumerate(w.trunk))
    items.extend((f"head{i}", layer) for i, layer in enumerate(w.head))
    return items


def _run_sgd(weights: Weights, spec: NetworkSpec, samples: Sequence[PatchSample],
             schedule: TrainSchedule, rng: np.random.Generator,
             head_only: bool) -> TrainResult:
    if not samples:
        raise DataError("no training samples provided")
    crop = spec.total_patch
    data = [(np.ascontiguousarray(crop_center(s.left, crop)),
             np.ascontiguousarray(crop_center(s.right, crop)),
             float(s.label)) for s in samples]
    trainable = _trainable(weights, head_only)
    velocity = {name: [np.zeros(l.kernel.shape), np.zeros(l.bias.shape)]
                for name, l in trainable}
    rows: List[Tuple[int, int, float, float]] = []
    epoch_means: List[float] = []
    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.rate_for_epoch(epoch)
        order = rng.permutation(len(data))
        epoch_losses = []
        for step in range(1, (len(data) + schedule.batch_size - 1) // schedule.batch_size + 1):
            batch = order[(step - 1) * schedule.batch_size: step * schedule.batch_size]
            grads: Dict[str, list] = {}
            loss_sum = 0.0
            for idx in batch:
                pl, pr, label = data[idx]
                z, caches = _forward_logit(pl, pr, spec, weights)
                loss, slope = _loss_and_slope(z, label, schedule.loss)
                loss_sum += loss
                if slope != 0.0:
                    _backward_logit(slope, caches, spec, weights, grads, head_only)
            loss = loss_sum / len(batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"training diverged: non-finite loss at epoch {epoch} step {step}")
            _apply_updates(trainable, grads, velocity, lr, 1.0 / len(batch),
                           schedule.momentum)
            rows.append((epoch, step, lr, loss))
            epoch_losses.append(loss)
        epoch_means.append(float(np.mean(epoch_losses)))
    return TrainResult(weights=weights, rows=rows, epoch_mean_loss=epoch_means)


def _apply_updates(trainable, grads, velocity, lr: float, inv: float,
                   momentum: float) -> None:
    for name, layer in trainable:
        vk, vb = velocity[name]
        vk *= momentum
        vb *= momentum
        if name in grads:
            gk, gb = grads[name]
            vk -= lr * inv * gk
            vb -= lr * inv * gb
        layer.kernel[:] = (layer.kernel.astype(np.float64) + vk).astype(layer.kernel.dtype)
        layer.bias[:] = (layer.bias.astype(np.float64) + vb).astype(layer.bias.dtype)


def _descriptor_stats(vecs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of a descriptor batch, guarded against zeros."""
    mu = vecs.mean(axis=0).astype(np.float64)
    sd = vecs.std(axis=0).astype(np.float64)
    sd[sd < 1e-6] = 1.0
    return mu, sd


def _fold_standardization(layer: ConvLayer, mu: np.ndarray, sd: np.ndarray) -> None:
    """Rewrite a 1x1 layer fit on standardized inputs to accept raw inputs.

    Pooled descriptors have wildly different scales per slab (a 27-window max
    sits far above a 1-window value), which conditions SGD so badly that a
    freshly initialized head stalls or collapses. The head is therefore fit
    on standardized descriptors and the standardization is absorbed here:
    dividing each input column of the kernel by that channel's std and
    shifting the bias by the mean makes kernel @ raw + bias equal
    kernel_z @ standardized + bias_z exactly. The architecture is unchanged.
    """
    kernel = layer.kernel[0, 0].astype(np.float64)
    kernel /= sd[:, None]
    layer.kernel[0, 0] = kernel.astype(layer.kernel.dtype)
    layer.bias[:] = (layer.bias.astype(np.float64) - mu @ kernel).astype(layer.bias.dtype)


def _run_sgd_head_cached(weights: Weights, spec: NetworkSpec,
                         samples: Sequence[PatchSample], schedule: TrainSchedule,
                         rng: np.random.Generator) -> TrainResult:
    """Head-only SGD with the frozen trunk amortized away.

    Each sample's pooled center descriptor never changes while the trunk is
    frozen, so it is computed once and the epochs run over cached vectors,
    batched through the same 1x1 convolution kernels as the general path.
    The cached descriptors are standardized per channel for the SGD loop and
    the standardization is folded into the first head layer afterwards, so
    the returned weights consume raw descriptors (see _fold_standardization).
    """
    if not samples:
        raise DataError("no training samples provided")
    crop = spec.total_patch
    vecs = np.stack([
        _descriptor_pair(np.ascontiguousarray(crop_center(s.left, crop)),
                         np.ascontiguousarray(crop_center(s.right, crop)),
                         spec, weights)[0]
        for s in samples])
    labels = np.array([float(s.label) for s in samples], dtype=np.float64)
    mu, sd = _descriptor_stats(vecs)
    vecs = ((vecs - mu) / sd).astype(np.float32)
    trainable = _trainable(weights, head_only=True)
    velocity = {name: [np.zeros(l.kernel.shape), np.zeros(l.bias.shape)]
                for name, l in trainable}
    nlayers = len(weights.head)
    rows: List[Tuple[int, int, float, float]] = []
    epoch_means: List[float] = []
    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.rate_for_epoch(epoch)
        order = rng.permutation(len(samples))
        epoch_losses = []
        nsteps = (len(samples) + schedule.batch_size - 1) // schedule.batch_size
        for step in range(1, nsteps + 1):
            idx = order[(step - 1) * schedule.batch_size: step * schedule.batch_size]
            u = vecs[idx][:, None, :]
            cache = []
            for i, layer in enumerate(weights.head):
                pre = conv2d(u, layer)
                cache.append((u, pre))
                u = relu(pre) if i < nlayers - 1 else pre
            z = u[:, 0, 0].astype(np.float64)
            loss_vec, slope = _loss_and_slope_batch(z, labels[idx], schedule.loss)
            loss = float(loss_vec.mean())
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"training diverged: non-finite loss at epoch {epoch} step {step}")
            grads: Dict[str, list] = {}
            gy = slope[:, None, None]
            for i in reversed(range(nlayers)):
                x, pre = cache[i]
                if i < nlayers - 1:
                    gy = relu_backward(gy, pre)
                gy, gk, gb = conv2d_backward(gy, x, weights.head[i])
                _accumulate(grads, f"head{i}", gk, gb)
            _apply_updates(trainable, grads, velocity, lr, 1.0 / len(idx),
                           schedule.momentum)
            rows.append((epoch, step, lr, loss))
            epoch_losses.append(loss)
        epoch_means.append(float(np.mean(epoch_losses)))
    _fold_standardization(weights.head[0], mu, sd)
    return TrainResult(weights=weights, rows=rows, epoch_mean_loss=epoch_means)


def train(spec: NetworkSpec, samples: Sequence[PatchSample],
          schedule: TrainSchedule, init: Optional[Weights] = None) -> TrainResult:
    """Train every parameter of a fresh (or given) net under the schedule.

    Bit-reproducible for a fixed seed: initialization, epoch shuffles, and
    updates all draw from one generator seeded with schedule.seed.
    """
    spec.validate()
    schedule.validate()
    rng = np.random.default_rng(schedule.seed)
    weights = init.copy() if init is not None else Weights.random(spec, rng)
    weights.validate_shapes()
    result = _run_sgd(weights, spec, samples, schedule, rng, head_only=False)
    result.weights.provenance.update({
        "training": "full", "epochs": str(schedule.epochs),
        "seed": str(schedule.seed), "loss": schedule.loss,
        "samples": str(len(samples)),
    })
    return result


def finetune_head(pretrained: Weights, spec: NetworkSpec,
                  samples: Sequence[PatchSample], schedule: TrainSchedule) -> TrainResult:
    """Keep the pretrained trunk frozen bit-for-bit; fit a fresh decision head.

    The trunk layers of `pretrained` must match the target spec's trunk
    exactly; the head is re-initialized because its input width changes when
    pyramid pooling is added between trunk and head. The head is fit on
    standardized descriptors for conditioning and the statistics are folded
    back into its first layer, so the result is an ordinary net.
    """
    spec.validate()
    schedule.validate()
    trunk_shapes = _layer_shapes(spec)[: spec.trunk_layers]
    actual = [tuple(l.kernel.shape) for l in pretrained.trunk]
    if actual != trunk_shapes:
        raise ShapeError(
            f"pretrained trunk shapes {actual} do not match target trunk {trunk_shapes}")
    rng = np.random.default_rng(schedule.seed)
    fresh = Weights.random(spec, rng)
    weights = Weights(spec=spec,
                      trunk=[ConvLayer(l.kernel.copy(), l.bias.copy(), l.padding)
                             for l in pretrained.trunk],
                      head=fresh.head,
                      provenance=dict(pretrained.provenance))
    result = _run_sgd_head_cached(weights, spec, samples, schedule, rng)
    result.weights.provenance.update({
        "training": "head-only", "epochs": str(schedule.epochs),
        "seed": str(schedule.seed), "loss": schedule.loss,
    })
    return result


def similarity_scores(spec: NetworkSpec, weights: Weights,
                      samples: Sequence[PatchSample]) -> np.ndarray:
    """Center-pixel similarity in [0, 1] for each sample."""
    crop = spec.total_patch
    out = np.empty(len(samples), dtype=np.float64)
    for i, s in enumerate(samples):
        z, _ = _forward_logit(crop_center(s.left, crop), crop_center(s.right, crop),
                              spec, weights)
        out[i] = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return out


def separation_auc(spec: NetworkSpec, weights: Weights,
                   samples: Sequence[PatchSample]) -> float:
    """Probability a positive sample outscores a negative one (rank AUC)."""
    from scipy.stats import rankdata

    labels = np.array([s.label for s in samples]) > 0.5
    npos, nneg = int(labels.sum()), int((~labels).sum())
    if npos == 0 or nneg == 0:
        raise DataError("separation_auc needs both positive and negative samples")
    ranks = rankdata(similarity_scores(spec, weights, samples))
    return float((ranks[labels].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    layer: str
    points: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    entries: List[GradCheckEntry]
    epsilon: float
    skipped: int

    @property
    def points(self) -> int:
        return sum(e.points for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max(e.max_rel_err for e in self.entries)

    def format(self) -> str:
        lines = [f"gradient check: epsilon={self.epsilon:g} "
                 f"points={self.points} skipped={self.skipped}"]
        lines.extend(f"  {e.layer:8s} points={e.points} max_rel_err={e.max_rel_err:.3e}"
                     for e in self.entries)
        lines.append(f"  overall max_rel_err={self.max_rel_err:.3e}")
        return "\n".join(lines)


def _activation_signature(caches) -> bytes:
    """Relu sign pattern and max-pool argmax pattern of one forward pass."""
    fl, cl, fr, cr, pools, head_cache = caches
    parts = []
    for _, pre in list(cl) + list(cr) + list(head_cache[:-1]):
        parts.append((np.asarray(pre) > 0).tobytes())
    for cache in pools:
        if cache is None:
            continue
        for kind, _, info in cache:
            if kind == "max":
                parts.append(np.asarray(info).tobytes())
    return b"".join(parts)


def _loss_with_signature(pairs, spec: NetworkSpec, w: Weights, kind: str):
    total = 0.0
    sigs = []
    for pl, pr, label in pairs:
        z, caches = _forward_logit(pl, pr, spec, w)
        total += _loss_and_slope(z, label, kind)[0]
        sigs.append(_activation_signature(caches))
    return total / len(pairs), b"".join(sigs)


def grad_check(spec: NetworkSpec, seed: int = 20240817, points_per_layer: int = 4,
               epsilon: float = 1e-5) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    Runs in float64 on random patches. A finite difference is only meaningful
    where the loss is locally smooth, so a sampled coordinate is accepted
    only if the relu sign pattern and every max-pool argmax are identical at
    the base point and both perturbed points; coordinates that straddle a
    kink are skipped and replaced.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    w = Weights.random(spec, rng).astype(np.float64)
    p = spec.total_patch
    pairs = [(rng.standard_normal((p, p)), rng.standard_normal((p, p)), 1.0),
             (rng.standard_normal((p, p)), rng.standard_normal((p, p)), 0.0)]
    grads: Dict[str, list] = {}
    base_sigs = []
    for pl, pr, label in pairs:
        z, caches = _forward_logit(pl, pr, spec, w)
        _, slope = _loss_and_slope(z, label, "bce")
        _backward_logit(slope / len(pairs), caches, spec, w, grads, head_only=False)
        base_sigs.append(_activation_signature(caches))
    base_sig = b"".join(base_sigs)
    entries = []
    skipped = 0
    for name, layer in _trainable(w, head_only=False):
        gk, gb = grads[name]
        flat_g = np.concatenate([gk.ravel(), gb.ravel()])
        nparams = flat_g.size
        budget = min(nparams, 6 * points_per_layer)
        candidates = rng.permutation(nparams)[:budget]
        worst = 0.0
        accepted = 0
        for c in candidates:
            if accepted >= points_per_layer:
                break
            arr, off = (layer.kernel, c) if c < gk.size else (layer.bias, c - gk.size)
            orig = arr.flat[off]
            arr.flat[off] = orig + epsilon
            hi, sig_hi = _loss_with_signature(pairs, spec, w, "bce")
            arr.flat[off] = orig - epsilon
            lo, sig_lo = _loss_with_signature(pairs, spec, w, "bce")
            arr.flat[off] = orig
            if sig_hi != base_sig or sig_lo != base_sig:
                skipped += 1
                continue
            numeric = (hi - lo) / (2 * epsilon)
            analytic = flat_g[c]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
            accepted += 1
        if accepted == 0:
            raise TrainingDivergedError(
                f"gradient check found no kink-free coordinate in layer {name}")
        entries.append(GradCheckEntry(layer=name, points=accepted, max_rel_err=worst))
    return GradCheckReport(entries=entries, epsilon=epsilon, skipped=skipped)
