"""Proximity classifier and covisibility-weighted proximity supervision.

A small fixed-architecture MLP (3 -> 128 -> 128 -> 1, rectifier hidden
activations, logistic output) scores how close a 3D point lies to the curated
scene cloud. The weighted loss averages (1 - score) over a set of Gaussian
positions, weighting each one by the covisibility of the pixel it projects to
(in frustum) or by a scene-level weight (out of frustum), so sparsely
observed regions receive the strongest supervision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .covismap import CovisMap, SceneCovisScore, covis_at
from .errors import (
    EmptyInput,
    InputError,
    IoError,
    MalformedHeader,
    MissingFile,
    NonFiniteLoss,
    SamplingStarvation,
)
from .geometry import CameraView, project_many

_LAYER_DIMS = (3, 128, 128, 1)
_SCORE_EPS = 1e-15  # keeps scores strictly inside (0, 1)
_MAGIC = b"CMPX1"


def _frozen(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianSet:
    """Positions of the Gaussians being supervised; attributes ride along."""

    positions: np.ndarray  # (N, 3) world
    attributes: dict | None = None

    def __post_init__(self):
        pos = _frozen(self.positions)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InputError("positions must be (N, 3)")
        if not np.all(np.isfinite(pos)):
            raise InputError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class TrainingSet:
    """Positive scene points, distant random negatives, and the normalization."""

    positives: np.ndarray  # (N, 3)
    negatives: np.ndarray  # (M, 3)
    center: np.ndarray  # (3,) normalization center
    scale: float  # scalar half-extent mapping scene bounds into [-1, 1]^3

    def __post_init__(self):
        object.__setattr__(self, "positives", _frozen(self.positives))
        object.__setattr__(self, "negatives", _frozen(self.negatives))
        object.__setattr__(self, "center", _frozen(self.center))
        if self.scale <= 0:
            raise InputError("normalization scale must be positive")


@dataclass(frozen=True)
class ProximityModel:
    """Weights of the 3 -> 128 -> 128 -> 1 classifier plus input normalization."""

    weights: tuple  # ((in, out) float64 arrays)
    biases: tuple  # ((out,) float64 arrays)
    center: np.ndarray
    scale: float
    train_meta: dict = field(default_factory=dict)
    loss_curve: np.ndarray | None = None

    def __post_init__(self):
        dims = _LAYER_DIMS
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise InputError("model must have exactly three layers")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise InputError(
                    f"layer {i} has shape {W.shape}/{b.shape}, expected "
                    f"{(dims[i], dims[i + 1])}/{(dims[i + 1],)}"
                )
        object.__setattr__(self, "weights", tuple(_frozen(W) for W in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))
        object.__setattr__(self, "center", _frozen(self.center))
        if self.scale <= 0:
            raise InputError("normalization scale must be positive")

    def normalize(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.scale


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(model: ProximityModel, xn: np.ndarray):
    """Forward pass on normalized inputs; returns activations for backprop."""
    W1, W2, W3 = model.weights
    b1, b2, b3 = model.biases
    z1 = xn @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2 + b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ W3 + b3).ravel()
    s = np.clip(_sigmoid(z3), _SCORE_EPS, 1.0 - _SCORE_EPS)
    return s, (z1, a1, z2, a2, z3)


def batch_scores(model: ProximityModel, positions) -> np.ndarray:
    """Proximity scores in (0, 1) for (N, 3) world positions."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    s, _ = _forward(model, model.normalize(positions))
    return s


def proximity_score(model: ProximityModel, p) -> float:
    """Score for a single world point."""
    return float(batch_scores(model, np.asarray(p).reshape(1, 3))[0])


def score_input_gradient(model: ProximityModel, positions) -> np.ndarray:
    """d score / d world position for each point, via backprop to the input."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    xn = model.normalize(positions)
    W1, W2, W3 = model.weights
    s, (z1, _a1, z2, _a2, _z3) = _forward(model, xn)
    dz3 = (s * (1.0 - s))[:, None]  # d sigmoid
    da2 = dz3 @ W3.T
    dz2 = da2 * (z2 > 0)
    da1 = dz2 @ W2.T
    dz1 = da1 * (z1 > 0)
    dxn = dz1 @ W1.T
    return dxn / model.scale


# ---------------------------------------------------------------------------
# Training-set construction and training
# ---------------------------------------------------------------------------


def make_training_set(
    p_final: PointCloud,
    ratio: float = 1.0,
    r_neg: float | None = None,
    seed: int = 0,
) -> TrainingSet:
    """Label the curated cloud positive and sample distant random negatives.

    Negatives are drawn uniformly from the positives' bounding box inflated by
    20% per side (degenerate zero-extent axes are padded by twice r_neg so a
    flat or single-point cloud still leaves room) and rejected while closer
    than r_neg to any positive. The negative count is ratio * |positives|.
    r_neg defaults to 2% of the bounding-box diagonal.
    """
    if len(p_final) == 0:
        raise EmptyInput("positive cloud is empty")
    if ratio <= 0:
        raise InputError("ratio must be positive")
    pos = p_final.positions
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if r_neg is None:
        r_neg = 0.02 * diag
    if r_neg < 0:
        raise InputError("r_neg must be >= 0")
    pad = 0.2 * (hi - lo)
    floor = 2.0 * r_neg if r_neg > 0 else 1.0
    pad[pad == 0.0] = floor
    box_lo, box_hi = lo - pad, hi + pad

    n_neg = max(1, int(round(ratio * len(p_final))))
    rng = np.random.default_rng(seed)
    tree = cKDTree(pos)
    accepted = []
    drawn = 0
    n_acc = 0
    while n_acc < n_neg:
        batch = max(1024, 2 * (n_neg - n_acc))
        cand = rng.uniform(box_lo, box_hi, size=(batch, 3))
        drawn += batch
        dist, _ = tree.query(cand, k=1)
        good = cand[dist >= r_neg]
        accepted.append(good)
        n_acc += len(good)
        if drawn >= max(10_000, 20 * n_neg) and n_acc < 0.01 * drawn:
            raise SamplingStarvation(
                f"rejection acceptance {n_acc / drawn:.4%}; r_neg={r_neg} is too "
                "large for this scene"
            )
    negatives = np.concatenate(accepted)[:n_neg]
    center = (box_lo + box_hi) / 2.0
    scale = float(np.max(box_hi - box_lo) / 2.0)
    return TrainingSet(positives=pos, negatives=negatives, center=center, scale=scale)


def _init_model(center, scale, seed: int) -> ProximityModel:
    """Fan-in-scaled uniform initialization, deterministic under the seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(_LAYER_DIMS[:-1], _LAYER_DIMS[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ProximityModel(
        weights=tuple(weights), biases=tuple(biases), center=center, scale=scale
    )


def train_classifier(
    ts: TrainingSet, iters: int = 1000, lr: float = 0.001, seed: int = 0
) -> ProximityModel:
    """Full-batch adaptive-moment gradient descent on binary cross-entropy.

    Inputs are normalized by the training set's (center, scale) before the
    first layer. Moment decays are 0.9 / 0.999 with epsilon 1e-8. The returned
    model carries train_meta and the per-iteration loss curve (entry i is the
    loss before update i; the last entry is the final loss).
    """
    if iters < 0:
        raise InputError("iters must be >= 0")
    X = np.concatenate([ts.positives, ts.negatives])
    y = np.concatenate([np.ones(len(ts.positives)), np.zeros(len(ts.negatives))])
    model = _init_model(ts.center, ts.scale, seed)
    Xn = model.normalize(X)
    n = len(X)

    params = [np.array(W) for W in model.weights] + [
        np.array(b) for b in model.biases
    ]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    def bce(s):
        sc = np.clip(s, 1e-12, 1.0 - 1e-12)
        return float(-np.mean(y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc)))

    losses = np.empty(iters + 1)
    for it in range(iters):
        W1, W2, W3 = params[0], params[1], params[2]
        b1, b2, b3 = params[3], params[4], params[5]
        z1 = Xn @ W1 + b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ W2 + b2
        a2 = np.maximum(z2, 0.0)
        z3 = (a2 @ W3 + b3).ravel()
        s = _sigmoid(z3)
        loss = bce(s)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"training diverged at iteration {it}")
        losses[it] = loss

        dz3 = ((s - y) / n)[:, None]
        gW3 = a2.T @ dz3
        gb3 = dz3.sum(axis=0)
        da2 = dz3 @ W3.T
        dz2 = da2 * (z2 > 0)
        gW2 = a1.T @ dz2
        gb2 = dz2.sum(axis=0)
        da1 = dz2 @ W2.T
        dz1 = da1 * (z1 > 0)
        gW1 = Xn.T @ dz1
        gb1 = dz1.sum(axis=0)

        grads = [gW1, gW2, gW3, gb1, gb2, gb3]
        t = it + 1
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= beta1
            mi += (1.0 - beta1) * g
            vi *= beta2
            vi += (1.0 - beta2) * g * g
            mhat = mi / (1.0 - beta1**t)
            vhat = vi / (1.0 - beta2**t)
            p -= lr * mhat / (np.sqrt(vhat) + eps)

    final = ProximityModel(
        weights=(params[0], params[1], params[2]),
        biases=(params[3], params[4], params[5]),
        center=ts.center,
        scale=ts.scale,
        train_meta={"iterations": iters, "lr": lr, "seed": seed},
        loss_curve=None,
    )
    s_final, _ = _forward(final, Xn)
    losses[iters] = bce(s_final)
    if not np.isfinite(losses[iters]):
        raise NonFiniteLoss("final loss is not finite")
    meta = {"iterations": iters, "lr": lr, "seed": seed, "final_loss": losses[iters]}
    return ProximityModel(
        weights=final.weights,
        biases=final.biases,
        center=ts.center,
        scale=ts.scale,
        train_meta=meta,
        loss_curve=losses,
    )


# ---------------------------------------------------------------------------
# Weights and loss
# ---------------------------------------------------------------------------


def weight_in(cmap: CovisMap, pixel) -> float:
    """In-frustum weight: inverse of (covisibility count + 1)."""
    return 1.0 / (covis_at(cmap, pixel) + 1.0)


def weight_out(score: SceneCovisScore) -> float:
    """Out-of-frustum weight: max(0, (S - 0.7) / 0.3)."""
    return max(0.0, (score.S - 0.7) / 0.3)


@dataclass(frozen=True)
class ProximityLossResult:
    total: float
    chi: np.ndarray  # (N,) 1 in frustum, 0 outside
    weights: np.ndarray  # (N,)
    scores: np.ndarray  # (N,)

    def __post_init__(self):
        object.__setattr__(self, "chi", _frozen(self.chi, np.int8))
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "scores", _frozen(self.scores))

    def contributions(self) -> np.ndarray:
        """Per-Gaussian terms; they sum to total * N."""
        return self.weights * (1.0 - self.scores)


def proximity_loss(
    model: ProximityModel,
    gaussians: GaussianSet,
    view: CameraView,
    cmap: CovisMap,
    score: SceneCovisScore,
) -> ProximityLossResult:
    """Mean weighted (1 - proximity score) over the complete Gaussian set.

    Gaussians projecting in frustum take the inverse-covisibility weight of
    their floored pixel; the rest (including behind-camera positions) take the
    scene-level out-of-frustum weight.
    """
    if len(gaussians) == 0:
        raise EmptyInput("gaussian set is empty")
    if (cmap.width, cmap.height) != (view.width, view.height):
        raise InputError("covisibility map does not match the view")
    uv, _, inside = project_many(view, gaussians.positions)
    weights = np.full(len(gaussians), weight_out(score))
    if np.any(inside):
        xs = np.floor(uv[inside, 0]).astype(np.int64)
        ys = np.floor(uv[inside, 1]).astype(np.int64)
        weights[inside] = 1.0 / (cmap.counts[ys, xs] + 1.0)
    s = batch_scores(model, gaussians.positions)
    total = float(np.mean(weights * (1.0 - s)))
    return ProximityLossResult(
        total=total, chi=inside.astype(np.int8), weights=weights, scores=s
    )


def proximity_loss_grad(
    model: ProximityModel,
    gaussians: GaussianSet,
    view: CameraView,
    cmap: CovisMap,
    score: SceneCovisScore,
) -> np.ndarray:
    """Analytic d loss / d position for each Gaussian.

    Weights are treated as constants of the position (the in-frustum weight is
    piecewise-constant through pixel quantization), so the gradient is
    -weight / N times the score gradient.
    """
    result = proximity_loss(model, gaussians, view, cmap, score)
    ds = score_input_gradient(model, gaussians.positions)
    return (-result.weights / len(gaussians))[:, None] * ds


def total_objective(l1: float, dssim: float, lam: float, l_p: float) -> float:
    """Blend photometric terms with the proximity loss.

    The photometric scalars are supplied by the caller; this only assembles
    (1 - lam) * l1 + lam * dssim + l_p.
    """
    if not (0.0 <= lam <= 1.0):
        raise InputError(f"lambda must lie in [0, 1], got {lam}")
    return (1.0 - lam) * l1 + lam * dssim + l_p


# ---------------------------------------------------------------------------
# Classification and position descent
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassificationSummary:
    n_near: int
    n_far: int
    fraction_near: float
    threshold: float


def classify_cloud(model: ProximityModel, cloud: PointCloud, threshold: float = 0.5):
    """Label each point near (score > threshold) or far; returns (labels, summary)."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=bool), ClassificationSummary(0, 0, 0.0, threshold)
    s = batch_scores(model, cloud.positions)
    near = s > threshold
    return near, ClassificationSummary(
        n_near=int(near.sum()),
        n_far=int((~near).sum()),
        fraction_near=float(near.mean()),
        threshold=threshold,
    )


def classification_cloud(cloud: PointCloud, near_labels) -> PointCloud:
    """Recolor a cloud for export: near points blue, far points red."""
    colors = np.where(
        np.asarray(near_labels, dtype=bool)[:, None],
        np.array([0, 0, 255], dtype=np.uint8),
        np.array([255, 0, 0], dtype=np.uint8),
    ).astype(np.uint8)
    return cloud.with_colors(colors)


def descend_positions(
    model: ProximityModel,
    views,
    maps,
    score: SceneCovisScore,
    positions,
    steps: int,
    step_size: float = 0.01,
    on_step=None,
) -> np.ndarray:
    """Move positions down the proximity-loss gradient, cycling views round-robin.

    Each step moves every point a fixed distance of step_size (in normalized
    coordinates, so step_size * scale meters) along its own descent direction;
    points with zero gradient stay put. on_step(step_index, positions) is
    called after every step when given.
    """
    views = list(views)
    maps = list(maps)
    if len(views) != len(maps):
        raise InputError("need one covisibility map per view")
    pos = np.array(positions, dtype=np.float64).reshape(-1, 3)
    step_world = step_size * model.scale
    for k in range(steps):
        view = views[k % len(views)]
        cmap = maps[k % len(views)]
        grad = proximity_loss_grad(model, GaussianSet(pos), view, cmap, score)
        norms = np.linalg.norm(grad, axis=1)
        moving = norms > 0
        pos[moving] -= step_world * grad[moving] / norms[moving, None]
        if on_step is not None:
            on_step(k + 1, pos)
    return pos


# ---------------------------------------------------------------------------
# Serialization: versioned little-endian binary, magic "CMPX1"
# ---------------------------------------------------------------------------
#
# magic (5 bytes) | n_layers u32 | dims u32 * (n_layers + 1)
# | center f64 * 3 | scale f64
# | iterations u32 | lr f64 | seed i64 | final_loss f64
# | per layer: weights f32 row-major (in * out), biases f32 (out)


def save_model(model: ProximityModel, path) -> None:
    meta = model.train_meta or {}
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", 3))
            fh.write(struct.pack("<4I", *_LAYER_DIMS))
            fh.write(struct.pack("<3d", *model.center))
            fh.write(struct.pack("<d", model.scale))
            fh.write(
                struct.pack(
                    "<Idqd",
                    int(meta.get("iterations", 0)),
                    float(meta.get("lr", 0.0)),
                    int(meta.get("seed", 0)),
                    float(meta.get("final_loss", np.nan)),
                )
            )
            for W, b in zip(model.weights, model.biases):
                fh.write(W.astype("<f4").tobytes())
                fh.write(b.astype("<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")


def load_model(path) -> ProximityModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_MAGIC):
        raise MalformedHeader(f"{path}: bad magic")
    off = len(_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise MalformedHeader(f"{path}: truncated model file")
        out = struct.unpack_from(fmt, data, off)
        off += size
        return out

    (n_layers,) = take("<I")
    if n_layers != 3:
        raise MalformedHeader(f"{path}: expected 3 layers, got {n_layers}")
    dims = take(f"<{n_layers + 1}I")
    if dims != _LAYER_DIMS:
        raise MalformedHeader(f"{path}: unexpected layer dims {dims}")
    center = np.array(take("<3d"))
    (scale,) = take("<d")
    iterations, lr, seed, final_loss = take("<Idqd")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        size = fan_in * fan_out * 4
        if off + size + fan_out * 4 > len(data):
            raise MalformedHeader(f"{path}: truncated weights")
        W = np.frombuffer(data, dtype="<f4", count=fan_in * fan_out, offset=off)
        off += size
        b = np.frombuffer(data, dtype="<f4", count=fan_out, offset=off)
        off += fan_out * 4
        weights.append(W.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    meta = {
        "iterations": iterations,
        "lr": lr,
        "seed": seed,
        "final_loss": final_loss,
    }
    return ProximityModel(
        weights=tuple(weights),
        biases=tuple(biases),
        center=center,
        scale=float(scale),
        train_meta=meta,
    )
