"""Statistical classifiers: diagonal-covariance GMMs and a binary decision tree.

GMMs are trained with expectation maximization (k-means++ initialization from
a fixed seed, variance flooring) and adapted per class through means-only MAP
interpolation against a shared background model.  The decision tree uses
greedy information-gain splits with deterministic tie-breaking so training is
order-invariant.

Model files carry an 8-byte magic, a JSON header and a float32 payload for
means/variances.  Mixture weights live in the header as exact decimal floats:
the simplex-sum invariant is tighter than float32 storage error, so weights
round-trip at full precision while the bulk payload stays 4 bytes per value.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import EngineConfig

MODEL_MAGIC = b"DSPEARM1"


class ModelFormatError(ValueError):
    """Corrupt or unrecognized model file."""


# ---------------------------------------------------------------------------
# Gaussian mixtures

@dataclass
class GmmModel:
    weights: np.ndarray  # (K,) float64, sums to 1
    means: np.ndarray  # (K, D) float32
    variances: np.ndarray  # (K, D) float32, floored positive
    label: str = ""
    meta: dict = field(default_factory=dict)  # e.g. {"gender": "male"}

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float32)
        self.variances = np.asarray(self.variances, dtype=np.float32)
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {self.weights.sum()}, expected 1")
        if np.any(self.variances <= 0):
            raise ValueError("non-positive variance component")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def size_bytes(self) -> int:
        return len(serialize_model(self))


def gmm_loglik(model: GmmModel, observations: np.ndarray) -> float:
    """Total log-likelihood of an observation block under the mixture."""
    obs = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if obs.shape[1] != model.dim:
        raise ValueError(f"observation dim {obs.shape[1]} != model dim {model.dim}")
    ll = kernels.gmm_log_densities(
        obs, model.weights, model.means.astype(np.float64), model.variances.astype(np.float64)
    )
    return float(np.sum(ll))


def _kmeans_pp_centers(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    dist2 = np.sum((data - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centers[j:] = data[rng.integers(n, size=k - j)]
            break
        probs = dist2 / total
        centers[j] = data[rng.choice(n, p=probs)]
        dist2 = np.minimum(dist2, np.sum((data - centers[j]) ** 2, axis=1))
    return centers


def gmm_train_em(
    data: np.ndarray,
    n_components: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-4,
    label: str = "",
    variance_floor_fraction: float = 1e-4,
    track_loglik: bool = False,
):
    """EM training of a diagonal GMM.

    Initialization is k-means++ from the seed; iteration stops when the
    relative log-likelihood improvement drops below ``tol``.  With
    ``track_loglik`` the per-iteration log-likelihood trace is returned too.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, d = data.shape
    if n < 10 * n_components:
        raise ValueError(f"{n} observations is too few for {n_components} components")
    global_var = data.var(axis=0)
    if np.all(global_var <= 0):
        raise ValueError("degenerate training data: all observations identical")
    floor = np.maximum(variance_floor_fraction * global_var, 1e-12)

    rng = np.random.default_rng(seed)
    means = _kmeans_pp_centers(data, n_components, rng)
    variances = np.tile(np.maximum(global_var, floor), (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)

    history = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        comp = _component_logdens(data, weights, means, variances)  # (N, K)
        peak = comp.max(axis=1, keepdims=True)
        lse = peak + np.log(np.exp(comp - peak).sum(axis=1, keepdims=True))
        ll = float(lse.sum())
        history.append(ll)
        resp = np.exp(comp - lse)

        occ = resp.sum(axis=0)  # (K,)
        occ_safe = np.maximum(occ, 1e-12)
        weights = occ / n
        means = (resp.T @ data) / occ_safe[:, np.newaxis]
        sq = (resp.T @ (data * data)) / occ_safe[:, np.newaxis]
        variances = np.maximum(sq - means**2, floor)

        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= tol * abs(prev_ll):
            break
        prev_ll = ll

    weights = weights / weights.sum()
    model = GmmModel(weights, means, variances, label=label)
    if track_loglik:
        return model, history
    return model


def _component_logdens(data, weights, means, variances):
    inv_var = 1.0 / variances
    quad = (
        (data * data) @ inv_var.T
        - 2.0 * (data @ (means * inv_var).T)
        + np.sum(means * means * inv_var, axis=1)
    )
    log_norm = -0.5 * (data.shape[1] * np.log(2 * np.pi) + np.sum(np.log(variances), axis=1))
    return np.log(np.maximum(weights, 1e-300)) + log_norm - 0.5 * quad


def gmm_map_adapt(
    background: GmmModel,
    data: np.ndarray,
    relevance: float = 16.0,
    label: str = "",
    meta: dict | None = None,
) -> GmmModel:
    """Means-only MAP adaptation of a background mixture toward class data.

    Weights and variances are copied from the background; each mean moves
    toward the posterior-weighted data mean by occupancy/(occupancy+relevance).
    Empty adaptation data returns the background unchanged (fresh label/meta).
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    means64 = background.means.astype(np.float64)
    vars64 = background.variances.astype(np.float64)
    if data.size == 0:
        return GmmModel(background.weights.copy(), means64, vars64, label=label, meta=meta or {})
    if data.shape[1] != background.dim:
        raise ValueError(f"adaptation dim {data.shape[1]} != background dim {background.dim}")

    comp = _component_logdens(data, background.weights, means64, vars64)
    peak = comp.max(axis=1, keepdims=True)
    resp = np.exp(comp - peak)
    resp /= resp.sum(axis=1, keepdims=True)

    occ = resp.sum(axis=0)
    occ_safe = np.maximum(occ, 1e-300)
    data_means = (resp.T @ data) / occ_safe[:, np.newaxis]
    alpha = (occ / (occ + relevance))[:, np.newaxis]
    new_means = alpha * data_means + (1.0 - alpha) * means64
    return GmmModel(background.weights.copy(), new_means, vars64, label=label, meta=meta or {})


# ---------------------------------------------------------------------------
# Decision tree (binary classification on window summaries)

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    klass: str | None = None
    confidence: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.klass is not None


@dataclass
class DecisionTreeModel:
    root: TreeNode
    classes: tuple[str, str]
    n_features: int
    depth: int = 0
    meta: dict = field(default_factory=dict)


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def tree_train(
    features: np.ndarray,
    labels: list[str],
    max_depth: int = 10,
    purity_stop: float = 0.95,
    min_samples: int = 5,
) -> DecisionTreeModel:
    """Greedy information-gain tree over binary-labeled feature vectors.

    Ties between candidate splits break toward the lowest feature index and
    then the lowest threshold, which makes training order-invariant.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = list(labels)
    classes = tuple(sorted(set(labels)))
    if len(classes) != 2:
        raise ValueError(f"need exactly two classes, got {classes}")
    y = np.array([classes.index(lab) for lab in labels])

    max_seen_depth = 0

    def majority_leaf(idx: np.ndarray) -> TreeNode:
        counts = np.bincount(y[idx], minlength=2)
        best = int(np.argmax(counts))  # ties favor the first class name
        conf = counts[best] / max(counts.sum(), 1)
        return TreeNode(klass=classes[best], confidence=float(conf))

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        nonlocal max_seen_depth
        max_seen_depth = max(max_seen_depth, depth)
        counts = np.bincount(y[idx], minlength=2)
        purity = counts.max() / counts.sum()
        if depth >= max_depth or purity >= purity_stop or len(idx) < min_samples:
            return majority_leaf(idx)

        parent_h = _entropy(counts)
        best = None  # (gain, feature, threshold)
        for f in range(features.shape[1]):
            col = features[idx, f]
            values = np.unique(col)
            if len(values) < 2:
                continue
            cuts = (values[:-1] + values[1:]) / 2.0
            for cut in cuts:
                left = col < cut
                nl = left.sum()
                if nl == 0 or nl == len(idx):
                    continue
                h = (
                    nl * _entropy(np.bincount(y[idx[left]], minlength=2))
                    + (len(idx) - nl) * _entropy(np.bincount(y[idx[~left]], minlength=2))
                ) / len(idx)
                gain = parent_h - h
                cand = (gain, f, float(cut))
                if best is None or gain > best[0] + 1e-12 or (
                    abs(gain - best[0]) <= 1e-12 and (f, cut) < (best[1], best[2])
                ):
                    best = cand
        if best is None or best[0] <= 1e-12:
            return majority_leaf(idx)

        _, f, cut = best
        left_mask = features[idx, f] < cut
        node = TreeNode(feature=f, threshold=cut)
        node.left = build(idx[left_mask], depth + 1)
        node.right = build(idx[~left_mask], depth + 1)
        return node

    root = build(np.arange(len(labels)), 0)
    return DecisionTreeModel(root, classes, features.shape[1], depth=max_seen_depth)


def tree_classify(model: DecisionTreeModel, vector: np.ndarray) -> tuple[str, float]:
    """Classify one feature vector; boundary values follow the right branch."""
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if len(vector) != model.n_features:
        raise ValueError(
            f"feature vector of length {len(vector)} does not match tree ({model.n_features})"
        )
    node = model.root
    while not node.is_leaf:
        node = node.left if vector[node.feature] < node.threshold else node.right
    return node.klass, node.confidence


# ---------------------------------------------------------------------------
# Serialization

def serialize_model(model) -> bytes:
    if isinstance(model, GmmModel):
        header = {
            "type": "gmm",
            "label": model.label,
            "n_components": model.n_components,
            "dim": model.dim,
            "weights": [float(w) for w in model.weights],
            "meta": model.meta,
        }
        payload = (
            model.means.astype("<f4").tobytes() + model.variances.astype("<f4").tobytes()
        )
    elif isinstance(model, DecisionTreeModel):
        header = {
            "type": "tree",
            "classes": list(model.classes),
            "n_features": model.n_features,
            "depth": model.depth,
            "meta": model.meta,
            "nodes": _tree_to_jsonable(model.root),
        }
        payload = b""
    else:
        raise TypeError(f"cannot serialize {type(model)!r}")
    header_bytes = json.dumps(header, separators=(",", ":")).encode()
    return MODEL_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def deserialize_model(blob: bytes):
    buf = io.BytesIO(blob)
    magic = buf.read(8)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    (header_len,) = struct.unpack("<I", buf.read(4))
    try:
        header = json.loads(buf.read(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from exc
    if header["type"] == "gmm":
        k, d = header["n_components"], header["dim"]
        payload = buf.read()
        expected = 2 * k * d * 4
        if len(payload) != expected:
            raise ModelFormatError(f"payload is {len(payload)} bytes, expected {expected}")
        grid = np.frombuffer(payload, dtype="<f4").reshape(2, k, d)
        return GmmModel(
            np.array(header["weights"]),
            grid[0],
            grid[1],
            label=header["label"],
            meta=header.get("meta", {}),
        )
    if header["type"] == "tree":
        root = _tree_from_jsonable(header["nodes"])
        return DecisionTreeModel(
            root,
            tuple(header["classes"]),
            header["n_features"],
            depth=header.get("depth", 0),
            meta=header.get("meta", {}),
        )
    raise ModelFormatError(f"unknown model type {header['type']!r}")


def _tree_to_jsonable(node: TreeNode):
    if node.is_leaf:
        return {"class": node.klass, "confidence": node.confidence}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_to_jsonable(node.left),
        "right": _tree_to_jsonable(node.right),
    }


def _tree_from_jsonable(obj) -> TreeNode:
    if "class" in obj:
        return TreeNode(klass=obj["class"], confidence=obj["confidence"])
    return TreeNode(
        feature=obj["feature"],
        threshold=obj["threshold"],
        left=_tree_from_jsonable(obj["left"]),
        right=_tree_from_jsonable(obj["right"]),
    )


# ---------------------------------------------------------------------------
# Bundles

@dataclass
class ModelBundle:
    """Named models plus their processor placement (dsp or cpu).

    The placement check uses the fixed per-model deployment costs of the
    target co-processor, not the serialized file sizes: what matters is how
    much compiled parameter space a model would occupy there.
    """

    models: dict[str, object] = field(default_factory=dict)
    placement: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, model, placement: str = "cpu") -> None:
        if placement not in ("dsp", "cpu"):
            raise ValueError(f"placement must be dsp or cpu, got {placement!r}")
        self.models[name] = model
        self.placement[name] = placement

    def dsp_cost_bytes(self, cfg: EngineConfig) -> int:
        total = 0
        for name, model in self.models.items():
            if self.placement.get(name) != "dsp":
                continue
            if isinstance(model, GmmModel):
                kind = model.meta.get("family", "emotion")
                total += (
                    cfg.ambient_model_cost_bytes
                    if kind == "ambient"
                    else cfg.emotion_model_cost_bytes
                )
        return total

    def check_placement(self, cfg: EngineConfig) -> None:
        budget = cfg.dsp_code_limit_bytes - cfg.dsp_code_reserve_bytes
        used = self.dsp_cost_bytes(cfg)
        if used > budget:
            raise ValueError(
                f"dsp-placed models need {used} bytes, budget is {budget}"
            )
