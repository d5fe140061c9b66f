"""Gradient-boosted regression trees for multiclass classification.

Newton boosting on the softmax cross-entropy objective: each round grows one
regression tree per class on the per-sample gradient g = p - y and Hessian
h = p(1 - p) of the loss with respect to that class's margin. Trees are grown
by exact greedy search over midpoints between consecutive distinct sorted
feature values, maximizing

    gain = 1/2 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - (G_L+G_R)^2/(H_L+H_R+lambda)]

and splitting only when gain - gamma > 0; leaf weight is -G/(H+lambda),
scaled by the learning rate. Training is deterministic for a fixed config.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BoosterConfig:
    learning_rate: float = 0.1
    max_depth: int = 3
    n_estimators: int = 100
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1")
        if self.n_estimators < 1:
            raise ValidationError("n_estimators must be >= 1")
        if self.reg_lambda < 0:
            raise ValidationError("reg_lambda must be >= 0")
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if self.min_child_weight < 0:
            raise ValidationError("min_child_weight must be >= 0")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample <= 1:
            raise ValidationError("subsample/colsample must lie in (0, 1]")
        if not 0 < self.base_score < 1:
            raise ValidationError("base_score must lie in (0, 1)")


@dataclass(frozen=True)
class RegressionTree:
    """Array-of-nodes binary tree. feature[i] == -1 marks a leaf.

    Internal nodes carry their split gain (the bracketed formula above,
    without the gamma subtraction); leaves carry the learning-rate-scaled
    weight. Routing: x < threshold goes left, x >= threshold goes right.
    """

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    weight: tuple[float, ...]
    gain: tuple[float, ...]

    @property
    def n_internal(self) -> int:
        return sum(1 for f in self.feature if f >= 0)


def tree_predict(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    out = np.zeros(X.shape[0])
    stack = [(0, np.arange(X.shape[0], dtype=np.intp))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        f = tree.feature[node]
        if f < 0:
            out[idx] = tree.weight[node]
            continue
        mask = X[idx, f] < tree.threshold[node]
        stack.append((tree.left[node], idx[mask]))
        stack.append((tree.right[node], idx[~mask]))
    return out


def _best_split(
    Xn: np.ndarray,
    gn: np.ndarray,
    hn: np.ndarray,
    lam: float,
    min_child_weight: float,
    sorted_cache: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[int, float, float] | None:
    """Exact greedy best split over all features and midpoints.

    Returns (local feature index, threshold, gain) or None. Works in the
    transposed features x samples layout so cumulative sums run along
    contiguous memory; the flat argmax over that layout breaks ties to the
    lowest feature index, then the lowest threshold. `sorted_cache` may carry
    the precomputed (sorted values, argsort order), both (features, samples).
    Gains at valid split positions depend only on the sample sets on each
    side, so any sort order over equal values yields the same split.
    """
    n = Xn.shape[0]
    if n < 2:
        return None
    if sorted_cache is None:
        xt = np.ascontiguousarray(Xn.T)
        order = np.argsort(xt, axis=1)
        xs = np.take_along_axis(xt, order, axis=1)
    else:
        xs, order = sorted_cache
    gs = gn[order]
    hs = hn[order]
    Gl = np.cumsum(gs, axis=1)[:, :-1]
    Hl = np.cumsum(hs, axis=1)[:, :-1]
    Gt = float(gn.sum())
    Ht = float(hn.sum())
    Gr = Gt - Gl
    Hr = Ht - Hl
    valid = xs[:, 1:] > xs[:, :-1]
    valid &= (Hl >= min_child_weight) & (Hr >= min_child_weight)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        parent = Gt * Gt / (Ht + lam) if Ht + lam > 0 else 0.0
        gains = 0.5 * (Gl * Gl / (Hl + lam) + Gr * Gr / (Hr + lam) - parent)
    gains[~valid] = -np.inf
    gains[~np.isfinite(gains)] = -np.inf
    flat = int(np.argmax(gains))
    f, pos = divmod(flat, n - 1)
    best = float(gains[f, pos])
    if not math.isfinite(best):
        return None
    thr = 0.5 * (float(xs[f, pos]) + float(xs[f, pos + 1]))
    return f, thr, best


def _grow_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    cfg: BoosterConfig,
    feature_map: np.ndarray,
    root_cache: tuple[np.ndarray, np.ndarray] | None = None,
) -> RegressionTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    weight: list[float] = []
    gain: list[float] = []

    def add_leaf(idx: np.ndarray) -> int:
        G = float(g[idx].sum())
        H = float(h[idx].sum())
        denom = H + cfg.reg_lambda
        w = cfg.learning_rate * (-G / denom) if denom > 0 else 0.0
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        weight.append(w)
        gain.append(0.0)
        return node

    def build(idx: np.ndarray, depth: int) -> int:
        if depth >= cfg.max_depth or idx.size < 2:
            return add_leaf(idx)
        cache = root_cache if depth == 0 and idx.size == X.shape[0] else None
        found = _best_split(
            X[idx], g[idx], h[idx], cfg.reg_lambda, cfg.min_child_weight, cache
        )
        if found is None:
            return add_leaf(idx)
        f_local, thr, gval = found
        if gval - cfg.gamma <= 0.0:
            return add_leaf(idx)
        node = len(feature)
        feature.append(int(feature_map[f_local]))
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        weight.append(0.0)
        gain.append(gval)
        mask = X[idx, f_local] < thr
        li = build(idx[mask], depth + 1)
        ri = build(idx[~mask], depth + 1)
        left[node] = li
        right[node] = ri
        return node

    build(np.arange(X.shape[0], dtype=np.intp), 0)
    return RegressionTree(
        tuple(feature), tuple(threshold), tuple(left), tuple(right), tuple(weight), tuple(gain)
    )


def _softmax(margins: np.ndarray) -> np.ndarray:
    z = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_loss(margins: np.ndarray, yi: np.ndarray) -> float:
    p = _softmax(margins)[np.arange(len(yi)), yi]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class BoostedEnsemble:
    """Per-round, per-class regression trees plus normalized feature importances."""

    classes: tuple[str, ...]
    config: BoosterConfig
    trees: tuple[tuple[RegressionTree, ...], ...]
    n_features: int
    importance: np.ndarray        # gain-based, sums to 1 when any split exists
    importance_weight: np.ndarray
    loss_curve: tuple[float, ...]  # training log-loss before round 1 and after each round

    def __post_init__(self):
        for name in ("importance", "importance_weight"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def train(X: np.ndarray, y: Sequence[str], config: BoosterConfig | None = None) -> BoostedEnsemble:
    """Fit the boosted multiclass model on samples x features data."""
    config = config or BoosterConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("X must be a non-empty samples x features matrix")
    if not np.all(np.isfinite(X)):
        raise ValidationError("X contains NaN/inf")
    y = list(y)
    if len(y) != X.shape[0]:
        raise ValidationError("one label per sample required")
    classes = tuple(sorted(set(y)))
    if len(classes) < 2:
        raise ValidationError("training requires at least 2 classes")

    n, n_feat = X.shape
    n_classes = len(classes)
    cindex = {c: k for k, c in enumerate(classes)}
    yi = np.array([cindex[lab] for lab in y], dtype=np.intp)
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), yi] = 1.0

    margins = np.full((n, n_classes), _logit(config.base_score))
    rng = np.random.default_rng(config.seed)
    all_rounds: list[tuple[RegressionTree, ...]] = []
    loss_curve = [_log_loss(margins, yi)]
    all_cols = np.arange(n_feat, dtype=np.intp)
    all_rows = np.arange(n, dtype=np.intp)
    full_data = config.subsample >= 1.0 and config.colsample >= 1.0
    # without subsampling every tree shares the same root, so its feature
    # ordering can be computed once for the whole run
    root_cache = None
    if full_data:
        xt = np.ascontiguousarray(X.T)
        root_order = np.argsort(xt, axis=1)
        root_cache = (np.take_along_axis(xt, root_order, axis=1), root_order)

    for _ in range(config.n_estimators):
        P = _softmax(margins)
        round_trees: list[RegressionTree] = []
        for c in range(n_classes):
            gc = P[:, c] - Y[:, c]
            hc = P[:, c] * (1.0 - P[:, c])
            if config.subsample < 1.0:
                size = max(1, int(round(n * config.subsample)))
                rows = np.sort(rng.choice(n, size=size, replace=False))
            else:
                rows = all_rows
            if config.colsample < 1.0:
                size = max(1, int(round(n_feat * config.colsample)))
                cols = np.sort(rng.choice(n_feat, size=size, replace=False))
            else:
                cols = all_cols
            if full_data:
                tree = _grow_tree(X, gc, hc, config, cols, root_cache)
            else:
                tree = _grow_tree(X[np.ix_(rows, cols)], gc[rows], hc[rows], config, cols)
            round_trees.append(tree)
        # Margins move only after every class tree of the round is grown,
        # so all trees of one round share the same probabilities.
        for c, tree in enumerate(round_trees):
            margins[:, c] += tree_predict(tree, X)
        all_rounds.append(tuple(round_trees))
        loss_curve.append(_log_loss(margins, yi))

    gain_acc = np.zeros(n_feat)
    count_acc = np.zeros(n_feat)
    for round_trees in all_rounds:
        for tree in round_trees:
            for node, f in enumerate(tree.feature):
                if f >= 0:
                    gain_acc[f] += tree.gain[node]
                    count_acc[f] += 1.0
    imp_gain = gain_acc / gain_acc.sum() if gain_acc.sum() > 0 else np.zeros(n_feat)
    imp_weight = count_acc / count_acc.sum() if count_acc.sum() > 0 else np.zeros(n_feat)

    return BoostedEnsemble(
        classes=classes,
        config=config,
        trees=tuple(all_rounds),
        n_features=n_feat,
        importance=imp_gain,
        importance_weight=imp_weight,
        loss_curve=tuple(loss_curve),
    )


def predict_margins(e: BoostedEnsemble, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != e.n_features:
        raise ValidationError(f"X must have {e.n_features} feature columns")
    margins = np.full((X.shape[0], len(e.classes)), _logit(e.config.base_score))
    for round_trees in e.trees:
        for c, tree in enumerate(round_trees):
            margins[:, c] += tree_predict(tree, X)
    return margins


def predict(e: BoostedEnsemble, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample class label and per-class probabilities.

    Probabilities are the softmax of the summed margins (plus the uniform
    base-score offset); argmax ties resolve to the lowest class index.
    """
    proba = _softmax(predict_margins(e, X))
    labels = np.array([e.classes[k] for k in np.argmax(proba, axis=1)], dtype=object)
    return labels, proba


def feature_importance(e: BoostedEnsemble, kind: str = "gain") -> np.ndarray:
    """Normalized per-feature score: 'gain' shares total split gain, 'weight' split counts."""
    if kind == "gain":
        return e.importance.copy()
    if kind == "weight":
        return e.importance_weight.copy()
    raise ValidationError("kind must be 'gain' or 'weight'")


def ensemble_to_json(e: BoostedEnsemble) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "classes": list(e.classes),
        "n_features": e.n_features,
        "config": {
            "learning_rate": e.config.learning_rate,
            "max_depth": e.config.max_depth,
            "n_estimators": e.config.n_estimators,
            "reg_lambda": e.config.reg_lambda,
            "gamma": e.config.gamma,
            "min_child_weight": e.config.min_child_weight,
            "subsample": e.config.subsample,
            "colsample": e.config.colsample,
            "base_score": e.config.base_score,
            "seed": e.config.seed,
        },
        "importance": list(map(float, e.importance)),
        "importance_weight": list(map(float, e.importance_weight)),
        "loss_curve": list(e.loss_curve),
        "trees": [
            [
                {
                    "feature": list(t.feature),
                    "threshold": list(t.threshold),
                    "left": list(t.left),
                    "right": list(t.right),
                    "weight": list(t.weight),
                    "gain": list(t.gain),
                }
                for t in round_trees
            ]
            for round_trees in e.trees
        ],
    }
    return json.dumps(payload, sort_keys=True)


def ensemble_from_json(text: str) -> BoostedEnsemble:
    d = json.loads(text)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema version {d.get('schema_version')!r}")
    cfg = BoosterConfig(**d["config"])
    trees = tuple(
        tuple(
            RegressionTree(
                tuple(t["feature"]),
                tuple(t["threshold"]),
                tuple(t["left"]),
                tuple(t["right"]),
                tuple(t["weight"]),
                tuple(t["gain"]),
            )
            for t in round_trees
        )
        for round_trees in d["trees"]
    )
    return BoostedEnsemble(
        classes=tuple(d["classes"]),
        config=cfg,
        trees=trees,
        n_features=int(d["n_features"]),
        importance=np.array(d["importance"]),
        importance_weight=np.array(d["importance_weight"]),
        loss_curve=tuple(d["loss_curve"]),
    )
