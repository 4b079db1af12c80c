"""Second-order gradient-boosted trees for weighted binary logistic loss.

Exact greedy split search over presorted columns, L1/L2-regularised leaves,
learned default directions for missing values (``nan``), shrinkage and early
stopping on a held-out partition.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.05
    max_depth: int = 3
    l1_alpha: float = 0.5
    l2_lambda: float = 1.0
    max_rounds: int = 2000
    early_stop_rounds: int = 50
    scale_pos_weight: Optional[float] = None
    min_child_hessian: float = 1e-6
    base_logit: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.l1_alpha < 0 or self.l2_lambda < 0 or self.min_child_hessian < 0:
            raise ValueError("regularisers must be non-negative")
        if self.scale_pos_weight is not None and self.scale_pos_weight <= 0:
            raise ValueError("scale_pos_weight must be positive")
        if self.max_rounds < 0 or self.early_stop_rounds < 1:
            raise ValueError("max_rounds >= 0 and early_stop_rounds >= 1 required")


@dataclass
class TreeNode:
    """Leaf when ``feature`` is ``None``; ``weight`` already includes shrinkage."""

    weight: float = 0.0
    feature: Optional[int] = None
    threshold: float = 0.0
    default_left: bool = True
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def features_used(self) -> set:
        if self.is_leaf:
            return set()
        return {self.feature} | self.left.features_used() | self.right.features_used()


@dataclass
class BoostedModel:
    trees: list
    base_logit: float
    params: TrainParams
    best_round: int
    n_features: int
    scale_pos_weight: float = 1.0
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    default_left: bool
    gain: float


def compute_class_weight(train_labels) -> float:
    """Ratio of negatives to positives in the training labels."""
    y = np.asarray(train_labels).astype(int)
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos == 0 or neg == 0 or pos + neg != y.size:
        raise ValueError("class weight needs both classes (labels in {0, 1})")
    return neg / pos


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def grad_hess(p, y, spw: float = 1.0):
    """Gradient and hessian of the weighted logistic loss w.r.t. the logit."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    w = np.where(y == 1, spw, 1.0)
    return w * (p - y), w * p * (1.0 - p)


def soft_threshold(G, alpha: float):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def leaf_weight(G: float, H: float, params: TrainParams) -> float:
    if H < 0:
        raise ValueError("hessian sum must be non-negative")
    denom = H + params.l2_lambda
    if denom <= 0:
        return 0.0
    return float(-soft_threshold(G, params.l1_alpha) / denom)


def _score(G, H, params):
    return soft_threshold(G, params.l1_alpha) ** 2 / (H + params.l2_lambda)


def weighted_logloss(logits, y, spw: float) -> float:
    y = np.asarray(y, dtype=np.float64)
    w = np.where(y == 1, spw, 1.0)
    losses = np.logaddexp(0.0, logits) - y * logits
    return float(np.sum(w * losses) / np.sum(w))


def _node_order(order: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """Per-feature sorted row indices restricted to ``rows``: shape ``(F, m)``."""
    mask = np.zeros(n, dtype=bool)
    mask[rows] = True
    ot = order.T
    return ot[mask[ot]].reshape(ot.shape[0], rows.size)


def best_split(X, g, h, rows, params: TrainParams, order=None) -> Optional[Split]:
    """Exact greedy split of ``rows`` maximising the regularised gain.

    Missing values are tried on both sides of every threshold. Ties go to the
    lower feature index, then the lower threshold, then missing-goes-left.
    """
    X = np.asarray(X, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.intp)
    n, F = X.shape
    m = rows.size
    if m < 2 or F == 0:
        return None
    if order is None:
        order = np.argsort(X, axis=0, kind="stable")
    idx = _node_order(order, rows, n)
    xs = X.T[np.arange(F)[:, None], idx]
    gs = g[idx]
    hs = h[idx]
    miss = np.isnan(xs)
    gs_nm = np.where(miss, 0.0, gs)
    hs_nm = np.where(miss, 0.0, hs)
    g_miss = np.sum(gs - gs_nm, axis=1)[:, None]
    h_miss = np.sum(hs - hs_nm, axis=1)[:, None]
    cg = np.cumsum(gs_nm, axis=1)
    ch = np.cumsum(hs_nm, axis=1)
    GL = cg[:, :-1]
    HL = ch[:, :-1]
    GR = cg[:, -1:] - GL
    HR = ch[:, -1:] - HL
    G = float(np.sum(g[rows]))
    H = float(np.sum(h[rows]))
    parent = _score(G, H, params)
    valid = xs[:, :-1] < xs[:, 1:]
    mch = params.min_child_hessian

    def gains(gl, hl, gr, hr):
        ok = valid & (hl >= mch) & (hr >= mch)
        gain = 0.5 * (_score(gl, hl, params) + _score(gr, hr, params) - parent)
        return np.where(ok, gain, -np.inf)

    with np.errstate(invalid="ignore"):
        gain_left = gains(GL + g_miss, HL + h_miss, GR, HR)
        gain_right = gains(GL, HL, GR + g_miss, HR + h_miss)
    go_left = gain_left >= gain_right
    best = np.where(go_left, gain_left, gain_right)
    flat = int(np.argmax(best))
    f, i = divmod(flat, m - 1)
    top = float(best[f, i])
    if not (top > 0.0):
        return None
    a, b = float(xs[f, i]), float(xs[f, i + 1])
    thr = a + (b - a) / 2.0
    if not (a < thr <= b):
        thr = b
    return Split(feature=int(f), threshold=thr, default_left=bool(go_left[f, i]), gain=top)


def _route_left(x: np.ndarray, node: TreeNode) -> np.ndarray:
    return np.where(np.isnan(x), node.default_left, x < node.threshold)


def _grow(X, g, h, rows, depth, params, order, out):
    G = float(np.sum(g[rows]))
    H = float(np.sum(h[rows]))
    split = best_split(X, g, h, rows, params, order) if depth < params.max_depth else None
    if split is None:
        w = params.learning_rate * leaf_weight(G, H, params)
        out[rows] = w
        return TreeNode(weight=w)
    node = TreeNode(feature=split.feature, threshold=split.threshold, default_left=split.default_left)
    left = _route_left(X[rows, split.feature], node)
    node.left = _grow(X, g, h, rows[left], depth + 1, params, order, out)
    node.right = _grow(X, g, h, rows[~left], depth + 1, params, order, out)
    return node


def fit_tree(X, g, h, params: TrainParams, order=None):
    """Grow one tree on gradients ``g`` and hessians ``h``.

    Returns ``(root, increments)`` where ``increments[i]`` is the shrunk leaf
    value reached by training row ``i``.
    """
    X = np.asarray(X, dtype=np.float64)
    if order is None:
        order = np.argsort(X, axis=0, kind="stable")
    out = np.zeros(X.shape[0])
    root = _grow(X, g, h, np.arange(X.shape[0]), 0, params, order, out)
    return root, out


def predict_tree(node: TreeNode, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(X.shape[0])
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, rows = stack.pop()
        if rows.size == 0:
            continue
        if nd.is_leaf:
            out[rows] = nd.weight
            continue
        left = _route_left(X[rows, nd.feature], nd)
        stack.append((nd.left, rows[left]))
        stack.append((nd.right, rows[~left]))
    return out


def _check_features(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D")
    if np.isinf(X).any():
        raise ValueError(f"{name} contains non-finite values other than the missing marker")
    return X


def train(train_X, train_y, valid_X, valid_y, params: TrainParams = TrainParams()) -> BoostedModel:
    """Boost trees until validation loss stalls for ``early_stop_rounds`` rounds.

    The positive-class weight defaults to the negative/positive ratio of the
    training labels. ``best_round`` is the tree count with the lowest
    validation loss (0 means the constant base model).
    """
    X = _check_features(train_X, "train_X")
    Xv = _check_features(valid_X, "valid_X")
    y = np.asarray(train_y, dtype=np.float64)
    yv = np.asarray(valid_y, dtype=np.float64)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation partitions must be non-empty")
    if X.shape[1] != Xv.shape[1]:
        raise ValueError("training and validation feature counts differ")
    spw = params.scale_pos_weight if params.scale_pos_weight is not None else compute_class_weight(y)
    if len(set(y.tolist())) != 2:
        raise ValueError("training partition needs both classes")

    order = np.argsort(X, axis=0, kind="stable")
    F = np.full(X.shape[0], float(params.base_logit))
    Fv = np.full(Xv.shape[0], float(params.base_logit))
    train_loss = [weighted_logloss(F, y, spw)]
    valid_loss = [weighted_logloss(Fv, yv, spw)]
    best, best_round = valid_loss[0], 0
    trees = []
    for r in range(1, params.max_rounds + 1):
        p = sigmoid(F)
        g, h = grad_hess(p, y, spw)
        tree, inc = fit_tree(X, g, h, params, order)
        trees.append(tree)
        F = F + inc
        Fv = Fv + predict_tree(tree, Xv)
        train_loss.append(weighted_logloss(F, y, spw))
        valid_loss.append(weighted_logloss(Fv, yv, spw))
        if valid_loss[-1] < best:
            best, best_round = valid_loss[-1], r
        elif r - best_round >= params.early_stop_rounds:
            break
    return BoostedModel(
        trees=trees,
        base_logit=float(params.base_logit),
        params=params,
        best_round=best_round,
        n_features=X.shape[1],
        scale_pos_weight=float(spw),
        train_loss=train_loss,
        valid_loss=valid_loss,
    )


def train_rounds(train_X, train_y, rounds: int, params: TrainParams = TrainParams()) -> BoostedModel:
    """Boost exactly ``rounds`` trees on the training data, without a validation set."""
    X = _check_features(train_X, "train_X")
    y = np.asarray(train_y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("training partition must be non-empty")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    spw = params.scale_pos_weight if params.scale_pos_weight is not None else compute_class_weight(y)
    order = np.argsort(X, axis=0, kind="stable")
    F = np.full(X.shape[0], float(params.base_logit))
    train_loss = [weighted_logloss(F, y, spw)]
    trees = []
    for _ in range(rounds):
        g, h = grad_hess(sigmoid(F), y, spw)
        tree, inc = fit_tree(X, g, h, params, order)
        trees.append(tree)
        F = F + inc
        train_loss.append(weighted_logloss(F, y, spw))
    return BoostedModel(
        trees=trees,
        base_logit=float(params.base_logit),
        params=params,
        best_round=int(rounds),
        n_features=X.shape[1],
        scale_pos_weight=float(spw),
        train_loss=train_loss,
    )


def predict_margin(model: BoostedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    if X2.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X2.shape[1]}")
    out = np.full(X2.shape[0], model.base_logit)
    for tree in model.trees[: model.best_round]:
        out = out + predict_tree(tree, X2)
    return out[0] if single else out


def predict_proba(model: BoostedModel, X):
    p = sigmoid(predict_margin(model, X))
    return float(p) if np.ndim(p) == 0 else p


def _tree_to_list(node: TreeNode, out: list):
    if node.is_leaf:
        out.append({"leaf": node.weight})
        return out
    out.append({"feature": node.feature, "threshold": node.threshold, "default_left": node.default_left})
    _tree_to_list(node.left, out)
    _tree_to_list(node.right, out)
    return out


def _tree_from_list(items, pos=0):
    item = items[pos]
    if "leaf" in item:
        return TreeNode(weight=float(item["leaf"])), pos + 1
    node = TreeNode(feature=int(item["feature"]), threshold=float(item["threshold"]), default_left=bool(item["default_left"]))
    node.left, pos = _tree_from_list(items, pos + 1)
    node.right, pos = _tree_from_list(items, pos)
    return node, pos


def model_to_dict(model: BoostedModel) -> dict:
    return {
        "format": "pterisk-gbdt-1",
        "params": asdict(model.params),
        "base_logit": model.base_logit,
        "best_round": model.best_round,
        "n_features": model.n_features,
        "scale_pos_weight": model.scale_pos_weight,
        "trees": [_tree_to_list(t, []) for t in model.trees],
    }


def model_from_dict(data: dict) -> BoostedModel:
    trees = [_tree_from_list(items)[0] for items in data["trees"]]
    return BoostedModel(
        trees=trees,
        base_logit=float(data["base_logit"]),
        params=TrainParams(**data["params"]),
        best_round=int(data["best_round"]),
        n_features=int(data["n_features"]),
        scale_pos_weight=float(data["scale_pos_weight"]),
    )


def dumps_model(model: BoostedModel) -> str:
    """JSON text; floats use shortest round-trip repr so reloading is bit-exact."""
    return json.dumps(model_to_dict(model), sort_keys=True)


def loads_model(text: str) -> BoostedModel:
    return model_from_dict(json.loads(text))


def models_identical(a: BoostedModel, b: BoostedModel) -> bool:
    return dumps_model(a) == dumps_model(b)
