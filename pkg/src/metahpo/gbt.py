"""Second-order gradient-boosted trees for binary classification.

Logistic-loss boosting with exact greedy split search, L1/L2-regularized
leaf weights, and the split-gain/min-hessian pruning rules of the
xgboost-style hyperparameter family. Used to score hyperparameter
configurations (landmarkers) and as the HPO objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .util import average_ranks, sigmoid

PARAM_ORDER = (
    "n_estimators",
    "eta",
    "gamma",
    "max_depth",
    "min_child_weight",
    "reg_lambda",
    "reg_alpha",
)

# (low, high, integer) per hyperparameter.
PARAM_RANGES: dict[str, tuple[float, float, bool]] = {
    "n_estimators": (10, 1000, True),
    "eta": (1e-5, 1.0, False),
    "gamma": (1e-5, 1.0, False),
    "max_depth": (3, 8, True),
    "min_child_weight": (1e-5, 100.0, False),
    "reg_lambda": (1e-5, 1000.0, False),
    "reg_alpha": (1e-5, 1000.0, False),
}


@dataclass(frozen=True)
class GbtParams:
    """One point of the boosted-trees hyperparameter grid."""

    n_estimators: int = 100
    eta: float = 0.3
    gamma: float = 1e-5
    max_depth: int = 6
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    reg_alpha: float = 1e-5

    def __post_init__(self):
        for name in PARAM_ORDER:
            lo, hi, is_int = PARAM_RANGES[name]
            v = getattr(self, name)
            if is_int and v != int(v):
                raise ValueError(f"{name}={v} must be an integer")
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, name) for name in PARAM_ORDER)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        vals = {name: d[name] for name in PARAM_ORDER}
        vals["n_estimators"] = int(vals["n_estimators"])
        vals["max_depth"] = int(vals["max_depth"])
        return cls(**vals)


@dataclass
class Tree:
    """One regression tree in node-array form; node 0 is the root.

    Leaves carry feature == -1 and a weight; internal nodes carry the
    realized split gain and their children's hessian sums, kept so the
    structural constraints can be audited after training.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    gain: np.ndarray
    hessian: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_noop(self) -> bool:
        return bool(np.all(self.weight[self.feature < 0] == 0.0))

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Leaf weight reached by each row."""
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        while True:
            feat = self.feature[idx]
            internal = feat >= 0
            if not internal.any():
                break
            x = X[np.arange(n), np.maximum(feat, 0)]
            go_left = x < self.threshold[idx]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(internal, nxt, idx)
        return self.weight[idx]

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):  # children are appended after parents
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0


@dataclass
class GbtModel:
    trees: list[Tree]
    base_score: float
    eta: float
    n_features: int
    params: GbtParams = field(repr=False, default=None)

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got {X.shape}")
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            margin += self.eta * tree.leaf_values(X)
        return margin

    def to_json(self) -> str:
        trees = [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "weight": t.weight.tolist(),
                "gain": t.gain.tolist(),
                "hessian": t.hessian.tolist(),
            }
            for t in self.trees
        ]
        return json.dumps(
            {
                "version": 1,
                "base_score": self.base_score,
                "eta": self.eta,
                "n_features": self.n_features,
                "params": self.params.to_dict() if self.params else None,
                "trees": trees,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GbtModel":
        obj = json.loads(text)
        trees = [
            Tree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=float),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                weight=np.asarray(t["weight"], dtype=float),
                gain=np.asarray(t["gain"], dtype=float),
                hessian=np.asarray(t["hessian"], dtype=float),
            )
            for t in obj["trees"]
        ]
        params = GbtParams.from_dict(obj["params"]) if obj.get("params") else None
        return cls(trees, obj["base_score"], obj["eta"], obj["n_features"], params)


def _soft_threshold(G, alpha):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def _leaf_weight(G: float, H: float, params: GbtParams) -> float:
    return -_soft_threshold(G, params.reg_alpha) / (H + params.reg_lambda)


def _score(G, H, params: GbtParams):
    """Regularized quality term ST(G)^2 / (H + lambda) of a node."""
    st = _soft_threshold(G, params.reg_alpha)
    return st * st / (H + params.reg_lambda)


class _TreeBuilder:
    def __init__(self, X, g, h, params: GbtParams, orders: np.ndarray):
        # `orders` presorts every feature column once per dataset; node-level
        # sorted views come from filtering it by a membership mask, which is
        # much cheaper than re-sorting at every node.
        self.X, self.params = X, params
        self.orders = orders
        self.n, self.d = X.shape
        self.gh = np.column_stack([g, h])
        self.g = g
        self.feature, self.threshold = [], []
        self.left, self.right = [], []
        self.weight, self.gain, self.hessian = [], [], []
        self.contrib = np.zeros(len(g))

    def _new_node(self):
        for arr in (self.feature, self.left, self.right):
            arr.append(-1)
        self.threshold.append(math.nan)
        self.weight.append(0.0)
        self.gain.append(math.nan)
        self.hessian.append(0.0)
        return len(self.feature) - 1

    def _child_score(self, gsum, hsum):
        st = np.abs(gsum)
        st -= self.params.reg_alpha
        np.maximum(st, 0.0, out=st)
        st *= st
        st /= hsum + self.params.reg_lambda
        return st

    def _best_split(self, idx, G, H):
        """Exact greedy search over all (feature, boundary) candidates.

        Returns (gain, feature, threshold, left G/H, right G/H) or None when
        no admissible split improves on the parent by more than gamma.
        """
        p = self.params
        m = len(idx)
        if m < 2 or H < 2 * p.min_child_weight:
            return None
        if m == self.n:
            ordm = self.orders
        else:
            mask = np.zeros(self.n, dtype=bool)
            mask[idx] = True
            ordm = self.orders.T[mask[self.orders].T].reshape(self.d, m).T
        xs = self.X[ordm, np.arange(self.d)]
        cs = np.cumsum(self.gh[ordm], axis=0)[:-1]  # (m-1, d, 2)
        gl, hl = cs[:, :, 0], cs[:, :, 1]
        gr, hr = G - gl, H - hl

        gains = self._child_score(gl, hl)
        gains += self._child_score(gr, hr)
        invalid = (xs[1:] <= xs[:-1]) | (hl < p.min_child_weight) | (hr < p.min_child_weight)
        gains[invalid] = -np.inf
        flat = int(np.argmax(gains))
        best = gains.flat[flat]
        parent = float(_score(G, H, p))
        if not np.isfinite(best) or 0.5 * (best - parent) <= p.gamma:
            return None
        i, j = divmod(flat, self.d)
        thr = 0.5 * (xs[i, j] + xs[i + 1, j])
        return (
            0.5 * (best - parent),
            int(j),
            float(thr),
            float(gl[i, j]),
            float(hl[i, j]),
            float(G - gl[i, j]),
            float(H - hl[i, j]),
        )

    def build(self) -> Tree:
        root = self._new_node()
        G0, H0 = float(self.gh[:, 0].sum()), float(self.gh[:, 1].sum())
        stack = [(root, np.arange(self.n), 0, G0, H0)]
        while stack:
            node, idx, depth, G, H = stack.pop()
            self.hessian[node] = H
            split = self._best_split(idx, G, H) if depth < self.params.max_depth else None
            if split is None:
                w = float(_leaf_weight(G, H, self.params))
                self.weight[node] = w
                self.contrib[idx] = w
                continue
            gain, feat, thr, GL, HL, GR, HR = split
            go_left = self.X[idx, feat] < thr
            left, right = self._new_node(), self._new_node()
            self.feature[node] = feat
            self.threshold[node] = thr
            self.gain[node] = gain
            self.left[node], self.right[node] = left, right
            stack.append((right, idx[~go_left], depth + 1, GR, HR))
            stack.append((left, idx[go_left], depth + 1, GL, HL))
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            weight=np.asarray(self.weight, dtype=float),
            gain=np.asarray(self.gain, dtype=float),
            hessian=np.asarray(self.hessian, dtype=float),
        )


def train_gbt(ds: Dataset, params: GbtParams, rng: np.random.Generator | None = None) -> GbtModel:
    """Boost `n_estimators` trees on the train split.

    Training is deterministic (exact greedy splits, no subsampling); `rng`
    is accepted for evaluator-interface uniformity. Boosting stops early at
    the exact fixpoint where a tree contributes zero everywhere, since every
    subsequent tree would be an identical no-op.
    """
    X, y = np.asarray(ds.X_train, dtype=float), np.asarray(ds.y_train, dtype=float)
    if len(np.unique(y)) < 2:
        raise ValueError(f"{ds.name}: train split must contain both classes")
    p1 = min(max(float(y.mean()), 1e-6), 1 - 1e-6)
    base = math.log(p1 / (1 - p1))

    margin = np.full(len(y), base)
    orders = np.argsort(X, axis=0, kind="stable")
    trees: list[Tree] = []
    for _ in range(params.n_estimators):
        prob = sigmoid(margin)
        g = prob - y
        h = prob * (1.0 - prob)
        builder = _TreeBuilder(X, g, h, params, orders)
        tree = builder.build()
        if np.all(builder.contrib == 0.0):
            # Exact fixpoint: this tree changes nothing, so every later
            # round would rebuild the same no-op tree.
            break
        trees.append(tree)
        new_margin = margin + params.eta * builder.contrib
        if np.array_equal(new_margin, margin):
            # Update vanished in float64: gradients are frozen, so every
            # remaining round would rebuild exactly this tree. Append the
            # same tree for the rest of the budget instead of rebuilding.
            trees.extend([tree] * (params.n_estimators - len(trees)))
            break
        margin = new_margin
    return GbtModel(trees, base, params.eta, X.shape[1], params)


def predict_proba(model: GbtModel, X: np.ndarray) -> np.ndarray:
    """Positive-class probability per row, strictly inside (0, 1)."""
    return sigmoid(model.predict_margin(X))


def logistic_loss(y: np.ndarray, margin: np.ndarray) -> float:
    """Mean logistic loss at the given raw margins."""
    z = np.where(y > 0.5, -margin, margin)
    return float(np.mean(np.logaddexp(0.0, z)))


def roc_auc(y: np.ndarray, scores: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative; ties
    count one half."""
    y = np.asarray(y)
    scores = np.asarray(scores, dtype=float)
    if y.shape != scores.shape:
        raise ValueError("y and scores must have the same length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = average_ranks(scores)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate_config(ds: Dataset, params: GbtParams) -> float:
    """Test-split ROC AUC of one configuration; the landmarker primitive."""
    model = train_gbt(ds, params)
    return roc_auc(ds.y_test, predict_proba(model, ds.X_test))
