"""Gradient-boosted regression trees (squared error, histogram splits).

Built from scratch: residual-fitting boosting where each round grows a binary
tree on the current residuals. Squared loss has unit curvature per sample, so
first-order residual fitting with weights-as-curvature is the whole story; no
second-order machinery is needed. Structural regularisation is
``leaf_penalty`` * (#leaves) plus an L2 penalty on leaf values: a split is
accepted only when its loss reduction exceeds ``leaf_penalty``, and a leaf
value is G / (H + l2) with G the weighted residual sum and H the weight sum.

Determinism contracts, all load-bearing for the test suite:

* Candidate thresholds come from unique feature values (midpoints between
  consecutive distinct values; evenly spaced quantiles of the uniques when a
  feature has more than ``max_bins`` of them). Unique values do not change
  when records are duplicated or re-weighted, so the candidate set is stable.
* Ties break to the lowest feature index, then the lowest threshold (the scan
  keeps the first strictly better candidate).
* Labels and residuals are snapped to a 2^-20 grid before aggregation, which
  makes every histogram sum exact in float64 for integer sample weights.
  Training with integer weights is then bit-identical to training on the
  correspondingly duplicated dataset, tree for tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import InvalidInputError

RESIDUAL_GRID = 2.0 ** -20


def _snap(values: np.ndarray) -> np.ndarray:
    return np.round(values / RESIDUAL_GRID) * RESIDUAL_GRID


@dataclass(frozen=True)
class GbtParams:
    """Boosting hyperparameters.

    ``min_leaf_weight`` bounds the weight sum on each side of a split;
    ``leaf_penalty`` is the per-leaf structural penalty a split must beat;
    ``l2`` shrinks leaf values.
    """

    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 4
    min_leaf_weight: float = 1.0
    leaf_penalty: float = 0.0
    l2: float = 1.0
    max_bins: int = 256

    def validate(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.max_bins < 2:
            raise InvalidInputError("n_trees, max_depth and max_bins must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidInputError("learning_rate must lie in (0, 1]")
        if self.min_leaf_weight <= 0 or self.leaf_penalty < 0 or self.l2 < 0:
            raise InvalidInputError("invalid regularisation parameters")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_leaf_weight": self.min_leaf_weight,
            "leaf_penalty": self.leaf_penalty,
            "l2": self.l2,
            "max_bins": self.max_bins,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GbtParams":
        return cls(**{k: d[k] for k in cls().to_dict()})


class Tree:
    """One regression tree as flat parallel arrays.

    ``feature[i] == -1`` marks a leaf; internal nodes route x to ``left`` when
    x[feature] <= threshold, else ``right``.
    """

    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f == -1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        value = np.asarray(self.value)
        node = np.zeros(X.shape[0], dtype=int)
        active = feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, feature[cur]] <= threshold[cur]
            node[idx] = np.where(go_left, left[cur], right[cur])
            active = feature[node] >= 0
        return value[node]

    def to_dict(self) -> dict:
        return {
            "feature": list(self.feature),
            "threshold": list(self.threshold),
            "left": list(self.left),
            "right": list(self.right),
            "value": list(self.value),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Tree":
        t = cls()
        t.feature = [int(v) for v in d["feature"]]
        t.threshold = [float(v) for v in d["threshold"]]
        t.left = [int(v) for v in d["left"]]
        t.right = [int(v) for v in d["right"]]
        t.value = [float(v) for v in d["value"]]
        return t


@dataclass
class Ensemble:
    """A fitted boosting ensemble: prediction = base_score + lr * sum(trees)."""

    base_score: float
    learning_rate: float
    trees: list[Tree] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    gain_totals: np.ndarray | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        out = np.full(X.shape[0], self.base_score, dtype=float)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
            "train_losses": list(self.train_losses),
            "gain_totals": (
                self.gain_totals.tolist() if self.gain_totals is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Ensemble":
        return cls(
            base_score=float(d["base_score"]),
            learning_rate=float(d["learning_rate"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            train_losses=[float(v) for v in d.get("train_losses", [])],
            gain_totals=(
                np.asarray(d["gain_totals"], dtype=float)
                if d.get("gain_totals") is not None
                else None
            ),
        )


def _bin_columns(
    X: np.ndarray, max_bins: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-feature bin codes and candidate thresholds from unique values."""
    binned: list[np.ndarray] = []
    thresholds: list[np.ndarray] = []
    for j in range(X.shape[1]):
        col = X[:, j]
        uniq = np.unique(col)
        if uniq.size > max_bins:
            take = np.unique(np.linspace(0, uniq.size - 1, max_bins).round().astype(int))
            edges = uniq[take]
        else:
            edges = uniq
        codes = np.searchsorted(edges, col, side="right") - 1
        codes = np.clip(codes, 0, edges.size - 1)
        binned.append(codes.astype(np.int32))
        # split "bin <= b" means x <= midpoint(edges[b], edges[b+1])
        thresholds.append((edges[:-1] + edges[1:]) / 2.0)
    return binned, thresholds


def fit_gbt(
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray | None,
    params: GbtParams,
) -> Ensemble:
    """Fit a boosting ensemble with weighted squared error.

    The weighted training MSE is tracked per round and asserted nonincreasing
    (up to the residual-grid epsilon). Degenerate data (all labels equal)
    yields single-leaf trees without error.
    """
    params.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidInputError("X must be (n, d) with matching y")
    n, d = X.shape
    if n < 2:
        raise InvalidInputError("fit_gbt requires at least 2 records")
    if sample_weights is None:
        w = np.ones(n, dtype=float)
    else:
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != (n,) or (w <= 0).any():
            raise InvalidInputError("sample_weights must be positive, one per record")

    binned, thresholds = _bin_columns(X, params.max_bins)
    y_fit = _snap(y)
    w_total = float(w.sum())
    base = float(np.dot(w, y_fit) / w_total)

    f = np.full(n, base, dtype=float)
    gain_totals = np.zeros(d, dtype=float)
    ens = Ensemble(base_score=base, learning_rate=params.learning_rate,
                   gain_totals=gain_totals)
    losses = [float(np.dot(w, (y_fit - f) ** 2) / w_total)]

    for _ in range(params.n_trees):
        r = _snap(y_fit - f)
        wr = w * r
        tree = Tree()
        root = tree.add_node()
        # frontier: (node_id, row indices, depth)
        frontier: list[tuple[int, np.ndarray, int]] = [(root, np.arange(n), 0)]
        leaf_updates: list[tuple[np.ndarray, float]] = []
        while frontier:
            node, idx, depth = frontier.pop(0)
            G = float(wr[idx].sum())
            H = float(w[idx].sum())
            split = None
            if depth < params.max_depth and idx.size > 1:
                split = _best_split(binned, thresholds, idx, wr, w, G, H, params)
            if split is None:
                tree.value[node] = G / (H + params.l2)
                leaf_updates.append((idx, tree.value[node]))
                continue
            gain, feat, bin_id, thr = split
            gain_totals[feat] += gain
            go_left = binned[feat][idx] <= bin_id
            tree.feature[node] = feat
            tree.threshold[node] = thr
            left = tree.add_node()
            right = tree.add_node()
            tree.left[node] = left
            tree.right[node] = right
            frontier.append((left, idx[go_left], depth + 1))
            frontier.append((right, idx[~go_left], depth + 1))
        for idx, value in leaf_updates:
            f[idx] += params.learning_rate * value
        ens.trees.append(tree)
        loss = float(np.dot(w, (y_fit - f) ** 2) / w_total)
        assert loss <= losses[-1] + 1e-9, (
            f"training loss increased: {losses[-1]} -> {loss}"
        )
        losses.append(loss)

    ens.train_losses = losses
    return ens


def _best_split(
    binned: list[np.ndarray],
    thresholds: list[np.ndarray],
    idx: np.ndarray,
    wr: np.ndarray,
    w: np.ndarray,
    G: float,
    H: float,
    params: GbtParams,
) -> tuple[float, int, int, float] | None:
    """Scan all features for the loss-reduction-maximising split.

    Returns (gain, feature, bin, threshold) or None. The strict ``>`` keeps
    the lowest feature index / lowest threshold on ties, and the split must
    beat the structural leaf penalty.
    """
    l2 = params.l2
    parent_score = G * G / (H + l2)
    best: tuple[float, int, int, float] | None = None
    w_idx = w[idx]
    wr_idx = wr[idx]
    for feat, (codes, thr) in enumerate(zip(binned, thresholds)):
        if thr.size == 0:
            continue
        nb = thr.size + 1
        sub = codes[idx]
        hist_w = np.bincount(sub, weights=w_idx, minlength=nb)
        hist_wr = np.bincount(sub, weights=wr_idx, minlength=nb)
        cw = np.cumsum(hist_w)[:-1]
        cwr = np.cumsum(hist_wr)[:-1]
        valid = (cw >= params.min_leaf_weight) & (H - cw >= params.min_leaf_weight)
        if not valid.any():
            continue
        gains = np.where(
            valid,
            cwr**2 / (cw + l2) + (G - cwr) ** 2 / (H - cw + l2) - parent_score,
            -np.inf,
        )
        b = int(np.argmax(gains))
        gain = float(gains[b])
        if gain > params.leaf_penalty and (best is None or gain > best[0]):
            best = (gain, feat, b, float(thr[b]))
    return best


def gain_importance(ensemble: Ensemble) -> np.ndarray:
    """Mean per-tree loss reduction attributed to each feature.

    Nonnegative; exactly zero for features never split on. The totals are
    accumulated during training from the accepted split gains.
    """
    if ensemble.gain_totals is None:
        raise InvalidInputError("ensemble carries no recorded gains")
    m = max(len(ensemble.trees), 1)
    return ensemble.gain_totals / m
