"""Out-of-vocabulary detection from per-position probability distributions.

A position's feature vector is its full probability vector concatenated with
19 summary statistics (entropy, spread, concentration, and percentile
shapes).  Two classifier backends are built in, both deterministic given a
seed and serializable to a versioned JSON file:

* ``logistic``: L2-regularized logistic regression on standardized features,
  trained by full-batch gradient descent;
* ``boosted_trees``: gradient-boosted depth-limited regression trees on the
  logistic loss with second-order leaf weights, supporting learning rate,
  estimator count, max depth, min child weight, row/column subsampling,
  split gain threshold (gamma), and L1/L2 leaf regularization.

AUROC is computed as the normalized Mann-Whitney U statistic with ties
counted one half.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LatticeFormatError
from .lattice import FORMAT_VERSION, Lattice

__all__ = [
    "STAT_NAMES",
    "extract_stats",
    "extract_features",
    "feature_names",
    "feature_schema_hash",
    "OOVDetector",
    "DetectorHyperparameters",
    "train_oov_detector",
    "predict_oov",
    "flag_positions",
    "auroc",
    "save_detector_file",
    "load_detector_file",
    "lattice_features",
]

STAT_NAMES = (
    "entropy",
    "variance",
    "mean",
    "median",
    "max",
    "min",
    "skew",
    "kurtosis",
    "gini",
    "top1_prob",
    "top2_prob",
    "top1_ratio",
    "peaks",
    "zeros",
    "nonzeros",
    "p90",
    "p10",
    "p90_p10_ratio",
    "top5_sum",
)

_ZERO_EPS = 1e-10
_RATIO_GUARD = 1e-12


def extract_stats(probs: Sequence[float] | np.ndarray) -> np.ndarray:
    """The 19 summary statistics of one probability vector, in STAT_NAMES order.

    Moments use population normalization; skew and kurtosis are defined as 0
    for a constant vector.  Peaks counts entries strictly above the mean;
    zeros counts entries below 1e-10 and nonzeros is the complement, so the
    two always add up to the vector length.  Percentiles use linear
    interpolation.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probs must be a non-empty 1-D array")
    n = p.size
    mean = float(p.mean())
    centered = p - mean
    variance = float(np.mean(centered**2))
    std = math.sqrt(variance)
    if std > 0:
        skew = float(np.mean(centered**3)) / std**3
        kurtosis = float(np.mean(centered**4)) / variance**2
    else:
        skew = 0.0
        kurtosis = 0.0
    nonzero = p[p > 0]
    entropy = float(-(nonzero * np.log2(nonzero)).sum()) if nonzero.size else 0.0
    gini = 1.0 - float((p**2).sum())
    desc = np.sort(p)[::-1]
    top1 = float(desc[0])
    top2 = float(desc[1]) if n > 1 else 0.0
    top1_ratio = top1 / (top2 + _RATIO_GUARD)
    peaks = int((p > mean).sum())
    zeros = int((p < _ZERO_EPS).sum())
    nonzeros = n - zeros
    p90 = float(np.percentile(p, 90))
    p10 = float(np.percentile(p, 10))
    p90_p10_ratio = p90 / (p10 + _RATIO_GUARD)
    top5_sum = float(desc[: min(5, n)].sum())
    return np.array(
        [
            entropy,
            variance,
            mean,
            float(np.median(p)),
            float(p.max()),
            float(p.min()),
            skew,
            kurtosis,
            gini,
            top1,
            top2,
            top1_ratio,
            float(peaks),
            float(zeros),
            float(nonzeros),
            p90,
            p10,
            p90_p10_ratio,
            top5_sum,
        ],
        dtype=np.float64,
    )


def extract_features(probs: Sequence[float] | np.ndarray) -> np.ndarray:
    """Full feature vector: raw probabilities followed by the 19 statistics."""
    p = np.asarray(probs, dtype=np.float64)
    return np.concatenate([p, extract_stats(p)])


def feature_names(vocab_size: int) -> list[str]:
    return [f"p{i}" for i in range(vocab_size)] + list(STAT_NAMES)


def feature_schema_hash(vocab_size: int) -> str:
    joined = "\n".join(feature_names(vocab_size))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def lattice_features(lattices: Sequence[Lattice]) -> tuple[np.ndarray, np.ndarray]:
    """Stack features and ground-truth OOV labels from annotated lattices."""
    rows = []
    labels = []
    for lat in lattices:
        for pos in lat.positions:
            if pos.oov_truth is None:
                raise ValueError("every position needs an oov_truth label for training")
            rows.append(extract_features(pos.probs))
            labels.append(1.0 if pos.oov_truth else 0.0)
    if not rows:
        raise ValueError("no positions to extract features from")
    return np.stack(rows), np.asarray(labels, dtype=np.float64)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the rank-sum statistic, ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos + neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # 1-based average rank for the tie group [i, j]
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - pos * (pos + 1) / 2.0
    return u / (pos * neg)


# ---------------------------------------------------------------------------
# Classifier backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorHyperparameters:
    """Training knobs; the boosting defaults mirror the reference setup."""

    classifier_kind: str = "boosted_trees"
    learning_rate: float = 0.05
    n_estimators: int = 200
    max_depth: int = 4
    min_child_weight: float = 2.0
    subsample: float = 0.8
    colsample: float = 0.8
    gamma: float = 1.0
    reg_alpha: float = 0.1
    reg_lambda: float = 1.0
    # logistic backend
    l2_penalty: float = 1.0
    iterations: int = 300
    step_size: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.classifier_kind not in ("logistic", "boosted_trees"):
            raise ValueError(f"unknown classifier_kind {self.classifier_kind!r}")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample <= 1:
            raise ValueError("subsample and colsample must lie in (0, 1]")
        if self.n_estimators < 1 or self.max_depth < 1 or self.iterations < 1:
            raise ValueError("n_estimators, max_depth, and iterations must be >= 1")

    def as_dict(self) -> dict:
        return {
            "classifier_kind": self.classifier_kind,
            "learning_rate": self.learning_rate,
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "min_child_weight": self.min_child_weight,
            "subsample": self.subsample,
            "colsample": self.colsample,
            "gamma": self.gamma,
            "reg_alpha": self.reg_alpha,
            "reg_lambda": self.reg_lambda,
            "l2_penalty": self.l2_penalty,
            "iterations": self.iterations,
            "step_size": self.step_size,
            "seed": self.seed,
        }


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class _LogisticBackend:
    """L2-regularized logistic regression on standardized features."""

    def __init__(self, weights: np.ndarray, bias: float, mu: np.ndarray, sigma: np.ndarray):
        self.weights = weights
        self.bias = bias
        self.mu = mu
        self.sigma = sigma

    @classmethod
    def train(cls, x: np.ndarray, y: np.ndarray, hp: DetectorHyperparameters) -> "_LogisticBackend":
        mu = x.mean(axis=0)
        sigma = x.std(axis=0)
        sigma[sigma == 0] = 1.0
        xs = (x - mu) / sigma
        n, d = xs.shape
        w = np.zeros(d)
        b = 0.0
        for _ in range(hp.iterations):
            p = _sigmoid(xs @ w + b)
            grad_w = xs.T @ (p - y) / n + hp.l2_penalty * w / n
            grad_b = float((p - y).mean())
            w -= hp.step_size * grad_w
            b -= hp.step_size * grad_b
        return cls(weights=w, bias=b, mu=mu, sigma=sigma)

    def predict(self, x: np.ndarray) -> np.ndarray:
        xs = (x - self.mu) / self.sigma
        return _sigmoid(xs @ self.weights + self.bias)

    def to_jsonable(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "_LogisticBackend":
        return cls(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            mu=np.asarray(payload["mu"], dtype=np.float64),
            sigma=np.asarray(payload["sigma"], dtype=np.float64),
        )


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0
    is_leaf: bool = False


class _RegressionTree:
    """One depth-limited tree fit to gradients/hessians, second-order gains."""

    def __init__(self, nodes: list[_TreeNode]):
        self.nodes = nodes

    @classmethod
    def fit(
        cls,
        x: np.ndarray,
        grad: np.ndarray,
        hess: np.ndarray,
        feature_ids: np.ndarray,
        hp: DetectorHyperparameters,
    ) -> "_RegressionTree":
        nodes: list[_TreeNode] = []

        def leaf_weight(g_sum: float, h_sum: float) -> float:
            # L1 soft threshold on the gradient sum, L2 on the hessian sum.
            if g_sum > hp.reg_alpha:
                num = g_sum - hp.reg_alpha
            elif g_sum < -hp.reg_alpha:
                num = g_sum + hp.reg_alpha
            else:
                return 0.0
            return -num / (h_sum + hp.reg_lambda)

        def gain_term(g_sum: float, h_sum: float) -> float:
            if g_sum > hp.reg_alpha:
                num = g_sum - hp.reg_alpha
            elif g_sum < -hp.reg_alpha:
                num = g_sum + hp.reg_alpha
            else:
                num = 0.0
            return num * num / (h_sum + hp.reg_lambda)

        def build(rows: np.ndarray, depth: int) -> int:
            g_sum = float(grad[rows].sum())
            h_sum = float(hess[rows].sum())
            node_id = len(nodes)
            nodes.append(_TreeNode())
            best_gain = 0.0
            best: tuple[int, float, np.ndarray, np.ndarray] | None = None
            if depth < hp.max_depth and rows.size >= 2:
                parent_term = gain_term(g_sum, h_sum)
                for f in feature_ids:
                    values = x[rows, f]
                    order = np.argsort(values, kind="mergesort")
                    sv = values[order]
                    sg = grad[rows][order]
                    sh = hess[rows][order]
                    cg = np.cumsum(sg)
                    ch = np.cumsum(sh)
                    for cut in range(rows.size - 1):
                        if sv[cut] == sv[cut + 1]:
                            continue
                        hl = float(ch[cut])
                        hr = h_sum - hl
                        if hl < hp.min_child_weight or hr < hp.min_child_weight:
                            continue
                        gl = float(cg[cut])
                        gr = g_sum - gl
                        gain = 0.5 * (gain_term(gl, hl) + gain_term(gr, hr) - parent_term) - hp.gamma
                        if gain > best_gain:
                            threshold = (sv[cut] + sv[cut + 1]) / 2.0
                            mask = values <= threshold
                            best_gain = gain
                            best = (int(f), float(threshold), rows[mask], rows[~mask])
                if best is not None:
                    f, threshold, left_rows, right_rows = best
                    left_id = build(left_rows, depth + 1)
                    right_id = build(right_rows, depth + 1)
                    nodes[node_id] = _TreeNode(
                        feature=f, threshold=threshold, left=left_id, right=right_id
                    )
                    return node_id
            nodes[node_id] = _TreeNode(value=leaf_weight(g_sum, h_sum), is_leaf=True)
            return node_id

        build(np.arange(x.shape[0]), 0)
        return cls(nodes)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0], dtype=np.float64)
        for i in range(x.shape[0]):
            node = self.nodes[0]
            while not node.is_leaf:
                node = self.nodes[node.left if x[i, node.feature] <= node.threshold else node.right]
            out[i] = node.value
        return out

    def to_jsonable(self) -> list[dict]:
        return [
            {
                "feature": n.feature,
                "threshold": n.threshold,
                "left": n.left,
                "right": n.right,
                "value": n.value,
                "is_leaf": n.is_leaf,
            }
            for n in self.nodes
        ]

    @classmethod
    def from_jsonable(cls, payload: list[dict]) -> "_RegressionTree":
        return cls([_TreeNode(**node) for node in payload])


class _BoostedTreesBackend:
    """Gradient boosting on the logistic loss with second-order leaf weights."""

    def __init__(self, trees: list[_RegressionTree], base_score: float, learning_rate: float):
        self.trees = trees
        self.base_score = base_score
        self.learning_rate = learning_rate

    @classmethod
    def train(cls, x: np.ndarray, y: np.ndarray, hp: DetectorHyperparameters) -> "_BoostedTreesBackend":
        rng = np.random.Generator(np.random.PCG64(hp.seed))
        n, d = x.shape
        positive = float(y.mean())
        positive = min(max(positive, 1e-6), 1.0 - 1e-6)
        base_score = math.log(positive / (1.0 - positive))
        margin = np.full(n, base_score)
        trees: list[_RegressionTree] = []
        n_rows = max(1, int(round(hp.subsample * n)))
        n_cols = max(1, int(round(hp.colsample * d)))
        for _ in range(hp.n_estimators):
            p = _sigmoid(margin)
            grad = p - y
            hess = p * (1.0 - p)
            rows = (
                np.sort(rng.choice(n, size=n_rows, replace=False)) if n_rows < n else np.arange(n)
            )
            cols = (
                np.sort(rng.choice(d, size=n_cols, replace=False)) if n_cols < d else np.arange(d)
            )
            tree = _RegressionTree.fit(x[rows], grad[rows], hess[rows], cols, hp)
            trees.append(tree)
            margin += hp.learning_rate * tree.predict(x)
        return cls(trees=trees, base_score=base_score, learning_rate=hp.learning_rate)

    def predict(self, x: np.ndarray) -> np.ndarray:
        margin = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            margin += self.learning_rate * tree.predict(x)
        return _sigmoid(margin)

    def to_jsonable(self) -> dict:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "trees": [t.to_jsonable() for t in self.trees],
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "_BoostedTreesBackend":
        return cls(
            trees=[_RegressionTree.from_jsonable(t) for t in payload["trees"]],
            base_score=float(payload["base_score"]),
            learning_rate=float(payload["learning_rate"]),
        )


@dataclass
class OOVDetector:
    """A trained classifier over position features plus its decision threshold."""

    hyperparameters: DetectorHyperparameters
    vocab_size: int
    threshold: float = 0.5
    backend: object = field(default=None, repr=False)

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        expected = self.vocab_size + len(STAT_NAMES)
        if x.shape[1] != expected:
            raise ValueError(
                f"feature width {x.shape[1]} does not match detector schema width {expected}"
            )
        return self.backend.predict(x)


def train_oov_detector(
    features: np.ndarray,
    labels: np.ndarray,
    vocab_size: int,
    hyperparameters: DetectorHyperparameters | None = None,
    threshold: float = 0.5,
) -> OOVDetector:
    """Fit the configured backend; features are probs + stats rows."""
    hp = hyperparameters or DetectorHyperparameters()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
        raise ValueError("features must be (n, d) with one label per row")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be 0 or 1")
    if len(set(np.unique(y))) < 2:
        raise ValueError("training needs both classes present")
    if x.shape[1] != vocab_size + len(STAT_NAMES):
        raise ValueError(
            f"feature width {x.shape[1]} inconsistent with vocab_size {vocab_size}"
        )
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold!r}")
    if hp.classifier_kind == "logistic":
        backend = _LogisticBackend.train(x, y, hp)
    else:
        backend = _BoostedTreesBackend.train(x, y, hp)
    return OOVDetector(
        hyperparameters=hp,
        vocab_size=vocab_size,
        threshold=threshold,
        backend=backend,
    )


def predict_oov(detector: OOVDetector, lattice: Lattice) -> np.ndarray:
    """Per-position OOV probability for one lattice."""
    rows = np.stack([extract_features(pos.probs) for pos in lattice.positions])
    return detector.probabilities(rows)


def flag_positions(detector: OOVDetector, lattice: Lattice, threshold: float | None = None) -> Lattice:
    """Return a copy of the lattice with oov_detected probabilities written.

    A position is considered flagged when its probability is >= the
    threshold (so probability exactly 1.0 flags at threshold 1.0).
    """
    thr = detector.threshold if threshold is None else threshold
    if not 0.0 <= thr <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {thr!r}")
    probs = predict_oov(detector, lattice)
    positions = tuple(
        pos.replace(oov_detected=float(p)) for pos, p in zip(lattice.positions, probs)
    )
    return Lattice(
        vocab=lattice.vocab,
        positions=positions,
        reference_text=lattice.reference_text,
        spacing_seconds=lattice.spacing_seconds,
    )


def save_detector_file(detector: OOVDetector, path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "classifier_kind": detector.hyperparameters.classifier_kind,
        "hyperparameters": detector.hyperparameters.as_dict(),
        "threshold": detector.threshold,
        "vocab_size": detector.vocab_size,
        "feature_schema": feature_names(detector.vocab_size),
        "feature_schema_hash": feature_schema_hash(detector.vocab_size),
        "parameters": detector.backend.to_jsonable(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_detector_file(path) -> OOVDetector:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LatticeFormatError(f"invalid JSON in detector file: {exc.msg}", exc.lineno)
    if payload.get("format_version") != FORMAT_VERSION:
        raise LatticeFormatError(
            f"unsupported format_version {payload.get('format_version')!r}", 1
        )
    try:
        vocab_size = int(payload["vocab_size"])
        schema = list(payload["feature_schema"])
        stored_hash = payload["feature_schema_hash"]
        hp = DetectorHyperparameters(**payload["hyperparameters"])
        threshold = float(payload["threshold"])
        kind = payload["classifier_kind"]
        parameters = payload["parameters"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LatticeFormatError(f"bad detector file: {exc}", 1)
    if schema != feature_names(vocab_size) or stored_hash != feature_schema_hash(vocab_size):
        raise LatticeFormatError("feature schema mismatch: file layout differs from this engine", 1)
    if kind != hp.classifier_kind:
        raise LatticeFormatError(
            f"classifier_kind {kind!r} disagrees with hyperparameters", 1
        )
    if kind == "logistic":
        backend = _LogisticBackend.from_jsonable(parameters)
    else:
        backend = _BoostedTreesBackend.from_jsonable(parameters)
    return OOVDetector(
        hyperparameters=hp, vocab_size=vocab_size, threshold=threshold, backend=backend
    )
