"""Second-order gradient-boosted trees for three-class softmax scoring.

The learner follows the usual Newton-boosting recipe: per round, softmax
gradients ``g = w (p - y)`` and hessians ``h = w * 2 p (1 - p)`` are fitted
by one regression tree per class, split gains use the L2-regularised
second-order score and leaves take ``-G / (H + lambda)`` scaled by the
learning rate.  Rows are subsampled per round and columns per tree from a
seeded generator, so fitting is bit-for-bit reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .features import STAGES, FeatureMatrix

MODEL_MAGIC = "breathtda-model"
MODEL_VERSION = 1
_HESS_FLOOR = 1e-16


class LearnerError(ValueError):
    pass


class EmptyTrainingSetError(LearnerError):
    pass


class DegenerateModelError(LearnerError):
    pass


def _default_weights() -> dict[str, float]:
    return {"Wake": 4.0, "REM": 4.0, "NREM": 1.0}


@dataclass(frozen=True)
class BoostConfig:
    learning_rate: float = 0.07
    max_depth: int = 5
    subsample: float = 0.2
    colsample_bytree: float = 0.5
    n_rounds: int = 100
    l2_reg: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 0
    class_weights: dict[str, float] = field(default_factory=_default_weights)

    def __post_init__(self) -> None:
        if not 0.0 < self.learning_rate <= 1.0:
            raise LearnerError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.colsample_bytree <= 1.0:
            raise LearnerError("subsample and colsample_bytree must lie in (0, 1]")
        if self.max_depth < 1 or self.n_rounds < 1:
            raise LearnerError("max_depth and n_rounds must be >= 1")
        if self.l2_reg < 0 or self.min_child_weight < 0:
            raise LearnerError("l2_reg and min_child_weight must be >= 0")
        missing = set(STAGES) - set(self.class_weights)
        if missing:
            raise LearnerError(f"class weights missing for {sorted(missing)}")
        if any(v <= 0 for v in self.class_weights.values()):
            raise LearnerError("class weights must be positive")


@dataclass
class Tree:
    """Flattened regression tree; ``feature == -1`` marks a leaf.

    Rows go left when ``x[feature] < threshold``.
    """

    feature: NDArray[np.int64]
    threshold: NDArray[np.float64]
    left: NDArray[np.int64]
    right: NDArray[np.int64]
    value: NDArray[np.float64]

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            r = rows[inner]
            nd = node[inner]
            go_left = X[r, f[inner]] < self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])


@dataclass
class BoostedModel:
    feature_names: tuple[str, ...]
    config: BoostConfig
    trees: list[list[Tree]]  # trees[round][class]
    gain: NDArray[np.float64]
    loss_history: list[float] = field(default_factory=list)

    @property
    def classes(self) -> tuple[str, ...]:
        return STAGES

    def decision_function(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        scores = np.zeros((X.shape[0], len(STAGES)))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                scores[:, c] += tree.predict(X)
        return scores


# ---------------------------------------------------------------------- helpers


def encode_labels(y: ArrayLike) -> NDArray[np.int64]:
    arr = np.asarray(y)
    if arr.dtype.kind in "iu":
        if arr.size and (arr.min() < 0 or arr.max() >= len(STAGES)):
            raise LearnerError("integer labels must be 0 (Wake), 1 (REM) or 2 (NREM)")
        return arr.astype(np.int64)
    lookup = {s: k for k, s in enumerate(STAGES)}
    try:
        return np.array([lookup[str(v)] for v in arr], dtype=np.int64)
    except KeyError as exc:
        raise LearnerError(f"unknown stage label {exc.args[0]!r}") from None


def softmax(scores: NDArray[np.float64]) -> NDArray[np.float64]:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def weighted_log_loss(scores: NDArray[np.float64], y: NDArray[np.int64], w: NDArray[np.float64]) -> float:
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(w * logp[np.arange(y.size), y]).sum() / w.sum())


def filter_low_quality(rows: FeatureMatrix, threshold: float = 0.25) -> FeatureMatrix:
    """Drop training rows whose SQI is below ``threshold`` (strictly)."""
    keep = rows.sqi >= threshold
    if not keep.any():
        raise EmptyTrainingSetError(f"every training row has SQI < {threshold}")
    return rows.take(np.flatnonzero(keep))


# ---------------------------------------------------------------------- tree growth


class _TreeBuilder:
    def __init__(self, X, g, h, cols, cfg: BoostConfig, gain_acc):
        self.X, self.g, self.h, self.cols, self.cfg = X, g, h, cols, cfg
        self.gain_acc = gain_acc
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def _best_split(self, rows, G, H):
        lam, mcw = self.cfg.l2_reg, self.cfg.min_child_weight
        Xs = self.X[np.ix_(rows, self.cols)]
        order = np.argsort(Xs, axis=0, kind="stable")
        vals = np.take_along_axis(Xs, order, axis=0)
        GL = np.cumsum(self.g[rows][order], axis=0)[:-1]
        HL = np.cumsum(self.h[rows][order], axis=0)[:-1]
        GR = G - GL
        HR = H - HL
        ok = (vals[1:] > vals[:-1]) & (HL >= mcw) & (HR >= mcw)
        if not ok.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam))
        gain = np.where(ok, gain, -np.inf)
        flat = int(np.argmax(gain))
        pos, j = divmod(flat, gain.shape[1])
        best = gain[pos, j]
        if not best > 0.0:
            return None
        return j, vals[pos + 1, j], best

    def grow(self, rows, depth) -> int:
        node = self._new_node()
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        split = None
        if depth < self.cfg.max_depth and rows.size >= 2:
            split = self._best_split(rows, G, H)
        if split is None:
            self.value[node] = -G / (H + self.cfg.l2_reg) * self.cfg.learning_rate
            return node
        j, thr, gain = split
        f = int(self.cols[j])
        self.gain_acc[f] += gain
        go_left = self.X[rows, f] < thr
        self.feature[node] = f
        self.threshold[node] = float(thr)
        self.left[node] = self.grow(rows[go_left], depth + 1)
        self.right[node] = self.grow(rows[~go_left], depth + 1)
        return node

    def tree(self) -> Tree:
        return Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
        )


def _as_matrix(X, feature_names: Sequence[str] | None):
    if isinstance(X, FeatureMatrix):
        return X.values, X.names
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise LearnerError("feature matrix must be two-dimensional")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{k}" for k in range(arr.shape[1]))
    if len(names) != arr.shape[1]:
        raise LearnerError("feature names do not match the number of columns")
    return arr, names


def fit(
    X: FeatureMatrix | ArrayLike,
    y: ArrayLike | None = None,
    cfg: BoostConfig | None = None,
    feature_names: Sequence[str] | None = None,
) -> BoostedModel:
    """Fit the boosted ensemble.

    ``X`` may be a :class:`FeatureMatrix` (labels then default to its stages)
    or a plain array with ``feature_names``.
    """
    cfg = cfg or BoostConfig()
    values, names = _as_matrix(X, feature_names)
    if y is None:
        if not isinstance(X, FeatureMatrix):
            raise LearnerError("labels are required for array input")
        y = X.stages
    labels = encode_labels(y)
    if values.shape[0] != labels.size:
        raise LearnerError("feature rows and labels differ in count")
    if not np.all(np.isfinite(values)):
        raise LearnerError("feature matrix contains NaN or Inf; drop invalid rows first")
    if np.unique(labels).size < 2:
        raise DegenerateModelError("training data holds a single class")

    n, d = values.shape
    n_cls = len(STAGES)
    weights = np.array([cfg.class_weights[s] for s in STAGES])[labels]
    onehot = np.zeros((n, n_cls))
    onehot[np.arange(n), labels] = 1.0
    rng = np.random.default_rng(cfg.seed)
    n_rows = max(1, int(round(cfg.subsample * n)))
    n_cols = max(1, int(round(cfg.colsample_bytree * d)))

    scores = np.zeros((n, n_cls))
    gain = np.zeros(d)
    trees: list[list[Tree]] = []
    history = [weighted_log_loss(scores, labels, weights)]
    for _ in range(cfg.n_rounds):
        p = softmax(scores)
        grad = weights[:, None] * (p - onehot)
        hess = weights[:, None] * np.maximum(2.0 * p * (1.0 - p), _HESS_FLOOR)
        rows = np.arange(n) if n_rows == n else np.sort(rng.choice(n, n_rows, replace=False))
        round_trees = []
        for c in range(n_cls):
            cols = np.arange(d) if n_cols == d else np.sort(rng.choice(d, n_cols, replace=False))
            builder = _TreeBuilder(values, grad[:, c], hess[:, c], cols, cfg, gain)
            builder.grow(rows, 0)
            round_trees.append(builder.tree())
        for c, tree in enumerate(round_trees):
            scores[:, c] += tree.predict(values)
        trees.append(round_trees)
        history.append(weighted_log_loss(scores, labels, weights))
    return BoostedModel(names, cfg, trees, gain, history)


def predict(
    model: BoostedModel, X: FeatureMatrix | ArrayLike, feature_names: Sequence[str] | None = None
) -> tuple[NDArray[np.str_], NDArray[np.float64]]:
    """Stage labels and class probabilities (columns Wake, REM, NREM)."""
    if isinstance(X, FeatureMatrix):
        values, names = X.values, X.names
    else:
        values = np.asarray(X, dtype=np.float64)
        if values.size == 0:
            return np.empty(0, dtype=str), np.empty((0, len(STAGES)))
        names = tuple(feature_names) if feature_names is not None else None
        if values.ndim != 2:
            raise LearnerError("feature matrix must be two-dimensional")
    if names is not None and tuple(names) != model.feature_names:
        raise LearnerError("feature schema does not match the model")
    if values.shape[1] != len(model.feature_names):
        raise LearnerError(
            f"model expects {len(model.feature_names)} features, got {values.shape[1]}"
        )
    if values.shape[0] == 0:
        return np.empty(0, dtype=str), np.empty((0, len(STAGES)))
    proba = softmax(model.decision_function(values))
    labels = np.asarray(STAGES)[np.argmax(proba, axis=1)]
    return labels, proba


def feature_importance(model: BoostedModel) -> dict[str, float]:
    """Total split gain per feature, normalised to sum to one."""
    total = model.gain.sum()
    if total <= 0.0:
        return {n: 0.0 for n in model.feature_names}
    return {n: float(g / total) for n, g in zip(model.feature_names, model.gain)}


# ---------------------------------------------------------------------- persistence


def _hex(v: float) -> str:
    return float(v).hex()


def save_model(model: BoostedModel, path: str | Path) -> None:
    """Self-describing text format; floats are stored in hex for exact round trips."""
    cfg = asdict(model.config)
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        "config " + json.dumps(cfg, sort_keys=True),
        f"features {len(model.feature_names)}",
        *model.feature_names,
        "gain " + " ".join(_hex(g) for g in model.gain),
        f"rounds {len(model.trees)} classes {len(STAGES)}",
    ]
    for r, round_trees in enumerate(model.trees):
        for c, t in enumerate(round_trees):
            lines.append(f"tree {r} {c} {t.feature.size}")
            for k in range(t.feature.size):
                lines.append(
                    f"{t.feature[k]} {_hex(t.threshold[k])} {t.left[k]} {t.right[k]} {_hex(t.value[k])}"
                )
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> BoostedModel:
    path = Path(path)
    lines = path.read_text().splitlines()
    it = iter(enumerate(lines, start=1))

    def take(prefix: str | None = None) -> tuple[int, str]:
        try:
            k, line = next(it)
        except StopIteration:
            raise LearnerError(f"{path}: truncated model file") from None
        if prefix is not None and not line.startswith(prefix):
            raise LearnerError(f"{path}:{k}: expected '{prefix}'")
        return k, line

    _, head = take(MODEL_MAGIC)
    if head.split()[1] != str(MODEL_VERSION):
        raise LearnerError(f"{path}:1: unsupported model version")
    _, cfg_line = take("config ")
    cfg = BoostConfig(**json.loads(cfg_line[len("config "):]))
    _, feat_line = take("features ")
    names = tuple(take()[1] for _ in range(int(feat_line.split()[1])))
    _, gain_line = take("gain")
    gain = np.array([float.fromhex(v) for v in gain_line.split()[1:]])
    _, rounds_line = take("rounds ")
    parts = rounds_line.split()
    n_rounds, n_cls = int(parts[1]), int(parts[3])
    trees: list[list[Tree]] = []
    for _ in range(n_rounds):
        round_trees = []
        for _ in range(n_cls):
            _, tree_line = take("tree ")
            size = int(tree_line.split()[3])
            cols: list[list[str]] = [take()[1].split() for _ in range(size)]
            round_trees.append(
                Tree(
                    np.array([int(c[0]) for c in cols], dtype=np.int64),
                    np.array([float.fromhex(c[1]) for c in cols]),
                    np.array([int(c[2]) for c in cols], dtype=np.int64),
                    np.array([int(c[3]) for c in cols], dtype=np.int64),
                    np.array([float.fromhex(c[4]) for c in cols]),
                )
            )
        trees.append(round_trees)
    return BoostedModel(names, cfg, trees, gain)
