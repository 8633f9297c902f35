"""From-scratch per-word classifier backends.

Three backends share one prediction interface: L1-regularized logistic
regression, a fixed-width (3 hidden tanh units, sigmoid output) MLP, and
a depth-limited decision tree split on GINI impurity.  The adam optimizer
drives both gradient-based backends with full-batch gradients; per-word
training sets are tiny, so minibatching would only add nondeterminism.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

HIDDEN_UNITS = 3

_EPS_PROB = 1e-12


class TrainingError(Exception):
    """Training aborted: bad inputs or non-finite numerics."""


class InsufficientDataError(TrainingError):
    """A required class has no examples."""


@dataclass(frozen=True, eq=False)
class LogRegParams:
    weights: np.ndarray
    bias: float


@dataclass(frozen=True, eq=False)
class MlpParams:
    w1: np.ndarray  # (HIDDEN_UNITS, D)
    b1: np.ndarray  # (HIDDEN_UNITS,)
    w2: np.ndarray  # (HIDDEN_UNITS,)
    b2: float


@dataclass(frozen=True)
class TreeLeaf:
    n_pos: int
    n_neg: int

    @property
    def probability(self) -> float:
        return self.n_pos / (self.n_pos + self.n_neg)


@dataclass(frozen=True)
class TreeSplit:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = TreeLeaf | TreeSplit
WordClassifier = LogRegParams | MlpParams | TreeSplit | TreeLeaf


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Shared training knobs for all backends.

    ``l2_alpha`` is the MLP penalty coefficient (the toolkit-style "alpha");
    ``l1_lambda`` is the logreg sparsity penalty, applied as a proximal
    soft-threshold after each adam step rather than through the gradient.
    """

    max_epochs: int = 2000
    adam: AdamConfig = field(default_factory=AdamConfig)
    l2_alpha: float = 0.1
    l1_lambda: float = 1e-4
    tree_max_depth: int = 2
    min_leaf: int = 1
    seed: int = 0
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.adam.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_init(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), step=0)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, config: AdamConfig):
    """One bias-corrected adam update; returns (new_params, new_state)."""
    if params.shape != grads.shape:
        raise ValueError("params and grads must have the same shape")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(f"non-finite gradient at step {state.step + 1}")
    t = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    v = config.beta2 * state.v + (1.0 - config.beta2) * grads * grads
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    new_params = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return new_params, AdamState(m=m, v=v, step=t)


def sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(p, y):
    p = np.clip(p, _EPS_PROB, 1.0 - _EPS_PROB)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _stack_examples(positives, negatives):
    pos = np.asarray(positives, dtype=float)
    neg = np.asarray(negatives, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise InsufficientDataError(
            f"need at least one positive and one negative example "
            f"(got {len(positives)} / {len(negatives)})"
        )
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return X, y


def logreg_loss_grad(weights, bias, X, y):
    """Mean binary cross-entropy and its gradient (penalty excluded:
    the L1 term is handled by the proximal step, not the gradient)."""
    z = X @ weights + bias
    p = sigmoid(z)
    err = (p - y) / len(y)
    return _bce(p, y), X.T @ err, float(np.sum(err))


def train_logreg(positives, negatives, config: TrainConfig) -> LogRegParams:
    """Full-batch adam on BCE with an L1 proximal soft-threshold on the
    weights (never the bias) after every step.

    The threshold is scaled per coordinate by the same adaptive metric as
    the step, lr * lambda / (sqrt(v_hat) + eps); a uniform threshold is
    unstable against adam's normalized updates and leaves near-zero
    weights oscillating instead of exactly zero.
    """
    X, y = _stack_examples(positives, negatives)
    dim = X.shape[1]
    params = np.zeros(dim + 1)  # [weights..., bias]
    state = adam_init(dim + 1)
    prev_loss = None
    for _ in range(config.max_epochs):
        w, b = params[:-1], params[-1]
        bce, gw, gb = logreg_loss_grad(w, b, X, y)
        loss = bce + config.l1_lambda * float(np.sum(np.abs(w)))
        if prev_loss is not None and abs(prev_loss - loss) < config.convergence_tol:
            break
        prev_loss = loss
        params, state = adam_step(state, params, np.concatenate([gw, [gb]]), config.adam)
        v_hat = state.v[:-1] / (1.0 - config.adam.beta2**state.step)
        shrink = (
            config.adam.learning_rate
            * config.l1_lambda
            / (np.sqrt(v_hat) + config.adam.eps)
        )
        params[:-1] = np.sign(params[:-1]) * np.maximum(np.abs(params[:-1]) - shrink, 0.0)
    if not np.all(np.isfinite(params)):
        raise TrainingError("logreg training produced non-finite parameters")
    return LogRegParams(weights=params[:-1].copy(), bias=float(params[-1]))


def glorot_init(dim: int, seed) -> MlpParams:
    """Uniform [-r, r] weights with r = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    r1 = np.sqrt(6.0 / (dim + HIDDEN_UNITS))
    r2 = np.sqrt(6.0 / (HIDDEN_UNITS + 1))
    return MlpParams(
        w1=rng.uniform(-r1, r1, size=(HIDDEN_UNITS, dim)),
        b1=np.zeros(HIDDEN_UNITS),
        w2=rng.uniform(-r2, r2, size=HIDDEN_UNITS),
        b2=0.0,
    )


def pack_mlp(params: MlpParams) -> np.ndarray:
    return np.concatenate(
        [params.w1.ravel(), params.b1, params.w2, np.array([params.b2])]
    )


def unpack_mlp(flat: np.ndarray, dim: int) -> MlpParams:
    k = HIDDEN_UNITS * dim
    return MlpParams(
        w1=flat[:k].reshape(HIDDEN_UNITS, dim),
        b1=flat[k : k + HIDDEN_UNITS],
        w2=flat[k + HIDDEN_UNITS : k + 2 * HIDDEN_UNITS],
        b2=float(flat[-1]),
    )


def mlp_forward(params: MlpParams, X):
    h = np.tanh(X @ params.w1.T + params.b1)
    logits = h @ params.w2 + params.b2
    return h, logits


def mlp_loss_grad(params: MlpParams, X, y, l2_alpha: float):
    """BCE + l2_alpha * (sum of squared weights, biases excluded), with
    backprop gradients for every parameter."""
    n = len(y)
    h, logits = mlp_forward(params, X)
    p = sigmoid(logits)
    loss = _bce(p, y) + l2_alpha * (
        float(np.sum(params.w1**2)) + float(np.sum(params.w2**2))
    )
    dlogits = (p - y) / n
    gw2 = h.T @ dlogits + 2.0 * l2_alpha * params.w2
    gb2 = float(np.sum(dlogits))
    dh = np.outer(dlogits, params.w2)
    dz1 = dh * (1.0 - h**2)
    gw1 = dz1.T @ X + 2.0 * l2_alpha * params.w1
    gb1 = dz1.sum(axis=0)
    grads = MlpParams(w1=gw1, b1=gb1, w2=gw2, b2=gb2)
    return loss, grads


def train_mlp(
    positives, negatives, config: TrainConfig, init: MlpParams | None = None
) -> MlpParams:
    """Adam on BCE + L2; ``init`` resumes from existing parameters with
    fresh optimizer moments (warm start)."""
    X, y = _stack_examples(positives, negatives)
    dim = X.shape[1]
    params = init if init is not None else glorot_init(dim, config.seed)
    if params.w1.shape[1] != dim:
        raise ValueError(f"init expects {params.w1.shape[1]} features, data has {dim}")
    flat = pack_mlp(params)
    state = adam_init(flat.size)
    prev_loss = None
    for _ in range(config.max_epochs):
        current = unpack_mlp(flat, dim)
        loss, grads = mlp_loss_grad(current, X, y, config.l2_alpha)
        if prev_loss is not None and abs(prev_loss - loss) < config.convergence_tol:
            break
        prev_loss = loss
        flat, state = adam_step(state, flat, pack_mlp(grads), config.adam)
    if not np.all(np.isfinite(flat)):
        raise TrainingError("mlp training produced non-finite parameters")
    out = unpack_mlp(flat.copy(), dim)
    return out


def gini(n_pos: int, n_neg: int) -> float:
    n = n_pos + n_neg
    if n == 0:
        return 0.0
    p = n_pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split(X, y, min_leaf):
    """Lowest weighted child GINI over midpoint thresholds of every feature;
    ties resolved to the smallest (feature_index, threshold)."""
    n, dim = X.shape
    best = None  # (impurity, feature, threshold, left_mask)
    for f in range(dim):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        sy = y[order]
        boundaries = np.nonzero(sv[:-1] < sv[1:])[0]
        if boundaries.size == 0:
            continue
        cum_pos = np.cumsum(sy)
        total_pos = cum_pos[-1]
        for b in boundaries:
            n_left = b + 1
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            pos_left = cum_pos[b]
            pos_right = total_pos - pos_left
            thr = (sv[b] + sv[b + 1]) / 2.0
            impurity = (
                n_left * gini(int(pos_left), int(n_left - pos_left))
                + n_right * gini(int(pos_right), int(n_right - pos_right))
            ) / n
            if best is None or impurity < best[0]:
                best = (impurity, f, thr)
    if best is None:
        return None
    _, f, thr = best
    return f, thr, X[:, f] <= thr


def _grow_tree(X, y, depth, config: TrainConfig) -> TreeNode:
    n_pos = int(np.sum(y))
    n_neg = len(y) - n_pos
    if (
        depth >= config.tree_max_depth
        or n_pos == 0
        or n_neg == 0
        or len(y) < 2 * config.min_leaf
    ):
        return TreeLeaf(n_pos=n_pos, n_neg=n_neg)
    split = _best_split(X, y, config.min_leaf)
    if split is None:
        return TreeLeaf(n_pos=n_pos, n_neg=n_neg)
    f, thr, left_mask = split
    return TreeSplit(
        feature_index=f,
        threshold=float(thr),
        left=_grow_tree(X[left_mask], y[left_mask], depth + 1, config),
        right=_grow_tree(X[~left_mask], y[~left_mask], depth + 1, config),
    )


def train_tree(positives, negatives, config: TrainConfig) -> TreeNode:
    """Greedy recursive GINI splitting; x[f] <= threshold goes left."""
    pos = np.asarray(positives, dtype=float)
    neg = np.asarray(negatives, dtype=float)
    if pos.size == 0 and neg.size == 0:
        raise InsufficientDataError("need at least one example to grow a tree")
    if pos.size == 0:
        X, y = neg, np.zeros(len(neg))
    elif neg.size == 0:
        X, y = pos, np.ones(len(pos))
    else:
        X, y = _stack_examples(positives, negatives)
    return _grow_tree(X, y, 0, config)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, TreeLeaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def tree_leaves(node: TreeNode) -> list[TreeLeaf]:
    if isinstance(node, TreeLeaf):
        return [node]
    return tree_leaves(node.left) + tree_leaves(node.right)


def _tree_predict(node: TreeNode, x) -> float:
    while isinstance(node, TreeSplit):
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return node.probability


def predict(classifier: WordClassifier, x) -> float:
    """Probability in [0, 1] that the entity fits the word."""
    x = np.asarray(x, dtype=float)
    if isinstance(classifier, LogRegParams):
        if x.shape != classifier.weights.shape:
            raise ValueError(
                f"feature dim {x.shape} does not match classifier {classifier.weights.shape}"
            )
        return float(sigmoid(np.atleast_1d(x @ classifier.weights + classifier.bias))[0])
    if isinstance(classifier, MlpParams):
        if x.size != classifier.w1.shape[1]:
            raise ValueError(
                f"feature dim {x.size} does not match classifier {classifier.w1.shape[1]}"
            )
        _, logits = mlp_forward(classifier, x[None, :])
        return float(sigmoid(logits)[0])
    if isinstance(classifier, (TreeLeaf, TreeSplit)):
        return _tree_predict(classifier, x)
    raise TypeError(f"unknown classifier type {type(classifier)!r}")


def predict_batch(classifier: WordClassifier, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if isinstance(classifier, LogRegParams):
        return sigmoid(X @ classifier.weights + classifier.bias)
    if isinstance(classifier, MlpParams):
        _, logits = mlp_forward(classifier, X)
        return sigmoid(logits)
    return np.array([_tree_predict(classifier, x) for x in X])
