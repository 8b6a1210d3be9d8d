"""Readout: sum pooling, a two-layer MLP, and the training losses.

The loss is cross entropy plus a weighted redundancy penalty. The
penalty is the negated Jensen-Shannon divergence between the per-mask
response distributions over a graph's nodes: identical response columns
are maximally redundant and penalized hardest, so masks are pushed to
specialize. Gradients are computed by hand; everything is plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import Adam

_EPS = 1e-12


class HeadError(ValueError):
    pass


@dataclass
class MlpParams:
    W1: np.ndarray  # (in_dim, hidden)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (hidden, classes)
    b2: np.ndarray  # (classes,)
    opt: Adam = None

    @property
    def num_classes(self) -> int:
        return self.b2.shape[0]


def init_mlp(in_dim: int, hidden: int, classes: int,
             rng: np.random.Generator, lr: float = 0.001) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if min(in_dim, hidden, classes) < 1:
        raise HeadError("all MLP dimensions must be >= 1")
    a1 = np.sqrt(6.0 / (in_dim + hidden))
    a2 = np.sqrt(6.0 / (hidden + classes))
    return MlpParams(
        W1=rng.uniform(-a1, a1, size=(in_dim, hidden)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-a2, a2, size=(hidden, classes)),
        b2=np.zeros(classes),
        opt=Adam(lr))


def pool_sum(features: np.ndarray) -> np.ndarray:
    """Column sums over the node axis; onto each mask's total response."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise HeadError("need a non-empty (nodes, masks) feature matrix")
    return features.sum(axis=0)


def mlp_forward(p: MlpParams, pooled: np.ndarray) -> np.ndarray:
    z1 = pooled @ p.W1 + p.b1
    return np.maximum(z1, 0.0) @ p.W2 + p.b2


def predict(p: MlpParams, pooled: np.ndarray) -> int:
    """Argmax class; exact logit ties go to the smaller class id."""
    return int(np.argmax(mlp_forward(p, pooled)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, y: int) -> float:
    """-log softmax(logits)[y], computed via log-sum-exp."""
    if not 0 <= y < logits.shape[0]:
        raise HeadError(f"class {y} out of range")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[y])


def _entropy(p: np.ndarray) -> float:
    return float(-(p * np.log(np.maximum(p, _EPS))).sum())


def _column_distributions(features: np.ndarray):
    """Columns normalized to distributions; all-zero columns become
    uniform (their response carries no preference over nodes)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise HeadError("need a non-empty (nodes, masks) feature matrix")
    if (X < 0).any():
        raise HeadError("kernel responses must be non-negative")
    n, m = X.shape
    s = X.sum(axis=0)
    zero = s <= 0.0
    safe = np.where(zero, 1.0, s)
    P = X / safe
    P[:, zero] = 1.0 / n
    return P, s, zero


def jsd_loss(features: np.ndarray) -> float:
    """Negated Jensen-Shannon divergence of the mask response columns.

    Equal to -H(mean of the column distributions) + sum of the column
    entropies; minimal when the columns are as distinct as possible.
    """
    P, _, _ = _column_distributions(features)
    q = P.mean(axis=1)
    return -_entropy(q) + sum(_entropy(P[:, i]) for i in range(P.shape[1]))


def jsd_grad(features: np.ndarray) -> np.ndarray:
    """d jsd_loss / d features, same shape as features.

    All-zero columns are flat plateaus of the loss surface and get zero
    gradient.
    """
    P, s, zero = _column_distributions(features)
    n, m = P.shape
    q = P.mean(axis=1)
    lq = np.log(np.maximum(q, _EPS))
    lp = np.log(np.maximum(P, _EPS))
    # dloss/dP[v,i], then projected through the column normalization
    g = (lq[:, None] + 1.0) / m - (lp + 1.0)
    inner = (g * P).sum(axis=0)
    out = (g - inner[None, :]) / np.where(zero, 1.0, s)[None, :]
    out[:, zero] = 0.0
    return out


@dataclass(frozen=True)
class LossReport:
    cross_entropy: float
    jsd: float
    jsd_weight: float

    @property
    def total(self) -> float:
        return self.cross_entropy + self.jsd_weight * self.jsd


def batch_loss(p: MlpParams, features_list, ys, jsd_weight: float) -> LossReport:
    """Mean cross entropy and mean redundancy penalty over a batch."""
    if len(features_list) != len(ys) or not features_list:
        raise HeadError("need matching, non-empty features and labels")
    ce = 0.0
    jsd = 0.0
    for X, y in zip(features_list, ys):
        ce += cross_entropy(mlp_forward(p, pool_sum(X)), int(y))
        jsd += jsd_loss(X)
    b = len(features_list)
    return LossReport(cross_entropy=ce / b, jsd=jsd / b, jsd_weight=jsd_weight)


def accuracy(p: MlpParams, features_list, ys) -> float:
    hits = sum(predict(p, pool_sum(X)) == int(y)
               for X, y in zip(features_list, ys))
    return hits / len(ys)


def backward(p: MlpParams, features_list, ys, jsd_weight: float):
    """Gradients of the mean total loss.

    Returns (MLP grad dict, list of d loss / d features per graph). The
    per-feature gradients fold in both the cross-entropy path through
    the pooled sums and the weighted redundancy penalty; they are what
    the mask edit search consumes.
    """
    if len(features_list) != len(ys) or not features_list:
        raise HeadError("need matching, non-empty features and labels")
    b = len(features_list)
    grads = {"W1": np.zeros_like(p.W1), "b1": np.zeros_like(p.b1),
             "W2": np.zeros_like(p.W2), "b2": np.zeros_like(p.b2)}
    dxs = []
    for X, y in zip(features_list, ys):
        X = np.asarray(X, dtype=np.float64)
        pooled = pool_sum(X)
        z1 = pooled @ p.W1 + p.b1
        a1 = np.maximum(z1, 0.0)
        logits = a1 @ p.W2 + p.b2
        prob = softmax(logits)
        dlogits = prob.copy()
        dlogits[int(y)] -= 1.0
        dlogits /= b
        grads["W2"] += np.outer(a1, dlogits)
        grads["b2"] += dlogits
        dz1 = (p.W2 @ dlogits) * (z1 > 0.0)
        grads["W1"] += np.outer(pooled, dz1)
        grads["b1"] += dz1
        dpooled = p.W1 @ dz1
        dx = np.tile(dpooled, (X.shape[0], 1))
        dx += (jsd_weight / b) * jsd_grad(X)
        dxs.append(dx)
    return grads, dxs


def mlp_update(p: MlpParams, grads: dict) -> None:
    p.opt.step({"W1": p.W1, "b1": p.b1, "W2": p.W2, "b2": p.b2}, grads)
