"""Discrete randomized descent for the structural masks.

Masks cannot be trained by backprop, so each training step samples one
discrete edit per mask (edge toggle or node relabel, alternating by
step parity), scores it by the induced first-order change of the batch
loss, keeps it when that estimate is non-positive, and nudges the edit
sampling distribution in the direction of useful edits. Edits act on the
mask's fixed-size workspace graph; the kernel only ever sees the largest
connected component, so toggling bridges can shrink a mask and later
edits can grow it back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import LabeledGraph
from .kernels import KernelConfig, kernel_matrix
from .model import LayerConfig, StructuralMask, random_connected_graph
from .optim import Adam

EDGE_PHASE = "edge"
LABEL_PHASE = "label"

ADD_EDGE = "add_edge"
REMOVE_EDGE = "remove_edge"
RELABEL = "relabel"


class DrdError(ValueError):
    pass


@dataclass(frozen=True)
class EditOperation:
    """One candidate edit of a mask workspace."""

    kind: str
    u: int = -1
    v: int = -1
    node: int = -1
    new_label: int = -1

    @classmethod
    def add(cls, u, v):
        return cls(kind=ADD_EDGE, u=min(u, v), v=max(u, v))

    @classmethod
    def remove(cls, u, v):
        return cls(kind=REMOVE_EDGE, u=min(u, v), v=max(u, v))

    @classmethod
    def relabel(cls, node, new_label):
        return cls(kind=RELABEL, node=node, new_label=new_label)


def pair_index(u: int, v: int, d: int) -> int:
    """Index of unordered pair (u, v) in the sorted i<j enumeration."""
    if u > v:
        u, v = v, u
    if not (0 <= u < v < d):
        raise DrdError(f"bad pair ({u},{v}) for {d} nodes")
    return u * d - u * (u + 1) // 2 + (v - u - 1)


class EditProbabilities:
    """Edit sampling distribution, parameterized by free logits.

    Edge logits (one per node pair) pass through a sigmoid: the sigmoid
    is the add weight of an absent pair and its complement the removal
    weight of a present pair. Label logits (one row per node) pass
    through a row softmax. Candidate weights are renormalized over the
    legal edits of the current workspace, so both phases always sample a
    proper distribution. Each phase owns its Adam state and is only
    stepped by edits of that phase.
    """

    __slots__ = ("edge_logits", "label_logits", "edge_opt", "label_opt")

    def __init__(self, edge_logits, label_logits, edge_opt, label_opt):
        self.edge_logits = edge_logits
        self.label_logits = label_logits
        self.edge_opt = edge_opt
        self.label_opt = label_opt

    @classmethod
    def zeros(cls, d: int, dict_size: int, lr: float = 0.01):
        """Flat initialization: every edit starts equally likely."""
        return cls(edge_logits=np.zeros(d * (d - 1) // 2),
                   label_logits=np.zeros((d, dict_size)),
                   edge_opt=Adam(lr), label_opt=Adam(lr))

    def edge_probs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.edge_logits))

    def label_probs(self) -> np.ndarray:
        z = self.label_logits - self.label_logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def edit_distribution(mask: StructuralMask, phase: str):
    """Legal edits of the workspace and their normalized weights."""
    ws = mask.workspace
    ep = mask.edit_probs
    d = ws.num_nodes
    ops = []
    weights = []
    if phase == EDGE_PHASE:
        p = ep.edge_probs()
        for u in range(d):
            for v in range(u + 1, d):
                if ws.has_edge(u, v):
                    ops.append(EditOperation.remove(u, v))
                    weights.append(1.0 - p[pair_index(u, v, d)])
                else:
                    ops.append(EditOperation.add(u, v))
                    weights.append(p[pair_index(u, v, d)])
    elif phase == LABEL_PHASE:
        s = ep.label_probs()
        for node in range(d):
            cur = ws.labels[node]
            for c in range(s.shape[1]):
                if c != cur:
                    ops.append(EditOperation.relabel(node, c))
                    weights.append(s[node, c])
    else:
        raise DrdError(f"unknown phase {phase!r}")
    if not ops:
        return [], np.zeros(0)
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0.0:
        w = np.full(len(ops), 1.0 / len(ops))
    else:
        w = w / total
    return ops, w


def sample_edit(mask: StructuralMask, phase: str,
                rng: np.random.Generator):
    """One edit drawn from the phase distribution; None if none exist."""
    ops, w = edit_distribution(mask, phase)
    if not ops:
        return None
    return ops[int(rng.choice(len(ops), p=w))]


def apply_edit(mask: StructuralMask, op: EditOperation) -> StructuralMask:
    """Edit the workspace and rebuild the effective mask component."""
    ws = mask.workspace
    if op.kind == ADD_EDGE:
        if ws.has_edge(op.u, op.v):
            raise DrdError(f"edge ({op.u},{op.v}) already present")
        new = LabeledGraph(ws.num_nodes, list(ws.edges) + [(op.u, op.v)],
                           ws.labels)
    elif op.kind == REMOVE_EDGE:
        if not ws.has_edge(op.u, op.v):
            raise DrdError(f"edge ({op.u},{op.v}) not present")
        drop = (min(op.u, op.v), max(op.u, op.v))
        new = LabeledGraph(ws.num_nodes,
                           [e for e in ws.edges if e != drop], ws.labels)
    elif op.kind == RELABEL:
        if not 0 <= op.node < ws.num_nodes:
            raise DrdError(f"node {op.node} out of range")
        if ws.labels[op.node] == op.new_label:
            raise DrdError("relabel must change the label")
        labels = list(ws.labels)
        labels[op.node] = op.new_label
        new = ws.with_labels(labels)
    else:
        raise DrdError(f"unknown edit kind {op.kind!r}")
    return mask.replaced(new)


def effective_change(before: StructuralMask, after: StructuralMask) -> bool:
    """Whether an edit altered the mask the kernel actually sees."""
    return (before.component != after.component
            or before.graph.edges != after.graph.edges
            or before.graph.labels != after.graph.labels)


def estimate_subgradient(before: StructuralMask, after: StructuralMask,
                         batch, kernel: KernelConfig) -> float:
    """First-order estimate of the loss change caused by a mask edit.

    batch is a list of (ego graph, d loss / d feature) pairs covering
    every node of the training batch; the estimate is the gradient-
    weighted sum of kernel response changes.
    """
    if not effective_change(before, after):
        return 0.0
    if not batch:
        return 0.0
    egos = [e for e, _ in batch]
    grads = np.asarray([g for _, g in batch], dtype=np.float64)
    k = kernel_matrix(kernel, egos, [before.graph, after.graph])
    return float(grads @ (k[:, 1] - k[:, 0]))


def update_probs(mask: StructuralMask, op: EditOperation, est: float) -> None:
    """Adam step on the sampling logits after a proposal is scored.

    The surrogate objective is est times the proposal weight, so edits
    that looked useful (est < 0) become more likely and harmful ones
    less likely, whether or not the edit was kept.
    """
    ep = mask.edit_probs
    d = mask.workspace.num_nodes
    if op.kind in (ADD_EDGE, REMOVE_EDGE):
        idx = pair_index(op.u, op.v, d)
        p = ep.edge_probs()[idx]
        sign = 1.0 if op.kind == ADD_EDGE else -1.0
        g = np.zeros_like(ep.edge_logits)
        g[idx] = est * sign * p * (1.0 - p)
        ep.edge_opt.step({"edge": ep.edge_logits}, {"edge": g})
    elif op.kind == RELABEL:
        s = ep.label_probs()[op.node]
        row = -est * s[op.new_label] * s
        row[op.new_label] += est * s[op.new_label]
        g = np.zeros_like(ep.label_logits)
        g[op.node] = row
        ep.label_opt.step({"label": ep.label_logits}, {"label": g})
    else:
        raise DrdError(f"unknown edit kind {op.kind!r}")


def drd_step(mask: StructuralMask, batch, kernel: KernelConfig, phase: str,
             rng: np.random.Generator):
    """One propose / score / decide cycle for one mask.

    Returns (mask after the step, accepted, estimate). The edit is kept
    exactly when the estimate is <= 0; the sampling distribution is
    updated either way. A phase with no legal edits is a no-op that
    returns (mask, False, 0.0) without touching any state.
    """
    op = sample_edit(mask, phase, rng)
    if op is None:
        return mask, False, 0.0
    after = apply_edit(mask, op)
    est = estimate_subgradient(mask, after, batch, kernel)
    update_probs(mask, op, est)
    if est <= 0.0:
        return after, True, est
    return mask, False, est


def drd_step_batched(mask: StructuralMask, phase: str,
                     rng: np.random.Generator, responses, before_col,
                     grads):
    """drd_step against a precomputed batch trace.

    responses maps a candidate mask graph to its response column over the
    batch egos and before_col is that column for the current mask, so the
    estimate costs one kernel column instead of two.
    """
    op = sample_edit(mask, phase, rng)
    if op is None:
        return mask, False, 0.0
    after = apply_edit(mask, op)
    if not effective_change(mask, after):
        est = 0.0
    else:
        est = float(grads @ (responses(after.graph) - before_col))
    update_probs(mask, op, est)
    if est <= 0.0:
        return after, True, est
    return mask, False, est


def init_structural_mask(layer: LayerConfig, rng: np.random.Generator,
                         prob_lr: float = 0.01) -> StructuralMask:
    """Fresh mask: random connected workspace plus flat edit logits."""
    ws = random_connected_graph(layer.max_mask_nodes,
                                layer.input_dictionary.size, rng)
    ep = EditProbabilities.zeros(layer.max_mask_nodes,
                                 layer.input_dictionary.size, prob_lr)
    return StructuralMask(ws, ep)


def init_mask_bank(layer: LayerConfig, rng: np.random.Generator,
                   prob_lr: float = 0.01):
    return [init_structural_mask(layer, rng, prob_lr)
            for _ in range(layer.num_masks)]
