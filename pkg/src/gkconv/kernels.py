"""Graph kernels over labeled graphs.

Two kernels are provided behind one config type:

* ``wl_subtree`` counts matching rooted subtree patterns via iterative
  color refinement. A signature (own color, sorted multiset of neighbor
  colors) is mapped to a compressed color id through a shared table; the
  kernel is the dot product of the combined color histograms over
  refinement rounds 0..h. Kernel values do not depend on how the color
  table is shared between calls, only on which graphs are compared.
* ``graphlet3`` counts induced connected 3-node subgraphs (triangles and
  paths) and takes the dot product of the two count vectors. Node labels
  are ignored.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphs import GraphError, LabeledGraph

WL_SUBTREE = "wl_subtree"
GRAPHLET3 = "graphlet3"
KERNEL_KINDS = (WL_SUBTREE, GRAPHLET3)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Which kernel to evaluate and how.

    wl_iterations is the number of refinement rounds h (histograms from
    rounds 0..h all contribute). normalized divides by the geometric mean
    of the self-similarities so values land in [0, 1].
    """

    kind: str = WL_SUBTREE
    wl_iterations: int = 3
    normalized: bool = True

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if self.kind == WL_SUBTREE and self.wl_iterations < 1:
            raise KernelError(
                f"wl_subtree needs wl_iterations >= 1, got {self.wl_iterations}")


@dataclass
class WlColoring:
    """Per-iteration node colors from refinement rounds 0..h."""

    colors: list  # colors[t][v] = color of node v after round t

    @property
    def iterations(self) -> int:
        return len(self.colors) - 1


class WlColorTable:
    """Shared signature -> color mapping for a fixed iteration count.

    Round-0 colors are the raw node labels; refined colors draw fresh ids
    from a counter that starts past the label alphabet, so ids never
    collide across rounds. Sharing one table across many graphs keeps
    their histograms directly comparable.
    """

    def __init__(self, num_labels: int, iterations: int):
        if num_labels < 1:
            raise KernelError("need num_labels >= 1")
        if iterations < 0:
            raise KernelError("negative iteration count")
        self.num_labels = num_labels
        self.iterations = iterations
        self._tables = [dict() for _ in range(iterations)]
        self._next = num_labels
        self._hist = {}  # LabeledGraph (identity keyed) -> combined Counter

    def refine(self, g: LabeledGraph):
        """All per-round colorings plus the combined histogram."""
        if any(l >= self.num_labels for l in g.labels):
            raise KernelError(
                f"node label outside dictionary of size {self.num_labels}")
        colors = list(g.labels)
        per_round = [colors]
        combined = Counter(colors)
        for t in range(self.iterations):
            table = self._tables[t]
            nxt = []
            for v in range(g.num_nodes):
                sig = (colors[v], tuple(sorted(colors[u] for u in g.adj[v])))
                c = table.get(sig)
                if c is None:
                    c = self._next
                    self._next += 1
                    table[sig] = c
                nxt.append(c)
            colors = nxt
            per_round.append(colors)
            combined.update(colors)
        return per_round, combined

    def histogram(self, g: LabeledGraph, cache: bool = False) -> Counter:
        """Combined color histogram over rounds 0..h.

        cache=True memoizes by graph object identity; only use it for
        graphs that stay alive as long as the table (cached entries pin
        their graphs).
        """
        if cache:
            h = self._hist.get(g)
            if h is None:
                h = self.refine(g)[1]
                self._hist[g] = h
            return h
        return self.refine(g)[1]


def wl_refine(g: LabeledGraph, iterations: int) -> WlColoring:
    """Standalone color refinement of one graph (fresh table)."""
    base = max(g.labels, default=0) + 1
    table = WlColorTable(base, iterations)
    per_round, _ = table.refine(g)
    return WlColoring(colors=per_round)


def _hist_dot(h1: Counter, h2: Counter) -> float:
    if len(h2) < len(h1):
        h1, h2 = h2, h1
    return float(sum(v * h2.get(k, 0) for k, v in h1.items()))


def _label_base(graphs) -> int:
    base = 1
    for g in graphs:
        if g.num_nodes:
            base = max(base, max(g.labels) + 1)
    return base


def wl_subtree_kernel(g1: LabeledGraph, g2: LabeledGraph,
                      iterations: int = 3, table: WlColorTable = None) -> float:
    """Unnormalized subtree kernel: dot of combined color histograms."""
    if table is None:
        table = WlColorTable(_label_base((g1, g2)), iterations)
    elif table.iterations != iterations:
        raise KernelError("table iteration count does not match request")
    return _hist_dot(table.histogram(g1), table.histogram(g2))


def graphlet3_vector(g: LabeledGraph) -> np.ndarray:
    """Counts of induced connected 3-node subgraphs: [triangles, paths]."""
    tri = 0
    nbr = [set(ns) for ns in g.adj]
    for a, b in g.edges:
        # every triangle is counted once per edge, i.e. three times total
        tri += len(nbr[a] & nbr[b])
    tri //= 3
    wedges = sum(d * (d - 1) // 2 for d in map(g.degree, range(g.num_nodes)))
    return np.array([tri, wedges - 3 * tri], dtype=np.float64)


def graphlet3_kernel(g1: LabeledGraph, g2: LabeledGraph) -> float:
    return float(graphlet3_vector(g1) @ graphlet3_vector(g2))


def _raw_kernel(cfg: KernelConfig, g1, g2, table=None) -> float:
    if cfg.kind == WL_SUBTREE:
        return wl_subtree_kernel(g1, g2, cfg.wl_iterations, table)
    return graphlet3_kernel(g1, g2)


def kernel_eval(cfg: KernelConfig, g1: LabeledGraph, g2: LabeledGraph) -> float:
    """Kernel value under cfg; normalized form is k12 / sqrt(k11 k22)."""
    if not cfg.normalized:
        return _raw_kernel(cfg, g1, g2)
    if cfg.kind == WL_SUBTREE:
        table = WlColorTable(_label_base((g1, g2)), cfg.wl_iterations)
        h1, h2 = table.histogram(g1), table.histogram(g2)
        k12 = _hist_dot(h1, h2)
        k11 = _hist_dot(h1, h1)
        k22 = _hist_dot(h2, h2)
    else:
        v1, v2 = graphlet3_vector(g1), graphlet3_vector(g2)
        k12 = float(v1 @ v2)
        k11 = float(v1 @ v1)
        k22 = float(v2 @ v2)
    if k11 <= 0.0 or k22 <= 0.0:
        return 0.0
    # same op order as the matrix path so both give bitwise-equal values
    return k12 / (np.sqrt(k11) * np.sqrt(k22))


def _csr_from_hists(hists, vocab) -> sp.csr_matrix:
    indptr = [0]
    indices = []
    data = []
    for h in hists:
        for key, cnt in h.items():
            col = vocab.get(key)
            if col is None:
                col = len(vocab)
                vocab[key] = col
            indices.append(col)
            data.append(cnt)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(hists), max(len(vocab), 1)))


def kernel_matrix(cfg: KernelConfig, left, right, table: WlColorTable = None,
                  cache_left: bool = False, cache_right: bool = False) -> np.ndarray:
    """All-pairs kernel values, shape (len(left), len(right)).

    For wl_subtree one shared color table covers every comparison; pass a
    persistent table (matching iteration count and label base) to reuse
    colors across calls. cache_left/cache_right memoize histograms by
    graph identity inside that table.
    """
    left, right = list(left), list(right)
    if not left or not right:
        return np.zeros((len(left), len(right)), dtype=np.float64)
    if cfg.kind == WL_SUBTREE:
        if table is None:
            table = WlColorTable(_label_base(left + right), cfg.wl_iterations)
        elif table.iterations != cfg.wl_iterations:
            raise KernelError("table iteration count does not match config")
        lh = [table.histogram(g, cache=cache_left) for g in left]
        rh = [table.histogram(g, cache=cache_right) for g in right]
        vocab = {}
        lm = _csr_from_hists(lh, vocab)
        rm = _csr_from_hists(rh, vocab)
        if lm.shape[1] < len(vocab):
            lm.resize((lm.shape[0], len(vocab)))
        if rm.shape[1] < len(vocab):
            rm.resize((rm.shape[0], len(vocab)))
        out = (lm @ rm.T).toarray()
        if cfg.normalized:
            ln = np.sqrt([_hist_dot(h, h) for h in lh])
            rn = np.sqrt([_hist_dot(h, h) for h in rh])
            denom = np.outer(ln, rn)
            np.divide(out, denom, out=out, where=denom > 0)
            out[denom <= 0] = 0.0
    else:
        lv = np.stack([graphlet3_vector(g) for g in left])
        rv = np.stack([graphlet3_vector(g) for g in right])
        out = lv @ rv.T
        if cfg.normalized:
            ln = np.sqrt((lv * lv).sum(axis=1))
            rn = np.sqrt((rv * rv).sum(axis=1))
            denom = np.outer(ln, rn)
            np.divide(out, denom, out=out, where=denom > 0)
            out[denom <= 0] = 0.0
    return out


def wl_indistinguishable(g1: LabeledGraph, g2: LabeledGraph) -> bool:
    """True if color refinement can never separate the two graphs.

    Runs joint refinement until the color partition stabilizes and
    compares the color histograms. Once the histograms agree at the
    stable partition they agree at every later round as well.
    """
    base = _label_base((g1, g2))
    c1, c2 = list(g1.labels), list(g2.labels)
    nxt = base
    seen_colors = -1
    while True:
        if Counter(c1) != Counter(c2):
            return False
        distinct = len(set(c1) | set(c2))
        if distinct == seen_colors:
            return True
        seen_colors = distinct
        table = {}
        fresh = []
        for g, cols in ((g1, c1), (g2, c2)):
            new = []
            for v in range(g.num_nodes):
                sig = (cols[v], tuple(sorted(cols[u] for u in g.adj[v])))
                c = table.get(sig)
                if c is None:
                    c = nxt
                    nxt += 1
                    table[sig] = c
                new.append(c)
            fresh.append(new)
        c1, c2 = fresh
