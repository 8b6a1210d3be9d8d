"""Graph kernel convolution layers.

A layer holds m small learnable "mask" graphs. The feature of node v under
mask i is the kernel similarity between the mask and the r-hop ego
subgraph around v, giving an (n, m) feature matrix per input graph.
Between layers those features are vector-quantized back into discrete
node labels so the next layer can run the same kernel machinery; a
junction may also pass the previous labels through unchanged, which
stacks two mask banks over one labeling. Features of all layers are
concatenated for the readout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graphs import (GraphError, LabeledGraph, LabelDictionary, ego_subgraph,
                     induced_subgraph, max_component_nodes)
from .kernels import (GRAPHLET3, WL_SUBTREE, KernelConfig, WlColorTable,
                      graphlet3_vector, kernel_matrix)
from .quantizer import Codebook, CodebookStateError, assign, fit_update


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LayerConfig:
    """One convolution layer: mask bank size and kernel settings.

    max_mask_nodes bounds the edit workspace of each mask; the effective
    mask graph can use up to that many nodes. input_dictionary is the
    label alphabet this layer's inputs (and masks) are drawn from.
    """

    num_masks: int
    max_mask_nodes: int
    radius: int
    kernel: KernelConfig
    input_dictionary: LabelDictionary

    def __post_init__(self):
        if self.num_masks < 1:
            raise ModelError(f"need >= 1 mask, got {self.num_masks}")
        if self.max_mask_nodes < 1:
            raise ModelError(
                f"need >= 1 mask node, got {self.max_mask_nodes}")
        if self.radius < 1:
            raise ModelError(f"need radius >= 1, got {self.radius}")


@dataclass(frozen=True)
class NetworkConfig:
    """Layer stack plus the quantizer size at each junction.

    quantizer_k has one entry per junction (len(layers) - 1). An entry of
    None passes the incoming labels through unchanged, so the next layer
    acts as a second mask bank over the same labeling; an integer k
    quantizes the previous layer's features into k fresh labels, which
    must match the next layer's dictionary size.
    """

    layers: tuple
    quantizer_k: tuple = ()

    def __post_init__(self):
        if not self.layers:
            raise ModelError("need at least one layer")
        if len(self.quantizer_k) != len(self.layers) - 1:
            raise ModelError(
                f"need {len(self.layers) - 1} junction entries, "
                f"got {len(self.quantizer_k)}")
        for i, k in enumerate(self.quantizer_k):
            nxt = self.layers[i + 1].input_dictionary.size
            if k is None:
                cur = self.layers[i].input_dictionary.size
                if nxt != cur:
                    raise ModelError(
                        f"passthrough junction {i} needs matching "
                        f"dictionaries, got {cur} then {nxt}")
            else:
                if k < 1:
                    raise ModelError(f"junction {i}: k must be >= 1")
                if nxt != k:
                    raise ModelError(
                        f"junction {i} quantizes into {k} labels but layer "
                        f"{i + 1} expects {nxt}")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def feature_dim(self) -> int:
        return sum(l.num_masks for l in self.layers)


class StructuralMask:
    """A learnable mask graph plus its edit state.

    The mask lives inside a fixed workspace of max_mask_nodes nodes whose
    edge set and labels get edited during training; the effective mask
    scored by the kernel is the workspace's largest connected component.
    Keeping the workspace at fixed size gives the edit logits a stable
    index space and lets masks grow back after shrinking.
    """

    __slots__ = ("workspace", "edit_probs", "component", "graph")

    def __init__(self, workspace: LabeledGraph, edit_probs):
        self.workspace = workspace
        self.edit_probs = edit_probs
        self.component = tuple(max_component_nodes(workspace))
        self.graph = induced_subgraph(workspace, self.component)

    def replaced(self, workspace: LabeledGraph) -> "StructuralMask":
        """New mask with the same edit state over an edited workspace."""
        if workspace.num_nodes != self.workspace.num_nodes:
            raise ModelError("workspace size is fixed per mask")
        return StructuralMask(workspace, self.edit_probs)

    def __repr__(self):
        return (f"StructuralMask(d={self.workspace.num_nodes}, "
                f"p={self.graph.num_nodes})")


def _prufer_tree_edges(d: int, rng: np.random.Generator):
    if d <= 1:
        return []
    if d == 2:
        return [(0, 1)]
    seq = [int(x) for x in rng.integers(0, d, size=d - 2)]
    degree = [1] * d
    for s in seq:
        degree[s] += 1
    edges = []
    for s in seq:
        for leaf in range(d):
            if degree[leaf] == 1:
                edges.append((leaf, s))
                degree[leaf] -= 1
                degree[s] -= 1
                break
    last = [v for v in range(d) if degree[v] == 1]
    edges.append((last[0], last[1]))
    return edges


def random_connected_graph(d: int, dict_size: int,
                           rng: np.random.Generator) -> LabeledGraph:
    """Random labeled connected graph on exactly d nodes.

    Uniform spanning tree via Pruefer decoding, then each remaining node
    pair is added independently with probability 0.3, then uniform labels.
    """
    if d < 1:
        raise ModelError("need >= 1 node")
    edges = set(tuple(sorted(e)) for e in _prufer_tree_edges(d, rng))
    for u in range(d):
        for v in range(u + 1, d):
            if (u, v) not in edges and rng.random() < 0.3:
                edges.add((u, v))
    labels = [int(x) for x in rng.integers(0, dict_size, size=d)]
    return LabeledGraph(d, sorted(edges), labels)


def _check_layer_input(layer: LayerConfig, g: LabeledGraph, masks):
    if len(masks) != layer.num_masks:
        raise ModelError(
            f"layer wants {layer.num_masks} masks, got {len(masks)}")
    size = layer.input_dictionary.size
    if g.num_nodes and max(g.labels) >= size:
        raise ModelError(
            f"graph label outside dictionary of size {size}")
    for mk in masks:
        if mk.workspace.num_nodes != layer.max_mask_nodes:
            raise ModelError("mask workspace size does not match layer")
        if max(mk.workspace.labels) >= size:
            raise ModelError("mask label outside layer dictionary")


def gkc_forward(layer: LayerConfig, masks, g: LabeledGraph) -> np.ndarray:
    """Feature matrix (n, num_masks) for one graph under one mask bank."""
    _check_layer_input(layer, g, masks)
    egos = [ego_subgraph(g, v, layer.radius).graph for v in range(g.num_nodes)]
    return kernel_matrix(layer.kernel, egos, [mk.graph for mk in masks])


@dataclass
class ModelParams:
    """Everything the network learns.

    masks[l] is layer l's mask bank; codebooks[j] belongs to junction j
    (None for passthrough junctions); mlp is the readout classifier
    (opaque to this module).
    """

    masks: list
    codebooks: list
    mlp: object = None


def network_forward(net: NetworkConfig, params: ModelParams,
                    g: LabeledGraph) -> np.ndarray:
    """Reference forward pass for one graph: (n, sum of mask counts).

    Junction codebooks must already be fitted; training uses the batched
    engine below, which fits them on the fly.
    """
    if g.num_nodes == 0:
        raise ModelError("cannot run the network on an empty graph")
    cur = g
    blocks = []
    for l, layer in enumerate(net.layers):
        z = gkc_forward(layer, params.masks[l], cur)
        blocks.append(z)
        if l < net.num_layers - 1:
            if net.quantizer_k[l] is not None:
                cb = params.codebooks[l]
                if cb is None or not cb.initialized:
                    raise CodebookStateError(
                        f"junction {l} codebook has not been fitted")
                cur = cur.with_labels(assign(cb, z))
    return np.hstack(blocks)


@dataclass
class LayerBatch:
    """Per-layer trace of one batched forward pass, consumed by the mask
    edit search: the flat ego list (batch order), the response matrix
    under the current masks, per-graph row slices, and an evaluator that
    scores a candidate mask graph against the same egos."""

    egos: list
    before: np.ndarray
    slices: list
    responses: object  # callable: mask LabeledGraph -> (n_total,) ndarray


@dataclass
class BatchTrace:
    features: list  # per graph, (n_g, feature_dim)
    layers: list    # LayerBatch per layer


class _WlRowCache:
    """Sparse histogram rows over a shared, growing color vocabulary.

    Rows are cached per graph object. Colors first seen in later graphs
    extend the vocabulary; existing rows stay valid because their column
    ids never move. Dot products against a mask vector only need the
    mask's counts on already-seen columns: a color absent from every
    cached row cannot contribute to any product.
    """

    def __init__(self, table: WlColorTable):
        self.table = table
        self.vocab = {}
        self._rows = {}

    def row(self, g: LabeledGraph):
        r = self._rows.get(g)
        if r is None:
            hist = self.table.histogram(g)
            idx = np.empty(len(hist), dtype=np.int64)
            dat = np.empty(len(hist), dtype=np.float64)
            norm_sq = 0
            for p, (key, cnt) in enumerate(hist.items()):
                col = self.vocab.get(key)
                if col is None:
                    col = len(self.vocab)
                    self.vocab[key] = col
                idx[p] = col
                dat[p] = cnt
                norm_sq += cnt * cnt
            r = (idx, dat, float(np.sqrt(norm_sq)))
            self._rows[g] = r
        return r

    def matrix(self, graphs):
        """CSR matrix of the graphs' rows plus their norms."""
        rows = [self.row(g) for g in graphs]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        for i, (idx, _, _) in enumerate(rows):
            indptr[i + 1] = indptr[i] + idx.shape[0]
        if rows:
            indices = np.concatenate([r[0] for r in rows])
            data = np.concatenate([r[1] for r in rows])
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0, dtype=np.float64)
        norms = np.array([r[2] for r in rows])
        mat = sp.csr_matrix((data, indices, indptr),
                            shape=(len(rows), max(len(self.vocab), 1)))
        return mat, norms

    def mask_vector(self, g: LabeledGraph, cache: bool):
        """Dense count vector of g over the current vocabulary (unknown
        colors dropped, they cannot match any row) plus g's full norm."""
        hist = self.table.histogram(g, cache=cache)
        vec = np.zeros(max(len(self.vocab), 1))
        norm_sq = 0
        for key, cnt in hist.items():
            norm_sq += cnt * cnt
            col = self.vocab.get(key)
            if col is not None:
                vec[col] = cnt
        return vec, float(np.sqrt(norm_sq))


class ForwardEngine:
    """Batched forward passes with structural caching for one run.

    Ego-ball structure depends only on adjacency, never on labels, so the
    engine computes each graph's ego decomposition once per radius and
    relabels it per batch. First-layer inputs keep their labels for the
    whole run, so first-layer ego histograms live in one persistent color
    table with cached sparse rows; deeper layers get a fresh table per
    batch because quantized labels change. Graphlet counts ignore labels
    entirely and are cached per ego structure. Kernel values are bit-for-
    bit identical to the plain per-graph path: all histogram dot products
    are sums of small integers, exact in float64 in any order.
    """

    def __init__(self, net: NetworkConfig):
        self.net = net
        self._egos = {}      # (base graph, radius) -> list[EgoSubgraph]
        self._l0_cache = None  # _WlRowCache when layer 0 uses wl_subtree
        self._g3 = {}        # ego graph -> graphlet count vector

    def _ego_templates(self, base: LabeledGraph, radius: int):
        key = (base, radius)
        out = self._egos.get(key)
        if out is None:
            out = [ego_subgraph(base, v, radius) for v in range(base.num_nodes)]
            self._egos[key] = out
        return out

    def _layer0_cache(self, layer: LayerConfig) -> "_WlRowCache":
        if self._l0_cache is None:
            table = WlColorTable(layer.input_dictionary.size,
                                 layer.kernel.wl_iterations)
            self._l0_cache = _WlRowCache(table)
        return self._l0_cache

    def _g3_vector(self, g: LabeledGraph) -> np.ndarray:
        v = self._g3.get(g)
        if v is None:
            v = graphlet3_vector(g)
            self._g3[g] = v
        return v

    def _wl_fast_layer(self, cache: "_WlRowCache", layer: LayerConfig,
                       egos, mask_graphs):
        """Responses via cached rows; returns (z, responses closure)."""
        mat, ego_norms = cache.matrix(egos)
        normalized = layer.kernel.normalized

        def column(mask_graph, mask_cache):
            vec, mnorm = cache.mask_vector(mask_graph, cache=mask_cache)
            if vec.shape[0] != mat.shape[1]:
                vec = vec[:mat.shape[1]]
            col = mat @ vec
            if normalized:
                denom = ego_norms * mnorm
                np.divide(col, denom, out=col, where=denom > 0)
                col[denom <= 0] = 0.0
            return col

        z = np.column_stack([column(g, True) for g in mask_graphs])
        return z, lambda mask_graph: column(mask_graph, False)

    def _graphlet_layer(self, layer: LayerConfig, egos, mask_graphs):
        lv = np.stack([self._g3_vector(g) for g in egos])
        normalized = layer.kernel.normalized
        ln = np.sqrt((lv * lv).sum(axis=1))

        def column(mask_graph):
            rv = graphlet3_vector(mask_graph)
            col = lv @ rv
            if normalized:
                denom = ln * float(np.sqrt(rv @ rv))
                np.divide(col, denom, out=col, where=denom > 0)
                col[denom <= 0] = 0.0
            return col

        z = np.column_stack([column(g) for g in mask_graphs])
        return z, column

    def forward_graphs(self, params: ModelParams, graphs,
                       fit_rng: np.random.Generator = None,
                       zero_cols=frozenset(), want_trace: bool = False) -> BatchTrace:
        """Forward a batch; fit_rng switches junction codebooks to
        fit-then-assign on this batch (training mode). zero_cols is a set
        of (layer, mask_index) whose response column is forced to zero
        network wide (ablation support)."""
        graphs = list(graphs)
        if not graphs:
            raise ModelError("empty batch")
        net = self.net
        cur = graphs
        per_graph_blocks = [[] for _ in graphs]
        layer_traces = []
        for l, layer in enumerate(net.layers):
            for g in cur:
                _check_layer_input(layer, g, params.masks[l])
            graphlet = layer.kernel.kind == GRAPHLET3
            slices = []
            egos_flat = []
            start = 0
            for base, g in zip(graphs, cur):
                temps = self._ego_templates(base, layer.radius)
                if g is base or graphlet:
                    # graphlet counting ignores labels, the structural
                    # template is enough at any depth
                    egos_flat.extend(t.graph for t in temps)
                else:
                    lab = g.labels
                    egos_flat.extend(
                        t.graph.with_labels([lab[o] for o in t.origin])
                        for t in temps)
                stop = start + g.num_nodes
                slices.append((start, stop))
                start = stop
            mask_graphs = [mk.graph for mk in params.masks[l]]
            if graphlet:
                z_flat, responses = self._graphlet_layer(layer, egos_flat,
                                                         mask_graphs)
            elif l == 0:
                z_flat, responses = self._wl_fast_layer(
                    self._layer0_cache(layer), layer, egos_flat, mask_graphs)
            else:
                table = WlColorTable(layer.input_dictionary.size,
                                     layer.kernel.wl_iterations)
                fresh = _WlRowCache(table)
                z_flat, responses = self._wl_fast_layer(fresh, layer,
                                                        egos_flat,
                                                        mask_graphs)
            for (zl, zi) in zero_cols:
                if zl == l:
                    z_flat[:, zi] = 0.0
            for (a, b), blocks in zip(slices, per_graph_blocks):
                blocks.append(z_flat[a:b])
            if want_trace:
                layer_traces.append(LayerBatch(
                    egos=egos_flat, before=z_flat, slices=slices,
                    responses=responses))
            if l < net.num_layers - 1:
                if net.quantizer_k[l] is None:
                    continue
                cb = params.codebooks[l]
                if fit_rng is not None:
                    fit_update(cb, z_flat, rng=fit_rng)
                elif cb is None or not cb.initialized:
                    raise CodebookStateError(
                        f"junction {l} codebook has not been fitted")
                labels_flat = assign(cb, z_flat)
                cur = [g.with_labels(labels_flat[a:b])
                       for g, (a, b) in zip(cur, slices)]
        features = [np.hstack(blocks) for blocks in per_graph_blocks]
        return BatchTrace(features=features, layers=layer_traces)
