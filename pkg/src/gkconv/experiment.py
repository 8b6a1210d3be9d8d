"""Training loop, cross-validation, grid search, and analysis tools."""

from __future__ import annotations

import copy
import csv
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from itertools import product
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import drd, head
from .data import GraphDataset, Split, split_holdout, split_kfold, take
from .graphs import (LabeledGraph, LabelDictionary, complete_graph,
                     cycle_graph, disjoint_union, ego_subgraph, star_graph,
                     to_dot)
from .kernels import (WL_SUBTREE, KernelConfig, kernel_eval, kernel_matrix,
                      wl_indistinguishable)
from .model import (ForwardEngine, LayerConfig, ModelParams, NetworkConfig,
                    random_connected_graph)
from .quantizer import Codebook, default_k
from .rng import derive_seed, stream

MAX_EPOCHS = 1000


class ExperimentError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss left the realm of finite numbers; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training run. hidden=0 means 'first mask bank size';
    proposals_per_mask is how many edits each mask gets per batch."""

    epochs: int = 200
    batch_size: int = 32
    mlp_lr: float = 0.001
    prob_lr: float = 0.01
    jsd_weight: float = 1e-4
    patience: int = 100
    seed: int = 0
    hidden: int = 0
    proposals_per_mask: int = 1
    check_invariants: bool = False

    def __post_init__(self):
        if not 0 <= self.epochs <= MAX_EPOCHS:
            raise ExperimentError(
                f"epochs must lie in [0, {MAX_EPOCHS}], got {self.epochs}")
        if self.batch_size < 1:
            raise ExperimentError("batch_size must be >= 1")
        if self.jsd_weight < 0:
            raise ExperimentError("jsd_weight must be >= 0")
        if self.patience < 1:
            raise ExperimentError("patience must be >= 1")
        if self.proposals_per_mask < 1:
            raise ExperimentError("proposals_per_mask must be >= 1")


def build_network(dict_size: int, num_masks: int = 16, mask_nodes: int = 6,
                  radius: int = 3, num_layers: int = 1,
                  kernel_kind: str = WL_SUBTREE, wl_iterations: int = 3,
                  normalized: bool = True, quantizer_k: int = 0) -> NetworkConfig:
    """Uniform layer stack; every junction quantizes into quantizer_k
    labels (0 picks the default size for the incoming dictionary)."""
    kernel = KernelConfig(kind=kernel_kind, wl_iterations=wl_iterations,
                          normalized=normalized)
    layers = []
    junctions = []
    size = dict_size
    for l in range(num_layers):
        layers.append(LayerConfig(
            num_masks=num_masks, max_mask_nodes=mask_nodes, radius=radius,
            kernel=kernel, input_dictionary=LabelDictionary(size)))
        if l < num_layers - 1:
            k = quantizer_k or default_k(size)
            junctions.append(k)
            size = k
    return NetworkConfig(layers=tuple(layers), quantizer_k=tuple(junctions))


def init_params(net: NetworkConfig, num_classes: int,
                cfg: TrainConfig) -> ModelParams:
    if num_classes < 2:
        raise ExperimentError("classification needs >= 2 classes")
    masks = [drd.init_mask_bank(layer, stream(cfg.seed, "masks", l),
                                cfg.prob_lr)
             for l, layer in enumerate(net.layers)]
    codebooks = [None if k is None else Codebook(k)
                 for k in net.quantizer_k]
    hidden = cfg.hidden or net.layers[0].num_masks
    mlp = head.init_mlp(net.feature_dim, hidden, num_classes,
                        stream(cfg.seed, "mlp"), cfg.mlp_lr)
    return ModelParams(masks=masks, codebooks=codebooks, mlp=mlp)


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    sec_per_epoch: float
    edit_accept_rate: float


@dataclass
class RunReport:
    """Per-epoch curves plus the end-of-run summary."""

    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    test_accuracy: float = math.nan
    stopped_early: bool = False

    def to_csv(self, path, timing: bool = True) -> Path:
        """Write the curves. timing=False omits the wall-clock column so
        that reports from identical seeded runs compare bit for bit."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc",
                "sec_per_epoch", "edit_accept_rate"]
        if not timing:
            cols.remove("sec_per_epoch")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(getattr(r, c)) if c != "epoch"
                            else r.epoch for c in cols])
        return path


def evaluate(engine: ForwardEngine, params: ModelParams, graphs, ys,
             jsd_weight: float):
    """(LossReport, accuracy) without touching any state."""
    trace = engine.forward_graphs(params, graphs)
    rep = head.batch_loss(params.mlp, trace.features, ys, jsd_weight)
    acc = head.accuracy(params.mlp, trace.features, ys)
    return rep, acc


def _assert_invariants(bank, accepted, est):
    assert np.isfinite(est), "edit estimate must be finite"
    if accepted:
        assert est <= 0.0, "accepted edits must have non-positive estimates"
    for mask in bank:
        assert 1 <= mask.graph.num_nodes <= mask.workspace.num_nodes
        rows = mask.edit_probs.label_probs().sum(axis=1)
        assert np.all(np.abs(rows - 1.0) <= 1e-9), "label rows must stay normalized"


def train(ds: GraphDataset, split: Split, net: NetworkConfig,
          cfg: TrainConfig):
    """Train one model on one split; returns (params, RunReport).

    Keeps the parameters of the best validation epoch (total loss) and
    restores them before the final test evaluation; stops early after
    cfg.patience epochs without improvement.
    """
    if ds.num_classes < 2:
        raise ExperimentError("dataset has a single class")
    if ds.dictionary.size != net.layers[0].input_dictionary.size:
        raise ExperimentError(
            f"network expects dictionary size "
            f"{net.layers[0].input_dictionary.size}, dataset has "
            f"{ds.dictionary.size}")
    train_graphs, train_ys = take(ds, split.train)
    val_graphs, val_ys = take(ds, split.val)
    test_graphs, test_ys = take(ds, split.test)

    params = init_params(net, ds.num_classes, cfg)
    engine = ForwardEngine(net)
    kmeans_rng = stream(cfg.seed, "kmeans")
    batch_rng = stream(cfg.seed, "batches")
    drd_rngs = {(l, i): stream(cfg.seed, "drd", l, i)
                for l, layer in enumerate(net.layers)
                for i in range(layer.num_masks)}

    report = RunReport()
    best_params = None
    bad_epochs = 0
    step = 0
    n_train = len(train_graphs)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = batch_rng.permutation(n_train)
        loss_sum = acc_sum = 0.0
        proposals = accepted_count = 0
        for start in range(0, n_train, cfg.batch_size):
            bidx = order[start:start + cfg.batch_size]
            graphs = [train_graphs[int(i)] for i in bidx]
            ys = [train_ys[int(i)] for i in bidx]
            trace = engine.forward_graphs(params, graphs,
                                          fit_rng=kmeans_rng,
                                          want_trace=True)
            rep = head.batch_loss(params.mlp, trace.features, ys,
                                  cfg.jsd_weight)
            if not math.isfinite(rep.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", report)
            loss_sum += rep.total * len(graphs)
            acc_sum += head.accuracy(params.mlp, trace.features, ys) * len(graphs)

            grads, dxs = head.backward(params.mlp, trace.features, ys,
                                       cfg.jsd_weight)
            head.mlp_update(params.mlp, grads)

            phase = drd.EDGE_PHASE if step % 2 == 0 else drd.LABEL_PHASE
            col = 0
            for l, layer in enumerate(net.layers):
                lb = trace.layers[l]
                for i in range(layer.num_masks):
                    grads_flat = np.concatenate(
                        [dx[:, col + i] for dx in dxs])
                    for _ in range(cfg.proposals_per_mask):
                        mask = params.masks[l][i]
                        new_mask, ok, est = drd.drd_step_batched(
                            mask, phase, drd_rngs[(l, i)], lb.responses,
                            lb.before[:, i], grads_flat)
                        if ok or est != 0.0:
                            proposals += 1
                            accepted_count += int(ok)
                        params.masks[l][i] = new_mask
                    if cfg.check_invariants:
                        _assert_invariants(params.masks[l], ok, est)
                col += layer.num_masks
            step += 1

        train_loss = loss_sum / n_train
        train_acc = acc_sum / n_train
        if val_graphs:
            val_rep, val_acc = evaluate(engine, params, val_graphs, val_ys,
                                        cfg.jsd_weight)
            val_loss = val_rep.total
        else:
            val_loss, val_acc = train_loss, train_acc
        if not math.isfinite(val_loss):
            raise TrainingDiverged(
                f"non-finite validation loss at epoch {epoch}", report)
        rate = accepted_count / proposals if proposals else 0.0
        report.rows.append(EpochRow(
            epoch=epoch, train_loss=train_loss, train_acc=train_acc,
            val_loss=val_loss, val_acc=val_acc,
            sec_per_epoch=time.perf_counter() - t0,
            edit_accept_rate=rate))

        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = copy.deepcopy(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                report.stopped_early = True
                break

    if best_params is not None:
        params = best_params
    if report.rows and test_graphs:
        _, report.test_accuracy = evaluate(engine, params, test_graphs,
                                           test_ys, cfg.jsd_weight)
    return params, report


@dataclass
class CvResult:
    fold_accuracies: list
    mean_accuracy: float
    stderr: float
    reports: list


def _run_fold(args):
    ds, net, cfg, split = args
    _, report = train(ds, split, net, cfg)
    return report


def cross_validate(ds: GraphDataset, net: NetworkConfig, cfg: TrainConfig,
                   folds: int = 10, jobs: int = 1) -> CvResult:
    """Stratified k-fold evaluation; each fold trains from scratch with a
    fold-derived seed. jobs > 1 runs folds in separate processes."""
    splits = split_kfold(ds, folds, stream(cfg.seed, "splits"))
    tasks = [(ds, net, replace(cfg, seed=derive_seed(cfg.seed, f)), s)
             for f, s in enumerate(splits)]
    if jobs > 1:
        with get_context("spawn").Pool(min(jobs, len(tasks))) as pool:
            reports = pool.map(_run_fold, tasks)
    else:
        reports = [_run_fold(t) for t in tasks]
    accs = [r.test_accuracy for r in reports]
    mean = float(np.mean(accs))
    stderr = float(np.std(accs, ddof=1) / math.sqrt(len(accs))) \
        if len(accs) > 1 else 0.0
    return CvResult(fold_accuracies=accs, mean_accuracy=mean, stderr=stderr,
                    reports=reports)


@dataclass
class GridResult:
    best: dict
    rows: list


def _grid_combos(masks_grid, nodes_grid, radius_grid, layers_grid):
    return [{"num_masks": m, "mask_nodes": d, "radius": r, "num_layers": L}
            for m, d, r, L in product(masks_grid, nodes_grid, radius_grid,
                                      layers_grid)]


def _run_grid_combo(args):
    ds, combo, cfg, split, kernel_kind, wl_iterations = args
    net = build_network(ds.dictionary.size, kernel_kind=kernel_kind,
                        wl_iterations=wl_iterations, **combo)
    row = dict(combo)
    try:
        _, report = train(ds, split, net, cfg)
        last = report.rows[-1] if report.rows else None
        row.update(val_loss=report.best_val_loss,
                   val_acc=(report.rows[report.best_epoch].val_acc
                            if report.best_epoch >= 0 else 0.0),
                   test_acc=report.test_accuracy,
                   epochs_run=len(report.rows),
                   stopped_early=report.stopped_early,
                   final_train_acc=last.train_acc if last else 0.0,
                   status="ok")
    except TrainingDiverged:
        row.update(val_loss=math.inf, val_acc=0.0, test_acc=math.nan,
                   epochs_run=0, stopped_early=False, final_train_acc=0.0,
                   status="diverged")
    return row


def grid_search(ds: GraphDataset, cfg: TrainConfig,
                masks_grid=(8, 16, 32), nodes_grid=(6, 8),
                radius_grid=(1, 2, 3), layers_grid=(1, 2, 3),
                kernel_kind: str = WL_SUBTREE, wl_iterations: int = 3,
                sample: int = 0, jobs: int = 1,
                out_csv=None) -> GridResult:
    """Hyperparameter sweep over one holdout split.

    Candidates are ranked by validation accuracy, then validation loss,
    then enumeration order. sample > 0 draws that many candidates
    without replacement instead of running the full grid.
    """
    combos = _grid_combos(masks_grid, nodes_grid, radius_grid, layers_grid)
    if sample:
        take_n = min(sample, len(combos))
        pick = stream(cfg.seed, "grid").choice(len(combos), size=take_n,
                                               replace=False)
        combos = [combos[int(i)] for i in sorted(pick)]
    split = split_holdout(ds, stream(cfg.seed, "splits"))
    tasks = [(ds, combo, replace(cfg, seed=derive_seed(cfg.seed, 1000 + i)),
              split, kernel_kind, wl_iterations)
             for i, combo in enumerate(combos)]
    if jobs > 1:
        with get_context("spawn").Pool(min(jobs, len(tasks))) as pool:
            rows = pool.map(_run_grid_combo, tasks)
    else:
        rows = [_run_grid_combo(t) for t in tasks]
    order = sorted(range(len(rows)),
                   key=lambda i: (-rows[i]["val_acc"], rows[i]["val_loss"], i))
    ranked = [rows[i] for i in order]
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(ranked[0].keys()))
            w.writeheader()
            w.writerows(ranked)
    return GridResult(best=ranked[0], rows=ranked)


def mask_significance(ds: GraphDataset, indices, net: NetworkConfig,
                      params: ModelParams, jsd_weight: float = 1e-4):
    """Rank masks by how much zeroing their response column (network
    wide) increases the mean total loss over the given graphs. Returns
    rows sorted by descending loss increase."""
    graphs, ys = take(ds, indices)
    if not graphs:
        raise ExperimentError("need at least one graph")
    engine = ForwardEngine(net)
    base_trace = engine.forward_graphs(params, graphs)
    base = head.batch_loss(params.mlp, base_trace.features, ys,
                           jsd_weight).total
    out = []
    for l, layer in enumerate(net.layers):
        for i in range(layer.num_masks):
            trace = engine.forward_graphs(params, graphs,
                                          zero_cols={(l, i)})
            loss = head.batch_loss(params.mlp, trace.features, ys,
                                   jsd_weight).total
            out.append({"layer": l, "mask": i,
                        "loss_increase": loss - base,
                        "ablated_loss": loss, "base_loss": base})
    out.sort(key=lambda r: (-r["loss_increase"], r["layer"], r["mask"]))
    return out


# viridis, 8 stops, darkest to lightest
VIRIDIS8 = ("#440154", "#46327e", "#365c8d", "#277f8e",
            "#1fa187", "#4ac16d", "#a0da39", "#fde725")


def _response_colors(values: np.ndarray):
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return [VIRIDIS8[-1]] * len(values)
    bucket = np.minimum(((values - lo) / (hi - lo) * 8).astype(int), 7)
    return [VIRIDIS8[b] for b in bucket]


def export_mask_dots(ds: GraphDataset, indices, net: NetworkConfig,
                     params: ModelParams, out_dir, top: int = 0):
    """DOT files for each mask and for its strongest-responding graph.

    Per mask two files are written: the mask graph itself and the graph
    from the given indices with the highest pooled response in that
    mask's column, its nodes colored by response magnitude (lightest =
    strongest). top > 0 limits output to the first `top` masks per layer.
    """
    graphs, _ = take(ds, indices)
    if not graphs:
        raise ExperimentError("need at least one graph")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    engine = ForwardEngine(net)
    trace = engine.forward_graphs(params, graphs)
    written = []
    col = 0
    for l, layer in enumerate(net.layers):
        count = layer.num_masks if top <= 0 else min(top, layer.num_masks)
        for i in range(count):
            mask = params.masks[l][i]
            mask_path = out_dir / f"mask_L{l}_M{i}.dot"
            mask_path.write_text(to_dot(mask.graph, name=f"mask_L{l}_M{i}"))
            pooled = [float(feat[:, col + i].sum()) for feat in trace.features]
            gi = int(np.argmax(pooled))
            colors = _response_colors(trace.features[gi][:, col + i])
            resp_path = out_dir / f"response_L{l}_M{i}.dot"
            resp_path.write_text(to_dot(graphs[gi],
                                        name=f"response_L{l}_M{i}",
                                        colors=colors))
            written.extend([mask_path, resp_path])
        col += layer.num_masks
    return written


@dataclass(frozen=True)
class ExpressivenessReport:
    """Outcome of the refinement-blind-spot demonstration."""

    refinement_confused: bool
    feature_gap: float
    passed: bool

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"[{verdict}] color refinement confused: "
                f"{self.refinement_confused}; pooled feature gap: "
                f"{self.feature_gap:.6f}")


def expressiveness_report() -> ExpressivenessReport:
    """Two triangles vs one six-cycle: color refinement cannot separate
    them, kernel responses against triangle/star masks can."""
    two_tri = disjoint_union(cycle_graph(3), cycle_graph(3))
    six = cycle_graph(6)
    confused = wl_indistinguishable(two_tri, six)
    kernel = KernelConfig(kind=WL_SUBTREE, wl_iterations=1, normalized=True)
    bank = [complete_graph(3), star_graph(2), star_graph(3)]
    pooled = []
    for g in (two_tri, six):
        egos = [ego_subgraph(g, v, 1).graph for v in range(g.num_nodes)]
        feats = kernel_matrix(kernel, egos, bank)
        pooled.append(feats.sum(axis=0))
    gap = float(np.abs(pooled[0] - pooled[1]).max())
    return ExpressivenessReport(refinement_confused=confused,
                                feature_gap=gap,
                                passed=confused and gap > 1e-6)


def mask_motif_similarity(params: ModelParams, motif: LabeledGraph,
                          rng: np.random.Generator, layer: int = 0,
                          n_random: int = 100,
                          kernel: KernelConfig = None):
    """Median kernel similarity of the learned masks to a target motif,
    next to the same median for random connected graphs of the motif's
    size. Used to check whether training actually recovered structure."""
    if kernel is None:
        kernel = KernelConfig(kind=WL_SUBTREE, wl_iterations=3,
                              normalized=True)
    mask_sims = [kernel_eval(kernel, m.graph, motif)
                 for m in params.masks[layer]]
    rand_sims = []
    for _ in range(n_random):
        g = random_connected_graph(motif.num_nodes, 1, rng)
        rand_sims.append(kernel_eval(kernel, g, motif))
    return float(np.median(mask_sims)), float(np.median(rand_sims))
