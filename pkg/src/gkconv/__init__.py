"""Graph kernel convolution networks with learnable structural masks.

Node features are kernel similarities between small learnable mask
graphs and each node's r-hop neighborhood; masks are trained by
randomized discrete descent, features are quantized into labels between
layers, and a small MLP over sum-pooled features does the classifying.
"""

from .graphs import (EgoSubgraph, GraphError, LabelDictionary, LabeledGraph,
                     connected_components, ego_subgraph,
                     graph_equal_canonical, max_connected_component, to_dot)
from .kernels import (GRAPHLET3, WL_SUBTREE, KernelConfig, WlColorTable,
                      graphlet3_kernel, kernel_eval, kernel_matrix,
                      wl_indistinguishable, wl_refine, wl_subtree_kernel)
from .quantizer import Codebook, CodebookStateError, assign, fit_update
from .model import (ForwardEngine, LayerConfig, ModelParams, NetworkConfig,
                    StructuralMask, gkc_forward, network_forward)
from .drd import (EditOperation, EditProbabilities, apply_edit, drd_step,
                  estimate_subgradient, init_mask_bank, sample_edit)
from .head import (LossReport, MlpParams, backward, batch_loss,
                   cross_entropy, init_mlp, jsd_grad, jsd_loss, mlp_forward,
                   pool_sum)
from .data import (GraphDataset, MotifSpec, Split, fetch_benchmark,
                   generate_motif_dataset, generate_triangle_cycle_dataset,
                   load_benchmark, make_motif, save_benchmark,
                   split_holdout, split_kfold)
from .experiment import (CvResult, ExpressivenessReport, GridResult,
                         RunReport, TrainConfig, TrainingDiverged,
                         build_network, cross_validate, expressiveness_report,
                         export_mask_dots, grid_search, init_params,
                         mask_significance, train)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
