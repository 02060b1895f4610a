"""Self-evolving deep clustering for unlabeled data streams.

A stacked tied-weight autoencoder whose width, depth, and per-layer cluster
sets grow and shrink online, with drift detection governing depth, allegiance
scores turning clusters into a classifier, and a reconstruction-stability
regularizer protecting earlier tasks. Ships with synthetic stream generators
and a prequential experiment harness.
"""

from .autoencoder import (AeLayer, EvolvingNetwork, FeatureExtractor,
                          LayerGrads, SgdConfig, extractor_gradients,
                          layer_gradients, layer_gradients_batch, sgd_step)
from .clustering import (Cluster, LayerClusters, add_cluster, allegiance,
                         check_cluster_grow, compute_class_allegiance,
                         layer_score, predict, predict_batch, reassign_empty,
                         update_centroid, winning_cluster)
from .continual import (TaskMemory, lambda_for, snapshot_task, ucl_regularizer,
                        ucl_regularizer_batch)
from .harness import (Experiment, ExperimentConfig, MetricsReport,
                      backward_transfer, forward_transfer, run_from_config,
                      run_task_stream, run_ucl, run_ul)
from .mathops import (EwmaMoments, RunningStat, bce, l2_distance, mse, relu,
                      sigmoid, softmax)
from .streams import (StreamBatch, TaskData, TaskStream, batch_iter,
                      gen_gaussian_classes, gen_hyperplane, gen_sea, load_csv,
                      load_idx, make_permutation_tasks, make_rotation_tasks,
                      make_single_task, make_split_tasks, save_csv)
from .structural import (DriftDetector, NsEstimate, add_layer, check_grow,
                         check_prune, detect_drift, grow_network_node,
                         grow_node, hoeffding_epsilon, ns_estimate,
                         prune_network_node, prune_node)

__version__ = "0.1.0"
