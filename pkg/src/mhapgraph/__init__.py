"""Interpretable multivariate time-series classification via activation-period
evolution graphs: extract the input periods that highly activate a 1D-CNN,
cluster them per layer with K-shape, build and merge temporal evolution
graphs, embed the merged graph with weighted random walks + skip-gram, turn
samples into segment-wise embedding sums, and classify with boosted trees.
"""

from .config import ClusterConfig, PipelineConfig, stage_seed
from .dataset import (
    ChannelMask,
    FoldPlan,
    MTSDataset,
    MTSSample,
    build_input_set,
    load_dataset,
    make_folds,
    save_dataset,
    znormalize,
)
from .embedding import EmbeddingConfig, NodeEmbeddings, embed_graph, random_walks, train_skipgram
from .evograph import LayerGraph, MergedGraph, build_layer_graph, graph_stats, merge_graphs, to_dot
from .gbdt import GBDTConfig, GBDTModel
from .kshape import ClusterModel, assign, kshape_cluster, sbd, shape_extraction
from .mhap import MHAP, ActivationThresholds, compute_thresholds, extract_han, extract_mhaps
from .nn import (
    ActivationTensor,
    CNNConfig,
    TrainedCNN,
    forward_with_activations,
    receptive_field,
    train_cnn,
)
from .pipeline import RunArtifacts, explain_sample, run_pipeline, sweep
from .representation import SampleRepresentation, represent_dataset, represent_sample

__version__ = "0.1.0"
