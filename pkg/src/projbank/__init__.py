"""Binary projection banks: compress high-dimensional vectors into medium-length binary codes.

Dimensions are grouped into subspaces by K-means, one max-margin projection
(linear or kernel) is learned per subspace from k-NN pseudo-labels, and the
signs of the projections form the code.
"""
from ._kernels import BACKEND
from .agd import TrainerConfig
from .bpb import LinearBank, train_bank, train_subspace
from .cluster import SubspacePartition, cluster_dimensions, random_split, within_cluster_sse
from .encode import (
    BinaryCodeSet,
    encode,
    encode_kernel,
    encode_linear,
    encode_lsh_baseline,
    encode_sign_baseline,
)
from .evaluate import hamming_search, pairwise_error_diagnostic, precision_at_k, precision_recall_curve
from .io import DatasetSplit, FeatureMatrix, generate_synthetic, load_matrix, save_matrix
from .kbpb import KernelBank, KernelSpec, train_kernel_bank
from .labels import PairLabelSet, build_labels, sample_pairs

__version__ = "0.1.0"
