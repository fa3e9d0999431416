"""Hash-code learning by differentiable sorting of code similarities,
with a sorted-list contrastive objective, a manually-differentiated
training loop, and brute-force-verified retrieval metrics."""

from .backend import NUMBA_ENABLED
from .errors import (
    FormatError,
    NshashError,
    NumericError,
    OracleError,
    ParameterError,
    ShapeError,
)
from .hashcore import (
    PackedCodes,
    hamming_matrix,
    hamming_packed,
    pack_codes,
    quantization_loss,
    read_packed_codes,
    sign_ste,
    sign_ste_backward,
    similarity_backward,
    similarity_matrix,
    unpack_codes,
    write_packed_codes,
)
from .metrics import (
    MetricReport,
    RetrievalRun,
    average_precision_at_k,
    compute_report,
    format_report,
    map_at_k,
    pr_curve,
    precision_at_hamming_radius,
    precision_at_k,
    precision_at_k_curve,
    rank_by_hamming,
    write_pr_csv,
)
from .model import (
    ForwardBackwardResult,
    GradientSet,
    ModelParams,
    PermutationStack,
    TwinEncoding,
    VariantConfig,
    VARIANTS,
    build_permutations,
    encode,
    forward_backward,
    init_params,
    load_checkpoint,
    multilabel_nce,
    save_checkpoint,
    soft_gather,
    soft_gather_backward,
    sorted_nce,
    sorted_nce_op_count,
    two_view_infonce,
)
from .numerics import (
    Rng,
    central_diff_grad,
    gaussian_batch,
    l2_normalize_rows,
    matmul,
    pairwise_cosine,
    relative_error,
    softmax_rows,
)
from .pipeline import (
    AdamState,
    AugmentConfig,
    Dataset,
    RunConfig,
    StepLoss,
    TrainResult,
    adam_step,
    augment,
    init_adam,
    load_features,
    load_labels,
    parse_config_text,
    save_features,
    save_labels,
    serialize_config,
    split_query_database,
    synth_clusters,
    train,
    write_history_csv,
)
from .sortcore import (
    SoftSortResult,
    apply_perm_hard,
    hard_argsort_desc,
    softsort_backward,
    softsort_forward,
)

__version__ = "0.1.0"
