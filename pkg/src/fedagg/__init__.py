"""Deterministic simulator of agglomerative federated learning over
end-edge-cloud trees: tree topology with migration rules, bridge-sample
online distillation between parent-child nodes, a recursive agglomeration
schedule, and a hierarchical parameter-averaging baseline.
"""
from .autoencoder import (
    AutoencoderParams,
    decode,
    encode,
    init_autoencoder,
    make_autoencoder_specs,
    pretrain,
    reconstruction_gap,
)
from .data import (
    ClientDataset,
    Dataset,
    LabeledSample,
    PartitionConfig,
    dirichlet_partition,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_train_test,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    compare_runs,
    config_hash,
    load_config,
    parse_config,
    run_experiment,
)
from .nn_core import (
    GradientSet,
    ModelParams,
    ModelSpec,
    backward,
    cross_entropy,
    finite_difference_check,
    forward,
    init_params,
    kl_divergence,
    sgd_step,
    softmax_temperature,
)
from .orchestrator import (
    BaselineConfig,
    BottleneckError,
    NodeState,
    RunResult,
    TrainingAudit,
    build_states,
    evaluate,
    fedagg_train_epoch,
    init_phase,
    load_checkpoint,
    run_fedagg,
    run_hierfavg,
    save_checkpoint,
)
from .protocol import (
    DistillConfig,
    EmbeddingRecord,
    EmbeddingStore,
    LogitsPacket,
    PeerModel,
    bsbodp,
    bsbodp_directional,
    extract_logits,
    leaf_loss,
    non_leaf_loss,
)
from .topology import (
    EecNet,
    MigrationError,
    NodeDescriptor,
    ProtocolCompat,
    TierLayout,
    TopologyError,
    TreeLayout,
    build_tree,
    can_migrate,
    equivalence_protocol,
    leaves_of,
    migrate,
    parent,
    partial_order_protocol,
)

__version__ = "0.1.0"
