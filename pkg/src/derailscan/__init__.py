"""Static detector for state-derailment defects in smart contracts.

Compiler-emitted ASTs are canonicalized across compiler versions, turned
into category-tagged dependency graphs, pruned and merged, embedded into
normalized feature datasets, and classified by a from-scratch three-layer
graph convolutional network. See the command line (``derailscan --help``)
for the end-to-end pipeline.
"""

from .errors import DerailscanError, InputError, InternalError
from .ast_ingest import (
    CanonicalAst,
    CanonicalAstNode,
    ContractProject,
    RawAstDocument,
    extract_documents,
    load_ast_file,
    parse_ast_document,
)
from .dependency_extract import (
    AttributedGraph,
    DependencyCategory,
    EdgeAttr,
    EdgeType,
    InteractionPoint,
    LabelSet,
    NodeAttr,
    build_graph,
    identify_cross_contract_nodes,
    tag_dependencies,
)
from .graph_opt import document_offsets, merge_subgraphs, optimize_graph
from .embed_normalize import (
    NormalizedDataset,
    Vocabulary,
    assemble_dataset,
    build_vocabulary,
    embed_nodes,
    init_embedding,
    load_dataset,
    normalize_features,
    serialize_dataset,
    subset_dataset,
)
from .gcn_engine import (
    ForwardResult,
    GcnConfig,
    GcnModel,
    TrainState,
    backward,
    forward,
    init_model,
    init_state,
    load_checkpoint,
    loss,
    normalized_adjacency,
    optimizer_step,
    save_checkpoint,
)
from .train_eval import (
    EvalMetrics,
    SplitSpec,
    evaluate,
    metrics_from_counts,
    predict_probabilities,
    split,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DerailscanError",
    "InputError",
    "InternalError",
    "CanonicalAst",
    "CanonicalAstNode",
    "ContractProject",
    "RawAstDocument",
    "extract_documents",
    "load_ast_file",
    "parse_ast_document",
    "AttributedGraph",
    "DependencyCategory",
    "EdgeAttr",
    "EdgeType",
    "InteractionPoint",
    "LabelSet",
    "NodeAttr",
    "build_graph",
    "identify_cross_contract_nodes",
    "tag_dependencies",
    "document_offsets",
    "merge_subgraphs",
    "optimize_graph",
    "NormalizedDataset",
    "Vocabulary",
    "assemble_dataset",
    "build_vocabulary",
    "embed_nodes",
    "init_embedding",
    "load_dataset",
    "normalize_features",
    "serialize_dataset",
    "subset_dataset",
    "ForwardResult",
    "GcnConfig",
    "GcnModel",
    "TrainState",
    "backward",
    "forward",
    "init_model",
    "init_state",
    "load_checkpoint",
    "loss",
    "normalized_adjacency",
    "optimizer_step",
    "save_checkpoint",
    "EvalMetrics",
    "SplitSpec",
    "evaluate",
    "metrics_from_counts",
    "predict_probabilities",
    "split",
    "train",
    "__version__",
]
