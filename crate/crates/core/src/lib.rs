//! Graph structure optimization guided by structural entropy.
//!
//! The crate fuses attribute similarity into a graph, finds a low-entropy
//! hierarchical community structure (an encoding tree) and resamples the
//! graph's edges from that hierarchy.
//!
//! ```
//! use setree_core::{build_optimal_tree, fixtures, one_dim_entropy};
//!
//! let g = fixtures::barbell6();
//! let (tree, report) = build_optimal_tree(&g, 2).unwrap();
//! assert_eq!(tree.top_level_partition(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
//! assert!(report.h_tree < one_dim_entropy(&g).unwrap());
//! ```

pub mod error;
pub mod fixtures;
pub mod generators;
pub mod graph;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod similarity;
pub mod tree;

pub use error::{Error, Result};
pub use generators::{block_features, generate_sbm, perturb, Sbm};
pub use graph::{
    load_attributes, load_edge_list, load_labeled_edge_list, parse_attributes, parse_edge_list,
    write_attributes, AttributeMatrix, Edge, Graph,
};
pub use pipeline::{embed, run_pipeline, PipelineConfig, PipelineOutput, Provider, TraceRecord};
pub use reconstruct::{
    annotate_probabilities, reconstruct, sample_edges, sample_edges_with, ProbabilityAnnotatedTree,
    SampledEdgeSet, ThetaSchedule,
};
pub use rng::StableRng;
pub use similarity::{
    fuse_and_reweight, knn_edges, pcc_similarity, select_k, FusionResult, KSelect, SimilarityMatrix,
};
pub use tree::{
    build_optimal_tree, build_optimal_tree_with, load_tree_tsv, one_dim_entropy, tree_entropy,
    BuildOptions, EncodingTree, EntropyReport, NodeId,
};
