//! API call graphs: key-API selection, community detection, centralities,
//! neighbor ranking and DFS linearization.

mod centrality;
mod community;
mod graph;
mod keyapi;
mod reduce;

pub use centrality::{compute_centralities, CentralityTable, DEFAULT_DAMPING};
pub use community::{detect_communities, modularity, CommunityPartition, DEFAULT_RESOLUTION};
pub use graph::CallGraph;
pub use keyapi::{build_presence, select_key_apis, KeyApiConfig, KeyApiSet};
pub use reduce::{
    dfs_linearize, extract_key_subgraph, graph_to_sequence, rank_and_reduce, rank_scores, ReduceConfig,
    ReducedCallGraph, DEFAULT_MAX_LEN, DEFAULT_TOP_N, DEFAULT_WEIGHTS,
};
