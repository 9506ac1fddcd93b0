//! Graph treatments: the data structure, Watts–Strogatz generation, the
//! statistics used by the small-world outcome, and a message-passing encoder.

mod encoder;
mod graph;
mod stats;
mod watts_strogatz;

pub use encoder::{encode_graph, EncoderConfig, GraphBatch, GraphEncoder};
pub use graph::{Graph, GraphJson};
pub use stats::{
    average_shortest_path, bfs_distances, graph_statistics, local_vertex_connectivity,
    vertex_connectivity, GraphStats,
};
pub use watts_strogatz::{generate_watts_strogatz, watts_strogatz_once, WsParams, MAX_ATTEMPTS};
