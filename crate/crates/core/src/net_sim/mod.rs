//! Topology generation, the RSSI channel, the acquisition window and the
//! forwarding-tree cost counters.

mod acquisition;
mod channel;
mod config;
mod routing;
mod topology;

pub use acquisition::{acquire_features, FeatureTensor};
pub use channel::{interference_sigma, mean_rssi, sample_rssi};
pub use config::SimConfig;
pub use routing::{route_and_count, ComplexityReport, Uplink};
pub use topology::{compute_adjacency, generate_topology, AdjacencyMatrix, NetworkTopology};
