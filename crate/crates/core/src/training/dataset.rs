use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PreparedSample;
use crate::net_sim::{
    acquire_features, compute_adjacency, generate_topology, route_and_count, AdjacencyMatrix, FeatureTensor,
    NetworkTopology, SimConfig,
};
use crate::preprocess::preprocess;
use crate::seeding::{derive_seed, rng_for};

/// One simulated acquisition window on one topology. Features are stored raw
/// (dBm and meters) and normalized when the sample is prepared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSample {
    pub topology_id: usize,
    pub noise_draw_id: usize,
    pub positions: Vec<[f64; 2]>,
    pub anchor_flags: Vec<bool>,
    /// Undirected edges with `i < j`.
    pub edges: Vec<[usize; 2]>,
    /// Row-major `[N, N + 2, T]`.
    pub features: Vec<f64>,
    pub missing: Vec<bool>,
    /// The simulation settings, with `seed` set to the topology seed.
    pub config: SimConfig,
    /// Nodes with no multi-hop route to the central unit.
    #[serde(default)]
    pub unreachable: Vec<usize>,
}

impl GraphSample {
    pub fn nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    pub fn feature_tensor(&self) -> Result<FeatureTensor> {
        FeatureTensor::from_parts(self.nodes(), self.window(), self.features.clone(), self.missing.clone())
    }

    pub fn adjacency(&self) -> Result<AdjacencyMatrix> {
        AdjacencyMatrix::from_edges(self.nodes(), &self.edges)
    }

    pub fn topology(&self) -> Result<NetworkTopology> {
        NetworkTopology::from_parts(self.config.field_side, self.positions.clone(), self.anchor_flags.clone())
    }

    /// Checks shapes, the anchor count and that the edge list is exactly the
    /// radio-range graph of the stored positions.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes();
        let bad = |msg: String| {
            Err(Error::InvalidConfig(format!("sample {}/{}: {msg}", self.topology_id, self.noise_draw_id)))
        };
        if n != self.config.node_count || self.anchor_flags.len() != n {
            return bad(format!("{n} positions for {} configured nodes", self.config.node_count));
        }
        let anchors = self.anchor_flags.iter().filter(|&&a| a).count();
        if anchors != self.config.anchor_count() {
            return bad(format!("{anchors} anchors, expected {}", self.config.anchor_count()));
        }
        self.feature_tensor()?;
        let expected = compute_adjacency(&self.topology()?, self.config.radio_range);
        if self.adjacency()? != expected {
            return bad("edge list disagrees with positions and radio range".into());
        }
        Ok(())
    }

    /// Imputes, normalizes and slices the features for the network.
    pub fn prepare(&self) -> Result<PreparedSample> {
        let (processed, _) = preprocess(&self.feature_tensor()?);
        PreparedSample::new(&processed, &self.adjacency()?, &self.positions, &self.anchor_flags)
    }
}

/// `n_topologies` placements, each observed under `draws` independent
/// channel realizations. Topology `k` uses seed `derive_seed(seed, [k])`,
/// draw `d` of it the stream `rng_for(seed, [k, d])`.
pub fn build_dataset(cfg: &SimConfig, n_topologies: usize, draws: usize, seed: u64) -> Result<Vec<GraphSample>> {
    if n_topologies == 0 || draws == 0 {
        return Err(Error::InvalidConfig("need at least one topology and one draw".into()));
    }
    cfg.validate()?;
    let mut out = Vec::with_capacity(n_topologies * draws);
    for k in 0..n_topologies {
        let topo_cfg = SimConfig { seed: derive_seed(seed, &[k as u64]), ..cfg.clone() };
        let topo = generate_topology(&topo_cfg)?;
        let adjacency = compute_adjacency(&topo, topo_cfg.radio_range);
        let report = route_and_count(&topo, &adjacency, &topo_cfg);
        let edges = adjacency.edges();
        for d in 0..draws {
            let mut rng = rng_for(seed, &[k as u64, d as u64]);
            let features = acquire_features(&topo, &adjacency, &topo_cfg, &mut rng)?;
            out.push(GraphSample {
                topology_id: k,
                noise_draw_id: d,
                positions: topo.positions.clone(),
                anchor_flags: topo.anchor_flags.clone(),
                edges: edges.clone(),
                features: features.values().to_vec(),
                missing: features.missing().to_vec(),
                config: topo_cfg.clone(),
                unreachable: report.unreachable.clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_ndjson(path: impl AsRef<Path>, samples: &[GraphSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates every record.
pub fn read_ndjson(path: impl AsRef<Path>) -> Result<Vec<GraphSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: GraphSample = serde_json::from_str(&line)?;
        s.validate()?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("dataset file"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig { node_count: 12, window: 3, radio_range: 35.0, ..SimConfig::default() }
    }

    #[test]
    fn record_count_and_shared_topology() {
        let ds = build_dataset(&small_cfg(), 4, 3, 9).unwrap();
        assert_eq!(ds.len(), 12);
        for s in &ds {
            s.validate().unwrap();
            let first = &ds[s.topology_id * 3];
            assert_eq!(s.positions, first.positions);
            assert_eq!(s.edges, first.edges);
        }
        assert_ne!(ds[0].features, ds[1].features);
        assert_ne!(ds[0].positions, ds[3].positions);
    }

    #[test]
    fn ndjson_round_trip_is_exact() {
        let ds = build_dataset(&small_cfg(), 2, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        write_ndjson(&path, &ds).unwrap();
        assert_eq!(read_ndjson(&path).unwrap(), ds);
    }

    #[test]
    fn tampered_edges_are_rejected() {
        let mut s = build_dataset(&small_cfg(), 1, 1, 2).unwrap().remove(0);
        s.edges.pop();
        assert!(s.validate().is_err());
    }
}
