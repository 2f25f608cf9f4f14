//! Bundled benchmark workloads. The same files ship under `data/` for the
//! command-line tool.

use crate::model::ClusterSpec;
use crate::sim::GenParams;

/// A cluster plus the generator parameters of a workload to run on it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub cluster: ClusterSpec,
    pub params: GenParams,
}

fn load(name: &'static str, cluster: &str, params: &str) -> Scenario {
    Scenario {
        name,
        cluster: toml::from_str(cluster).unwrap_or_else(|e| panic!("bundled cluster for {name}: {e}")),
        params: toml::from_str(params).unwrap_or_else(|e| panic!("bundled generator for {name}: {e}")),
    }
}

/// Coding rollouts on four 64-core hosts, small batch.
pub fn coding_low() -> Scenario {
    load("coding-low", include_str!("../data/clusters/coding.toml"), include_str!("../data/gen/coding_low.toml"))
}

/// Coding rollouts on the same hosts, five times the batch.
pub fn coding_high() -> Scenario {
    load("coding-high", include_str!("../data/clusters/coding.toml"), include_str!("../data/gen/coding_high.toml"))
}

/// One 32-core host driven past saturation.
pub fn saturation() -> Scenario {
    load("saturation", include_str!("../data/clusters/saturation.toml"), include_str!("../data/gen/saturation.toml"))
}

/// Ten GPU teacher services sharing four nodes through the service cache.
pub fn mopd_shared() -> Scenario {
    load("mopd-shared", include_str!("../data/clusters/mopd_shared.toml"), include_str!("../data/gen/mopd.toml"))
}

/// The same workload on ten nodes, eight GPUs per service.
pub fn mopd_dedicated() -> Scenario {
    load("mopd-dedicated", include_str!("../data/clusters/mopd_dedicated.toml"), include_str!("../data/gen/mopd.toml"))
}

/// Search and judge APIs behind a concurrency cap and a per-minute quota.
pub fn api() -> Scenario {
    load("api", include_str!("../data/clusters/api.toml"), include_str!("../data/gen/api.toml"))
}

pub fn all() -> Vec<Scenario> {
    vec![coding_low(), coding_high(), saturation(), mopd_shared(), mopd_dedicated(), api()]
}
