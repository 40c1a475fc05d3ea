use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merkle::MAX_ADDRESS_BITS;
use crate::pipeline::{build_topology, TopologyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Everything a run depends on. Equal configurations give identical runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub address_bits: u32,
    /// Transactions submitted per round.
    pub f: u64,
    /// Confirmation committees.
    pub n_c: usize,
    /// Leaf RPCs; a power of two.
    pub leaf_count: usize,
    /// Hashes an RPC can compute per round.
    pub j: u64,
    /// Balance changes a leaf RPC is dimensioned for per round.
    pub e: u64,
    /// Storage replicas per leaf portion.
    pub rho: usize,
    pub rounds: u64,
    pub initial_accounts: u64,
    pub initial_balance: u64,
    pub oracle_enabled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            address_bits: 16,
            f: 50,
            n_c: 4,
            leaf_count: 8,
            j: 7,
            e: 8,
            rho: 2,
            rounds: 200,
            initial_accounts: 256,
            initial_balance: 1_000_000,
            oracle_enabled: true,
        }
    }
}

impl SimConfig {
    /// Base of the scalability experiment: dimensioned right after a
    /// doubling (`2f/e = 4`, eight leaf RPCs) with room for the leaf hash work.
    pub fn scale_base() -> Self {
        SimConfig {
            f: 16,
            n_c: 2,
            leaf_count: 8,
            j: 511,
            e: 8,
            rounds: 100,
            ..SimConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.address_bits == 0 || self.address_bits > MAX_ADDRESS_BITS.min(32) {
            return bad(format!("address_bits {} outside 1..=32", self.address_bits));
        }
        if self.n_c == 0 {
            return bad("n_c must be at least 1".into());
        }
        if self.rho == 0 {
            return bad("rho must be at least 1".into());
        }
        if self.e == 0 {
            return bad("e must be at least 1".into());
        }
        let space = 1u64 << self.address_bits;
        if self.initial_accounts > space {
            return bad(format!("{} initial accounts exceed 2^{}", self.initial_accounts, self.address_bits));
        }
        if self.initial_accounts > 0 && self.initial_balance == 0 {
            return bad("initial_balance must be positive".into());
        }
        if self.initial_balance.checked_mul(self.initial_accounts).is_none() {
            return bad("total supply overflows".into());
        }
        if 2 * self.f > space / 2 {
            return bad(format!("f = {} needs more distinct addresses than 2^{} offers", self.f, self.address_bits));
        }
        build_topology(self.leaf_count, self.j, self.address_bits)?;
        Ok(())
    }
}
