//! Committee dimensioning and the scalability experiment.
//!
//! `m` is the number of addresses whose balance changes per round (two per
//! transaction), `e` the number of changes a leaf RPC can absorb per round
//! and `j` the number of hashes any RPC can compute per round.

use serde::Serialize;
use thiserror::Error;

use crate::pipeline::{build_topology, TopologyError};
use crate::sim::{SimConfig, SimError, Simulation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProvisioningError {
    #[error("{name} must be at least 1")]
    NonPositive { name: &'static str },
    #[error("m/e = {m}/{e} is not a power of two")]
    NotAfterDoubling { m: u64, e: u64 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Levels of the largest complete binary tree with at most `j` internal nodes.
pub fn k_hat(j: u64) -> u32 {
    assert!(j >= 1, "j must be positive");
    (j + 1).ilog2()
}

/// Internal nodes of that tree, `2^k̂ − 1`.
pub fn j_hat(j: u64) -> u64 {
    (1u64 << k_hat(j)) - 1
}

/// Smallest power of two at least `m / e`, as an exponent.
fn ceil_log2_ratio(m: u64, e: u64) -> u32 {
    let leaves = m.div_ceil(e);
    leaves.next_power_of_two().ilog2()
}

/// Fewest leaf and inner RPCs that keep every RPC within capacity.
pub fn min_committees(m: u64, e: u64, j: u64) -> Result<(u64, u64), ProvisioningError> {
    for (name, v) in [("m", m), ("e", e), ("j", j)] {
        if v == 0 {
            return Err(ProvisioningError::NonPositive { name });
        }
    }
    let leaves = 1u64 << ceil_log2_ratio(m, e);
    let inner = (leaves - 1).div_ceil(j_hat(j));
    Ok((leaves, inner))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provisioning {
    pub m: u64,
    pub e: u64,
    pub j: u64,
    pub k_hat: u32,
    pub j_hat: u64,
    pub leaf_rpcs: u64,
    pub inner_rpcs: u64,
    pub n_c: u64,
    pub h: u32,
    pub q: u32,
    pub total_committees: u64,
}

impl Provisioning {
    /// Minimal dimensioning for `f` transactions per round.
    pub fn minimal(f: u64, e: u64, j: u64, n_c: u64, address_bits: u32) -> Result<Self, ProvisioningError> {
        if f == 0 {
            return Err(ProvisioningError::NonPositive { name: "f" });
        }
        if n_c == 0 {
            return Err(ProvisioningError::NonPositive { name: "nc" });
        }
        let m = 2 * f;
        let (leaf_rpcs, inner_rpcs) = min_committees(m, e, j)?;
        Self::assemble(m, e, j, n_c, leaf_rpcs, inner_rpcs, address_bits)
    }

    fn assemble(
        m: u64,
        e: u64,
        j: u64,
        n_c: u64,
        leaf_rpcs: u64,
        inner_rpcs: u64,
        address_bits: u32,
    ) -> Result<Self, ProvisioningError> {
        let topo = build_topology(leaf_rpcs as usize, j, address_bits)?;
        Ok(Provisioning {
            m,
            e,
            j,
            k_hat: k_hat(j),
            j_hat: j_hat(j),
            leaf_rpcs,
            inner_rpcs,
            n_c,
            h: topo.h,
            q: topo.q,
            total_committees: n_c + leaf_rpcs + inner_rpcs,
        })
    }
}

/// Leaf and inner RPC counts right after the load has doubled: twice the
/// leaves, and one inner RPC per `ĵ` of them, rounded up.
pub fn provision_after_doubling(m: u64, e: u64, j: u64) -> Result<(u64, u64), ProvisioningError> {
    for (name, v) in [("m", m), ("e", e), ("j", j)] {
        if v == 0 {
            return Err(ProvisioningError::NonPositive { name });
        }
    }
    if !m.is_multiple_of(e) || !(m / e).is_power_of_two() {
        return Err(ProvisioningError::NotAfterDoubling { m, e });
    }
    let leaves = 2 * m / e;
    Ok((leaves, leaves.div_ceil(j_hat(j))))
}

/// One row of the scalability table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScaleRun {
    pub alpha: u64,
    pub n_c: u64,
    pub leaf_rpcs: u64,
    pub inner_rpcs: u64,
    pub q: u32,
    pub peak_cc_tx: u64,
    pub peak_rpc_hashes: u64,
    pub peak_msgs: u64,
    #[serde(skip)]
    pub committees_total: u64,
    #[serde(skip)]
    pub block_bytes: usize,
    #[serde(skip)]
    pub oracle_matched: bool,
    #[serde(skip)]
    pub cc_capacity: u64,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    WellProvisioned,
    OverCapacity,
    Diverged,
}

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("scale factor must be at least 1")]
    BadAlpha,
    #[error("base configuration is not dimensioned right after a doubling: {0}")]
    BaseNotDoubled(String),
    #[error(transparent)]
    Provisioning(#[from] ProvisioningError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Configuration for scale factor `alpha`: load, confirmation committees,
/// accounts and address space grow by `alpha`, leaf RPCs are re-derived
/// for the new load. Growing the address space with the leaf count keeps
/// every leaf portion as deep as at the base.
pub fn scaled_config(base: &SimConfig, alpha: u64) -> Result<SimConfig, ScaleError> {
    if alpha == 0 {
        return Err(ScaleError::BadAlpha);
    }
    let m = 2 * base.f * alpha;
    let leaves = (2 * m).div_ceil(base.e).next_power_of_two();
    let mut cfg = base.clone();
    cfg.address_bits = base.address_bits + alpha.next_power_of_two().ilog2();
    cfg.f = base.f * alpha;
    cfg.n_c = base.n_c * alpha as usize;
    cfg.initial_accounts = base.initial_accounts * alpha;
    cfg.leaf_count = leaves as usize;
    cfg.oracle_enabled = true;
    Ok(cfg)
}

/// Runs the simulator at every scale factor and judges each run against
/// the capacities of the base configuration.
pub fn scale_experiment(base: &SimConfig, alphas: &[u64]) -> Result<Vec<ScaleRun>, ScaleError> {
    let m = 2 * base.f;
    let (leaves, _) = provision_after_doubling(m, base.e, base.j)
        .map_err(|e| ScaleError::BaseNotDoubled(e.to_string()))?;
    if leaves != base.leaf_count as u64 {
        return Err(ScaleError::BaseNotDoubled(format!(
            "leaf_count {} but 2m/e = {leaves}",
            base.leaf_count
        )));
    }
    let cc_capacity = base.f.div_ceil(base.n_c as u64);
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = scaled_config(base, alpha)?;
        let mut sim = Simulation::new(cfg.clone())?;
        let oracle_matched = match sim.run_to_end(|_| Ok(())) {
            Ok(()) => true,
            Err(SimError::Divergence { .. }) | Err(SimError::Storage(_)) => false,
            Err(e) => return Err(e.into()),
        };
        let summary = sim.summary();
        let topo = sim.topology();
        let block_bytes = sim.block_bytes();
        let within = summary.peak_rpc_hashes <= cfg.j && summary.peak_cc_tx <= cc_capacity;
        let verdict = if !oracle_matched || !summary.theorems_hold() {
            Verdict::Diverged
        } else if within && !summary.workload_truncated {
            Verdict::WellProvisioned
        } else {
            Verdict::OverCapacity
        };
        rows.push(ScaleRun {
            alpha,
            n_c: cfg.n_c as u64,
            leaf_rpcs: topo.leaf_count as u64,
            inner_rpcs: topo.inner_count() as u64,
            q: topo.q,
            peak_cc_tx: summary.peak_cc_tx,
            peak_rpc_hashes: summary.peak_rpc_hashes,
            peak_msgs: summary.peak_msgs,
            committees_total: cfg.n_c as u64 + topo.leaf_count as u64 + topo.inner_count() as u64,
            block_bytes,
            oracle_matched,
            cc_capacity,
            verdict,
        });
    }
    Ok(rows)
}

/// Writes the table as CSV.
pub fn write_scale_csv<W: std::io::Write>(rows: &[ScaleRun], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
