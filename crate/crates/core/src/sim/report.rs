use std::io::Write;

use serde::Serialize;

use crate::confirmation::Discard;
use crate::digest::Digest;
use crate::ledger::{AcceptedSeq, Block, Height, Round};

/// Work done by one committee in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CommitteeMetrics {
    pub id: String,
    pub tx: u64,
    pub accepted: u64,
    pub discarded: u64,
    pub conservative_rejections: u64,
    pub proof_disagreements: u64,
    pub changes: u64,
    pub hashes: u64,
    pub msgs_in: u64,
    pub msgs_out: u64,
    pub failed: bool,
}

impl CommitteeMetrics {
    pub fn named(id: String) -> Self {
        CommitteeMetrics {
            id,
            ..Default::default()
        }
    }

    pub fn msgs(&self) -> u64 {
        self.msgs_in + self.msgs_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OracleVerdict {
    #[serde(rename = "match")]
    Match,
    #[serde(rename = "n/a")]
    NotChecked,
}

/// One line of the report stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundReport {
    pub round: Round,
    pub block_height: Height,
    pub state_root: Digest,
    pub per_committee: Vec<CommitteeMetrics>,
    pub oracle: OracleVerdict,
    pub submitted: u64,
    pub accepted: u64,
    pub discarded: u64,
    pub included: u64,
    pub pending_submissions: u64,
    pub proofs_served: u64,
    pub audit_checks: u64,
    pub workload_truncated: bool,
    #[serde(skip)]
    pub block: Block,
    #[serde(skip)]
    pub discards: Vec<Discard>,
    /// This round's confirmed sequences, committee order.
    #[serde(skip)]
    pub accepted_seqs: Vec<AcceptedSeq>,
}

/// Totals over a run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub rounds: u64,
    pub final_height: Height,
    pub final_root: Digest,
    pub submitted: u64,
    pub accepted: u64,
    pub syntax_discards: u64,
    pub duplicate_discards: u64,
    pub balance_discards: u64,
    pub conservative_rejections: u64,
    pub proof_disagreements: u64,
    pub oracle_checks: u64,
    pub oracle_matches: u64,
    pub supply_constant: bool,
    pub proofs_served: u64,
    pub proofs_verified: u64,
    pub audit_checks: u64,
    pub audit_failures: u64,
    pub latency_checked: u64,
    pub latency_violations: u64,
    pub unincluded: u64,
    pub failed_leaf_rounds: u64,
    pub peak_cc_tx: u64,
    pub peak_rpc_hashes: u64,
    pub peak_leaf_hashes: u64,
    pub peak_inner_hashes: u64,
    pub peak_msgs: u64,
    pub block_bytes: u64,
    pub workload_truncated: bool,
    pub divergence: Option<String>,
}

impl Summary {
    /// Non-negativity (the run would have aborted otherwise), conservation,
    /// oracle agreement, proof service and inclusion latency all held.
    pub fn theorems_hold(&self) -> bool {
        self.divergence.is_none()
            && self.supply_constant
            && self.oracle_matches == self.oracle_checks
            && self.proofs_verified == self.proofs_served
            && self.audit_failures == 0
            && self.latency_violations == 0
            && self.unincluded == 0
            && self.failed_leaf_rounds == 0
    }
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a Summary,
}

/// Writes JSON lines, one per round, then the summary.
pub struct ReportWriter<W: Write> {
    out: W,
}

impl<W: Write> ReportWriter<W> {
    pub fn new(out: W) -> Self {
        ReportWriter { out }
    }

    pub fn round(&mut self, report: &RoundReport) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, report)?;
        self.out.write_all(b"\n")
    }

    pub fn summary(&mut self, summary: &Summary) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, &SummaryLine { summary })?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
