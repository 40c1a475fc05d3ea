//! Confirmation committees.
//!
//! A committee receives the pending transfers whose source routes to it,
//! drops the malformed ones, orders the rest by id and executes them in
//! that order, discarding any transfer that would overdraw its source.
//! Balances come from the attached proofs, advanced to the present with the
//! committee's own recent outputs; credits confirmed by other committees in
//! that window are invisible to it, which only ever makes it stricter.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::digest::Digest;
use crate::ledger::{check_syntax, AcceptedSeq, AccountId, BlockHistory, Height, Round, SyntaxViolation, Transaction};

/// Why a transaction was dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Syntax(SyntaxViolation),
    WrongCommittee,
    Duplicate,
    InsufficientBalance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Discard {
    pub id: Digest,
    pub src: AccountId,
    pub amount: u64,
    pub reason: DiscardReason,
    /// Estimated balance of the source when an overdraft was detected.
    pub estimated_balance: Option<u64>,
    /// Height of the block the source proof was made against.
    pub proof_base: Height,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CcRoundMetrics {
    pub received: u64,
    pub accepted: u64,
    pub syntax_discards: u64,
    pub duplicate_discards: u64,
    pub balance_discards: u64,
    /// Accounts whose proofs in this round implied different current balances.
    pub proof_disagreements: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfirmOutcome {
    pub accepted: AcceptedSeq,
    pub discards: Vec<Discard>,
    pub metrics: CcRoundMetrics,
}

/// Ascending by transaction id.
pub fn canonical_order(mut txs: Vec<Transaction>) -> Vec<Transaction> {
    txs.sort_by_key(|t| t.id);
    txs
}

/// Advances a proof balance through `window`, oldest first: debits where
/// `account` is the source, credits where it is the destination.
pub fn time_update_balance(account: AccountId, proof_balance: u64, window: &[AcceptedSeq]) -> u64 {
    replay(account, proof_balance, window)
}

fn replay<'a>(account: AccountId, proof_balance: u64, window: impl IntoIterator<Item = &'a AcceptedSeq>) -> u64 {
    let mut bal = proof_balance;
    for seq in window {
        for tx in &seq.txs {
            if tx.src == account {
                // cannot underflow for honest proofs; clamp rather than wrap
                bal = bal.saturating_sub(tx.amount);
            }
            if tx.dst == account {
                bal = bal.saturating_add(tx.amount);
            }
        }
    }
    bal
}

/// One confirmation committee and its last `q` outputs.
#[derive(Clone, Debug)]
pub struct ConfirmationCommittee {
    index: usize,
    committees: usize,
    depth: usize,
    window: VecDeque<AcceptedSeq>,
}

impl ConfirmationCommittee {
    pub fn new(index: usize, committees: usize, depth: usize) -> Self {
        assert!(index < committees && depth >= 1);
        ConfirmationCommittee {
            index,
            committees,
            depth,
            window: VecDeque::with_capacity(depth),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Own outputs of the last `q` rounds, oldest first.
    pub fn window(&self) -> &VecDeque<AcceptedSeq> {
        &self.window
    }

    /// Window entries that postdate the state a proof based on `base` shows.
    ///
    /// Block `b` commits to the state after round `b − q + 1`, so only
    /// outputs of later rounds still need to be replayed.
    pub fn window_after(&self, base: Height) -> Vec<&AcceptedSeq> {
        let covered = base as i64 - self.depth as i64 + 1;
        self.window.iter().filter(|s| s.round as i64 > covered).collect()
    }

    fn updated_balance(&self, account: AccountId, proof_balance: u64, base: Height) -> u64 {
        replay(account, proof_balance, self.window_after(base))
    }

    /// Runs one round on the transfers routed here and records the result.
    pub fn confirm_round(&mut self, incoming: Vec<Transaction>, round: Round, history: &BlockHistory) -> ConfirmOutcome {
        let mut metrics = CcRoundMetrics {
            received: incoming.len() as u64,
            ..Default::default()
        };
        let mut discards = Vec::new();
        let discard = |tx: &Transaction, reason, est| Discard {
            id: tx.id,
            src: tx.src,
            amount: tx.amount,
            reason,
            estimated_balance: est,
            proof_base: tx.src_proof.base_height,
        };

        // step 1: stateless checks and duplicates
        let mut seen = BTreeSet::new();
        let mut valid = Vec::with_capacity(incoming.len());
        for tx in incoming {
            if crate::ledger::cc_index(tx.src, self.committees) != self.index {
                discards.push(discard(&tx, DiscardReason::WrongCommittee, None));
                metrics.syntax_discards += 1;
                continue;
            }
            if let Err(v) = check_syntax(&tx, round, history) {
                discards.push(discard(&tx, DiscardReason::Syntax(v), None));
                metrics.syntax_discards += 1;
                continue;
            }
            if !seen.insert(tx.id) {
                discards.push(discard(&tx, DiscardReason::Duplicate, None));
                metrics.duplicate_discards += 1;
                continue;
            }
            valid.push(tx);
        }

        // step 2
        let ordered = canonical_order(valid);

        // step 3: one starting balance per account, from its newest proof
        let mut newest: BTreeMap<AccountId, (Height, u64)> = BTreeMap::new();
        let mut estimates: BTreeMap<AccountId, BTreeSet<u64>> = BTreeMap::new();
        for tx in &ordered {
            for p in [&tx.src_proof, &tx.dst_proof] {
                let updated = self.updated_balance(p.account, p.balance, p.base_height);
                estimates.entry(p.account).or_default().insert(updated);
                let e = newest.entry(p.account).or_insert((p.base_height, updated));
                if p.base_height > e.0 {
                    *e = (p.base_height, updated);
                }
            }
        }
        metrics.proof_disagreements = estimates.values().filter(|s| s.len() > 1).count() as u64;
        let mut running: BTreeMap<AccountId, u64> = newest.into_iter().map(|(a, (_, b))| (a, b)).collect();

        // step 4: sequential execution under the non-negative balance rule
        let mut txs = Vec::with_capacity(ordered.len());
        for tx in ordered {
            let bal = running[&tx.src];
            if tx.amount > bal {
                discards.push(discard(&tx, DiscardReason::InsufficientBalance, Some(bal)));
                metrics.balance_discards += 1;
                continue;
            }
            running.insert(tx.src, bal - tx.amount);
            let credited = running[&tx.dst].saturating_add(tx.amount);
            running.insert(tx.dst, credited);
            txs.push(tx);
        }
        metrics.accepted = txs.len() as u64;

        let accepted = AcceptedSeq {
            committee: self.index,
            round,
            txs,
        };
        self.window.push_back(accepted.clone());
        while self.window.len() > self.depth {
            self.window.pop_front();
        }
        ConfirmOutcome {
            accepted,
            discards,
            metrics,
        }
    }
}
