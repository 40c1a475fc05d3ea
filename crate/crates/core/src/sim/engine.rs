//! Round scheduler.
//!
//! Within round `t` every stage runs once, in pipeline order, reading only
//! messages sent to it for delivery at `t`:
//!
//! * clients fetch proofs from storage (state of `B_{t-1}`) and submit the
//!   transfers entering at `t + 1`;
//! * confirmation committees confirm the transfers entering at `t`;
//! * leaf RPCs apply the portion slices of round `t − 1`;
//! * an inner RPC at RPC level `ℓ` folds what its children sent at `t − 1`,
//!   so it works on the state after round `t − ℓ`, and the root seals `B_t`
//!   committing to the state after round `t − q + 1`;
//! * storage nodes and the oracle replay round `t − q + 1` and check `B_t`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::confirmation::{ConfirmationCommittee, DiscardReason};
use crate::digest::Digest;
use crate::ledger::{
    cc_index, AcceptedSeq, AccountId, Block, BlockHistory, HistoryError, Round, Transaction, BLOCK_BYTES,
    HISTORY_DEPTH,
};
use crate::merkle::{build_pruned, verify_proof, MerkleError, PrunedTree};
use crate::oracle::{merge_order, Oracle, OracleError};
use crate::pipeline::{build_topology, FrontierBook, InnerRpc, LatencyTag, LeafRpc, PipelineError, RpcId, RpcTopology};
use crate::storage::{StorageError, StorageNode};

use super::config::{ConfigError, SimConfig};
use super::report::{CommitteeMetrics, OracleVerdict, RoundReport, Summary};
use super::workload::{generate_workload, substream, Purpose, Routing};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("block {height} (round {round}) has root {computed}, the oracle computed {expected}")]
    Divergence {
        round: Round,
        height: u64,
        expected: Digest,
        computed: Digest,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error("report output failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Messages keyed by delivery round and destination.
#[derive(Clone, Debug)]
struct Mailbox<M> {
    queue: BTreeMap<(Round, usize), Vec<M>>,
}

impl<M> Default for Mailbox<M> {
    fn default() -> Self {
        Mailbox { queue: BTreeMap::new() }
    }
}

impl<M> Mailbox<M> {
    fn send(&mut self, at: Round, dest: usize, msg: M) {
        self.queue.entry((at, dest)).or_default().push(msg);
    }

    fn take(&mut self, at: Round, dest: usize) -> Vec<M> {
        self.queue.remove(&(at, dest)).unwrap_or_default()
    }

    fn due_by(&self, round: Round) -> usize {
        self.queue.range(..(round + 1, 0)).map(|(_, v)| v.len()).sum()
    }

    fn len(&self) -> usize {
        self.queue.values().map(Vec::len).sum()
    }
}

/// A sub-root digest on its way up the RPC tree.
#[derive(Clone, Debug)]
struct SubRoot {
    slot: usize,
    /// Index of the last confirmed round folded in; zero or below is genesis.
    state: i64,
    digest: Digest,
    tags: Vec<LatencyTag>,
}

pub struct Simulation {
    cfg: SimConfig,
    topo: RpcTopology,
    round: Round,
    genesis: Block,
    history: BlockHistory,
    ccs: Vec<ConfirmationCommittee>,
    leaves: Vec<LeafRpc>,
    inner: Vec<InnerRpc>,
    /// Position of every RPC under its parent.
    slots: HashMap<RpcId, usize>,
    storage: Vec<StorageNode>,
    oracle: Oracle,
    initial_supply: u128,
    routing: Routing,
    nonce: u64,
    to_cc: Mailbox<Transaction>,
    to_leaf: Mailbox<(usize, Vec<Transaction>)>,
    to_inner: Mailbox<SubRoot>,
    recent: BTreeMap<Round, Vec<AcceptedSeq>>,
    frontier: FrontierBook,
    pending: HashMap<Digest, Round>,
    fault_at: Option<Round>,
    fault_injected: Option<(Round, Digest)>,
    audit: bool,
    summary: Summary,
}

/// Evenly spaced funded accounts.
pub fn genesis_entries(cfg: &SimConfig) -> Vec<(AccountId, u64)> {
    if cfg.initial_accounts == 0 {
        return Vec::new();
    }
    let stride = (1u64 << cfg.address_bits) / cfg.initial_accounts;
    (0..cfg.initial_accounts)
        .map(|i| (AccountId(i * stride), cfg.initial_balance))
        .collect()
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let topo = build_topology(cfg.leaf_count, cfg.j, cfg.address_bits).map_err(ConfigError::from)?;
        let entries = genesis_entries(&cfg);
        let mut full: PrunedTree = build_pruned(&entries, cfg.address_bits)?;
        let genesis = Block::genesis(full.root_hash());
        let oracle = Oracle::new(cfg.address_bits, &entries, cfg.oracle_enabled)?;
        let initial_supply = oracle.total_supply();

        let q = topo.q as usize;
        let ccs = (0..cfg.n_c).map(|k| ConfirmationCommittee::new(k, cfg.n_c, q)).collect();
        let leaves: Vec<LeafRpc> = (0..topo.leaf_count).map(|p| LeafRpc::new(&topo, p, &full)).collect();
        let inner: Vec<InnerRpc> = topo.inner.iter().map(InnerRpc::new).collect();

        let mut storage = Vec::with_capacity(topo.leaf_count * cfg.rho);
        for p in 0..topo.leaf_count {
            for r in 0..cfg.rho {
                let id = p * cfg.rho + r;
                storage.push(StorageNode::new(id, vec![topo.portion_root(p)], &full, genesis)?);
            }
        }

        let mut slots = HashMap::new();
        for spec in &topo.inner {
            for (slot, child) in spec.children.iter().enumerate() {
                slots.insert(*child, slot);
            }
        }

        // Warm-up: inner RPCs start from the genesis digests of their children.
        let mut to_inner = Mailbox::default();
        for (i, spec) in topo.inner.iter().enumerate() {
            for (slot, child) in spec.children.iter().enumerate() {
                let pos = match *child {
                    RpcId::Leaf(l) => topo.portion_root(l),
                    RpcId::Inner(c) => topo.inner[c].top,
                };
                let digest = full.digest_at(pos).ok_or(MerkleError::BadPosition(pos))?;
                let state = -(topo.rpc_level(*child) as i64);
                to_inner.send(
                    1,
                    i,
                    SubRoot {
                        slot,
                        state,
                        digest,
                        tags: Vec::new(),
                    },
                );
            }
        }

        let summary = Summary {
            final_root: genesis.state_root,
            supply_constant: true,
            block_bytes: BLOCK_BYTES as u64,
            ..Default::default()
        };
        Ok(Simulation {
            routing: Routing::new(cfg.n_c),
            cfg,
            topo,
            round: 0,
            genesis,
            history: BlockHistory::with_genesis(HISTORY_DEPTH, genesis),
            ccs,
            leaves,
            inner,
            slots,
            storage,
            oracle,
            initial_supply,
            nonce: 0,
            to_cc: Mailbox::default(),
            to_leaf: Mailbox::default(),
            to_inner,
            recent: BTreeMap::new(),
            frontier: FrontierBook::default(),
            pending: HashMap::new(),
            fault_at: None,
            fault_injected: None,
            audit: false,
            summary,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &RpcTopology {
        &self.topo
    }

    /// Last completed round.
    pub fn round(&self) -> Round {
        self.round
    }

    pub fn genesis(&self) -> &Block {
        &self.genesis
    }

    pub fn history(&self) -> &BlockHistory {
        &self.history
    }

    pub fn latest_block(&self) -> &Block {
        self.history.newest().expect("history holds at least genesis")
    }

    pub fn block_bytes(&self) -> usize {
        self.latest_block().to_bytes().len()
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn storage_nodes(&self) -> &[StorageNode] {
        &self.storage
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    /// Re-verify a sample of stored proofs against every new block.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    /// Corrupts the first transfer confirmed at or after `round` in the copy
    /// the leaf RPCs receive.
    pub fn inject_fault(&mut self, round: Round) {
        self.fault_at = Some(round);
    }

    /// Round and id of the corrupted transfer, once it happened.
    pub fn fault_injected(&self) -> Option<(Round, Digest)> {
        self.fault_injected
    }

    /// Submits `tx` to its confirmation committee for the next round.
    pub fn inject_transaction(&mut self, tx: Transaction) {
        let k = cc_index(tx.src, self.cfg.n_c);
        self.to_cc.send(self.round + 1, k, tx);
    }

    /// A proof from the first replica storing `account`, against the latest
    /// block storage has applied.
    pub fn serve_proof(&self, account: AccountId) -> Result<crate::merkle::BalanceProof, StorageError> {
        if !account.in_range(self.cfg.address_bits) {
            return Err(StorageError::NotStored(account));
        }
        let p = self.topo.portion_of(account);
        self.storage[p * self.cfg.rho].serve_proof(account)
    }

    /// Runs every remaining configured round, handing each report to `sink`.
    pub fn run_to_end<F>(&mut self, mut sink: F) -> Result<(), SimError>
    where
        F: FnMut(&RoundReport) -> std::io::Result<()>,
    {
        while self.round < self.cfg.rounds {
            let report = self.step()?;
            sink(&report)?;
        }
        Ok(())
    }

    /// Runs one round.
    pub fn step(&mut self) -> Result<RoundReport, SimError> {
        let result = self.run_round();
        if let Err(e) = &result {
            self.summary.divergence.get_or_insert_with(|| e.to_string());
        }
        result
    }

    fn run_round(&mut self) -> Result<RoundReport, SimError> {
        let t = self.round + 1;
        let q = self.topo.q as u64;
        let n_c = self.cfg.n_c;
        let rho = self.cfg.rho;

        let (proofs_served, truncated) = self.clients(t)?;

        // confirmation committees
        let mut metrics: Vec<CommitteeMetrics> = Vec::with_capacity(n_c + self.leaves.len() + self.inner.len());
        let mut accepted_seqs = Vec::with_capacity(n_c);
        let mut discards = Vec::new();
        let mut submitted = 0;
        for k in 0..n_c {
            let incoming = self.to_cc.take(t, k);
            let outcome = self.ccs[k].confirm_round(incoming, t, &self.history);
            let m = &outcome.metrics;
            let mut cm = CommitteeMetrics::named(format!("cc-{k}"));
            cm.tx = m.received;
            cm.accepted = m.accepted;
            cm.discarded = m.received - m.accepted;
            cm.proof_disagreements = m.proof_disagreements;
            // one message per transaction delivered to one committee
            let deliveries: u64 = outcome
                .accepted
                .txs
                .iter()
                .map(|tx| 1 + u64::from(self.topo.portion_of(tx.src) != self.topo.portion_of(tx.dst)))
                .sum();
            cm.msgs_in = m.received + 1 + u64::from(t > 1);
            cm.msgs_out = deliveries * (1 + rho as u64) + 1;
            for d in &outcome.discards {
                if d.reason == DiscardReason::InsufficientBalance {
                    if let Some(est) = d.estimated_balance {
                        if self.conservative(k, d.src, d.amount, est, d.proof_base) {
                            cm.conservative_rejections += 1;
                        }
                    }
                }
            }
            self.summary.submitted += m.received;
            self.summary.accepted += m.accepted;
            self.summary.syntax_discards += m.syntax_discards;
            self.summary.duplicate_discards += m.duplicate_discards;
            self.summary.balance_discards += m.balance_discards;
            self.summary.conservative_rejections += cm.conservative_rejections;
            self.summary.proof_disagreements += m.proof_disagreements;
            self.summary.peak_cc_tx = self.summary.peak_cc_tx.max(m.received);
            submitted += m.received;
            for tx in &outcome.accepted.txs {
                self.pending.insert(tx.id, tx.entry_round);
            }
            discards.extend(outcome.discards);
            accepted_seqs.push(outcome.accepted);
            metrics.push(cm);
        }
        self.route_to_leaves(t, &accepted_seqs);
        self.recent.insert(t, accepted_seqs.clone());

        // root-hash pipeline
        let mut block = None;
        let mut root_tags = Vec::new();
        for p in 0..self.leaves.len() {
            let slices = self.to_leaf.take(t, p);
            let mut senders = BTreeSet::new();
            let mut txs = Vec::new();
            for (k, slice) in slices {
                senders.insert(k);
                txs.extend(slice);
            }
            let delivered = txs.len() as u64;
            let input = crate::pipeline::PortionInput {
                round: t - 1,
                senders,
                txs,
            };
            let out = self.leaves[p].leaf_round(input);
            let mut cm = CommitteeMetrics::named(format!("leaf-{p}"));
            cm.tx = delivered;
            cm.changes = out.changes;
            cm.hashes = out.hashes;
            cm.failed = out.fault.is_some();
            cm.msgs_in = delivered + 1 + u64::from(t > 1);
            cm.msgs_out = 3;
            if out.fault.is_some() {
                self.summary.failed_leaf_rounds += 1;
            }
            self.summary.peak_leaf_hashes = self.summary.peak_leaf_hashes.max(out.hashes);
            if t > 1 {
                self.frontier.record(t - 1, [(self.topo.portion_root(p), out.digest)]);
            }
            let id = RpcId::Leaf(p);
            match self.topo.parent_of(id) {
                Some(parent) => self.to_inner.send(
                    t + 1,
                    parent,
                    SubRoot {
                        slot: self.slots[&id],
                        state: t as i64 - 1,
                        digest: out.digest,
                        tags: out.tags,
                    },
                ),
                None => {
                    block = Some(self.latest_block().successor(out.digest));
                    root_tags = out.tags;
                }
            }
            metrics.push(cm);
        }
        for i in 0..self.inner.len() {
            let mut msgs = self.to_inner.take(t, i);
            msgs.sort_by_key(|m| m.slot);
            let level = self.topo.inner[i].rpc_level as i64;
            let state = t as i64 - level;
            debug_assert!(msgs.iter().all(|m| m.state == state));
            let children: Vec<Digest> = msgs.iter().map(|m| m.digest).collect();
            let tags: Vec<LatencyTag> = msgs.into_iter().flat_map(|m| m.tags).collect();
            let out = self.inner[i].inner_round(&children)?;
            if state >= 1 {
                self.frontier.record(state as Round, out.nodes.iter().copied());
            }
            let mut cm = CommitteeMetrics::named(format!("inner-{i}"));
            cm.hashes = out.hashes;
            cm.msgs_in = children.len() as u64 + 1;
            cm.msgs_out = 2;
            self.summary.peak_inner_hashes = self.summary.peak_inner_hashes.max(out.hashes);
            let id = RpcId::Inner(i);
            match self.topo.parent_of(id) {
                Some(parent) => self.to_inner.send(
                    t + 1,
                    parent,
                    SubRoot {
                        slot: self.slots[&id],
                        state,
                        digest: out.digest,
                        tags,
                    },
                ),
                None => {
                    block = Some(self.latest_block().successor(out.digest));
                    root_tags = tags;
                }
            }
            metrics.push(cm);
        }
        let block = block.expect("the topology has a root");

        // inclusion latency
        let included = root_tags.len() as u64;
        for (id, entry) in root_tags {
            self.summary.latency_checked += 1;
            match self.pending.remove(&id) {
                Some(e) if e == entry && entry + q - 1 == t => {}
                _ => self.summary.latency_violations += 1,
            }
        }
        let before = self.pending.len();
        self.pending.retain(|_, entry| *entry + q - 1 > t);
        self.summary.unincluded += (before - self.pending.len()) as u64;

        // oracle, then storage
        let confirmed_round = (t + 1).checked_sub(q).filter(|&r| r >= 1);
        let no_seqs = Vec::new();
        let seqs = confirmed_round.and_then(|r| self.recent.get(&r)).unwrap_or(&no_seqs);
        let oracle_root = self.oracle.apply(merge_order(seqs))?;
        if self.oracle.recount_supply() != self.initial_supply {
            self.summary.supply_constant = false;
        }
        let verdict = match oracle_root {
            Some(expected) => {
                self.summary.oracle_checks += 1;
                if expected != block.state_root {
                    return Err(SimError::Divergence {
                        round: t,
                        height: block.height,
                        expected,
                        computed: block.state_root,
                    });
                }
                self.summary.oracle_matches += 1;
                OracleVerdict::Match
            }
            None => OracleVerdict::NotChecked,
        };
        let empty_frontier = BTreeMap::new();
        let feed = confirmed_round.and_then(|r| self.frontier.get(r)).unwrap_or(&empty_frontier);
        let ordered = merge_order(seqs);
        for node in &mut self.storage {
            node.apply_confirmed(ordered.iter().flat_map(|s| s.txs.iter()), feed, &block)?;
            node.take_work();
        }
        self.history.push(block)?;
        let audit_checks = if self.audit { self.audit_storage(t, &block)? } else { 0 };

        // housekeeping
        self.recent = self.recent.split_off(&(t + 1).saturating_sub(q));
        self.frontier.forget_before((t + 2).saturating_sub(q));
        debug_assert_eq!(self.to_cc.due_by(t) + self.to_leaf.due_by(t) + self.to_inner.due_by(t), 0);

        let msgs_peak = metrics.iter().map(CommitteeMetrics::msgs).max().unwrap_or(0);
        self.summary.peak_msgs = self.summary.peak_msgs.max(msgs_peak);
        self.summary.peak_rpc_hashes = self.summary.peak_leaf_hashes.max(self.summary.peak_inner_hashes);
        self.summary.rounds = t;
        self.summary.final_height = block.height;
        self.summary.final_root = block.state_root;
        self.summary.workload_truncated |= truncated;
        self.round = t;

        let accepted = accepted_seqs.iter().map(|s| s.txs.len() as u64).sum();
        Ok(RoundReport {
            round: t,
            block_height: block.height,
            state_root: block.state_root,
            per_committee: metrics,
            oracle: verdict,
            submitted,
            accepted,
            discarded: submitted - accepted,
            included,
            pending_submissions: self.to_cc.len() as u64,
            proofs_served,
            audit_checks,
            workload_truncated: truncated,
            block,
            discards,
            accepted_seqs,
        })
    }

    /// Builds and submits the transfers entering at `t + 1`; every proof
    /// fetched is checked against the newest block.
    fn clients(&mut self, t: Round) -> Result<(u64, bool), SimError> {
        if self.cfg.f == 0 {
            return Ok((0, false));
        }
        let newest = *self.latest_block();
        let mut rng = substream(self.cfg.seed, t + 1, Purpose::Workload);
        let storage = &self.storage;
        let topo = &self.topo;
        let rho = self.cfg.rho;
        let workload = generate_workload(
            t + 1,
            self.cfg.f,
            self.cfg.address_bits,
            self.oracle.balances(),
            &mut self.routing,
            &mut rng,
            &mut self.nonce,
            |a| {
                let p = topo.portion_of(a);
                storage[p * rho + (t as usize + p) % rho].serve_proof(a)
            },
        )?;
        let mut served = 0;
        for proof in workload.proofs() {
            served += 1;
            if proof.base_height == newest.height && verify_proof(proof, &newest.state_root) {
                self.summary.proofs_verified += 1;
            }
        }
        self.summary.proofs_served += served;
        for tx in workload.txs {
            let k = self.routing.route(tx.src);
            self.to_cc.send(t + 1, k, tx);
        }
        Ok((served, workload.truncated))
    }

    /// Sends each committee's slice of `A^t` to the leaf RPCs it touches,
    /// corrupting one transfer if a fault is armed.
    fn route_to_leaves(&mut self, t: Round, seqs: &[AcceptedSeq]) {
        let mut corrupt = matches!(self.fault_at, Some(r) if r <= t);
        for seq in seqs {
            let mut slices: BTreeMap<usize, Vec<Transaction>> = BTreeMap::new();
            for tx in &seq.txs {
                let mut copy = tx.clone();
                if corrupt {
                    copy.amount += 1;
                    corrupt = false;
                    self.fault_at = None;
                    self.fault_injected = Some((t, tx.id));
                }
                let sp = self.topo.portion_of(tx.src);
                let dp = self.topo.portion_of(tx.dst);
                slices.entry(sp).or_default().push(copy.clone());
                if dp != sp {
                    slices.entry(dp).or_default().push(copy);
                }
            }
            for (p, slice) in slices {
                self.to_leaf.send(t + 1, p, (seq.committee, slice));
            }
        }
    }

    /// Would the rejected debit have passed had committee `k` seen the
    /// credits other committees confirmed since the proof's base?
    fn conservative(&self, k: usize, src: AccountId, amount: u64, est: u64, base: u64) -> bool {
        let covered = base as i64 - self.topo.q as i64 + 1;
        let foreign: u64 = self
            .recent
            .iter()
            .filter(|(r, _)| **r as i64 > covered)
            .flat_map(|(_, seqs)| seqs.iter())
            .filter(|s| s.committee != k)
            .flat_map(|s| s.txs.iter())
            .filter(|tx| tx.dst == src)
            .map(|tx| tx.amount)
            .sum();
        est.saturating_add(foreign) >= amount
    }

    /// Samples stored accounts (and one arbitrary address) of every node and
    /// checks their proofs against `block`.
    fn audit_storage(&mut self, t: Round, block: &Block) -> Result<u64, SimError> {
        let mut rng = substream(self.cfg.seed, t, Purpose::Audit);
        let mut checks = 0;
        for node in &self.storage {
            let stored = node.stored_accounts();
            let mut accounts: Vec<AccountId> = sample(&mut rng, stored.len(), stored.len().min(2))
                .into_iter()
                .map(|i| stored[i].0)
                .collect();
            let (lo, hi) = node.portions()[0].account_range();
            accounts.push(AccountId(rng.random_range(lo..hi)));
            for a in accounts {
                let proof = node.serve_proof(a)?;
                checks += 1;
                if proof.base_height != block.height || !verify_proof(&proof, &block.state_root) {
                    self.summary.audit_failures += 1;
                }
            }
        }
        self.summary.audit_checks += checks;
        Ok(checks)
    }
}
