//! The tree of root-hash pipeline committees (RPCs).
//!
//! Leaf RPCs own contiguous portions of the address space and turn the
//! confirmed transfers touching their portion into a sub-root digest. Inner
//! RPCs each own a small complete subtree of the state tree above the
//! leaves and fold their children's digests into theirs. The root RPC's
//! digest is the state root of the next block.
//!
//! Every RPC works on a different round's data, so a transfer confirmed in
//! round `i` reaches the block emitted in round `i + q − 1`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::digest::{node_hash, Digest};
use crate::ledger::{AccountId, Block, Round, Transaction};
use crate::merkle::{MerkleError, PrunedTree, TreePosition};
use crate::provisioning::{j_hat, k_hat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("leaf count {0} is not a positive power of two")]
    LeafCount(usize),
    #[error("j must be at least 1")]
    ZeroCapacity,
    #[error("{leaf_count} leaf portions leave no room in {address_bits} address bits")]
    PortionTooSmall { leaf_count: usize, address_bits: u32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("inner RPC expects {expected} child digests, got {got}")]
    ChildCount { expected: usize, got: usize },
}

/// A node of the RPC tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum RpcId {
    Leaf(usize),
    Inner(usize),
}

impl std::fmt::Display for RpcId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RpcId::Leaf(i) => write!(f, "leaf-{i}"),
            RpcId::Inner(i) => write!(f, "inner-{i}"),
        }
    }
}

/// Placement of one inner RPC.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InnerSpec {
    /// Level in the RPC tree; leaf RPCs are level 1.
    pub rpc_level: u32,
    /// State-tree position of the subtree root it computes.
    pub top: TreePosition,
    /// State-tree levels it computes (its children sit `levels` below `top`).
    pub levels: u32,
    pub children: Vec<RpcId>,
    pub parent: Option<usize>,
}

impl InnerSpec {
    pub fn child_level(&self) -> u32 {
        self.top.level - self.levels
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RpcTopology {
    pub address_bits: u32,
    pub leaf_count: usize,
    pub j: u64,
    pub k_hat: u32,
    pub j_hat: u64,
    /// State-tree level of each leaf portion's root.
    pub portion_level: u32,
    /// State-tree levels above the portions, `log2(leaf_count)`.
    pub inner_levels: u32,
    /// Levels of the RPC tree, counting the leaf level.
    pub h: u32,
    /// Pipeline depth, `h + 1`.
    pub q: u32,
    /// Inner RPCs ordered bottom-up; the root, if any, is last.
    pub inner: Vec<InnerSpec>,
    /// Parent of each leaf RPC.
    pub leaf_parent: Vec<Option<usize>>,
}

/// Groups the levels above the leaf portions bottom-up into inner RPCs of
/// `k̂` levels each; whatever is left over at the top forms a shorter root.
pub fn build_topology(leaf_count: usize, j: u64, address_bits: u32) -> Result<RpcTopology, TopologyError> {
    if leaf_count == 0 || !leaf_count.is_power_of_two() {
        return Err(TopologyError::LeafCount(leaf_count));
    }
    if j == 0 {
        return Err(TopologyError::ZeroCapacity);
    }
    let g = leaf_count.trailing_zeros();
    if g >= address_bits {
        return Err(TopologyError::PortionTooSmall {
            leaf_count,
            address_bits,
        });
    }
    let kh = k_hat(j);
    let portion_level = address_bits - g;

    let mut inner: Vec<InnerSpec> = Vec::new();
    let mut leaf_parent = vec![None; leaf_count];
    let mut below: Vec<RpcId> = (0..leaf_count).map(RpcId::Leaf).collect();
    let mut level = portion_level;
    let mut remaining = g;
    let mut rpc_level = 1;
    while remaining > 0 {
        let take = remaining.min(kh);
        let fan_in = 1usize << take;
        rpc_level += 1;
        let mut next = Vec::with_capacity(below.len() / fan_in);
        for (idx, group) in below.chunks(fan_in).enumerate() {
            let id = inner.len();
            for child in group {
                match *child {
                    RpcId::Leaf(l) => leaf_parent[l] = Some(id),
                    RpcId::Inner(i) => inner[i].parent = Some(id),
                }
            }
            inner.push(InnerSpec {
                rpc_level,
                top: TreePosition::new(level + take, idx as u64),
                levels: take,
                children: group.to_vec(),
                parent: None,
            });
            next.push(RpcId::Inner(id));
        }
        below = next;
        level += take;
        remaining -= take;
    }
    let h = rpc_level;
    Ok(RpcTopology {
        address_bits,
        leaf_count,
        j,
        k_hat: kh,
        j_hat: j_hat(j),
        portion_level,
        inner_levels: g,
        h,
        q: h + 1,
        inner,
        leaf_parent,
    })
}

impl RpcTopology {
    pub fn inner_count(&self) -> usize {
        self.inner.len()
    }

    pub fn root(&self) -> RpcId {
        if self.inner.is_empty() {
            RpcId::Leaf(0)
        } else {
            RpcId::Inner(self.inner.len() - 1)
        }
    }

    pub fn portion_root(&self, portion: usize) -> TreePosition {
        TreePosition::new(self.portion_level, portion as u64)
    }

    pub fn portion_of(&self, account: AccountId) -> usize {
        (account.0 >> self.portion_level) as usize
    }

    /// Half-open account range of a leaf portion.
    pub fn portion_range(&self, portion: usize) -> (u64, u64) {
        self.portion_root(portion).account_range()
    }

    pub fn parent_of(&self, id: RpcId) -> Option<usize> {
        match id {
            RpcId::Leaf(l) => self.leaf_parent[l],
            RpcId::Inner(i) => self.inner[i].parent,
        }
    }

    /// Level of an RPC in the RPC tree.
    pub fn rpc_level(&self, id: RpcId) -> u32 {
        match id {
            RpcId::Leaf(_) => 1,
            RpcId::Inner(i) => self.inner[i].rpc_level,
        }
    }

    pub fn rpc_ids(&self) -> impl Iterator<Item = RpcId> + '_ {
        (0..self.leaf_count)
            .map(RpcId::Leaf)
            .chain((0..self.inner.len()).map(RpcId::Inner))
    }
}

/// Transfers of one confirmed round restricted to one portion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PortionInput {
    pub round: Round,
    /// Confirmation committees that sent a non-empty slice, for accounting.
    pub senders: BTreeSet<usize>,
    pub txs: Vec<Transaction>,
}

impl PortionInput {
    pub fn empty(round: Round) -> Self {
        PortionInput {
            round,
            senders: BTreeSet::new(),
            txs: Vec::new(),
        }
    }
}

/// Inclusion tag carried alongside digests: transaction id and entry round.
pub type LatencyTag = (Digest, Round);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafOutput {
    pub round: Round,
    pub digest: Digest,
    pub hashes: u64,
    pub changes: u64,
    pub fault: Option<LeafFault>,
    pub tags: Vec<LatencyTag>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LeafFault {
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error("balance of {0} would go negative")]
    Underflow(AccountId),
    #[error("balance of {0} overflows")]
    Overflow(AccountId),
}

/// One leaf RPC.
///
/// Between rounds it keeps the portion's pruned tree as of the last state
/// it computed, with every account touched in the last `q` rounds still
/// materialized. A proof attached to a new transfer was made against a
/// block at most `q` rounds of changes older; every subtree it reports that
/// has changed since is therefore materialized here already, and every
/// placeholder it meets must agree with it.
#[derive(Clone, Debug)]
pub struct LeafRpc {
    portion: usize,
    range: (u64, u64),
    depth: usize,
    tree: PrunedTree,
    touched: VecDeque<(Round, BTreeSet<AccountId>)>,
    window: VecDeque<PortionInput>,
    last_digest: Digest,
}

impl LeafRpc {
    /// `genesis` must materialize at least the portion root of the genesis state.
    pub fn new(topology: &RpcTopology, portion: usize, genesis: &PrunedTree) -> Self {
        let root = topology.portion_root(portion);
        let digest = genesis
            .digest_at(root)
            .expect("genesis tree reaches the portion roots");
        LeafRpc {
            portion,
            range: root.account_range(),
            depth: topology.q as usize,
            tree: PrunedTree::view(topology.address_bits, root, digest).expect("valid portion root"),
            touched: VecDeque::new(),
            window: VecDeque::new(),
            last_digest: digest,
        }
    }

    pub fn portion(&self) -> usize {
        self.portion
    }

    pub fn range(&self) -> (u64, u64) {
        self.range
    }

    pub fn digest(&self) -> Digest {
        self.last_digest
    }

    pub fn tree(&self) -> &PrunedTree {
        &self.tree
    }

    pub fn in_range(&self, account: AccountId) -> bool {
        self.range.0 <= account.0 && account.0 < self.range.1
    }

    /// Slices kept for the time-shifting window (the last `q + 1` rounds).
    pub fn window(&self) -> &VecDeque<PortionInput> {
        &self.window
    }

    /// Messages that arrived this round: one per (sender, round) slice in the window.
    pub fn slices_in_window(&self) -> u64 {
        self.window.iter().map(|w| w.senders.len() as u64).sum()
    }

    /// Applies one round of confirmed transfers and returns the portion digest.
    /// A round that cannot be applied leaves the state untouched, repeats the
    /// previous digest and reports the fault.
    pub fn leaf_round(&mut self, input: PortionInput) -> LeafOutput {
        let round = input.round;
        let backup = self.tree.clone();
        let mut touched = BTreeSet::new();
        let mut tags = Vec::with_capacity(input.txs.len());
        let result = self.apply(&input, &mut touched, &mut tags);
        let hashes = self.tree.take_work();
        let (digest, fault, changes) = match result {
            Ok(changes) => {
                let d = self.tree.root_hash();
                (d, None, changes)
            }
            Err(f) => {
                self.tree = backup;
                (self.last_digest, Some(f), 0)
            }
        };
        let hashes = hashes + self.tree.take_work();
        self.last_digest = digest;

        self.touched.push_back((round, touched));
        while self.touched.len() > self.depth {
            self.touched.pop_front();
        }
        let keep: BTreeSet<AccountId> = self.touched.iter().flat_map(|(_, s)| s.iter().copied()).collect();
        self.tree.prune_to(&keep);
        self.tree.take_work();

        self.window.push_back(input);
        while self.window.len() > self.depth + 1 {
            self.window.pop_front();
        }
        LeafOutput {
            round,
            digest,
            hashes,
            changes,
            fault,
            tags,
        }
    }

    fn apply(
        &mut self,
        input: &PortionInput,
        touched: &mut BTreeSet<AccountId>,
        tags: &mut Vec<LatencyTag>,
    ) -> Result<u64, LeafFault> {
        for tx in &input.txs {
            for proof in [&tx.src_proof, &tx.dst_proof] {
                if self.in_range(proof.account) {
                    self.tree.merge_proof(proof)?;
                }
            }
        }
        let mut changes = 0;
        for tx in &input.txs {
            if self.in_range(tx.src) {
                tags.push((tx.id, tx.entry_round));
            }
            if self.in_range(tx.src) {
                let bal = self.tree.balance(tx.src).ok_or(MerkleError::PathNotMaterialized(tx.src))?;
                let next = bal.checked_sub(tx.amount).ok_or(LeafFault::Underflow(tx.src))?;
                self.tree.apply_update(tx.src, next)?;
                touched.insert(tx.src);
                changes += 1;
            }
            if self.in_range(tx.dst) {
                let bal = self.tree.balance(tx.dst).ok_or(MerkleError::PathNotMaterialized(tx.dst))?;
                let next = bal.checked_add(tx.amount).ok_or(LeafFault::Overflow(tx.dst))?;
                self.tree.apply_update(tx.dst, next)?;
                touched.insert(tx.dst);
                changes += 1;
            }
        }
        Ok(changes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InnerOutput {
    pub digest: Digest,
    pub hashes: u64,
    /// Every state-tree node computed, for the storage frontier feed.
    pub nodes: Vec<(TreePosition, Digest)>,
}

/// One inner RPC; stateless apart from its place in the tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InnerRpc {
    pub top: TreePosition,
    pub levels: u32,
}

impl InnerRpc {
    pub fn new(spec: &InnerSpec) -> Self {
        InnerRpc {
            top: spec.top,
            levels: spec.levels,
        }
    }

    pub fn fan_in(&self) -> usize {
        1 << self.levels
    }

    /// Folds `2^levels` child digests pairwise into the subtree root,
    /// computing `2^levels − 1` hashes.
    pub fn inner_round(&self, children: &[Digest]) -> Result<InnerOutput, PipelineError> {
        if children.len() != self.fan_in() {
            return Err(PipelineError::ChildCount {
                expected: self.fan_in(),
                got: children.len(),
            });
        }
        let mut layer = children.to_vec();
        let mut nodes = Vec::with_capacity(children.len() - 1);
        let first_child = self.top.index << self.levels;
        for step in 1..=self.levels {
            let level = self.top.level - self.levels + step;
            let base = first_child >> step;
            layer = layer
                .chunks(2)
                .enumerate()
                .map(|(k, pair)| {
                    let d = node_hash(&pair[0], &pair[1]);
                    nodes.push((TreePosition::new(level, base + k as u64), d));
                    d
                })
                .collect();
        }
        Ok(InnerOutput {
            digest: layer[0],
            hashes: nodes.len() as u64,
            nodes,
        })
    }

    /// The root RPC: fold, then seal the next block.
    pub fn root_round(&self, children: &[Digest], prev: &Block) -> Result<(Block, InnerOutput), PipelineError> {
        let out = self.inner_round(children)?;
        Ok((prev.successor(out.digest), out))
    }
}

/// Digests a storage frontier needs, gathered per confirmed round as RPC
/// outputs come in.
#[derive(Clone, Debug, Default)]
pub struct FrontierBook {
    rounds: BTreeMap<Round, BTreeMap<TreePosition, Digest>>,
}

impl FrontierBook {
    pub fn record(&mut self, round: Round, nodes: impl IntoIterator<Item = (TreePosition, Digest)>) {
        self.rounds.entry(round).or_default().extend(nodes);
    }

    pub fn get(&self, round: Round) -> Option<&BTreeMap<TreePosition, Digest>> {
        self.rounds.get(&round)
    }

    /// Drops everything for rounds before `round`.
    pub fn forget_before(&mut self, round: Round) {
        self.rounds = self.rounds.split_off(&round);
    }
}
