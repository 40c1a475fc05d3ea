//! Pruned binary Merkle trees over a `2^A`-leaf address space.
//!
//! A [`PrunedTree`] materializes only the root paths of the accounts it
//! cares about; every other subtree is a placeholder carrying its digest.
//! A tree may also be a *view* rooted at some interior position, which is
//! how a leaf RPC holds just its portion of the address space.
//!
//! Internal digests are cached. Balance changes invalidate the cached
//! ancestors and [`PrunedTree::root_hash`] recomputes only what is stale,
//! counting every internal hash it evaluates.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{leaf_digest, node_hash, DefaultHashTable, Digest};
use crate::ledger::{AccountId, Height};

pub const MAX_ADDRESS_BITS: u32 = 62;

/// Shared per-level default digests, built once per address width.
pub fn default_table(address_bits: u32) -> Arc<DefaultHashTable> {
    static TABLES: OnceLock<Mutex<HashMap<u32, Arc<DefaultHashTable>>>> = OnceLock::new();
    let mut tables = TABLES
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .expect("default table cache poisoned");
    tables
        .entry(address_bits)
        .or_insert_with(|| Arc::new(DefaultHashTable::new(address_bits)))
        .clone()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("address width {0} outside 1..={MAX_ADDRESS_BITS}")]
    AddressBits(u32),
    #[error("account {account} does not fit in {address_bits} address bits")]
    AccountOutOfRange { account: AccountId, address_bits: u32 },
    #[error("account {0} listed twice")]
    DuplicateAccount(AccountId),
    #[error("account {0} is not stored in this tree")]
    NotStored(AccountId),
    #[error("path of account {0} is not materialized")]
    PathNotMaterialized(AccountId),
    #[error("account {0} lies outside the tree view")]
    OutsideView(AccountId),
    #[error("proof for {account} has {got} siblings, need at least {need}")]
    ProofLength { account: AccountId, got: usize, need: usize },
    #[error("proof disagrees with placeholder at {position:?}")]
    ConflictingPlaceholder { position: TreePosition },
    #[error("subtree at {0:?} is pruned and not known to be empty")]
    PrunedSubtree(TreePosition),
    #[error("position {0:?} is not a placeholder of this tree")]
    NotPlaceholder(TreePosition),
    #[error("position {0:?} is invalid for this tree")]
    BadPosition(TreePosition),
}

/// Coordinates of a node: `level` 0 is the leaves, `level == A` the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TreePosition {
    pub level: u32,
    pub index: u64,
}

impl TreePosition {
    pub const fn new(level: u32, index: u64) -> Self {
        TreePosition { level, index }
    }

    pub const fn root(address_bits: u32) -> Self {
        TreePosition::new(address_bits, 0)
    }

    pub const fn leaf(account: AccountId) -> Self {
        TreePosition::new(0, account.0)
    }

    /// The ancestor of `account`'s leaf at `level`.
    pub const fn ancestor(account: AccountId, level: u32) -> Self {
        TreePosition::new(level, account.0 >> level)
    }

    pub fn is_valid(self, address_bits: u32) -> bool {
        self.level <= address_bits && (self.index >> (address_bits - self.level)) == 0
    }

    pub const fn parent(self) -> Self {
        TreePosition::new(self.level + 1, self.index >> 1)
    }

    pub const fn sibling(self) -> Self {
        TreePosition::new(self.level, self.index ^ 1)
    }

    pub fn children(self) -> (Self, Self) {
        debug_assert!(self.level > 0);
        let l = self.level - 1;
        (
            TreePosition::new(l, self.index << 1),
            TreePosition::new(l, (self.index << 1) | 1),
        )
    }

    /// Half-open account range `[lo, hi)` under this node.
    pub const fn account_range(self) -> (u64, u64) {
        (self.index << self.level, (self.index + 1) << self.level)
    }

    pub const fn covers(self, account: AccountId) -> bool {
        account.0 >> self.level == self.index
    }
}

/// What a tree knows about one position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeContent {
    MaterializedLeaf { balance: u64 },
    MaterializedInternal,
    Placeholder(Digest),
}

/// Membership proof of one balance: siblings from the leaf upward.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BalanceProof {
    pub account: AccountId,
    pub balance: u64,
    pub base_height: Height,
    pub siblings: Vec<Digest>,
}

impl BalanceProof {
    /// Digests along the account's path, `out[l]` at level `l`, up to `top`.
    pub fn path_digests(&self, top: u32) -> Vec<Digest> {
        let mut out = Vec::with_capacity(top as usize + 1);
        let mut cur = leaf_digest(self.account, self.balance);
        out.push(cur);
        for level in 0..top {
            let sib = &self.siblings[level as usize];
            cur = if (self.account.0 >> level) & 1 == 0 {
                node_hash(&cur, sib)
            } else {
                node_hash(sib, &cur)
            };
            out.push(cur);
        }
        out
    }

    /// Root implied by the proof.
    pub fn implied_root(&self) -> Digest {
        let mut cur = leaf_digest(self.account, self.balance);
        for (level, sib) in self.siblings.iter().enumerate() {
            cur = if (self.account.0 >> level) & 1 == 0 {
                node_hash(&cur, sib)
            } else {
                node_hash(sib, &cur)
            };
        }
        cur
    }
}

/// Folds the proof from leaf to root and compares with `expected_root`.
pub fn verify_proof(proof: &BalanceProof, expected_root: &Digest) -> bool {
    let bits = proof.siblings.len() as u32;
    if bits == 0 || bits > MAX_ADDRESS_BITS || !proof.account.in_range(bits) {
        return false;
    }
    proof.implied_root() == *expected_root
}

#[derive(Clone, Debug)]
pub struct PrunedTree {
    address_bits: u32,
    root: TreePosition,
    defaults: Arc<DefaultHashTable>,
    nodes: HashMap<TreePosition, NodeContent>,
    cache: HashMap<TreePosition, Digest>,
    work: u64,
}

impl PartialEq for PrunedTree {
    fn eq(&self, other: &Self) -> bool {
        self.address_bits == other.address_bits
            && self.root == other.root
            && self.nodes == other.nodes
    }
}

impl Eq for PrunedTree {}

fn check_bits(address_bits: u32) -> Result<(), MerkleError> {
    if address_bits == 0 || address_bits > MAX_ADDRESS_BITS {
        return Err(MerkleError::AddressBits(address_bits));
    }
    Ok(())
}

/// A full tree materializing exactly the given accounts.
pub fn build_pruned(
    entries: &[(AccountId, u64)],
    address_bits: u32,
) -> Result<PrunedTree, MerkleError> {
    let mut tree = PrunedTree::new(address_bits)?;
    let mut seen = BTreeSet::new();
    for &(account, balance) in entries {
        if !seen.insert(account) {
            return Err(MerkleError::DuplicateAccount(account));
        }
        tree.insert(account, balance)?;
    }
    Ok(tree)
}

impl PrunedTree {
    /// The all-zero state, fully pruned.
    pub fn new(address_bits: u32) -> Result<Self, MerkleError> {
        check_bits(address_bits)?;
        let defaults = default_table(address_bits);
        let root = TreePosition::root(address_bits);
        Self::view(address_bits, root, defaults.at(address_bits))
    }

    /// A tree restricted to the subtree under `root`, initially one placeholder.
    pub fn view(address_bits: u32, root: TreePosition, digest: Digest) -> Result<Self, MerkleError> {
        check_bits(address_bits)?;
        if !root.is_valid(address_bits) {
            return Err(MerkleError::BadPosition(root));
        }
        let mut nodes = HashMap::new();
        nodes.insert(root, NodeContent::Placeholder(digest));
        Ok(PrunedTree {
            address_bits,
            root,
            defaults: default_table(address_bits),
            nodes,
            cache: HashMap::new(),
            work: 0,
        })
    }

    pub fn address_bits(&self) -> u32 {
        self.address_bits
    }

    pub fn view_root(&self) -> TreePosition {
        self.root
    }

    pub fn defaults(&self) -> &DefaultHashTable {
        &self.defaults
    }

    pub fn node(&self, pos: TreePosition) -> Option<NodeContent> {
        self.nodes.get(&pos).copied()
    }

    /// Number of positions present (materialized or placeholder).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = (&TreePosition, &NodeContent)> {
        self.nodes.iter()
    }

    /// Materialized leaves in account order.
    pub fn leaves(&self) -> Vec<(AccountId, u64)> {
        let mut out: Vec<_> = self
            .nodes
            .iter()
            .filter_map(|(p, c)| match c {
                NodeContent::MaterializedLeaf { balance } if p.level == 0 => {
                    Some((AccountId(p.index), *balance))
                }
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn balance(&self, account: AccountId) -> Option<u64> {
        match self.nodes.get(&TreePosition::leaf(account)) {
            Some(NodeContent::MaterializedLeaf { balance }) => Some(*balance),
            _ => None,
        }
    }

    pub fn contains(&self, account: AccountId) -> bool {
        self.balance(account).is_some()
    }

    /// Internal hashes evaluated since the last [`take_work`](Self::take_work).
    pub fn work(&self) -> u64 {
        self.work
    }

    pub fn take_work(&mut self) -> u64 {
        std::mem::take(&mut self.work)
    }


    fn check_account(&self, account: AccountId) -> Result<(), MerkleError> {
        if !account.in_range(self.address_bits) {
            return Err(MerkleError::AccountOutOfRange {
                account,
                address_bits: self.address_bits,
            });
        }
        if !self.root.covers(account) {
            return Err(MerkleError::OutsideView(account));
        }
        Ok(())
    }

    /// Digest of the view root, recomputing stale internal nodes.
    pub fn root_hash(&mut self) -> Digest {
        self.compute(self.root)
    }

    fn compute(&mut self, pos: TreePosition) -> Digest {
        match self.nodes.get(&pos) {
            Some(NodeContent::MaterializedLeaf { balance }) => leaf_digest(AccountId(pos.index), *balance),
            Some(NodeContent::Placeholder(d)) => *d,
            Some(NodeContent::MaterializedInternal) => {
                if let Some(d) = self.cache.get(&pos) {
                    return *d;
                }
                let (l, r) = pos.children();
                let left = self.compute(l);
                let right = self.compute(r);
                let d = node_hash(&left, &right);
                self.work += 1;
                self.cache.insert(pos, d);
                d
            }
            None => panic!("internal node {pos:?} is missing a child"),
        }
    }

    /// Digest at `pos` without touching the cache. Positions below a
    /// default placeholder get the default digest; `None` if `pos` is
    /// otherwise not present in the tree.
    pub fn digest_at(&self, pos: TreePosition) -> Option<Digest> {
        let Some(content) = self.nodes.get(&pos) else {
            let mut up = pos;
            while up.level < self.root.level {
                up = up.parent();
                if let Some(node) = self.nodes.get(&up) {
                    return match node {
                        NodeContent::Placeholder(d) if *d == self.defaults.at(up.level) => {
                            Some(self.defaults.at(pos.level))
                        }
                        _ => None,
                    };
                }
            }
            return None;
        };
        match content {
            NodeContent::MaterializedLeaf { balance } => Some(leaf_digest(AccountId(pos.index), *balance)),
            NodeContent::Placeholder(d) => Some(*d),
            NodeContent::MaterializedInternal => {
                if let Some(d) = self.cache.get(&pos) {
                    return Some(*d);
                }
                let (l, r) = pos.children();
                Some(node_hash(&self.digest_at(l)?, &self.digest_at(r)?))
            }
        }
    }

    /// Proof for a stored account, siblings from the leaf up to the view root.
    pub fn make_proof(&self, account: AccountId, base_height: Height) -> Result<BalanceProof, MerkleError> {
        self.check_account(account)?;
        let balance = self.balance(account).ok_or(MerkleError::NotStored(account))?;
        let siblings = (0..self.root.level)
            .map(|level| {
                let sib = TreePosition::ancestor(account, level).sibling();
                self.digest_at(sib).expect("materialized path has both children")
            })
            .collect();
        Ok(BalanceProof {
            account,
            balance,
            base_height,
            siblings,
        })
    }

    /// Like [`make_proof`](Self::make_proof), but an account whose path ends
    /// in an all-zero placeholder gets a zero-balance proof built from the
    /// default digests.
    pub fn make_proof_with_defaults(
        &self,
        account: AccountId,
        base_height: Height,
    ) -> Result<BalanceProof, MerkleError> {
        self.check_account(account)?;
        if self.contains(account) {
            return self.make_proof(account, base_height);
        }
        // deepest present node on the path must be a default placeholder
        let mut level = self.root.level;
        loop {
            let pos = TreePosition::ancestor(account, level);
            match self.nodes.get(&pos) {
                Some(NodeContent::Placeholder(d)) => {
                    if *d != self.defaults.at(level) {
                        return Err(MerkleError::NotStored(account));
                    }
                    break;
                }
                Some(NodeContent::MaterializedInternal) if level > 0 => level -= 1,
                _ => return Err(MerkleError::NotStored(account)),
            }
        }
        let empty_top = level;
        let siblings = (0..self.root.level)
            .map(|l| {
                if l < empty_top {
                    self.defaults.at(l)
                } else {
                    let sib = TreePosition::ancestor(account, l).sibling();
                    self.digest_at(sib).expect("materialized path has both children")
                }
            })
            .collect();
        Ok(BalanceProof {
            account,
            balance: 0,
            base_height,
            siblings,
        })
    }

    fn invalidate_path(&mut self, account: AccountId) {
        for level in 1..=self.root.level {
            self.cache.remove(&TreePosition::ancestor(account, level));
        }
    }

    fn invalidate_above(&mut self, pos: TreePosition) {
        let mut p = pos;
        while p.level < self.root.level {
            p = p.parent();
            self.cache.remove(&p);
        }
    }

    /// Materializes the proof's path. Placeholders already in the tree must
    /// carry the digests the proof implies for them; materialized nodes are
    /// kept as they are.
    pub fn merge_proof(&mut self, proof: &BalanceProof) -> Result<(), MerkleError> {
        let account = proof.account;
        self.check_account(account)?;
        let top = self.root.level;
        if proof.siblings.len() < top as usize {
            return Err(MerkleError::ProofLength {
                account,
                got: proof.siblings.len(),
                need: top as usize,
            });
        }

        // Read-only pass: find where the path stops being materialized and
        // check every placeholder sibling along the way.
        let mut level = top;
        let mut expand_from = None;
        loop {
            let pos = TreePosition::ancestor(account, level);
            match self.nodes.get(&pos) {
                Some(NodeContent::Placeholder(_)) => {
                    expand_from = Some(level);
                    break;
                }
                Some(NodeContent::MaterializedLeaf { .. }) => break,
                Some(NodeContent::MaterializedInternal) => {
                    let sib = TreePosition::ancestor(account, level - 1).sibling();
                    if let Some(NodeContent::Placeholder(d)) = self.nodes.get(&sib) {
                        if *d != proof.siblings[(level - 1) as usize] {
                            return Err(MerkleError::ConflictingPlaceholder { position: sib });
                        }
                    }
                    level -= 1;
                }
                None => return Err(MerkleError::BadPosition(pos)),
            }
        }
        let Some(start) = expand_from else {
            return Ok(());
        };

        let path = proof.path_digests(start);
        self.work += start as u64;
        let start_pos = TreePosition::ancestor(account, start);
        if self.nodes.get(&start_pos) != Some(&NodeContent::Placeholder(path[start as usize])) {
            return Err(MerkleError::ConflictingPlaceholder { position: start_pos });
        }

        // Everything below `start` is absent; the proof alone describes it.
        for level in (1..=start).rev() {
            let pos = TreePosition::ancestor(account, level);
            self.nodes.insert(pos, NodeContent::MaterializedInternal);
            self.cache.insert(pos, path[level as usize]);
            let on_path = TreePosition::ancestor(account, level - 1);
            self.nodes
                .insert(on_path.sibling(), NodeContent::Placeholder(proof.siblings[(level - 1) as usize]));
            self.nodes
                .insert(on_path, NodeContent::Placeholder(path[(level - 1) as usize]));
        }
        self.nodes.insert(
            TreePosition::leaf(account),
            NodeContent::MaterializedLeaf {
                balance: proof.balance,
            },
        );
        Ok(())
    }

    /// Replaces a stored balance; ancestors are recomputed lazily.
    pub fn apply_update(&mut self, account: AccountId, new_balance: u64) -> Result<(), MerkleError> {
        self.check_account(account)?;
        match self.nodes.get_mut(&TreePosition::leaf(account)) {
            Some(NodeContent::MaterializedLeaf { balance }) => {
                if *balance != new_balance {
                    *balance = new_balance;
                    self.invalidate_path(account);
                }
                Ok(())
            }
            _ => Err(MerkleError::PathNotMaterialized(account)),
        }
    }

    /// Sets a balance, materializing the path through all-zero placeholders
    /// if needed. Fails if the path runs into a non-empty pruned subtree.
    pub fn insert(&mut self, account: AccountId, balance: u64) -> Result<(), MerkleError> {
        self.check_account(account)?;
        if self.contains(account) {
            return self.apply_update(account, balance);
        }
        let mut level = self.root.level;
        let expand_from = loop {
            let pos = TreePosition::ancestor(account, level);
            match self.nodes.get(&pos) {
                Some(NodeContent::Placeholder(d)) => {
                    if *d != self.defaults.at(level) {
                        return Err(MerkleError::PrunedSubtree(pos));
                    }
                    break level;
                }
                Some(NodeContent::MaterializedInternal) if level > 0 => level -= 1,
                _ => return Err(MerkleError::BadPosition(pos)),
            }
        };
        for level in (1..=expand_from).rev() {
            let pos = TreePosition::ancestor(account, level);
            self.nodes.insert(pos, NodeContent::MaterializedInternal);
            let (l, r) = pos.children();
            let below = NodeContent::Placeholder(self.defaults.at(level - 1));
            self.nodes.insert(l, below);
            self.nodes.insert(r, below);
        }
        self.nodes
            .insert(TreePosition::leaf(account), NodeContent::MaterializedLeaf { balance });
        self.invalidate_path(account);
        Ok(())
    }

    /// Overwrites the digest of an existing placeholder.
    pub fn set_placeholder(&mut self, pos: TreePosition, digest: Digest) -> Result<(), MerkleError> {
        match self.nodes.get_mut(&pos) {
            Some(NodeContent::Placeholder(d)) => {
                if *d != digest {
                    *d = digest;
                    self.invalidate_above(pos);
                }
                Ok(())
            }
            _ => Err(MerkleError::NotPlaceholder(pos)),
        }
    }

    /// Collapses every subtree holding none of `keep` into a placeholder.
    pub fn prune_to(&mut self, keep: &BTreeSet<AccountId>) {
        self.root_hash();
        self.prune_at(self.root, keep);
    }

    fn prune_at(&mut self, pos: TreePosition, keep: &BTreeSet<AccountId>) {
        match self.nodes.get(&pos).copied() {
            None | Some(NodeContent::Placeholder(_)) => {}
            Some(NodeContent::MaterializedLeaf { balance }) => {
                let account = AccountId(pos.index);
                if !keep.contains(&account) {
                    self.nodes
                        .insert(pos, NodeContent::Placeholder(leaf_digest(account, balance)));
                }
            }
            Some(NodeContent::MaterializedInternal) => {
                let (lo, hi) = pos.account_range();
                if keep.range(AccountId(lo)..AccountId(hi)).next().is_none() {
                    let d = self.cache.remove(&pos).expect("digests are fresh after root_hash");
                    self.remove_below(pos);
                    self.nodes.insert(pos, NodeContent::Placeholder(d));
                } else {
                    let (l, r) = pos.children();
                    self.prune_at(l, keep);
                    self.prune_at(r, keep);
                }
            }
        }
    }

    fn remove_below(&mut self, pos: TreePosition) {
        if pos.level == 0 {
            return;
        }
        let (l, r) = pos.children();
        for c in [l, r] {
            if let Some(NodeContent::MaterializedInternal) = self.nodes.remove(&c) {
                self.cache.remove(&c);
                self.remove_below(c);
            }
        }
    }

    /// Checks the structural invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.nodes.contains_key(&self.root) {
            return Err("root missing".into());
        }
        for (pos, content) in &self.nodes {
            if !pos.is_valid(self.address_bits) {
                return Err(format!("{pos:?} out of range"));
            }
            if *pos != self.root {
                if !(pos.level < self.root.level && self.root.index == pos.index >> (self.root.level - pos.level)) {
                    return Err(format!("{pos:?} outside view"));
                }
                match self.nodes.get(&pos.parent()) {
                    Some(NodeContent::MaterializedInternal) => {}
                    _ => return Err(format!("{pos:?} has no internal parent")),
                }
            }
            match content {
                NodeContent::MaterializedInternal => {
                    if pos.level == 0 {
                        return Err(format!("{pos:?} internal at leaf level"));
                    }
                    let (l, r) = pos.children();
                    if !self.nodes.contains_key(&l) || !self.nodes.contains_key(&r) {
                        return Err(format!("{pos:?} missing a child"));
                    }
                }
                NodeContent::MaterializedLeaf { .. } if pos.level != 0 => {
                    return Err(format!("{pos:?} leaf above level 0"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::brute::{dense, full_root};
    use super::*;
    use crate::digest::leaf_hash;
    use proptest::prelude::*;

    fn a(i: u64) -> AccountId {
        AccountId(i)
    }

    #[test]
    fn empty_tree_root_is_default() {
        let mut t = build_pruned(&[], 4).unwrap();
        assert_eq!(t.root_hash(), default_table(4).at(4));
        assert_eq!(t.take_work(), 0);
    }

    #[test]
    fn single_entry_shape() {
        let t = build_pruned(&[(a(5), 10)], 4).unwrap();
        let internal = t
            .positions()
            .filter(|(_, c)| matches!(c, NodeContent::MaterializedInternal))
            .count();
        let placeholders: BTreeSet<_> = t
            .positions()
            .filter(|(_, c)| matches!(c, NodeContent::Placeholder(_)))
            .map(|(p, _)| *p)
            .collect();
        assert_eq!(internal, 4);
        // siblings of 5's path: leaf 4, (1,3), (2,0), (3,1)
        let expected: BTreeSet<_> = [(0, 4), (1, 3), (2, 0), (3, 1)]
            .into_iter()
            .map(|(l, i)| TreePosition::new(l, i))
            .collect();
        assert_eq!(placeholders, expected);
        t.check_invariants().unwrap();
    }

    #[test]
    fn two_leaf_tree_is_fully_materialized() {
        let mut t = build_pruned(&[(a(0), 1), (a(1), 2)], 1).unwrap();
        assert!(t
            .positions()
            .all(|(_, c)| !matches!(c, NodeContent::Placeholder(_))));
        assert_eq!(t.root_hash(), node_hash(&leaf_hash(a(0), 1), &leaf_hash(a(1), 2)));
    }

    #[test]
    fn two_leaf_example_vector() {
        let mut t = build_pruned(&[(a(0), 7), (a(1), 3)], 1).unwrap();
        assert_eq!(
            t.root_hash().to_hex(),
            "cef1c3a8df6ec7bead36ecfb2c1d33e141528072211ee92b6e68a15a2881a815"
        );
    }

    #[test]
    fn duplicates_and_range_are_rejected() {
        assert_eq!(
            build_pruned(&[(a(1), 1), (a(1), 2)], 4).unwrap_err(),
            MerkleError::DuplicateAccount(a(1))
        );
        assert!(matches!(
            build_pruned(&[(a(16), 1)], 4).unwrap_err(),
            MerkleError::AccountOutOfRange { .. }
        ));
        assert_eq!(PrunedTree::new(0).unwrap_err(), MerkleError::AddressBits(0));
    }

    #[test]
    fn matches_full_tree_for_single_entry() {
        let mut t = build_pruned(&[(a(5), 10)], 4).unwrap();
        assert_eq!(t.root_hash(), full_root(&dense(&[(a(5), 10)], 4)));
    }

    #[test]
    fn all_zero_full_tree_equals_default() {
        let entries: Vec<_> = (0..16).map(|i| (a(i), 0)).collect();
        let mut t = build_pruned(&entries, 4).unwrap();
        assert_eq!(t.root_hash(), default_table(4).at(4));
    }

    #[test]
    fn proof_of_lone_leaf_is_all_defaults() {
        let t = build_pruned(&[(a(5), 10)], 4).unwrap();
        let p = t.make_proof(a(5), 0).unwrap();
        let d = default_table(4);
        assert_eq!(p.siblings, (0..4).map(|l| d.at(l)).collect::<Vec<_>>());
        assert_eq!(t.make_proof(a(6), 0).unwrap_err(), MerkleError::NotStored(a(6)));
    }

    #[test]
    fn proof_round_trip_and_tamper() {
        let mut t = build_pruned(&[(a(5), 10), (a(9), 4), (a(2), 1)], 4).unwrap();
        let root = t.root_hash();
        let p = t.make_proof(a(9), 3).unwrap();
        assert!(verify_proof(&p, &root));
        let mut bumped = p.clone();
        bumped.balance += 1;
        assert!(!verify_proof(&bumped, &root));
        for i in 0..4 {
            let mut flipped = p.clone();
            flipped.siblings[i].0[0] ^= 1;
            assert!(!verify_proof(&flipped, &root));
        }
        let mut moved = p;
        moved.account = a(8);
        assert!(!verify_proof(&moved, &root));
    }

    #[test]
    fn default_proofs_for_unused_accounts() {
        let mut t = build_pruned(&[(a(5), 10)], 4).unwrap();
        let root = t.root_hash();
        for acct in [0u64, 4, 6, 15] {
            let p = t.make_proof_with_defaults(a(acct), 1).unwrap();
            assert_eq!(p.balance, 0);
            assert!(verify_proof(&p, &root), "account {acct}");
        }
    }

    #[test]
    fn merge_union_of_paths() {
        let mut full = build_pruned(&[(a(5), 10), (a(9), 4)], 4).unwrap();
        let root = full.root_hash();
        let p5 = full.make_proof(a(5), 0).unwrap();
        let p9 = full.make_proof(a(9), 0).unwrap();

        let mut t = PrunedTree::view(4, TreePosition::root(4), root).unwrap();
        t.merge_proof(&p5).unwrap();
        t.merge_proof(&p9).unwrap();
        t.check_invariants().unwrap();
        assert_eq!(t, full);
        let internal: BTreeSet<_> = t
            .positions()
            .filter(|(_, c)| matches!(c, NodeContent::MaterializedInternal))
            .map(|(p, _)| (p.level, p.index))
            .collect();
        // paths of 5 = 0101 and 9 = 1001 share only the root
        let expected: BTreeSet<_> = [(4, 0), (3, 0), (2, 1), (1, 2), (3, 1), (2, 2), (1, 4)]
            .into_iter()
            .collect();
        assert_eq!(internal, expected);
        assert_eq!(t.root_hash(), root);
    }

    #[test]
    fn merging_sibling_leaves_drops_shared_placeholder() {
        let mut full = build_pruned(&[(a(4), 1), (a(5), 2)], 4).unwrap();
        let root = full.root_hash();
        let mut t = PrunedTree::view(4, TreePosition::root(4), root).unwrap();
        t.merge_proof(&full.make_proof(a(4), 0).unwrap()).unwrap();
        assert!(matches!(t.node(TreePosition::leaf(a(5))), Some(NodeContent::Placeholder(_))));
        t.merge_proof(&full.make_proof(a(5), 0).unwrap()).unwrap();
        assert_eq!(t.balance(a(5)), Some(2));
        let snapshot = t.clone();
        t.merge_proof(&full.make_proof(a(5), 0).unwrap()).unwrap();
        assert_eq!(t, snapshot);
    }

    #[test]
    fn conflicting_placeholder_is_detected() {
        let mut old = build_pruned(&[(a(5), 10), (a(9), 4)], 4).unwrap();
        old.root_hash();
        let stale9 = old.make_proof(a(9), 0).unwrap();
        let mut new = build_pruned(&[(a(5), 11), (a(9), 4)], 4).unwrap();
        let root = new.root_hash();
        let fresh12 = new.make_proof_with_defaults(a(12), 1).unwrap();

        let mut t = PrunedTree::view(4, TreePosition::root(4), root).unwrap();
        assert_eq!(
            t.clone().merge_proof(&stale9),
            Err(MerkleError::ConflictingPlaceholder { position: TreePosition::root(4) })
        );
        t.merge_proof(&fresh12).unwrap();
        let before = t.clone();
        // (3,0) now holds the fresh digest of accounts 0..8, which the stale proof contradicts
        assert_eq!(
            t.merge_proof(&stale9),
            Err(MerkleError::ConflictingPlaceholder { position: TreePosition::new(3, 0) })
        );
        assert_eq!(t, before);
    }

    #[test]
    fn merge_into_portion_view() {
        let mut full = build_pruned(&[(a(5), 10), (a(6), 3), (a(12), 1)], 4).unwrap();
        full.root_hash();
        let portion = TreePosition::new(2, 1); // accounts 4..8
        let mut view = PrunedTree::view(4, portion, full.digest_at(portion).unwrap()).unwrap();
        view.merge_proof(&full.make_proof(a(6), 0).unwrap()).unwrap();
        view.apply_update(a(6), 0).unwrap();
        full.apply_update(a(6), 0).unwrap();
        full.root_hash();
        assert_eq!(view.root_hash(), full.digest_at(portion).unwrap());
        assert_eq!(
            view.merge_proof(&full.make_proof(a(12), 0).unwrap()),
            Err(MerkleError::OutsideView(a(12)))
        );
    }

    #[test]
    fn update_sequence_matches_brute_force() {
        let mut t = build_pruned(&[(a(5), 0), (a(9), 0)], 4).unwrap();
        t.apply_update(a(5), 10).unwrap();
        t.apply_update(a(9), 4).unwrap();
        assert_eq!(t.root_hash(), full_root(&dense(&[(a(5), 10), (a(9), 4)], 4)));
        let r = t.root_hash();
        t.apply_update(a(9), 4).unwrap();
        assert_eq!(t.root_hash(), r);
        assert_eq!(t.apply_update(a(3), 1), Err(MerkleError::PathNotMaterialized(a(3))));
    }

    #[test]
    fn incremental_work_is_one_path() {
        let mut t = build_pruned(&[(a(5), 10), (a(9), 4)], 8).unwrap();
        t.root_hash();
        t.take_work();
        t.apply_update(a(5), 11).unwrap();
        t.root_hash();
        assert_eq!(t.take_work(), 8);
    }

    #[test]
    fn prune_keeps_digests() {
        let mut t = build_pruned(&[(a(1), 10), (a(9), 4), (a(13), 2)], 4).unwrap();
        let root = t.root_hash();
        t.prune_to(&[a(9)].into_iter().collect());
        t.check_invariants().unwrap();
        assert_eq!(t.leaves(), vec![(a(9), 4)]);
        assert_eq!(t.root_hash(), root);
        t.prune_to(&BTreeSet::new());
        assert_eq!(t.len(), 1);
        assert_eq!(t.root_hash(), root);
    }

    #[test]
    fn insert_refuses_nonempty_pruned_subtree() {
        let mut t = build_pruned(&[(a(1), 10), (a(9), 4)], 4).unwrap();
        t.prune_to(&[a(9)].into_iter().collect());
        assert!(matches!(t.insert(a(0), 1), Err(MerkleError::PrunedSubtree(_))));
        t.insert(a(10), 5).unwrap();
        assert_eq!(t.root_hash(), full_root(&dense(&[(a(1), 10), (a(9), 4), (a(10), 5)], 4)));
    }

    #[test]
    fn set_placeholder_moves_root() {
        let mut t = build_pruned(&[(a(1), 10)], 4).unwrap();
        let sib = TreePosition::new(3, 1);
        let new_digest = Digest([3; 32]);
        t.set_placeholder(sib, new_digest).unwrap();
        let left = t.digest_at(TreePosition::new(3, 0)).unwrap();
        assert_eq!(t.root_hash(), node_hash(&left, &new_digest));
        assert_eq!(
            t.set_placeholder(TreePosition::new(3, 0), new_digest),
            Err(MerkleError::NotPlaceholder(TreePosition::new(3, 0)))
        );
    }

    fn entry_set(bits: u32, max: usize) -> impl Strategy<Value = Vec<(AccountId, u64)>> {
        prop::collection::btree_map(0..(1u64 << bits), 0u64..1000, 0..max)
            .prop_map(|m| m.into_iter().map(|(k, v)| (AccountId(k), v)).collect())
    }

    proptest! {
        #[test]
        fn confluence_with_full_tree((bits, entries) in (1u32..=8).prop_flat_map(|b| (Just(b), entry_set(b, 40)))) {
            let mut t = build_pruned(&entries, bits).unwrap();
            prop_assert_eq!(t.root_hash(), full_root(&dense(&entries, bits)));
        }

        #[test]
        fn proofs_verify_and_mutations_fail(entries in entry_set(6, 20).prop_filter("non-empty", |e| !e.is_empty()), pick in any::<prop::sample::Index>(), bit in 0usize..(8 + 6 * 256)) {
            let mut t = build_pruned(&entries, 6).unwrap();
            let root = t.root_hash();
            let (acct, _) = entries[pick.index(entries.len())];
            let p = t.make_proof(acct, 0).unwrap();
            prop_assert!(verify_proof(&p, &root));
            let mut m = p.clone();
            if bit < 8 {
                m.balance ^= 1 << bit;
            } else {
                let b = bit - 8;
                m.siblings[b / 256].0[(b % 256) / 8] ^= 1 << (b % 8);
            }
            prop_assert!(!verify_proof(&m, &root));
        }

        #[test]
        fn merge_order_is_irrelevant(entries in entry_set(7, 16), seed in any::<u64>()) {
            let mut full = build_pruned(&entries, 7).unwrap();
            let root = full.root_hash();
            let proofs: Vec<_> = entries.iter().map(|(a, _)| full.make_proof(*a, 0).unwrap()).collect();
            let mut shuffled = proofs.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
                shuffled.swap(i, j);
            }
            let mut x = PrunedTree::view(7, TreePosition::root(7), root).unwrap();
            let mut y = x.clone();
            for p in &proofs { x.merge_proof(p).unwrap(); }
            for p in &shuffled { y.merge_proof(p).unwrap(); }
            prop_assert_eq!(&x, &y);
            x.check_invariants().unwrap();
            prop_assert_eq!(x.root_hash(), root);
        }

        #[test]
        fn root_work_bounded(entries in entry_set(10, 30)) {
            let mut t = build_pruned(&entries, 10).unwrap();
            t.root_hash();
            prop_assert!(t.take_work() <= (entries.len() as u64) * 10);
        }
    }
}
