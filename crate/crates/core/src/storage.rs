//! Storage nodes: hold the balances of some leaf portions in a pruned tree,
//! keep it in step with the chain and answer proof requests.
//!
//! A node replays the confirmed transfers touching its portions itself.
//! Everything outside its portions it learns only as digests: the siblings
//! along each portion's path to the root, fed by the RPCs that computed
//! them.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::digest::Digest;
use crate::ledger::{AccountId, Block, Height, Transaction};
use crate::merkle::{BalanceProof, MerkleError, PrunedTree, TreePosition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("account {0} is not in this node's ranges")]
    NotStored(AccountId),
    #[error("storage node {node} diverged at height {height}: expected root {expected}, computed {computed}")]
    StateDivergence {
        node: usize,
        height: Height,
        expected: Digest,
        computed: Digest,
    },
    #[error("storage node {node}: replaying {account} failed: {reason}")]
    Replay {
        node: usize,
        account: AccountId,
        reason: String,
    },
    #[error(transparent)]
    Merkle(#[from] MerkleError),
}

#[derive(Clone, Debug)]
pub struct StorageNode {
    id: usize,
    portions: Vec<TreePosition>,
    tree: PrunedTree,
    frontier: Vec<TreePosition>,
    latest: Block,
}

impl StorageNode {
    /// A node storing `portions` of `genesis`, which must materialize every
    /// funded account in them and reach every frontier position.
    pub fn new(id: usize, portions: Vec<TreePosition>, genesis: &PrunedTree, genesis_block: Block) -> Result<Self, StorageError> {
        let bits = genesis.address_bits();
        let covered = |a: AccountId| portions.iter().any(|p| p.covers(a));
        let entries: Vec<_> = genesis.leaves().into_iter().filter(|(a, _)| covered(*a)).collect();
        let mut tree = PrunedTree::new(bits)?;
        // materialize the portion roots so that the frontier is well defined
        for p in &portions {
            let (lo, _) = p.account_range();
            tree.insert(AccountId(lo), 0)?;
        }
        for &(a, b) in &entries {
            tree.insert(a, b)?;
        }
        let mut frontier = Vec::new();
        for p in &portions {
            let mut pos = *p;
            while pos.level < bits {
                let sib = pos.sibling();
                if !portions.iter().any(|q| q.level <= sib.level && sib.index == q.index >> (sib.level - q.level))
                    && !portions.iter().any(|q| q.level >= sib.level && q.index == sib.index >> (q.level - sib.level))
                {
                    frontier.push(sib);
                }
                pos = pos.parent();
            }
        }
        frontier.sort_unstable();
        frontier.dedup();
        for &pos in &frontier {
            let d = genesis.digest_at(pos).ok_or(MerkleError::BadPosition(pos))?;
            tree.set_placeholder(pos, d)?;
        }
        let mut node = StorageNode {
            id,
            portions,
            tree,
            frontier,
            latest: genesis_block,
        };
        let computed = node.tree.root_hash();
        node.tree.take_work();
        if computed != genesis_block.state_root {
            return Err(StorageError::StateDivergence {
                node: id,
                height: genesis_block.height,
                expected: genesis_block.state_root,
                computed,
            });
        }
        Ok(node)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn portions(&self) -> &[TreePosition] {
        &self.portions
    }

    pub fn latest(&self) -> &Block {
        &self.latest
    }

    /// Positions whose digests must come from the RPCs.
    pub fn frontier_positions(&self) -> &[TreePosition] {
        &self.frontier
    }

    pub fn stores(&self, account: AccountId) -> bool {
        self.portions.iter().any(|p| p.covers(account))
    }

    /// Funded or previously touched accounts held, in order.
    pub fn stored_accounts(&self) -> Vec<(AccountId, u64)> {
        self.tree.leaves()
    }

    pub fn balance(&self, account: AccountId) -> Option<u64> {
        if self.stores(account) {
            Some(self.tree.balance(account).unwrap_or(0))
        } else {
            None
        }
    }

    /// Internal hashes evaluated since the last call.
    pub fn take_work(&mut self) -> u64 {
        self.tree.take_work()
    }

    fn replay_err(&self, account: AccountId, reason: impl ToString) -> StorageError {
        StorageError::Replay {
            node: self.id,
            account,
            reason: reason.to_string(),
        }
    }

    /// Replays one confirmed round, takes the new frontier digests and
    /// checks the result against `block`.
    pub fn apply_confirmed<'a>(
        &mut self,
        txs: impl IntoIterator<Item = &'a Transaction>,
        frontier: &BTreeMap<TreePosition, Digest>,
        block: &Block,
    ) -> Result<(), StorageError> {
        for tx in txs {
            if self.stores(tx.src) {
                let bal = self.tree.balance(tx.src).unwrap_or(0);
                let next = bal
                    .checked_sub(tx.amount)
                    .ok_or_else(|| self.replay_err(tx.src, "debit exceeds balance"))?;
                self.tree.insert(tx.src, next).map_err(|e| self.replay_err(tx.src, e))?;
            }
            if self.stores(tx.dst) {
                let bal = self.tree.balance(tx.dst).unwrap_or(0);
                let next = bal
                    .checked_add(tx.amount)
                    .ok_or_else(|| self.replay_err(tx.dst, "credit overflows"))?;
                self.tree.insert(tx.dst, next).map_err(|e| self.replay_err(tx.dst, e))?;
            }
        }
        for i in 0..self.frontier.len() {
            let pos = self.frontier[i];
            if let Some(d) = frontier.get(&pos) {
                self.tree.set_placeholder(pos, *d)?;
            }
        }
        let computed = self.tree.root_hash();
        if computed != block.state_root {
            return Err(StorageError::StateDivergence {
                node: self.id,
                height: block.height,
                expected: block.state_root,
                computed,
            });
        }
        self.latest = *block;
        Ok(())
    }

    /// Proof of `account` against the latest block this node has applied.
    pub fn serve_proof(&self, account: AccountId) -> Result<BalanceProof, StorageError> {
        if !self.stores(account) {
            return Err(StorageError::NotStored(account));
        }
        Ok(self.tree.make_proof_with_defaults(account, self.latest.height)?)
    }
}
