//! Accounts, transactions, blocks and the stateless checks a confirmation
//! committee runs before looking at balances.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{sha256, Digest};
use crate::merkle::{verify_proof, BalanceProof};

/// Block height. Height 0 is genesis.
pub type Height = u64;
/// Simulation round. Round `t` ends with block `t` being emitted.
pub type Round = u64;

/// Number of most recent blocks every node remembers.
pub const HISTORY_DEPTH: usize = 2;

/// Length of a serialized block: height plus two digests.
pub const BLOCK_BYTES: usize = 8 + 32 + 32;

/// Index of a leaf of the state tree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub u64);

impl AccountId {
    pub fn in_range(self, address_bits: u32) -> bool {
        address_bits >= 64 || self.0 < (1u64 << address_bits)
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for AccountId {
    fn from(v: u64) -> Self {
        AccountId(v)
    }
}

/// Identifier of a transfer: `SHA-256("T" ‖ src ‖ dst ‖ amount ‖ entry_round ‖ nonce)`.
pub fn transaction_id(
    src: AccountId,
    dst: AccountId,
    amount: u64,
    entry_round: Round,
    nonce: u64,
) -> Digest {
    sha256(&[
        b"T",
        &src.0.to_be_bytes(),
        &dst.0.to_be_bytes(),
        &amount.to_be_bytes(),
        &entry_round.to_be_bytes(),
        &nonce.to_be_bytes(),
    ])
}

/// A transfer together with the balance proofs of both accounts it touches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub src: AccountId,
    pub dst: AccountId,
    pub amount: u64,
    pub entry_round: Round,
    pub nonce: u64,
    pub src_proof: BalanceProof,
    pub dst_proof: BalanceProof,
    pub id: Digest,
}

impl Transaction {
    pub fn new(
        src: AccountId,
        dst: AccountId,
        amount: u64,
        entry_round: Round,
        nonce: u64,
        src_proof: BalanceProof,
        dst_proof: BalanceProof,
    ) -> Self {
        let id = transaction_id(src, dst, amount, entry_round, nonce);
        Transaction {
            src,
            dst,
            amount,
            entry_round,
            nonce,
            src_proof,
            dst_proof,
            id,
        }
    }

    /// Recomputes the id from the transfer fields.
    pub fn expected_id(&self) -> Digest {
        transaction_id(self.src, self.dst, self.amount, self.entry_round, self.nonce)
    }

    /// The proof attached for `account`, if the transaction touches it.
    pub fn proof_for(&self, account: AccountId) -> Option<&BalanceProof> {
        if account == self.src {
            Some(&self.src_proof)
        } else if account == self.dst {
            Some(&self.dst_proof)
        } else {
            None
        }
    }
}

/// A block: nothing but a height, a back-link and the state root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub height: Height,
    pub prev_hash: Digest,
    pub state_root: Digest,
}

impl Block {
    pub fn genesis(state_root: Digest) -> Self {
        Block {
            height: 0,
            prev_hash: Digest::ZERO,
            state_root,
        }
    }

    /// Fixed-width encoding: height (u64 BE) ‖ prev_hash ‖ state_root.
    pub fn to_bytes(&self) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        out[..8].copy_from_slice(&self.height.to_be_bytes());
        out[8..40].copy_from_slice(self.prev_hash.as_bytes());
        out[40..].copy_from_slice(self.state_root.as_bytes());
        out
    }

    pub fn hash(&self) -> Digest {
        sha256(&[&self.to_bytes()])
    }

    /// The next block in the chain, committing to `state_root`.
    pub fn successor(&self, state_root: Digest) -> Block {
        Block {
            height: self.height + 1,
            prev_hash: self.hash(),
            state_root,
        }
    }
}

/// `A_k^i`: what committee `k` accepted in round `i`, in execution order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedSeq {
    pub committee: usize,
    pub round: Round,
    pub txs: Vec<Transaction>,
}

impl AcceptedSeq {
    pub fn empty(committee: usize, round: Round) -> Self {
        AcceptedSeq {
            committee,
            round,
            txs: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("block {got} does not follow block {newest}")]
    OutOfOrder { newest: Height, got: Height },
    #[error("block {height} does not link to its predecessor")]
    BrokenLink { height: Height },
}

/// The last few blocks a node remembers; anything older is forgotten.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHistory {
    depth: usize,
    blocks: VecDeque<Block>,
}

impl BlockHistory {
    pub fn new(depth: usize) -> Self {
        assert!(depth >= 1, "history depth must be positive");
        BlockHistory {
            depth,
            blocks: VecDeque::with_capacity(depth),
        }
    }

    pub fn with_genesis(depth: usize, genesis: Block) -> Self {
        let mut h = Self::new(depth);
        h.blocks.push_back(genesis);
        h
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Appends the next block and forgets whatever falls out of the window.
    pub fn push(&mut self, block: Block) -> Result<(), HistoryError> {
        if let Some(newest) = self.blocks.back() {
            if block.height != newest.height + 1 {
                return Err(HistoryError::OutOfOrder {
                    newest: newest.height,
                    got: block.height,
                });
            }
            if block.prev_hash != newest.hash() {
                return Err(HistoryError::BrokenLink {
                    height: block.height,
                });
            }
        }
        self.blocks.push_back(block);
        while self.blocks.len() > self.depth {
            self.blocks.pop_front();
        }
        Ok(())
    }

    pub fn get(&self, height: Height) -> Option<&Block> {
        self.blocks.iter().find(|b| b.height == height)
    }

    pub fn newest(&self) -> Option<&Block> {
        self.blocks.back()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter()
    }
}

/// Confirmation committee responsible for transfers out of `src`:
/// the first eight bytes of `SHA-256(src)` read big-endian, mod `committees`.
pub fn cc_index(src: AccountId, committees: usize) -> usize {
    assert!(committees >= 1, "at least one confirmation committee");
    let d = sha256(&[&src.0.to_be_bytes()]);
    (d.prefix_u64() % committees as u64) as usize
}

/// Leaf RPC portion containing `account` when the address space is split
/// into `leaf_count` contiguous equal ranges.
pub fn leaf_rpc_index(account: AccountId, address_bits: u32, leaf_count: usize) -> usize {
    debug_assert!(leaf_count.is_power_of_two());
    let shift = address_bits - leaf_count.trailing_zeros();
    (account.0 >> shift) as usize
}

/// Why a transaction failed the stateless check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntaxViolation {
    ZeroAmount,
    SelfTransfer,
    WrongEntryRound,
    IdMismatch,
    ProofAccountMismatch,
    MixedProofBases,
    ExpiredProof,
    InvalidProof,
}

/// Stateless validity: positive amount, distinct accounts, matching id and
/// entry round, and both proofs related to one block still in `history`
/// and verifying against its state root.
pub fn check_syntax(
    tx: &Transaction,
    round: Round,
    history: &BlockHistory,
) -> Result<(), SyntaxViolation> {
    if tx.amount == 0 {
        return Err(SyntaxViolation::ZeroAmount);
    }
    if tx.src == tx.dst {
        return Err(SyntaxViolation::SelfTransfer);
    }
    if tx.entry_round != round {
        return Err(SyntaxViolation::WrongEntryRound);
    }
    if tx.id != tx.expected_id() {
        return Err(SyntaxViolation::IdMismatch);
    }
    if tx.src_proof.account != tx.src || tx.dst_proof.account != tx.dst {
        return Err(SyntaxViolation::ProofAccountMismatch);
    }
    if tx.src_proof.base_height != tx.dst_proof.base_height {
        return Err(SyntaxViolation::MixedProofBases);
    }
    let block = history
        .get(tx.src_proof.base_height)
        .ok_or(SyntaxViolation::ExpiredProof)?;
    if !verify_proof(&tx.src_proof, &block.state_root)
        || !verify_proof(&tx.dst_proof, &block.state_root)
    {
        return Err(SyntaxViolation::InvalidProof);
    }
    Ok(())
}

pub fn syntactic_check(tx: &Transaction, round: Round, history: &BlockHistory) -> bool {
    check_syntax(tx, round, history).is_ok()
}
