//! Independent full-state replayer.
//!
//! Keeps every balance and a sparse map of every non-default node of the
//! state tree, updated path by path. It shares nothing with the pruned tree
//! code beyond the two hash encoders, so agreement between the two is a
//! meaningful check.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::digest::{empty_leaf, leaf_hash, node_hash, Digest};
use crate::ledger::{AcceptedSeq, AccountId, Transaction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("transaction {id} would drive {account} negative: balance {balance}, debit {amount}")]
    NonNegativityViolation {
        id: Digest,
        account: AccountId,
        balance: u64,
        amount: u64,
    },
    #[error("balance of {0} overflows")]
    Overflow(AccountId),
    #[error("account {0} is outside the address space")]
    OutOfRange(AccountId),
}

#[derive(Clone, Debug)]
pub struct Oracle {
    address_bits: u32,
    balances: BTreeMap<AccountId, u64>,
    /// `(level, index) → digest` for nodes that differ from the empty default.
    nodes: Option<HashMap<(u32, u64), Digest>>,
    empty: Vec<Digest>,
    supply: u128,
}

impl Oracle {
    /// `track_root` off keeps only balances, which is all the workload needs.
    pub fn new(address_bits: u32, entries: &[(AccountId, u64)], track_root: bool) -> Result<Self, OracleError> {
        let mut empty = vec![empty_leaf()];
        for l in 1..=address_bits as usize {
            empty.push(node_hash(&empty[l - 1], &empty[l - 1]));
        }
        let mut o = Oracle {
            address_bits,
            balances: BTreeMap::new(),
            nodes: track_root.then(HashMap::new),
            empty,
            supply: 0,
        };
        for &(a, b) in entries {
            if !a.in_range(address_bits) {
                return Err(OracleError::OutOfRange(a));
            }
            let old = o.balance(a);
            o.supply = o.supply - old as u128 + b as u128;
            o.set(a, b);
        }
        Ok(o)
    }

    pub fn tracks_root(&self) -> bool {
        self.nodes.is_some()
    }

    pub fn balance(&self, account: AccountId) -> u64 {
        self.balances.get(&account).copied().unwrap_or(0)
    }

    /// Non-zero balances in account order.
    pub fn balances(&self) -> &BTreeMap<AccountId, u64> {
        &self.balances
    }

    pub fn total_supply(&self) -> u128 {
        self.supply
    }

    /// Sum of all balances, recounted.
    pub fn recount_supply(&self) -> u128 {
        self.balances.values().map(|&b| b as u128).sum()
    }

    pub fn root(&self) -> Option<Digest> {
        let nodes = self.nodes.as_ref()?;
        Some(
            nodes
                .get(&(self.address_bits, 0))
                .copied()
                .unwrap_or(self.empty[self.address_bits as usize]),
        )
    }

    fn set(&mut self, account: AccountId, balance: u64) {
        if balance == 0 {
            self.balances.remove(&account);
        } else {
            self.balances.insert(account, balance);
        }
        let Some(nodes) = self.nodes.as_mut() else {
            return;
        };
        let mut cur = if balance == 0 {
            empty_leaf()
        } else {
            leaf_hash(account, balance)
        };
        let mut index = account.0;
        for level in 0..=self.address_bits {
            if cur == self.empty[level as usize] {
                nodes.remove(&(level, index));
            } else {
                nodes.insert((level, index), cur);
            }
            if level == self.address_bits {
                break;
            }
            let sib = nodes
                .get(&(level, index ^ 1))
                .copied()
                .unwrap_or(self.empty[level as usize]);
            cur = if index & 1 == 0 {
                node_hash(&cur, &sib)
            } else {
                node_hash(&sib, &cur)
            };
            index >>= 1;
        }
    }

    pub fn apply_transaction(&mut self, tx: &Transaction) -> Result<(), OracleError> {
        let src_bal = self.balance(tx.src);
        if tx.amount > src_bal {
            return Err(OracleError::NonNegativityViolation {
                id: tx.id,
                account: tx.src,
                balance: src_bal,
                amount: tx.amount,
            });
        }
        if !tx.dst.in_range(self.address_bits) {
            return Err(OracleError::OutOfRange(tx.dst));
        }
        self.set(tx.src, src_bal - tx.amount);
        let dst_bal = self.balance(tx.dst);
        let credited = dst_bal.checked_add(tx.amount).ok_or(OracleError::Overflow(tx.dst))?;
        self.set(tx.dst, credited);
        Ok(())
    }

    /// Applies every sequence in the order given and returns the new root
    /// (or `None` when the root is not tracked).
    pub fn apply<'a>(&mut self, seqs: impl IntoIterator<Item = &'a AcceptedSeq>) -> Result<Option<Digest>, OracleError> {
        for seq in seqs {
            for tx in &seq.txs {
                self.apply_transaction(tx)?;
            }
        }
        Ok(self.root())
    }
}

/// The canonical merge of one round's outputs: committee index ascending.
pub fn merge_order(seqs: &[AcceptedSeq]) -> Vec<&AcceptedSeq> {
    let mut v: Vec<&AcceptedSeq> = seqs.iter().collect();
    v.sort_by_key(|s| s.committee);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merkle::brute::{dense, full_root};
    use crate::merkle::{build_pruned, BalanceProof};

    fn bare(src: u64, dst: u64, amount: u64) -> Transaction {
        let p = |a| BalanceProof {
            account: AccountId(a),
            balance: 0,
            base_height: 0,
            siblings: vec![],
        };
        Transaction::new(AccountId(src), AccountId(dst), amount, 1, 0, p(src), p(dst))
    }

    #[test]
    fn genesis_root_matches_brute_force() {
        let entries: Vec<_> = (0..4).map(|i| (AccountId(i * 16), 100)).collect();
        let o = Oracle::new(6, &entries, true).unwrap();
        assert_eq!(o.root().unwrap(), full_root(&dense(&entries, 6)));
        assert_eq!(o.total_supply(), 400);
        let empty = Oracle::new(6, &[], true).unwrap();
        assert_eq!(empty.root().unwrap(), build_pruned(&[], 6).unwrap().root_hash());
    }

    #[test]
    fn transfers_conserve_and_track() {
        let mut o = Oracle::new(5, &[(AccountId(1), 10), (AccountId(2), 5)], true).unwrap();
        let seq = AcceptedSeq {
            committee: 0,
            round: 1,
            txs: vec![bare(1, 7, 4), bare(2, 1, 5), bare(7, 30, 4)],
        };
        let root = o.apply([&seq]).unwrap().unwrap();
        let expect = dense(&[(AccountId(1), 11), (AccountId(30), 4)], 5);
        assert_eq!(root, full_root(&expect));
        assert_eq!(o.recount_supply(), 15);
        assert_eq!(o.total_supply(), 15);
        assert_eq!(o.balance(AccountId(2)), 0);
    }

    #[test]
    fn empty_round_keeps_root() {
        let mut o = Oracle::new(5, &[(AccountId(1), 10)], true).unwrap();
        let before = o.root();
        assert_eq!(o.apply(std::iter::empty()).unwrap(), before);
    }

    #[test]
    fn overdraft_is_a_violation() {
        let mut o = Oracle::new(5, &[(AccountId(1), 3)], false).unwrap();
        let seq = AcceptedSeq {
            committee: 0,
            round: 1,
            txs: vec![bare(1, 2, 4)],
        };
        assert!(matches!(
            o.apply([&seq]),
            Err(OracleError::NonNegativityViolation { balance: 3, amount: 4, .. })
        ));
        assert_eq!(o.root(), None);
    }

    #[test]
    fn disjoint_committees_commute() {
        let entries = [(AccountId(1), 10), (AccountId(2), 10)];
        let a = AcceptedSeq { committee: 0, round: 1, txs: vec![bare(1, 3, 4), bare(3, 2, 1)] };
        let b = AcceptedSeq { committee: 1, round: 1, txs: vec![bare(2, 3, 7)] };
        let mut x = Oracle::new(5, &entries, true).unwrap();
        let mut y = x.clone();
        let rx = x.apply([&a, &b]).unwrap();
        let ry = y.apply([&b, &a]).unwrap();
        assert_eq!(rx, ry);
        let seqs = [b, a];
        assert_eq!(merge_order(&seqs)[0].committee, 0);
    }
}
