mod common;

use std::collections::BTreeMap;

use common::full_tree_root;
use pipechain::confirmation::ConfirmationCommittee;
use pipechain::ledger::{AccountId, Block, BlockHistory, Transaction, HISTORY_DEPTH};
use pipechain::merkle::{build_pruned, PrunedTree};
use pipechain::oracle::Oracle;
use pipechain::sim::{SimConfig, Simulation};
use proptest::prelude::*;

const BITS: u32 = 6;

fn ledger(balances: &[u64]) -> (PrunedTree, BlockHistory, BTreeMap<AccountId, u64>) {
    let entries: Vec<_> = balances
        .iter()
        .enumerate()
        .filter(|(_, &b)| b > 0)
        .map(|(i, &b)| (AccountId(i as u64), b))
        .collect();
    let mut tree = build_pruned(&entries, BITS).unwrap();
    let genesis = Block::genesis(tree.root_hash());
    (tree, BlockHistory::with_genesis(HISTORY_DEPTH, genesis), entries.into_iter().collect())
}

fn transfers(tree: &PrunedTree, specs: &[(u64, u64, u64)], round: u64) -> Vec<Transaction> {
    specs
        .iter()
        .enumerate()
        .filter(|(_, (s, d, _))| s != d)
        .map(|(n, &(s, d, amount))| {
            let (src, dst) = (AccountId(s), AccountId(d));
            Transaction::new(
                src,
                dst,
                amount,
                round,
                n as u64,
                tree.make_proof_with_defaults(src, 0).unwrap(),
                tree.make_proof_with_defaults(dst, 0).unwrap(),
            )
        })
        .collect()
}

fn specs() -> impl Strategy<Value = Vec<(u64, u64, u64)>> {
    prop::collection::vec((0..16u64, 0..64u64, 1..60u64), 0..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Replaying an accepted sequence from the true balances, or from any
    /// balances with extra credits, never overdraws a source.
    #[test]
    fn accepted_sequences_never_overdraw(
        balances in prop::collection::vec(0..100u64, 16),
        specs in specs(),
        extra in prop::collection::vec((0..64u64, 0..50u64), 0..5),
    ) {
        let (tree, history, truth) = ledger(&balances);
        let mut cc = ConfirmationCommittee::new(0, 1, 3);
        let out = cc.confirm_round(transfers(&tree, &specs, 1), 1, &history);
        for credited in [false, true] {
            let mut bal = truth.clone();
            if credited {
                for &(a, x) in &extra {
                    *bal.entry(AccountId(a)).or_insert(0) += x;
                }
            }
            for tx in &out.accepted.txs {
                let s = bal.entry(tx.src).or_insert(0);
                prop_assert!(*s >= tx.amount);
                *s -= tx.amount;
                *bal.entry(tx.dst).or_insert(0) += tx.amount;
            }
        }
    }

    /// The accepted sequence depends on the set of transfers, not on the
    /// order they arrived in.
    #[test]
    fn confirmation_ignores_arrival_order(
        balances in prop::collection::vec(0..100u64, 16),
        specs in specs(),
        seed in any::<u64>(),
    ) {
        let (tree, history, _) = ledger(&balances);
        let txs = transfers(&tree, &specs, 1);
        let mut shuffled = txs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        let a = ConfirmationCommittee::new(0, 1, 3).confirm_round(txs, 1, &history);
        let b = ConfirmationCommittee::new(0, 1, 3).confirm_round(shuffled, 1, &history);
        prop_assert_eq!(a.accepted, b.accepted);
        prop_assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn history_keeps_at_most_depth_blocks(pushes in 0usize..12) {
        let mut h = BlockHistory::with_genesis(HISTORY_DEPTH, Block::genesis(full_tree_root(&[], 3)));
        for _ in 0..pushes {
            let next = h.newest().unwrap().successor(full_tree_root(&[], 3));
            h.push(next).unwrap();
            prop_assert!(h.len() <= HISTORY_DEPTH);
        }
        prop_assert_eq!(h.newest().unwrap().height, pushes as u64);
    }

    /// Transfers conserve supply in the oracle.
    #[test]
    fn oracle_conserves_supply(
        balances in prop::collection::vec(0..100u64, 16),
        specs in specs(),
    ) {
        let (_, _, truth) = ledger(&balances);
        let entries: Vec<_> = truth.into_iter().collect();
        let mut o = Oracle::new(BITS, &entries, true).unwrap();
        let before = o.recount_supply();
        for &(s, d, amount) in &specs {
            if s == d {
                continue;
            }
            let tx = Transaction::new(
                AccountId(s),
                AccountId(d),
                amount,
                1,
                0,
                pipechain::merkle::BalanceProof { account: AccountId(s), balance: 0, base_height: 0, siblings: vec![] },
                pipechain::merkle::BalanceProof { account: AccountId(d), balance: 0, base_height: 0, siblings: vec![] },
            );
            let _ = o.apply_transaction(&tx);
        }
        prop_assert_eq!(o.recount_supply(), before);
        let now: Vec<_> = o.balances().iter().map(|(a, b)| (*a, *b)).collect();
        prop_assert_eq!(o.root().unwrap(), full_tree_root(&now, BITS));
    }
}

fn small_config() -> impl Strategy<Value = SimConfig> {
    (8u32..=11, 0u32..=3, prop::sample::select(vec![1u64, 3, 7, 15]), 1usize..=4, 1usize..=2, 0u64..=12, any::<u64>())
        .prop_map(|(bits, log_leaves, j, n_c, rho, f, seed)| SimConfig {
            seed,
            address_bits: bits,
            f,
            n_c,
            leaf_count: 1 << log_leaves,
            j,
            e: 4,
            rho,
            rounds: 14,
            initial_accounts: 32,
            initial_balance: 500,
            oracle_enabled: true,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Blocks match the oracle, proofs verify and latency holds for any
    /// topology, load and seed.
    #[test]
    fn random_configurations_hold_every_check(cfg in small_config()) {
        let mut sim = Simulation::new(cfg).unwrap();
        sim.set_audit(true);
        sim.run_to_end(|_| Ok(())).unwrap();
        let s = sim.summary();
        prop_assert!(s.theorems_hold(), "{:?}", s);
        prop_assert_eq!(s.oracle_checks, 14);
    }
}
