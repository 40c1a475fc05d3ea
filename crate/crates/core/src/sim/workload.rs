//! Client behaviour: who pays whom, and how much.
//!
//! Every round each confirmation committee receives the same number of
//! transfers (`f / N_c`, the remainder rotating), each from a distinct
//! funded source routed to it. Destinations are uniform over the address
//! space and no address appears twice in a round.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::sha256;
use crate::ledger::{cc_index, AccountId, Round, Transaction};
use crate::merkle::BalanceProof;
use crate::storage::StorageError;

/// Independent random streams, one per round and purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Workload = 1,
    Audit = 2,
}

pub fn substream(seed: u64, round: Round, purpose: Purpose) -> ChaCha8Rng {
    let d = sha256(&[
        b"pipechain-rng",
        &seed.to_be_bytes(),
        &round.to_be_bytes(),
        &[purpose as u8],
    ]);
    ChaCha8Rng::from_seed(d.0)
}

/// Memoized `cc_index` of accounts.
#[derive(Clone, Debug)]
pub struct Routing {
    committees: usize,
    cache: HashMap<AccountId, usize>,
}

impl Routing {
    pub fn new(committees: usize) -> Self {
        Routing {
            committees,
            cache: HashMap::new(),
        }
    }

    pub fn committees(&self) -> usize {
        self.committees
    }

    pub fn route(&mut self, account: AccountId) -> usize {
        let n = self.committees;
        *self.cache.entry(account).or_insert_with(|| cc_index(account, n))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Workload {
    pub txs: Vec<Transaction>,
    pub requested: u64,
    /// Fewer funded sources than the round asked for.
    pub truncated: bool,
}

impl Workload {
    /// Every proof handed out while building the round.
    pub fn proofs(&self) -> impl Iterator<Item = &BalanceProof> {
        self.txs.iter().flat_map(|t| [&t.src_proof, &t.dst_proof])
    }
}

/// Transfers per committee this round.
pub fn quota(f: u64, committees: usize, committee: usize, round: Round) -> u64 {
    let n = committees as u64;
    let extra = (committee as u64 + round) % n < f % n;
    f / n + extra as u64
}

/// Builds the transfers entering at `entry_round`. `balances` is the state
/// the proofs will show; `serve` fetches a proof from storage.
#[allow(clippy::too_many_arguments)]
pub fn generate_workload<F>(
    entry_round: Round,
    f: u64,
    address_bits: u32,
    balances: &BTreeMap<AccountId, u64>,
    routing: &mut Routing,
    rng: &mut ChaCha8Rng,
    nonce: &mut u64,
    mut serve: F,
) -> Result<Workload, StorageError>
where
    F: FnMut(AccountId) -> Result<BalanceProof, StorageError>,
{
    let committees = routing.committees();
    let mut funded: Vec<Vec<AccountId>> = vec![Vec::new(); committees];
    for (&a, &b) in balances {
        if b > 0 {
            funded[routing.route(a)].push(a);
        }
    }

    let mut out = Workload {
        requested: f,
        ..Default::default()
    };
    let mut sources = Vec::with_capacity(f as usize);
    for (k, pool) in funded.iter().enumerate() {
        let want = quota(f, committees, k, entry_round) as usize;
        let take = want.min(pool.len());
        if take < want {
            out.truncated = true;
        }
        for i in sample(rng, pool.len(), take).into_iter() {
            sources.push(pool[i]);
        }
    }

    let space = 1u64 << address_bits;
    let mut used: BTreeSet<AccountId> = sources.iter().copied().collect();
    for src in sources {
        let dst = loop {
            let d = AccountId(rng.random_range(0..space));
            if used.insert(d) {
                break d;
            }
        };
        let src_proof = serve(src)?;
        let dst_proof = serve(dst)?;
        debug_assert_eq!(Some(&src_proof.balance), balances.get(&src));
        let amount = rng.random_range(1..=src_proof.balance);
        out.txs.push(Transaction::new(src, dst, amount, entry_round, *nonce, src_proof, dst_proof));
        *nonce += 1;
    }
    Ok(out)
}
