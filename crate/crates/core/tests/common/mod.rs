//! Helpers shared by the integration tests.

#![allow(dead_code)]

use pipechain::digest::Digest;
use pipechain::ledger::AccountId;
use sha2::{Digest as _, Sha256};

fn h(parts: &[&[u8]]) -> [u8; 32] {
    let mut s = Sha256::new();
    for p in parts {
        s.update(p);
    }
    s.finalize().into()
}

/// Root of the fully materialized tree over `2^bits` leaves, hashed
/// directly with SHA-256 and no shortcuts.
pub fn full_tree_root(entries: &[(AccountId, u64)], bits: u32) -> Digest {
    let size = 1usize << bits;
    let mut balances = vec![0u64; size];
    for &(a, b) in entries {
        balances[a.0 as usize] = b;
    }
    let mut layer: Vec<[u8; 32]> = balances
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let account = if b == 0 { 0u64 } else { i as u64 };
            h(&[b"L", &account.to_be_bytes(), &b.to_be_bytes()])
        })
        .collect();
    while layer.len() > 1 {
        layer = layer.chunks(2).map(|p| h(&[b"N", &p[0], &p[1]])).collect();
    }
    Digest(layer[0])
}
