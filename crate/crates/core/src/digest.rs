//! SHA-256 digests and the canonical encodings hashed into the state tree.
//!
//! Every digest in the system is produced by one of a handful of encoders,
//! each prefixed with a one-byte ASCII domain tag:
//!
//! | tag | input                                              |
//! |-----|----------------------------------------------------|
//! | `L` | account (u64 BE) ‖ balance (u64 BE)                |
//! | `N` | left digest ‖ right digest                         |
//! | `T` | src ‖ dst ‖ amount ‖ entry round ‖ nonce (all u64 BE) |
//!
//! Block hashes are the plain SHA-256 of the 72-byte block serialization.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::ledger::AccountId;

pub const DIGEST_LEN: usize = 32;

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }

    /// Big-endian integer value of the first eight bytes.
    pub fn prefix_u64(&self) -> u64 {
        let mut head = [0u8; 8];
        head.copy_from_slice(&self.0[..8]);
        u64::from_be_bytes(head)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn sha256(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

/// `SHA-256("L" ‖ account ‖ balance)`.
pub fn leaf_hash(account: AccountId, balance: u64) -> Digest {
    sha256(&[b"L", &account.0.to_be_bytes(), &balance.to_be_bytes()])
}

/// `SHA-256("N" ‖ left ‖ right)`. Order matters.
pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    sha256(&[b"N", &left.0, &right.0])
}

/// Digest of the empty leaf, `leaf_hash(0, 0)`.
pub fn empty_leaf() -> Digest {
    static EMPTY: OnceLock<Digest> = OnceLock::new();
    *EMPTY.get_or_init(|| leaf_hash(AccountId(0), 0))
}

/// Digest stored at a leaf of the state tree.
///
/// A zero balance is an unused address and hashes to [`empty_leaf`] no matter
/// which account it sits at, so that all-zero subtrees collapse to the
/// per-level defaults of [`DefaultHashTable`].
pub fn leaf_digest(account: AccountId, balance: u64) -> Digest {
    if balance == 0 {
        empty_leaf()
    } else {
        leaf_hash(account, balance)
    }
}

/// Root digests of all-zero subtrees, one per level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DefaultHashTable {
    per_level: Vec<Digest>,
}

impl DefaultHashTable {
    pub fn new(address_bits: u32) -> Self {
        let mut per_level = Vec::with_capacity(address_bits as usize + 1);
        per_level.push(empty_leaf());
        for level in 1..=address_bits as usize {
            let below = per_level[level - 1];
            per_level.push(node_hash(&below, &below));
        }
        DefaultHashTable { per_level }
    }

    pub fn address_bits(&self) -> u32 {
        (self.per_level.len() - 1) as u32
    }

    pub fn at(&self, level: u32) -> Digest {
        self.per_level[level as usize]
    }

    pub fn levels(&self) -> &[Digest] {
        &self.per_level
    }
}
