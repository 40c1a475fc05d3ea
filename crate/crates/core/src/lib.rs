//! A round-based simulator of a sharded payment ledger whose state root is
//! computed by a pipeline of hashing committees.

pub mod cli;
pub mod confirmation;
pub mod digest;
pub mod ledger;
pub mod merkle;
pub mod oracle;
pub mod pipeline;
pub mod provisioning;
pub mod sim;
pub mod storage;
