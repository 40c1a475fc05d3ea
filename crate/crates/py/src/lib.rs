//! Python bindings for the pipechain simulator.
//!
//! Configurations, reports and proofs cross the boundary as JSON text so
//! that the Python side sees exactly what the CLI writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pipechain::digest::{leaf_hash as core_leaf_hash, Digest};
use pipechain::ledger::AccountId;
use pipechain::merkle::{build_pruned, verify_proof as core_verify_proof, BalanceProof};
use pipechain::provisioning;
use pipechain::sim::{SimConfig, SimError, Simulation as CoreSimulation};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Config(c) => PyValueError::new_err(c.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report types serialize")
}

/// A simulation run, stepped one round at a time.
#[pyclass(unsendable)]
pub struct Simulation {
    inner: CoreSimulation,
}

#[pymethods]
impl Simulation {
    /// `config_json` holds a full configuration; the defaults when omitted.
    #[new]
    #[pyo3(signature = (config_json=None, audit=false))]
    fn new(config_json: Option<&str>, audit: bool) -> PyResult<Self> {
        let cfg = match config_json {
            Some(text) => SimConfig::from_json(text).map_err(value_err)?,
            None => SimConfig::default(),
        };
        let mut inner = CoreSimulation::new(cfg).map_err(sim_err)?;
        inner.set_audit(audit);
        Ok(Simulation { inner })
    }

    #[staticmethod]
    fn default_config() -> String {
        to_json(&SimConfig::default())
    }

    #[getter]
    fn round(&self) -> u64 {
        self.inner.round()
    }

    #[getter]
    fn q(&self) -> u32 {
        self.inner.topology().q
    }

    /// Hex state root of the newest block.
    #[getter]
    fn state_root(&self) -> String {
        self.inner.latest_block().state_root.to_hex()
    }

    fn balance(&self, account: u64) -> u64 {
        self.inner.oracle().balance(AccountId(account))
    }

    /// Runs one round and returns its report line.
    fn step(&mut self) -> PyResult<String> {
        let report = self.inner.step().map_err(sim_err)?;
        Ok(to_json(&report))
    }

    /// Runs the remaining rounds and returns their report lines.
    fn run(&mut self) -> PyResult<Vec<String>> {
        let mut lines = Vec::new();
        self.inner
            .run_to_end(|r| {
                lines.push(to_json(r));
                Ok(())
            })
            .map_err(sim_err)?;
        Ok(lines)
    }

    fn summary(&self) -> String {
        to_json(self.inner.summary())
    }

    fn theorems_hold(&self) -> bool {
        self.inner.summary().theorems_hold()
    }

    /// Balance proof from storage, as JSON.
    fn serve_proof(&self, account: u64) -> PyResult<String> {
        let proof = self.inner.serve_proof(AccountId(account)).map_err(value_err)?;
        Ok(to_json(&proof))
    }

    fn inject_fault(&mut self, round: u64) {
        self.inner.inject_fault(round);
    }
}

#[pyfunction]
fn k_hat(j: u64) -> PyResult<u32> {
    if j == 0 {
        return Err(PyValueError::new_err("j must be at least 1"));
    }
    Ok(provisioning::k_hat(j))
}

#[pyfunction]
fn j_hat(j: u64) -> PyResult<u64> {
    if j == 0 {
        return Err(PyValueError::new_err("j must be at least 1"));
    }
    Ok(provisioning::j_hat(j))
}

/// `(leaf_rpcs, inner_rpcs)` for `m` changes per round.
#[pyfunction]
fn min_committees(m: u64, e: u64, j: u64) -> PyResult<(u64, u64)> {
    provisioning::min_committees(m, e, j).map_err(value_err)
}

#[pyfunction]
fn provision_after_doubling(m: u64, e: u64, j: u64) -> PyResult<(u64, u64)> {
    provisioning::provision_after_doubling(m, e, j).map_err(value_err)
}

/// Hex digest of a funded leaf.
#[pyfunction]
fn leaf_hash(account: u64, balance: u64) -> String {
    core_leaf_hash(AccountId(account), balance).to_hex()
}

/// Hex state root of `entries` over `2^address_bits` addresses.
#[pyfunction]
fn state_root(entries: Vec<(u64, u64)>, address_bits: u32) -> PyResult<String> {
    let entries: Vec<_> = entries.into_iter().map(|(a, b)| (AccountId(a), b)).collect();
    let mut tree = build_pruned(&entries, address_bits).map_err(value_err)?;
    Ok(tree.root_hash().to_hex())
}

/// Checks a JSON proof (as returned by `Simulation.serve_proof`) against a hex root.
#[pyfunction]
fn verify_proof(proof_json: &str, root_hex: &str) -> PyResult<bool> {
    let proof: BalanceProof = serde_json::from_str(proof_json).map_err(value_err)?;
    let root = Digest::from_hex(root_hex).map_err(value_err)?;
    Ok(core_verify_proof(&proof, &root))
}

#[pymodule]
fn pipechain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(k_hat, m)?)?;
    m.add_function(wrap_pyfunction!(j_hat, m)?)?;
    m.add_function(wrap_pyfunction!(min_committees, m)?)?;
    m.add_function(wrap_pyfunction!(provision_after_doubling, m)?)?;
    m.add_function(wrap_pyfunction!(leaf_hash, m)?)?;
    m.add_function(wrap_pyfunction!(state_root, m)?)?;
    m.add_function(wrap_pyfunction!(verify_proof, m)?)?;
    Ok(())
}
