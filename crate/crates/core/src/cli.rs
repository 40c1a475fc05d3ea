//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::provisioning::{scale_experiment, write_scale_csv, Provisioning, ScaleError, Verdict};
use crate::sim::{ConfigError, ReportWriter, SimConfig, SimError, Simulation};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_SCALE: u8 = 4;

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "PIPECHAIN_SEED";

#[derive(Debug, Parser)]
#[command(name = "pipechain", version, about = "Pipelined sharded-ledger simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the committee counts needed for a given load.
    Dimension(DimensionArgs),
    /// Run the simulator and write a JSON-lines report.
    Run(RunArgs),
    /// Run with the oracle on and every proof audited; fail unless all checks hold.
    Verify(RunArgs),
    /// Run the scalability experiment and write a CSV table.
    Scale(ScaleArgs),
}

#[derive(Debug, Args)]
pub struct DimensionArgs {
    /// Transactions per round.
    #[arg(long)]
    pub f: u64,
    /// Balance changes a leaf RPC absorbs per round.
    #[arg(long)]
    pub e: u64,
    /// Hashes an RPC computes per round.
    #[arg(long)]
    pub j: u64,
    /// Confirmation committees.
    #[arg(long, default_value_t = 1)]
    pub nc: u64,
    #[arg(long, default_value_t = 16)]
    pub address_bits: u32,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file; standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Corrupt the first transfer confirmed at or after this round.
    #[arg(long, hide = true)]
    pub inject_fault: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Base configuration; the built-in scale base when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub alphas: Vec<u64>,
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I, env_seed: Option<String>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let seed_override = match env_seed.as_deref().map(str::parse::<u64>) {
        None => None,
        Some(Ok(s)) => Some(s),
        Some(Err(_)) => {
            eprintln!("error: {SEED_ENV} is not an unsigned integer");
            return EXIT_CONFIG;
        }
    };
    match cli.command {
        Command::Dimension(a) => dimension(&a),
        Command::Run(a) => run(&a, seed_override, false),
        Command::Verify(a) => run(&a, seed_override, true),
        Command::Scale(a) => scale(&a, seed_override),
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: Option<&Path>, fallback: SimConfig) -> Result<SimConfig, ConfigError> {
    match path {
        Some(p) => SimConfig::load(p),
        None => Ok(fallback),
    }
}

fn dimension(a: &DimensionArgs) -> u8 {
    let p = match Provisioning::minimal(a.f, a.e, a.j, a.nc, a.address_bits) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let text = if a.json {
        serde_json::to_string_pretty(&p).expect("plain struct serializes")
    } else {
        dimension_table(&p)
    };
    println!("{text}");
    EXIT_OK
}

/// Aligned `name value` lines.
pub fn dimension_table(p: &Provisioning) -> String {
    let rows: [(&str, u64); 11] = [
        ("m", p.m),
        ("e", p.e),
        ("j", p.j),
        ("k_hat", p.k_hat as u64),
        ("j_hat", p.j_hat),
        ("leaf_rpcs", p.leaf_rpcs),
        ("inner_rpcs", p.inner_rpcs),
        ("n_c", p.n_c),
        ("h", p.h as u64),
        ("q", p.q as u64),
        ("total_committees", p.total_committees),
    ];
    rows.iter()
        .map(|(k, v)| format!("{k:<17}{v:>8}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn run(a: &RunArgs, seed_override: Option<u64>, verify: bool) -> u8 {
    let mut cfg = match load(a.config.as_deref(), SimConfig::default()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(r) = a.rounds {
        cfg.rounds = r;
    }
    if let Some(s) = seed_override.or(a.seed) {
        cfg.seed = s;
    }
    if verify {
        cfg.oracle_enabled = true;
    }
    let mut sim = match Simulation::new(cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    sim.set_audit(verify);
    if let Some(r) = a.inject_fault {
        sim.inject_fault(r);
    }
    let out = match output(a.report.as_deref()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot open report: {e}");
            return EXIT_IO;
        }
    };
    let mut writer = ReportWriter::new(out);
    let result = sim.run_to_end(|r| writer.round(r));
    let summary = sim.summary().clone();
    if let Err(e) = writer.summary(&summary) {
        eprintln!("error: cannot write report: {e}");
        return EXIT_IO;
    }
    match result {
        Ok(()) if verify && !summary.theorems_hold() => {
            eprintln!("verification failed");
            EXIT_DIVERGENCE
        }
        Ok(()) => EXIT_OK,
        Err(SimError::Io(e)) => {
            eprintln!("error: cannot write report: {e}");
            EXIT_IO
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DIVERGENCE
        }
    }
}

fn scale(a: &ScaleArgs, seed_override: Option<u64>) -> u8 {
    let mut base = match load(a.config.as_deref(), SimConfig::scale_base()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(r) = a.rounds {
        base.rounds = r;
    }
    if let Some(s) = seed_override.or(a.seed) {
        base.seed = s;
    }
    let rows = match scale_experiment(&base, &a.alphas) {
        Ok(r) => r,
        Err(e @ (ScaleError::BaseNotDoubled(_) | ScaleError::BadAlpha | ScaleError::Provisioning(_))) => {
            eprintln!("error: {e}");
            return EXIT_SCALE;
        }
        Err(ScaleError::Sim(SimError::Config(e))) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SCALE;
        }
    };
    let written = output(a.out.as_deref()).and_then(|o| write_scale_csv(&rows, o).map_err(io::Error::other));
    if let Err(e) = written {
        eprintln!("error: cannot write table: {e}");
        return EXIT_IO;
    }
    if rows.iter().all(|r| r.verdict == Verdict::WellProvisioned) {
        EXIT_OK
    } else {
        EXIT_SCALE
    }
}
