use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coopstream::mdp::oracle::{compare, random_instance};
use coopstream::pricing::{write_price_csv, PriceStep};
use coopstream::sim::{
    child_rng, run_episode, solved_policies, sweep_distance, write_json, write_slot_csv,
    write_sweep_csv, SimConfig,
};

/// Exit code for bad configs, bad arguments and I/O failures.
const EXIT_CONFIG: u8 = 2;
/// Exit code when a run completes but its check fails (oracle mismatch).
const EXIT_CHECK: u8 = 1;

#[derive(Parser)]
#[command(
    name = "coopstream",
    version,
    about = "Cooperative video uplink simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-source distance/ξ sweep of the recruitment protocol.
    Sweep(Common),
    /// Closed-loop multi-user episode with priced scheduling.
    Run(Common),
    /// Price iteration only; writes the price trajectory and policy dumps.
    Price(Common),
    /// Augmented-vs-opportunistic MDP check on random small instances.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Slots per run (per cell for `sweep`).
    #[arg(long)]
    slots: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<coopstream::Error> for Failure {
    fn from(e: coopstream::Error) -> Self {
        Failure::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Sweep(c) => sweep(&c),
        Command::Run(c) => run(&c),
        Command::Price(c) => price(&c),
        Command::Oracle { common, instances } => oracle(&common, instances),
    }
}

fn load(c: &Common) -> anyhow::Result<SimConfig> {
    let mut cfg = match &c.config {
        Some(p) => SimConfig::from_path(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    Ok(cfg)
}

fn out_path(c: &Common, stem: &str) -> PathBuf {
    c.out_dir.join(format!("{stem}.{}", c.format.ext()))
}

fn sweep(c: &Common) -> Result<(), Failure> {
    let mut cfg = load(c)?;
    if let Some(n) = c.slots {
        cfg.sweep.slots = n;
    }
    cfg.validate()?;
    let table = sweep_distance(&cfg, &cfg.sweep.distances, &cfg.sweep.xi_values)?;
    let path = out_path(c, "sweep");
    match c.format {
        Format::Csv => write_sweep_csv(&path, &table)?,
        Format::Json => write_json(&path, &table)?,
    }
    println!("wrote {} ({} cells)", path.display(), table.cells.len());
    Ok(())
}

fn run(c: &Common) -> Result<(), Failure> {
    let mut cfg = load(c)?;
    if let Some(n) = c.slots {
        cfg.n_slots = n;
    }
    cfg.validate()?;
    let out = run_episode(&cfg)?;
    let slots = out_path(c, "slots");
    match c.format {
        Format::Csv => {
            write_slot_csv(&slots, &out.records)?;
            write_price(&c.out_dir.join("price.csv"), &out.stats.price_history)?;
        }
        Format::Json => write_json(&slots, &out.records)?,
    }
    let summary = c.out_dir.join("summary.json");
    write_json(&summary, &out.stats)?;
    println!(
        "{} slots, lambda {:.4}, mean utilization {:.4}",
        out.stats.slots, out.stats.lambda, out.stats.mean_utilization
    );
    for u in &out.stats.users {
        println!(
            "user {}: rate {:.0} b/s, cooperating {:.3}, delivered utility {:.1}",
            u.user, u.mean_rate, u.cooperation_probability, u.delivered_utility
        );
    }
    println!("wrote {} and {}", slots.display(), summary.display());
    Ok(())
}

fn write_price(path: &Path, history: &[PriceStep]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_price_csv(BufWriter::new(file), history)
        .with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct PriceReport<'a> {
    lambda: f64,
    converged: bool,
    residual: f64,
    demands: &'a [f64],
    history: &'a [PriceStep],
}

fn price(c: &Common) -> Result<(), Failure> {
    let cfg = load(c)?;
    cfg.validate()?;
    let (models, out) = solved_policies(&cfg)?;
    let path = out_path(c, "price");
    match c.format {
        Format::Csv => write_price(&path, &out.history)?,
        Format::Json => write_json(
            &path,
            &PriceReport {
                lambda: out.lambda,
                converged: out.converged,
                residual: out.residual,
                demands: &out.demands,
                history: &out.history,
            },
        )?,
    }
    for (i, (m, s)) in models.iter().zip(&out.solutions).enumerate() {
        let p = c.out_dir.join(format!("policy_user{i}.txt"));
        fs::write(&p, s.dump(m)).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "lambda {:.6} after {} iterations, residual {:.4}, converged {}",
        out.lambda,
        out.history.len(),
        out.residual,
        out.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct OracleRow {
    instance: usize,
    alpha: f64,
    traffic_states: usize,
    channel_states: usize,
    max_abs_gap: f64,
    max_excess: f64,
}

const ORACLE_TOL: f64 = 1e-8;
/// Random stream for oracle instances, apart from the simulator streams.
const ORACLE_STREAM: u64 = 7;

fn oracle(c: &Common, instances: usize) -> Result<(), Failure> {
    if instances == 0 {
        return Err(anyhow!("--instances must be at least 1").into());
    }
    let cfg = load(c)?;
    let mut rows = Vec::with_capacity(instances);
    for i in 0..instances {
        let inst = random_instance(&mut child_rng(cfg.seed, ORACLE_STREAM, i as u64));
        let (gap, excess) = compare(&inst)?;
        rows.push(OracleRow {
            instance: i,
            alpha: inst.alpha,
            traffic_states: inst.actions.len(),
            channel_states: inst.channels.len(),
            max_abs_gap: gap,
            max_excess: excess,
        });
    }
    let path = out_path(c, "oracle");
    match c.format {
        Format::Csv => write_oracle_csv(&path, &rows)?,
        Format::Json => write_json(&path, &rows)?,
    }
    let worst = rows.iter().map(|r| r.max_abs_gap).fold(0.0, f64::max);
    println!(
        "{instances} instances, worst gap {worst:.3e}; wrote {}",
        path.display()
    );
    let bad = rows.iter().filter(|r| r.max_abs_gap > ORACLE_TOL).count();
    if bad > 0 {
        return Err(Failure::Check(format!(
            "{bad} instances differ by more than {ORACLE_TOL:e}"
        )));
    }
    Ok(())
}

fn write_oracle_csv(path: &Path, rows: &[OracleRow]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
