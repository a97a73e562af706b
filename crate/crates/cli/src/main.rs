use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apn_doa::harness::flops::flop_polynomials;
use apn_doa::harness::montecarlo::{run_monte_carlo, run_trial};
use apn_doa::harness::results::{report_rows, trial_rows, write_rows, OutputFormat};
use apn_doa::harness::scenario::{parse_estimators, Estimator, ScenarioConfig};
use apn_doa::harness::snapshot_io::{load_snapshots, save_snapshots};
use apn_doa::harness::verify::{run_verify, VerifyOptions};
use apn_doa::music::{music_estimate, MusicOptions};
use apn_doa::optimizer::{apn_estimate, ApnOptions};
use apn_doa::{ArrayGeometry, SampleCovariance};

/// Direction-of-arrival estimation under unknown, unequal sensor noise.
#[derive(Parser)]
#[command(name = "apn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate angles (and noise powers) from a snapshot file.
    Estimate(EstimateArgs),
    /// Synthesize one trial, run the estimators on it, optionally dump the snapshots.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo sweep and write per-trial and aggregate rows.
    Sweep(SweepArgs),
    /// Print the four flop-model polynomials.
    Flops {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
    },
    /// Finite-difference and identity checks; exits nonzero on failure.
    Verify {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled scenario: uncorrelated or correlated.
    #[arg(long, default_value = "uncorrelated")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated SNR values in dB.
    #[arg(long)]
    snr: Option<String>,
    /// Comma-separated estimator names, e.g. music,dmlo,sml.
    #[arg(long)]
    estimators: Option<String>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => ScenarioConfig::preset(&self.preset).map_err(|e| e.to_string())?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(list) = &self.snr {
            cfg.snr_db = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|e| format!("bad SNR '{s}': {e}")))
                .collect::<Result<_, _>>()?;
        }
        if let Some(list) = &self.estimators {
            cfg.estimators = parse_estimators(list).map_err(|e| e.to_string())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// APND binary or interleaved re/im text file, one sensor per row.
    #[arg(long)]
    input: PathBuf,
    /// Number of sources.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "sml")]
    estimator: String,
    /// Comma-separated sensor positions in half-wavelengths (default: uniform line).
    #[arg(long)]
    positions: Option<String>,
    /// Sensor spacing in half-wavelengths for the uniform line.
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Write the snapshots here (APND, or text for .csv/.txt).
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    trials: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "APN_THREADS")]
    threads: Option<usize>,
    #[arg(long, default_value = "csv")]
    format: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(a) => estimate(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Flops { m, k } => flops(m, k),
        Command::Verify { instances, seed } => verify(instances, seed),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

fn estimate(a: &EstimateArgs) -> Result<ExitCode, String> {
    let z = load_snapshots(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let geometry = match &a.positions {
        Some(list) => {
            let p = list
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad position '{s}': {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            ArrayGeometry::new(p)
        }
        None => ArrayGeometry::new((0..z.num_sensors()).map(|i| i as f64 * a.spacing).collect()),
    }
    .map_err(|e| e.to_string())?;
    let r_z = SampleCovariance::from_snapshots(&z);
    let est: Estimator = a.estimator.parse().map_err(|e: apn_doa::Error| e.to_string())?;
    println!("estimator: {est}");
    println!("sensors: {}  snapshots: {}", z.num_sensors(), z.num_snapshots());
    match est {
        Estimator::Music => {
            let mut res = music_estimate(&r_z, &geometry, a.k, &MusicOptions::default()).map_err(|e| e.to_string())?;
            res.theta_hat.sort_by(f64::total_cmp);
            println!("theta_hat: {}", fmt_list(&res.theta_hat));
            println!("padded: {}", res.padded);
        }
        Estimator::Apn(target) => {
            let res = apn_estimate(&r_z, &geometry, a.k, target, &ApnOptions::default()).map_err(|e| e.to_string())?;
            println!("theta_hat: {}", fmt_list(&res.theta_hat));
            if let Some(l) = &res.lambda_hat {
                println!("lambda_hat: {}", fmt_list(l));
            }
            println!("cost: {:.10e}", res.cost);
            println!("stage1_iterations: {:?}", res.stage1_iterations);
            println!("stage3_iterations: {}", res.stage3_iterations);
            println!("converged: {}", res.converged);
            println!("diverged_lambda: {}", res.diverged_lambda);
            println!("flop_estimate: {:.0}", res.flop_estimate);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode, String> {
    let mut cfg = a.scenario.resolve()?;
    cfg.snr_db.truncate(1);
    cfg.trials = cfg.trials.max(a.trial + 1);
    cfg.validate().map_err(|e| e.to_string())?;
    let scenario = cfg.build().map_err(|e| e.to_string())?;
    if let Some(path) = &a.dump {
        let z = scenario.trial_data(cfg.snr_db[0], 0, a.trial).map_err(|e| e.to_string())?;
        save_snapshots(path, &z).map_err(|e| format!("{}: {e}", path.display()))?;
        eprintln!("wrote {}x{} snapshots to {}", z.num_sensors(), z.num_snapshots(), path.display());
    }
    let records = run_trial(&cfg, &scenario, 0, a.trial).map_err(|e| e.to_string())?;
    let rows: Vec<_> = records.iter().flat_map(trial_rows).collect();
    write_rows(io::stdout().lock(), &rows, OutputFormat::Csv).map_err(|e| e.to_string())?;
    for r in records.iter().filter(|r| r.failed()) {
        eprintln!("{}: {}", r.estimator, r.error.as_deref().unwrap_or_default());
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: &SweepArgs) -> Result<ExitCode, String> {
    let mut cfg = a.scenario.resolve()?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    let format: OutputFormat = a.format.parse().map_err(|e: apn_doa::Error| e.to_string())?;
    let report = run_monte_carlo(&cfg, a.threads).map_err(|e| e.to_string())?;
    let rows = report_rows(&report);
    match &a.out {
        Some(path) => write_to(path, |w| write_rows(w, &rows, format))?,
        None => write_rows(io::stdout().lock(), &rows, format).map_err(|e| e.to_string())?,
    }
    let failures: usize = report.aggregates.iter().map(|g| g.failures).sum();
    if failures > 0 {
        eprintln!("{failures} estimator runs failed; see rows with empty theta_hat");
    }
    Ok(ExitCode::SUCCESS)
}

fn write_to(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> apn_doa::Result<()>) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| e.to_string())?;
    w.flush().map_err(|e| e.to_string())
}

fn flops(m: usize, k: usize) -> Result<ExitCode, String> {
    if !(m >= k && k >= 1) {
        return Err(format!("need M >= K >= 1, got M = {m}, K = {k}"));
    }
    let p = flop_polynomials(m, k);
    println!("cost_D {}", p.cost_d);
    println!("cost_S {}", p.cost_s);
    println!("cost_D_with_derivs {}", p.cost_d_with_derivs);
    println!("cost_S_with_derivs {}", p.cost_s_with_derivs);
    Ok(ExitCode::SUCCESS)
}

fn verify(instances: usize, seed: u64) -> Result<ExitCode, String> {
    let opts = VerifyOptions { instances, seed, ..VerifyOptions::default() };
    let report = run_verify(&opts).map_err(|e| e.to_string())?;
    for c in &report.checks {
        let tag = if c.passed() { "ok  " } else { "FAIL" };
        println!("{tag} {:<36} max {:.3e}  tol {:.0e}  worst #{}", c.name, c.max_error, c.tolerance, c.worst_instance);
    }
    println!("{} instances, {}", report.instances, if report.passed() { "all checks passed" } else { "checks failed" });
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
