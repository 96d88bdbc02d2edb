use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cipherloop::experiment::{self, ExperimentConfig, ExperimentError, ExperimentReport, PlantConfig, RunOptions};
use cipherloop::plant_sim::dc_motor;
use cipherloop::stability::{min_quantization_gain, LmiProblem, StabilityCertificate};

/// Encrypted sampled-data control experiments.
#[derive(Parser)]
#[command(name = "cipherloop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or a bundled preset.
    Run {
        /// Experiment config (TOML).
        config: Option<PathBuf>,
        /// Bundled preset instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory; defaults to $CIPHERLOOP_OUT/<name> or ./out/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "CIPHERLOOP_OUT", hide_env_values = true)]
        out_root: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Verify an encrypted-run transcript offline.
    Replay {
        transcript: PathBuf,
        /// Rerun with this encryption seed instead of the recorded one.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-validate a stored stability certificate.
    CheckCert {
        certificate: PathBuf,
        /// `dc_motor` or an experiment config whose plant section is used.
        #[arg(long, default_value = "dc_motor")]
        plant: String,
        #[arg(long)]
        h: f64,
        /// Smallest accepted LMI margin.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// List the bundled presets, or print one.
    Presets { name: Option<String> },
}

fn print_report(report: &ExperimentReport, out: &Path) {
    println!("experiment {} (seed {}) -> {}", report.name, report.seed, out.display());
    if !report.feasibility.is_empty() {
        println!("\n{:>8}  {:>9}  {:>12}  {:>12}", "h", "feasible", "lambda_min", "margin");
        for r in &report.feasibility {
            let lam = r.lambda_min.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
            println!("{:>8}  {:>9}  {:>12}  {:>12.3e}", r.h, r.feasible, lam, r.margin);
        }
    }
    if !report.runs.is_empty() {
        println!("\n{:>8}  {:<16}  {:>12}  {:>12}  status", "h", "schedule", "mrms", "|z(end)|");
        for r in &report.runs {
            let m = r.mrms.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
            println!("{:>8}  {:<16}  {:>12}  {:>12.3e}  {}", r.h, r.schedule, m, r.z_final, r.status);
        }
    }
    if !report.audits.is_empty() {
        println!("\n{:<12}  {:>9}  {:>10}  {:>10}  {:>8}", "audit", "intervals", "violations", "cumulative", "residual");
        for a in &report.audits {
            let res = a.residual.as_ref().map_or("-", |r| if r.entered_in_time { "entered" } else { "late" });
            println!("{:<12}  {:>9}  {:>10}  {:>10}  {:>8}", a.label, a.intervals, a.violations, a.cumulative_ok, res);
        }
    }
}

fn run_command(
    config: Option<PathBuf>,
    preset: Option<String>,
    out: Option<PathBuf>,
    out_root: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> Result<ExitCode, ExperimentError> {
    let cfg = match (config, preset) {
        (Some(path), None) => ExperimentConfig::from_file(&path)?,
        (None, Some(name)) => ExperimentConfig::preset(&name)?,
        _ => return Err(ExperimentError::Config("give either a config file or --preset".into())),
    };
    let out_dir = out.unwrap_or_else(|| out_root.unwrap_or_else(|| PathBuf::from("out")).join(&cfg.name));
    let report = experiment::run(&cfg, &RunOptions { out_dir: out_dir.clone(), seed, jobs })?;
    print_report(&report, &out_dir);
    if report.unrunnable() > 0 {
        eprintln!("{} runs skipped: no certificate at their sampling period", report.unrunnable());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn check_cert(certificate: &Path, plant: &str, h: f64, tolerance: f64) -> Result<ExitCode, ExperimentError> {
    let cr = match plant {
        "dc_motor" => dc_motor(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{path}: {e}")))?;
            #[derive(serde::Deserialize)]
            struct PlantOnly {
                plant: PlantConfig,
            }
            let p: PlantOnly = toml::from_str(&text).map_err(|e| ExperimentError::Config(format!("{path}: {e}")))?;
            p.plant.realization()?
        }
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(ExperimentError::Config(format!("h = {h} must be positive")));
    }
    let problem = LmiProblem::new(&cr, h);
    let (cert, report) = StabilityCertificate::load(certificate, &problem, tolerance)?;
    if cert.h.to_bits() != h.to_bits() {
        return Err(ExperimentError::Config(format!("certificate is for h = {}, not {h}", cert.h)));
    }
    let m = &report.margins;
    println!("h = {h}, ratio = {:e}", cert.ratio);
    for (name, v) in [
        ("c28", m.c28),
        ("c29", m.c29),
        ("c30", m.c30),
        ("c31", m.c31),
        ("P", m.p),
        ("R", m.r),
        ("Psi", m.psi),
        ("epsilon", m.epsilon),
    ] {
        println!("  {name:<8} {v:>12.4e}");
    }
    if report.feasible {
        match min_quantization_gain(&cert, &cr) {
            Ok(g) => println!("valid; smallest static gain {g:.4e}"),
            Err(e) => println!("valid; no admissible static gain: {e}"),
        }
        Ok(ExitCode::SUCCESS)
    } else {
        println!("invalid: {}", report.violations().join(", "));
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, preset, out, out_root, seed, jobs } => run_command(config, preset, out, out_root, seed, jobs),
        Command::Replay { transcript, seed } => experiment::replay_file(&transcript, seed).map(|v| {
            println!("{v}");
            if v.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }),
        Command::CheckCert { certificate, plant, h, tolerance } => check_cert(&certificate, &plant, h, tolerance),
        Command::Presets { name: None } => {
            experiment::preset_names().for_each(|n| println!("{n}"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { name: Some(n) } => match experiment::preset_text(&n) {
            Some(t) => {
                print!("{t}");
                Ok(ExitCode::SUCCESS)
            }
            None => Err(ExperimentError::Config(format!("unknown preset {n}"))),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
