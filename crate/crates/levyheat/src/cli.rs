//! Command-line front end: config-driven runs with deterministic outputs.
//!
//! Run artifacts land in a directory named by the config content hash, so
//! re-running the same file overwrites the same artifacts and different
//! experiments never collide. CSV output is comma-separated UTF-8 with a
//! mandatory header row preceded by one `#`-prefixed metadata line; JSON
//! output has a stable key order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{BuiltExperiment, ExperimentConfig, InitialCondition, SCHEMA_VERSION};
use crate::energy::{criterion_additive, criterion_multiplicative, CriterionReport};
use crate::ensemble::{detect_mean_square_blowup, run_ensemble, BlowupTrigger, EnsembleEstimate};
use crate::error::{Error, Result};
use crate::integrator::{simulate_path, SampleKind};
use crate::noise::AdditiveNoise;
use crate::oracles::{
    ito_balance_l2, ito_balance_multiplicative, martingale_checks, scalar_second_moment_check,
};
use crate::svg::render_energy_plot;

#[derive(Debug, Parser)]
#[command(
    name = "levyheat",
    version,
    about = "Blow-up laboratory for stochastic semilinear heat equations with Levy noise"
)]
pub struct Cli {
    /// Worker threads for ensemble runs (0 = library default)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the blow-up criterion of the configured model on `u0`
    Criterion {
        #[arg(long)]
        config: PathBuf,
        /// Parent output directory (defaults to the config `output.dir`, else `runs`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a single sample path and dump its norm trajectory
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the Monte Carlo ensemble: energy series, detection, summary, plot
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the internal consistency oracles against the configured model
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Also fail on soft diagnostics (currently none; reserved)
        #[arg(long)]
        strict: bool,
    },
    /// Evaluate the criterion along an initial-amplitude axis
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated amplitudes replacing the initial-condition amplitude
        #[arg(long)]
        amplitudes: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps an error to the process exit code contract:
/// 1 invalid input, 2 oracle failure, 3 runtime failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigInvalid(_)
        | Error::ConfigParse(_)
        | Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::InvalidLevyMeasure(_)
        | Error::InvalidModel(_)
        | Error::InvalidNoise(_) => 1,
        Error::OracleFailure(_) => 2,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // a failed build here means a pool was already installed (tests);
        // the run stays correct either way, so ignore the error
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Criterion { config, out } => cmd_criterion(&config, out.as_deref()),
        Command::Simulate { config, out, seed } => cmd_simulate(&config, out.as_deref(), seed),
        Command::Ensemble { config, out, seed } => cmd_ensemble(&config, out.as_deref(), seed),
        Command::Verify { config, strict } => cmd_verify(&config, strict),
        Command::Sweep {
            config,
            amplitudes,
            out,
        } => cmd_sweep(&config, &amplitudes, out.as_deref()),
    }
}

fn load(config_path: &Path) -> Result<(ExperimentConfig, BuiltExperiment)> {
    let cfg = ExperimentConfig::load(config_path)?;
    let built = cfg.build()?;
    Ok((cfg, built))
}

/// Resolves and creates `<parent>/<config-hash>/`.
fn run_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    let parent = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let dir = parent.join(cfg.hash());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn metadata_line(cfg: &ExperimentConfig) -> String {
    format!(
        "# schema_version={} config_hash={}",
        SCHEMA_VERSION,
        cfg.hash()
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Evaluates the criterion matching the configured noise family. A `none`
/// noise section is treated as additive with zero coefficients.
pub fn evaluate_criterion(built: &BuiltExperiment) -> Result<CriterionReport> {
    match (&built.additive, &built.multiplicative) {
        (_, Some(mul)) => {
            criterion_multiplicative(&built.u0, &built.params, mul, &built.levy, false)
        }
        (Some(add), None) => criterion_additive(&built.u0, &built.params, add, &built.levy),
        (None, None) => criterion_additive(
            &built.u0,
            &built.params,
            &AdditiveNoise::zero(),
            &built.levy,
        ),
    }
}

fn cmd_criterion(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let (cfg, built) = load(config_path)?;
    let report = evaluate_criterion(&built)?;
    let dir = run_dir(&cfg, out)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_text(&dir.join("criterion.json"), &json)?;
    println!(
        "criterion: lhs = {:.6e}, verdict = {}",
        report.lhs,
        if report.predicted() {
            "blow-up predicted"
        } else {
            "not predicted"
        }
    );
    if let (Some(k), Some(t)) = (report.k_min, report.tstar_bound) {
        println!("criterion: K_min = {k:.6e}, T* bound = {t:.6e}");
    }
    println!("wrote {}", dir.join("criterion.json").display());
    Ok(())
}

fn cmd_simulate(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let (cfg, built) = load(config_path)?;
    let mut ens = built.ensemble;
    if let Some(s) = seed {
        ens.master_seed = s;
    }
    let mut rng = crate::ensemble::rng_for_path(ens.master_seed, 0);
    let rec = simulate_path(
        &built.params,
        &built.noise,
        &built.levy,
        &built.u0,
        &ens.scheme,
        ens.horizon,
        ens.blowup_threshold,
        &mut rng,
    )?;
    let dir = run_dir(&cfg, out)?;
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", metadata_line(&cfg));
    let _ = writeln!(csv, "time,kind,l2_sq,h1_sq,lmp1");
    for s in &rec.samples {
        let kind = match s.kind {
            SampleKind::Step => "step",
            SampleKind::PreJump => "pre_jump",
            SampleKind::PostJump => "post_jump",
        };
        let _ = writeln!(csv, "{},{},{},{},{}", s.time, kind, s.l2_sq, s.h1_sq, s.lmp1);
    }
    write_text(&dir.join("trajectory.csv"), &csv)?;
    match &rec.blowup {
        Some(b) => println!("path blew up at tau = {:.6}", b.tau),
        None => println!("path bounded up to t = {:.6}", rec.final_time()),
    }
    println!("wrote {}", dir.join("trajectory.csv").display());
    Ok(())
}

/// Stable-key-order run summary.
#[derive(Debug, Serialize)]
struct RunSummary {
    schema_version: u32,
    config_hash: String,
    paths: usize,
    master_seed: u64,
    dt: f64,
    horizon: f64,
    censored_paths: usize,
    tau_ms: Option<f64>,
    trigger: Option<BlowupTrigger>,
    criterion: CriterionReport,
}

fn energy_csv(cfg: &ExperimentConfig, est: &EnsembleEstimate) -> String {
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", metadata_line(cfg));
    let _ = writeln!(
        csv,
        "time,v_mean,v_se,g_mean,g_se,p_mean,p_se,alive,blowup_fraction"
    );
    for k in 0..est.times.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            est.times[k],
            est.v_mean[k],
            est.v_se[k],
            est.g_mean[k],
            est.g_se[k],
            est.p_mean[k],
            est.p_se[k],
            est.alive[k],
            est.blowup_fraction[k]
        );
    }
    csv
}

fn cmd_ensemble(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let (cfg, built) = load(config_path)?;
    let mut ens = built.ensemble;
    if let Some(s) = seed {
        ens.master_seed = s;
    }
    let est = run_ensemble(&ens, &built.params, &built.noise, &built.levy, &built.u0)?;
    let detection = detect_mean_square_blowup(&est, built.theta_ms);
    let criterion = evaluate_criterion(&built)?;

    let dir = run_dir(&cfg, out)?;
    write_text(&dir.join("energy.csv"), &energy_csv(&cfg, &est))?;

    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        paths: ens.paths,
        master_seed: ens.master_seed,
        dt: ens.scheme.dt,
        horizon: ens.horizon,
        censored_paths: est.censored_count(),
        tau_ms: detection.map(|(t, _)| t),
        trigger: detection.map(|(_, tr)| tr),
        criterion,
    };
    write_text(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;

    match render_energy_plot(
        &est,
        summary.tau_ms,
        summary.criterion.tstar_bound,
        &format!("E||u(t)||^2, {} paths", ens.paths),
    ) {
        Ok(svg) => write_text(&dir.join("energy.svg"), &svg)?,
        Err(e) => eprintln!("plot skipped: {e}"),
    }

    match detection {
        Some((t, tr)) => println!("mean-square blow-up detected at t = {t:.6} ({tr:?})"),
        None => println!("no mean-square blow-up detected up to t = {:.6}", ens.horizon),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_verify(config_path: &Path, _strict: bool) -> Result<()> {
    let (_cfg, built) = load(config_path)?;
    let mut failures: Vec<String> = Vec::new();
    let mut report_line = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "ok  " } else { "FAIL" });
        if !pass {
            failures.push(name.to_string());
        }
    };

    let est = run_ensemble(
        &built.ensemble,
        &built.params,
        &built.noise,
        &built.levy,
        &built.u0,
    )?;

    match (&built.additive, &built.multiplicative) {
        (Some(add), _) => {
            let bal = ito_balance_l2(
                &est,
                &built.params,
                add,
                built.grid,
                &built.levy,
                built.ensemble.scheme.dt,
                built.ensemble.blowup_threshold,
            )?;
            report_line(
                "l2_energy_balance",
                bal.pass,
                format!("max gap {:.3e} <= tol {:.3e}", bal.max_abs_gap, bal.tolerance),
            );
            let mart = martingale_checks(
                add,
                &built.levy,
                built.grid,
                &built.u0,
                built.ensemble.horizon.min(add.decay_horizon()),
                built.ensemble.scheme.dt,
                2000,
                built.ensemble.master_seed ^ 0x6f72_6163,
            )?;
            report_line(
                "martingale_mean",
                mart.mean_pass,
                format!(
                    "brownian {:.3e} (se {:.3e}), count {:.3e} (se {:.3e})",
                    mart.brownian_mean, mart.brownian_mean_se, mart.count_mean, mart.count_mean_se
                ),
            );
            report_line(
                "ito_isometry",
                mart.isometry_pass,
                format!(
                    "var {:.4e} vs {:.4e} (se {:.3e})",
                    mart.brownian_var, mart.brownian_var_closed, mart.brownian_var_se
                ),
            );
        }
        (None, Some(mul)) => {
            let bal = ito_balance_multiplicative(
                &est,
                &built.params,
                mul,
                &built.levy,
                built.ensemble.scheme.dt,
                built.ensemble.blowup_threshold,
            )?;
            report_line(
                "l2_energy_balance",
                bal.pass,
                format!("max gap {:.3e} <= tol {:.3e}", bal.max_abs_gap, bal.tolerance),
            );
            let t_end = built.ensemble.horizon;
            let moments = scalar_second_moment_check(
                mul,
                &built.levy,
                1.0,
                &[0.5 * t_end, t_end],
                50_000,
                built.ensemble.master_seed ^ 0x6d6f_6d32,
            )?;
            for r in &moments {
                report_line(
                    "scalar_second_moment",
                    r.pass,
                    format!(
                        "t={} empirical {:.5e} vs {:.5e} (se {:.2e})",
                        r.time, r.empirical, r.closed_form, r.se
                    ),
                );
            }
        }
        (None, None) => {
            println!("ok   (noise family `none`: only the deterministic balance applies)");
            let zero = AdditiveNoise::zero();
            let bal = ito_balance_l2(
                &est,
                &built.params,
                &zero,
                built.grid,
                &built.levy,
                built.ensemble.scheme.dt,
                built.ensemble.blowup_threshold,
            )?;
            report_line(
                "l2_energy_balance",
                bal.pass,
                format!("max gap {:.3e} <= tol {:.3e}", bal.max_abs_gap, bal.tolerance),
            );
        }
    }

    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Error::OracleFailure(format!(
            "checks failed: {}",
            failures.join(", ")
        )))
    }
}

fn cmd_sweep(config_path: &Path, amplitudes: &str, out: Option<&Path>) -> Result<()> {
    let (cfg, _) = load(config_path)?;
    let axis: Vec<f64> = amplitudes
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad amplitude `{s}`")))
        })
        .collect::<Result<_>>()?;
    if axis.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one amplitude".into(),
        ));
    }

    let mut csv = String::new();
    let _ = writeln!(csv, "{}", metadata_line(&cfg));
    let _ = writeln!(csv, "amplitude,lhs,verdict,k_min,tstar_bound");
    for &a in &axis {
        let mut variant = cfg.clone();
        variant.initial = match variant.initial {
            InitialCondition::Sine { mode, .. } => InitialCondition::Sine { amplitude: a, mode },
            InitialCondition::Bump { .. } => InitialCondition::Bump { amplitude: a },
            InitialCondition::Zero => {
                return Err(Error::InvalidArgument(
                    "cannot sweep amplitude of a zero initial condition".into(),
                ))
            }
        };
        let report = evaluate_criterion(&variant.build()?)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            a,
            report.lhs,
            if report.predicted() { "blowup" } else { "bounded" },
            report.k_min.map_or(String::new(), |k| k.to_string()),
            report
                .tstar_bound
                .map_or(String::new(), |t| t.to_string()),
        );
        println!(
            "amplitude {a}: lhs = {:.6e}, {}",
            report.lhs,
            if report.predicted() {
                "blow-up predicted"
            } else {
                "not predicted"
            }
        );
    }
    let dir = run_dir(&cfg, out)?;
    write_text(&dir.join("sweep.csv"), &csv)?;
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}
