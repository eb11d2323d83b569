//! `esa-ipa`: train, simulate, evaluate and gradient-check scan policies for
//! the electronically steered radar scenario.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure (including a gradient check below its cosine threshold).

mod output;

use clap::{Args, Parser, Subcommand};
use esa_ipa::ipa::{gradcheck_seeds, gradient_check, train, FdStep, TrainingOptions};
use esa_ipa::scenario::{evaluate_policy, pointed_targets};
use esa_ipa::{Environment, Error, RadarEnv, ScenarioConfig};
use output::{AlphaFile, Manifest, Outputs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "esa-ipa", version, about = "Policy-gradient scan scheduling for an electronically steered radar")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file (TOML). The built-in two-target scenario is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Master seed; overrides the `seed` field of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Override any scenario field, e.g. `--set filter.particles=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run stochastic gradient ascent on the scan policy.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Dump one episode as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy parameters (JSON); defaults to `training.alpha0`.
        #[arg(long)]
        alpha: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the expected return of a policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Compare the IPA gradient with common-random-number finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<PathBuf>,
        /// IPA episodes (default `gradcheck.ipa_episodes`).
        #[arg(long)]
        episodes: Option<usize>,
        /// Finite-difference seed pairs (default `gradcheck.fd_seeds`).
        #[arg(long)]
        fd_seeds: Option<usize>,
        /// Relative finite-difference step (default `gradcheck.epsilon`).
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
    },
}

/// Failure of a command, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path, &common.overrides)?,
        None => ScenarioConfig::from_toml_with_overrides("", &common.overrides)?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_alpha(path: Option<&Path>, cfg: &ScenarioConfig, env: &RadarEnv) -> Result<Vec<f64>, Failure> {
    let alpha = match path {
        Some(p) => AlphaFile::read(p)?.alpha,
        None => cfg.training.alpha0.clone(),
    };
    if alpha.len() != env.param_dim() {
        return Err(Error::Dimension {
            what: "policy parameters",
            expected: env.param_dim(),
            found: alpha.len(),
        }
        .into());
    }
    if !alpha.iter().all(|v| v.is_finite()) {
        return Err(usage("policy parameters must be finite"));
    }
    Ok(alpha)
}

fn run(command: Command) -> Result<(), Failure> {
    let started = Instant::now();
    match command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let env = RadarEnv::from_config(&cfg)?;
            let opts = TrainingOptions {
                iterations: cfg.training.iterations,
                batch: cfg.training.batch,
                schedule: cfg.step_schedule()?,
                bounds: Some(cfg.param_box()?),
            };
            let (params, curve) = train(&env, &cfg.episode_settings(), &cfg.training.alpha0, &opts, cfg.seed)?;
            let mut out = Outputs::new(&common.out)?;
            out.write("learning_curve.csv", output::learning_curve_csv(&curve)?)?;
            out.write("alpha_final.json", output::json(&AlphaFile::from(&params))?)?;
            finish(out, "train", &cfg, started)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!(
                    "{} iterations: mean return {:.4} -> {:.4}, alpha = {:?}",
                    curve.len(),
                    first.mean_return,
                    last.mean_return,
                    params.alpha
                );
            }
        }
        Command::Simulate { common, alpha } => {
            let cfg = load_config(&common)?;
            let env = RadarEnv::from_config(&cfg)?;
            let alpha = load_alpha(alpha.as_deref(), &cfg, &env)?;
            let rec = esa_ipa::simulate_episode(&env, &alpha, &cfg.episode_settings(), cfg.seed)?;
            let pointed = pointed_targets(&env, &rec);
            let mut out = Outputs::new(&common.out)?;
            out.write("trajectory.csv", output::trajectory_csv(&rec)?)?;
            out.write("actions.csv", output::actions_csv(&rec, &pointed)?)?;
            finish(out, "simulate", &cfg, started)?;
            println!("return {:.6} over {} looks", rec.total_return, rec.actions.len());
        }
        Command::Evaluate { common, alpha, episodes } => {
            if episodes == 0 {
                return Err(usage("--episodes must be >= 1"));
            }
            let cfg = load_config(&common)?;
            let env = RadarEnv::from_config(&cfg)?;
            let alpha = load_alpha(alpha.as_deref(), &cfg, &env)?;
            let report = evaluate_policy(&env, &alpha, &cfg.episode_settings(), cfg.seed, episodes)?;
            let mut out = Outputs::new(&common.out)?;
            out.write("eval.json", output::json(&output::EvalFile::new(&alpha, cfg.seed, report.clone()))?)?;
            finish(out, "evaluate", &cfg, started)?;
            match report.stderr {
                Some(se) => println!("mean return {:.6} ± {:.6} ({episodes} episodes)", report.mean_return, se),
                None => println!("mean return {:.6} (1 episode)", report.mean_return),
            }
        }
        Command::Gradcheck {
            common,
            alpha,
            episodes,
            fd_seeds,
            epsilon,
        } => {
            let cfg = load_config(&common)?;
            let eps = epsilon.unwrap_or(cfg.gradcheck.epsilon);
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(usage(format!("--epsilon must be > 0, got {eps}")));
            }
            let ipa_n = episodes.unwrap_or(cfg.gradcheck.ipa_episodes);
            let fd_n = fd_seeds.unwrap_or(cfg.gradcheck.fd_seeds);
            if ipa_n < 2 {
                return Err(usage("--episodes must be >= 2"));
            }
            if fd_n < 30 {
                return Err(usage(format!("--fd-seeds must be >= 30, got {fd_n}")));
            }
            let env = RadarEnv::from_config(&cfg)?;
            let alpha = load_alpha(alpha.as_deref(), &cfg, &env)?;
            let (ipa_seeds, fd_seed_list) = gradcheck_seeds(cfg.seed, ipa_n, fd_n);
            let report = gradient_check(
                &env,
                &alpha,
                &cfg.episode_settings(),
                &ipa_seeds,
                &fd_seed_list,
                FdStep::Relative(eps),
                cfg.gradcheck.cosine_threshold,
            )?;
            let mut out = Outputs::new(&common.out)?;
            out.write("gradcheck.json", output::json(&report)?)?;
            finish(out, "gradcheck", &cfg, started)?;
            println!(
                "cosine {} (threshold {}): {}",
                report.cosine.map_or("undefined".into(), |c| format!("{c:.4}")),
                report.threshold,
                report.status
            );
            if !report.passed {
                return Err(Failure {
                    code: 2,
                    message: "gradient check failed: cosine below threshold".into(),
                });
            }
        }
    }
    Ok(())
}

fn finish(mut out: Outputs, command: &str, cfg: &ScenarioConfig, started: Instant) -> Result<(), Failure> {
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg.to_toml_string()?,
        outputs: out.names().to_vec(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let text = output::json(&manifest)?;
    out.write("manifest.json", text)?;
    out.commit();
    Ok(())
}
