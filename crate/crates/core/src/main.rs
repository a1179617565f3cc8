use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use clf_rl::commands::{self, ReferenceSource, DEFAULT_INVARIANCE_THRESHOLD, DEFAULT_LIBRARY_VELOCITIES};
use clf_rl::config::ExperimentConfig;
use clf_rl::env::RewardVariant;
use clf_rl::gait_library::{convert_hlip, GaitLibrary, ResetMap, HLIP_FIT_DEGREE};
use clf_rl::trainer::{self, Checkpoint};
use clf_rl::{Error, Result};

/// CLF-shaped reinforcement learning for reference tracking.
///
/// Flags override the config file, which overrides built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "clf-rl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Hlip,
    Gaitlib,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepParam {
    ComHeight,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a reference trajectory to CSV (t, outputs, output rates).
    GenRef {
        /// Experiment config (TOML); supplies H-LIP parameters, dt and the library path.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Desired forward velocity (m/s).
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        velocity: f64,
        #[arg(long, value_enum, default_value = "hlip")]
        source: Source,
        /// Gait library JSON (overrides gait_library_path).
        #[arg(long)]
        library: Option<PathBuf>,
        /// Number of steps to sample.
        #[arg(long, default_value_t = 4)]
        steps: usize,
        /// Sample spacing in seconds (defaults to env.dt).
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert H-LIP references into a gait library and its reset map.
    GenLibrary {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated nominal velocities.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        velocities: Vec<f64>,
        #[arg(long, default_value_t = HLIP_FIT_DEGREE)]
        degree: usize,
        /// Library JSON output.
        #[arg(long)]
        out: PathBuf,
        /// Reset-map JSON output.
        #[arg(long)]
        reset_out: PathBuf,
    },
    /// Report per-entry impact-invariance residuals; exit 1 if any reaches the threshold.
    CheckInvariance {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        reset_map: PathBuf,
        #[arg(long, default_value_t = DEFAULT_INVARIANCE_THRESHOLD)]
        threshold: f64,
    },
    /// Train a policy; writes train_log.csv, checkpoint.json and config.toml.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Output directory (defaults to output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministic roll-outs of a checkpoint; writes eval_summary.csv and one trajectory per command.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated commanded velocities.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0")]
        commands: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint across sampled randomizations; writes sweep_samples.csv and sweep_summary.csv.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "com-height")]
        param: SweepParam,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        command: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    TrackingOnly,
    TrackingPlusDecayTanh,
    TrackingPlusDecayClip,
    BaselineHandmade,
}

impl From<VariantArg> for RewardVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::TrackingOnly => RewardVariant::TrackingOnly,
            VariantArg::TrackingPlusDecayTanh => RewardVariant::TrackingPlusDecayTanh,
            VariantArg::TrackingPlusDecayClip => RewardVariant::TrackingPlusDecayClip,
            VariantArg::BaselineHandmade => RewardVariant::BaselineHandmade,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenRef {
            config,
            velocity,
            source,
            library,
            steps,
            dt,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let dt = dt.unwrap_or(cfg.env.dt);
            let table = match source {
                Source::Hlip => commands::generate_reference(
                    ReferenceSource::Hlip {
                        params: &cfg.env.hlip,
                        cfg: &cfg.reference,
                    },
                    velocity,
                    steps,
                    dt,
                )?,
                Source::Gaitlib => {
                    let path = library
                        .or(cfg.gait_library_path)
                        .ok_or_else(|| Error::Config("gaitlib source needs --library or gait_library_path".into()))?;
                    let lib = GaitLibrary::load(&path)?;
                    commands::generate_reference(ReferenceSource::GaitLibrary(&lib), velocity, steps, dt)?
                }
            };
            table.write_csv(&out)?;
            println!("wrote {} rows to {}", table.rows.len(), out.display());
        }
        Command::GenLibrary {
            config,
            velocities,
            degree,
            out,
            reset_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let velocities = if velocities.is_empty() {
                DEFAULT_LIBRARY_VELOCITIES.to_vec()
            } else {
                velocities
            };
            let (lib, reset) = convert_hlip(&velocities, &cfg.env.hlip, &cfg.reference, degree)?;
            lib.save(&out)?;
            reset.save(&reset_out)?;
            println!("wrote {} entries to {} and reset map to {}", velocities.len(), out.display(), reset_out.display());
        }
        Command::CheckInvariance {
            library,
            reset_map,
            threshold,
        } => {
            let lib = GaitLibrary::load(&library)?;
            let reset = ResetMap::load(&reset_map)?;
            let report = commands::check_invariance(&lib, &reset, threshold)?;
            println!("v_nominal,residual");
            for e in &report.entries {
                println!("{},{:e}", e.v_nominal, e.residual);
            }
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            println!("{verdict}: max residual {:e}, threshold {:e}", report.max_residual(), threshold);
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Train {
            config,
            variant,
            seed,
            iterations,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            if let Some(s) = seed {
                cfg.ppo.seed = s;
            }
            if let Some(n) = iterations {
                cfg.ppo.total_iterations = n;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            create_dir(&out)?;
            let total = cfg.ppo.total_iterations;
            let result = trainer::train_with(&cfg.train_setup(), |row| {
                if (row.iteration + 1) % 10 == 0 || row.iteration + 1 == total {
                    eprintln!(
                        "iter {:>5}/{total}  reward {:>9.4}  |eta| {:.4}  kl {:.5}",
                        row.iteration + 1,
                        row.mean_total_reward,
                        row.mean_abs_eta,
                        row.kl
                    );
                }
            })?;
            trainer::write_log_csv(&result.log, out.join("train_log.csv"))?;
            result.checkpoint.save(out.join("checkpoint.json"))?;
            let resolved = out.join("config.toml");
            fs::write(&resolved, cfg.to_toml_string()?).map_err(|e| Error::Io {
                path: resolved.clone(),
                source: e,
            })?;
            println!("wrote {}", out.display());
        }
        Command::Eval {
            checkpoint,
            commands: cmds,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            create_dir(&out)?;
            let results = commands::evaluate_commands(&ckpt, &cmds, seed)?;
            println!("command,tracking_error,steps,terminated");
            for (i, (s, traj)) in results.iter().enumerate() {
                traj.write_csv(out.join(format!("trajectory_{i}.csv")))?;
                println!("{},{:.6},{},{}", s.command, s.tracking_error, s.steps, s.terminated);
            }
            let summaries: Vec<_> = results.into_iter().map(|(s, _)| s).collect();
            commands::write_summaries_csv(&summaries, out.join("eval_summary.csv"))?;
        }
        Command::Sweep {
            checkpoint,
            param: SweepParam::ComHeight,
            samples,
            seed,
            command,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            create_dir(&out)?;
            let result = commands::sweep_com_height(&ckpt, samples, seed, command)?;
            commands::write_summaries_csv(&result.samples, out.join("sweep_samples.csv"))?;
            commands::write_sweep_summary_csv(&result, out.join("sweep_summary.csv"))?;
            println!("com_height: mean {:.6}, std {:.6} over {samples} samples", result.mean, result.std);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
