use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vr_incognito::adversary::{run_attack, Attack, AttackError};
use vr_incognito::harness::{
    epsilon_sweep, replay_file, run_experiment, sweep_to_csv, ExperimentAttack, ExperimentSpec, HarnessError,
};
use vr_incognito::session::{DefenseConfig, Feature, PrivacyLevel, SessionError};
use vr_incognito::synthpop::{generate_session, sample_population, Distribution};
use vr_incognito::telemetry::{self, TelemetryError};
use vr_incognito::transforms::GroundTruth;

#[derive(Parser)]
#[command(name = "vr-incognito", version, about = "Privacy defenses and attack evaluation for VR telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population and scripted recordings.
    Synth {
        #[arg(long)]
        users: usize,
        /// Session length in seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        sessions: u32,
        /// Frame rate; defaults to each user's device rate.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value = "uniform")]
        distribution: Distribution,
    },
    /// Run a recording through the defenses.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defense config file (TOML); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        level: Option<PrivacyLevel>,
        /// Comma-separated list of enabled defenses.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<Feature>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Ground truth JSON; inferred from the recording when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        session: u64,
    },
    /// Run attribute attacks on a recording and emit one JSON estimate per line.
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Comma-separated attacks; all when absent.
        #[arg(long, value_delimiter = ',')]
        attacks: Option<Vec<Attack>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment described by a TOML or JSON spec.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
    },
    /// R² of one attribute's attack as epsilon varies.
    Sweep {
        #[arg(long)]
        attribute: Feature,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        /// Population settings; the flags below apply when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        users: usize,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<TelemetryError> for CliError {
    fn from(e: TelemetryError) -> Self {
        HarnessError::from(e).into()
    }
}

fn runtime(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn read_truth(path: &Path) -> Result<GroundTruth, CliError> {
    let text = fs::read_to_string(path).map_err(runtime(path))?;
    let t: GroundTruth = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if let Some(field) = t.invalid_field() {
        return Err(CliError::Validation(format!("{}: invalid `{field}`", path.display())));
    }
    Ok(t)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(runtime(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            users,
            duration,
            seed,
            out,
            sessions,
            rate,
            distribution,
        } => {
            if users == 0 || sessions == 0 {
                return Err(CliError::Validation("users and sessions must be at least 1".into()));
            }
            fs::create_dir_all(&out).map_err(runtime(&out))?;
            let pop = sample_population(users, seed, distribution);
            for u in &pop {
                for s in 0..sessions {
                    let hz = rate.unwrap_or(u.device_rate_hz);
                    let g = generate_session(u, duration, hz, seed.wrapping_add(u64::from(s)))
                        .map_err(|e| CliError::Validation(e.to_string()))?;
                    telemetry::write_file(&out.join(format!("user{:04}_s{s}.jsonl", u.id)), &g.frames)?;
                }
                let truth = out.join(format!("user{:04}.truth.json", u.id));
                let json = serde_json::to_string_pretty(&u.truth).map_err(|e| CliError::Runtime(e.to_string()))?;
                fs::write(&truth, json + "\n").map_err(runtime(&truth))?;
            }
            let meta = out.join("population.json");
            let json = serde_json::to_string_pretty(&pop).map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::write(&meta, json + "\n").map_err(runtime(&meta))?;
            Ok(())
        }
        Command::Replay {
            input,
            config,
            level,
            features,
            seed,
            out,
            truth,
            session,
        } => {
            let mut cfg = match (&config, level) {
                (Some(p), _) => DefenseConfig::from_toml_file(p)?,
                (None, Some(l)) => DefenseConfig::new(l, seed.unwrap_or(0)),
                (None, None) => return Err(CliError::Validation("either --config or --level is required".into())),
            };
            if let Some(l) = level {
                cfg.level = l;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(f) = features {
                cfg.enabled = f.into_iter().collect();
            }
            let truth = truth.as_deref().map(read_truth).transpose()?;
            let summary = replay_file(&input, &cfg, &out, truth.as_ref(), session)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "{} frames in, {} frames out, epsilon total {}",
                summary.frames_in, summary.frames_out, summary.report.epsilon_total
            );
            Ok(())
        }
        Command::Attack {
            input,
            truth,
            attacks,
            out,
        } => {
            let frames = telemetry::read_file(&input)?;
            let truth = truth.as_deref().map(read_truth).transpose()?;
            let explicit = attacks.is_some();
            let mut lines = String::new();
            for a in attacks.unwrap_or_else(|| Attack::ALL.to_vec()) {
                match run_attack(a, &frames, truth.as_ref()) {
                    Ok(estimates) => {
                        for e in estimates {
                            let line = serde_json::to_string(&e).map_err(|e| CliError::Runtime(e.to_string()))?;
                            lines.push_str(&line);
                            lines.push('\n');
                        }
                    }
                    // with the default list, skip attacks the recording cannot support
                    Err(e) if !explicit && !matches!(e, AttackError::Invalid(_)) => {
                        eprintln!("skipped {a}: {e}");
                    }
                    Err(e) => return Err(CliError::Runtime(format!("{a}: {e}"))),
                }
            }
            write_or_print(out.as_deref(), &lines)
        }
        Command::Experiment { spec } => {
            let spec = ExperimentSpec::from_path(&spec)?;
            let report = run_experiment(&spec)?;
            report.write_outputs(&spec.output)?;
            if spec.output.csv.is_none() && spec.output.json.is_none() {
                write_or_print(None, &report.to_csv()?)?;
            }
            Ok(())
        }
        Command::Sweep {
            attribute,
            epsilons,
            spec,
            users,
            duration,
            seed,
            out,
        } => {
            let spec = match spec {
                Some(p) => ExperimentSpec::from_path(&p)?,
                None => {
                    let mut s = ExperimentSpec::new(users, seed, vec![PrivacyLevel::High], vec![ExperimentAttack::Height]);
                    s.duration_s = duration;
                    s.sessions = 1;
                    s
                }
            };
            spec.validate()?;
            let points = epsilon_sweep(attribute, &epsilons, &spec)?;
            write_or_print(out.as_deref(), &sweep_to_csv(&points)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
