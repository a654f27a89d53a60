//! `trl`: run synthetic regression experiments, numerical self-checks and
//! checkpoint inspection.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use trl_core::train::{generate_synthetic, train_model, ObjectiveKind, TrainConfig};
use trl_core::trl::{cp_dropout_regularizer, load_checkpoint, save_checkpoint};
use trl_core::verify::Verifier;
use trl_core::{Decomposition, TrlError, TrlModel};

use config::{read_config_file, resolve, ConfigFile, Flags, ObjectiveArg, Preset, Resolved};

#[derive(Parser)]
#[command(name = "trl", version, about = "Tensor regression layers with stochastic rank regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic low-rank data for every (theta, objective) pair.
    Synth {
        /// JSON config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Output directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run a single keep probability instead of the configured list.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        /// Write 0 in the seconds column so reruns produce identical files.
        #[arg(long)]
        no_timing: bool,
    },
    /// Run the numerical self-checks.
    Verify {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Summarize a saved checkpoint.
    Inspect { checkpoint: PathBuf },
}

enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            config,
            preset,
            out,
            seed,
            theta,
            objective,
            no_timing,
        } => {
            let flags = Flags {
                preset,
                seed,
                theta,
                objective,
            };
            synth(config.as_deref(), &flags, &out, !no_timing)
        }
        Command::Verify { filter } => verify(filter.as_deref()),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[derive(Serialize)]
struct RunEntry {
    theta: f64,
    objective: ObjectiveKind,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    diverged_at_epoch: Option<usize>,
    final_objective: Option<f64>,
    final_train_loss: Option<f64>,
    final_test_mse: Option<f64>,
    csv: Option<String>,
    checkpoint: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    config: &'a Resolved,
    runs: Vec<RunEntry>,
}

fn run_stem(theta: f64, objective: ObjectiveKind) -> String {
    format!("theta{theta}_{}", objective.name())
}

fn synth(config_path: Option<&Path>, flags: &Flags, out: &Path, timing: bool) -> Result<(), CliError> {
    let file = match config_path {
        Some(p) => read_config_file(p).map_err(CliError::Usage)?,
        None => ConfigFile::default(),
    };
    let resolved = resolve(file, flags).map_err(CliError::Usage)?;
    let data = generate_synthetic(&resolved.data).map_err(|e| CliError::Usage(e.to_string()))?;

    fs::create_dir_all(out).map_err(io_err(out))?;
    let echo = serde_json::to_string_pretty(&resolved).expect("config serializes");
    let path = out.join("config.json");
    fs::write(&path, echo + "\n").map_err(io_err(&path))?;

    let cells: Vec<TrainConfig> = resolved
        .thetas
        .iter()
        .flat_map(|&theta| {
            resolved.objectives.iter().map(move |&objective| (theta, objective))
        })
        .map(|(theta, objective)| TrainConfig {
            theta,
            objective,
            ..resolved.train.clone()
        })
        .collect();

    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|cfg| train_model(&data.train, &data.test, cfg))
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (cfg, outcome) in cells.iter().zip(outcomes) {
        let stem = run_stem(cfg.theta, cfg.objective);
        match outcome {
            Ok((curve, model)) => {
                let csv = format!("{stem}.csv");
                let ckpt = format!("{stem}.ckpt");
                let p = out.join(&csv);
                fs::write(&p, curve.to_csv(timing)).map_err(io_err(&p))?;
                let p = out.join(&ckpt);
                fs::write(&p, save_checkpoint(&model)).map_err(io_err(&p))?;
                let last = curve.last();
                println!(
                    "{stem}: objective {:.6e}  test mse {:.6e}",
                    last.map_or(f64::NAN, |r| r.objective),
                    last.map_or(f64::NAN, |r| r.test_mse)
                );
                runs.push(RunEntry {
                    theta: cfg.theta,
                    objective: cfg.objective,
                    status: "ok",
                    diverged_at_epoch: None,
                    final_objective: last.map(|r| r.objective),
                    final_train_loss: last.map(|r| r.train_loss),
                    final_test_mse: last.map(|r| r.test_mse),
                    csv: Some(csv),
                    checkpoint: Some(ckpt),
                });
            }
            Err(TrlError::Diverged { epoch, loss }) => {
                println!("{stem}: diverged at epoch {epoch} (loss {loss:e})");
                failures.push(format!("{stem} diverged at epoch {epoch}"));
                runs.push(RunEntry {
                    theta: cfg.theta,
                    objective: cfg.objective,
                    status: "diverged",
                    diverged_at_epoch: Some(epoch),
                    final_objective: None,
                    final_train_loss: None,
                    final_test_mse: None,
                    csv: None,
                    checkpoint: None,
                });
            }
            Err(e @ TrlError::Config(_)) => return Err(CliError::Usage(format!("{stem}: {e}"))),
            Err(e) => return Err(CliError::Numerical(format!("{stem}: {e}"))),
        }
    }

    let manifest = Manifest {
        seed: resolved.seed,
        config: &resolved,
        runs,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(failures.join("; ")))
    }
}

fn verify(filter: Option<&str>) -> Result<(), CliError> {
    let reports = Verifier::new().run(filter);
    if reports.is_empty() {
        return Err(CliError::Usage(format!(
            "no check matches {:?}",
            filter.unwrap_or_default()
        )));
    }
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for r in &reports {
        match &r.outcome {
            Ok(()) => println!("PASS  {:<width$}  {:>8.3}s", r.name, r.seconds),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {:<width$}  {:>8.3}s  {msg}", r.name, r.seconds);
            }
        }
    }
    println!("{} passed, {failed} failed", reports.len() - failed);
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{failed} check(s) failed")))
    }
}

fn inspect(path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let model = load_checkpoint(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    print!("{}", describe(&model));
    Ok(())
}

fn describe(model: &TrlModel) -> String {
    let join = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
    let mut s = String::new();
    s += &format!("decomposition: {}\n", model.weight.kind());
    s += &format!("weight shape: {}\n", join(&model.weight.shape()));
    s += &format!("ranks: {}\n", join(&model.ranks()));
    let scheme = match model.sketch.scheme {
        trl_core::SketchScheme::None => "none",
        trl_core::SketchScheme::Bernoulli { .. } => "bernoulli",
        trl_core::SketchScheme::Replacement { .. } => "replacement",
    };
    s += &format!("sketch: {scheme} theta={} tied={}\n", model.sketch.theta(), model.sketch.tie_modes);
    s += &format!("scale: {}\n", model.scale_mode.name());
    let bias: Vec<String> = model.bias.iter().map(|b| format!("{b:.6}")).collect();
    s += &format!("bias: [{}]\n", bias.join(", "));
    for (i, u) in model.weight.factors().iter().enumerate() {
        let norms: Vec<String> = (0..u.cols())
            .map(|c| {
                let n = (0..u.rows()).map(|r| u.get(r, c).powi(2)).sum::<f64>().sqrt();
                format!("{n:.6}")
            })
            .collect();
        s += &format!("factor {i} column norms: [{}]\n", norms.join(", "));
    }
    match &model.weight {
        Decomposition::Kruskal(_) => match cp_dropout_regularizer(model, model.sketch.theta()) {
            Ok(r) => s += &format!("regularizer: {r}\n"),
            Err(e) => s += &format!("regularizer: error ({e})\n"),
        },
        Decomposition::Tucker(t) => {
            let core_norm = t.core().data().iter().map(|v| v * v).sum::<f64>().sqrt();
            s += &format!("core norm: {core_norm:.6}\n");
            s += "regularizer: n/a\n";
        }
    }
    s
}
