//! Command-line surface: dataset synthesis, training, evaluation, ablation grids,
//! the Gaussian MI oracle and trace re-emission.
//!
//! Exit codes: 0 success, 1 usage, 2 data or configuration error, 3 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use himfuse::encoders::RawSample;
use himfuse::io::{self, RunConfig};
use himfuse::metrics::{compute_metrics, MetricReport};
use himfuse::mi_ba::FitConfig;
use himfuse::numeric::Rng;
use himfuse::par::{self, Execution};
use himfuse::synth::{self, GaussianPairSpec, SynthMsaSpec};
use himfuse::trainer::{self, steps_from_csv, DropTerm, LossTrace, TrainConfig, TrainOutcome};
use himfuse::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "himfuse", version, about = "Hierarchical mutual-information fusion for multimodal sentiment regression")]
struct Cli {
    /// Run data-parallel loops on the current thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/val/test dataset as JSON lines.
    Synth {
        /// Generator settings (JSON); omitted keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write checkpoint.json, trace.csv, steps.csv and metrics.jsonl.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset and print the metric report as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write per-sample fusion/modality scores as CSV.
        #[arg(long)]
        dump_scores: Option<PathBuf>,
    },
    /// Compare the trained lower bound and InfoNCE against the closed-form MI of a Gaussian pair.
    MiOracle {
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the full model plus one row per `--drop` list and tabulate the results.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated terms: ba_tv, ba_ta, lba, n_zt, n_zv, n_za, lcpc, history, gmm.
        #[arg(long, required = true)]
        drop: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the interval loss trace of a run from its step log.
    Trace {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let mut out = std::io::stdout().lock();
    match run(cli.command, exec, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn run(command: Command, exec: Execution, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth { spec, out: dir, seed } => synth_cmd(spec.as_deref(), &dir, seed, out),
        Command::Train { config, seed } => train_cmd(&config, seed, exec, out),
        Command::Eval { ckpt, data, dump_scores } => eval_cmd(&ckpt, &data, dump_scores.as_deref(), exec, out),
        Command::MiOracle { rho, dim, n, steps, hidden, seed } => {
            let spec = GaussianPairSpec::new(dim, rho);
            let fit = FitConfig { steps, ..FitConfig::default() };
            let r = synth::mi_oracle(&spec, n, fit, hidden, seed)?;
            writeln!(out, "true_mi={:?}", r.true_mi)?;
            writeln!(out, "i_ba={:?}", r.i_ba)?;
            writeln!(out, "i_ba_se={:?}", r.i_ba_se)?;
            writeln!(out, "infonce={:?}", r.infonce)?;
            writeln!(out, "infonce_ceiling={:?}", r.infonce_ceiling)?;
            writeln!(out, "gap_ba={:?}", r.gap_ba)?;
            writeln!(out, "gap_infonce={:?}", r.gap_infonce)?;
            Ok(())
        }
        Command::Ablate { config, drop, seed } => ablate_cmd(&config, &drop, seed, exec, out),
        Command::Trace { run } => {
            let steps = steps_from_csv(&fs::read_to_string(run.join("steps.csv"))?)?;
            write!(out, "{}", LossTrace::from_steps(&steps).to_csv())?;
            Ok(())
        }
    }
}

fn synth_cmd(spec: Option<&Path>, dir: &Path, seed: u64, out: &mut dyn Write) -> Result<()> {
    let spec: SynthMsaSpec = match spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => SynthMsaSpec::default(),
    };
    let splits = synth::gen_msa_dataset(&spec, &mut Rng::new(seed))?;
    fs::create_dir_all(dir)?;
    for (name, data) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let path = dir.join(format!("{name}.jsonl"));
        io::write_jsonl(&path, data)?;
        writeln!(out, "{}\t{}", path.display(), data.len())?;
    }
    Ok(())
}

struct RunData {
    train: Vec<RawSample>,
    val: Vec<RawSample>,
    test: Option<Vec<RawSample>>,
}

fn load_run(config: &Path, seed: Option<u64>) -> Result<(RunConfig, RunData)> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let data = RunData {
        train: io::load_jsonl(&cfg.data.train)?,
        val: io::load_jsonl(&cfg.data.val)?,
        test: cfg.data.test.as_deref().map(io::load_jsonl).transpose()?,
    };
    Ok((cfg, data))
}

/// Writes the run artifacts and returns the test-set report of the selected model, if a test split is configured.
fn write_run(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome, test: Option<&[RawSample]>, exec: Execution) -> Result<Option<MetricReport>> {
    fs::create_dir_all(dir)?;
    io::save_checkpoint(&dir.join("checkpoint.json"), &outcome.best, Some(cfg))?;
    fs::write(dir.join("trace.csv"), outcome.trace.to_csv())?;
    fs::write(dir.join("steps.csv"), trainer::steps_to_csv(&outcome.steps))?;
    let mut lines = String::new();
    for e in &outcome.epochs {
        lines.push_str(&json_line(e)?);
    }
    let report = match test {
        Some(t) => {
            let truths: Vec<f64> = t.iter().map(|s| s.label).collect();
            let report = compute_metrics(&outcome.best.predict(t, exec)?, &truths)?;
            lines.push_str(&json_line(&serde_json::json!({ "split": "test", "best_epoch": outcome.best_epoch, "metrics": report }))?);
            Some(report)
        }
        None => None,
    };
    fs::write(dir.join("metrics.jsonl"), lines)?;
    Ok(report)
}

fn json_line<T: serde::Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string(v).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn train_cmd(config: &Path, seed: Option<u64>, exec: Execution, out: &mut dyn Write) -> Result<()> {
    let (cfg, data) = load_run(config, seed)?;
    let outcome = trainer::train(cfg.model.clone(), cfg.train.clone(), &data.train, &data.val, exec)?;
    let test = write_run(&cfg.out_dir, &cfg.train, &outcome, data.test.as_deref(), exec)?;
    writeln!(out, "best_epoch={} val_mae={:?}", outcome.best_epoch, outcome.best_val_mae)?;
    if let Some(report) = test {
        write!(out, "{}", json_line(&report)?)?;
    }
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, dump: Option<&Path>, exec: Execution, out: &mut dyn Write) -> Result<()> {
    let (model, _) = io::load_checkpoint(ckpt)?;
    let samples = io::load_jsonl(data)?;
    let preds = model.predict(&samples, exec)?;
    let truths: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let report = compute_metrics(&preds, &truths)?;
    if let Some(p) = dump {
        io::dump_scores(&model, &samples, p, exec)?;
    }
    write!(out, "{}", json_line(&report)?)?;
    Ok(())
}

/// Directory name of an ablation row, e.g. `drop-lba+lcpc`.
pub fn row_name(terms: &[DropTerm]) -> String {
    if terms.is_empty() {
        return "full".into();
    }
    let tags: Vec<String> = terms.iter().map(|t| t.tag()).collect();
    format!("drop-{}", tags.join("+"))
}

fn ablate_cmd(config: &Path, drops: &[String], seed: Option<u64>, exec: Execution, out: &mut dyn Write) -> Result<()> {
    let (cfg, data) = load_run(config, seed)?;
    let mut rows: Vec<Vec<DropTerm>> = vec![cfg.train.drop.clone()];
    for d in drops {
        let mut terms = cfg.train.drop.clone();
        for t in DropTerm::parse_list(d)? {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        rows.push(terms);
    }
    // rows run concurrently; each row evaluates on its own thread
    let results = par::map(exec, &rows, |terms| -> Result<(String, TrainOutcome, Option<MetricReport>)> {
        let tc = TrainConfig { drop: terms.clone(), ..cfg.train.clone() };
        let name = row_name(terms);
        let outcome = trainer::train(cfg.model.clone(), tc.clone(), &data.train, &data.val, Execution::Sequential)?;
        let test = write_run(&cfg.out_dir.join(&name), &tc, &outcome, data.test.as_deref(), Execution::Sequential)?;
        Ok((name, outcome, test))
    });
    writeln!(out, "row,best_epoch,val_mae,test_mae,test_corr,test_acc2_pos,test_f1_pos")?;
    for r in results {
        let (name, outcome, test) = r?;
        let cols = match test {
            Some(m) => format!("{},{},{},{}", m.mae, m.corr, m.acc2_pos, m.f1_pos),
            None => ",,,".into(),
        };
        writeln!(out, "{name},{},{},{cols}", outcome.best_epoch, outcome.best_val_mae)?;
    }
    Ok(())
}
