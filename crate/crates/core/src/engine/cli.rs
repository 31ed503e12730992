//! Command-line front end.
//!
//! Every command prints a human-readable report and writes a result file of
//! `key = value` lines ending in a single-line JSON `record`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::{evaluate, EvalOptions, EvalReport};
use super::predict::{FsarModel, PredictMode};
use super::train::train_on;
use crate::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use crate::error::{FsarError, Result};
use crate::kv::KvFile;
use crate::modulation::modulate_support;

#[derive(Parser, Debug)]
#[command(name = "fsar", version, about = "Few-shot video classification with text-modulated prototypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Result file (default: <out>.train.txt).
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on the novel split.
    Eval(EvalArgs),
    /// Shorthand for `eval --mode zeroshot`.
    Zeroshot(EvalArgs),
    /// Write per-video raw and modulated frame features as CSV.
    ExportFeatures {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Fewshot,
    Ensemble,
    Zeroshot,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the training config's value.
    #[arg(long)]
    way: Option<usize>,
    #[arg(long)]
    shot: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Ensemble weight on the video-text head.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Result file (default: <ckpt>.<mode>.txt).
    #[arg(long)]
    result: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Train {
            config,
            out,
            result,
            quiet,
        } => train_cmd(&config, &out, result, quiet),
        Command::Eval(a) => eval_cmd(a, None),
        Command::Zeroshot(a) => {
            if matches!(a.mode, Some(m) if m != ModeArg::Zeroshot) {
                return Err(FsarError::ModeConflict("`zeroshot` only runs in zeroshot mode".into()));
            }
            eval_cmd(a, Some(ModeArg::Zeroshot))
        }
        Command::ExportFeatures { ckpt, data, out } => export_features(&ckpt, &data, &out),
    }
}

fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| FsarError::io(spec_path, e))?;
    let mut kv = KvFile::parse(&text)?;
    let spec = SyntheticSpec::read_kv(&mut kv, "")?;
    kv.finish()?;
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {}: {} videos, {} classes ({} base / {} novel), frame dim {}",
        out.display(),
        ds.samples().len(),
        ds.classes().len(),
        ds.classes().base_ids().len(),
        ds.classes().novel_ids().len(),
        ds.frame_dim()
    );
    Ok(())
}

fn train_cmd(config_path: &Path, out: &Path, result: Option<PathBuf>, quiet: bool) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dataset = config.data.load()?;
    let every = config.log_every;
    let mut last = None;
    let ckpt = train_on(&config, &dataset, |e| {
        if !quiet && ((e.step + 1) % every == 0 || e.step == 0) {
            println!(
                "step {:>6}  loss {:.5}  (video-text {:.5}, few-shot {:.5})  tau {:.4}  |g| {:.3}",
                e.step + 1,
                e.loss.total,
                e.loss.video_text,
                e.loss.few_shot,
                e.tau,
                e.grad_norm
            );
        }
        last = Some(*e);
    })?;
    ckpt.save(out)?;
    println!("wrote checkpoint {} after {} steps", out.display(), ckpt.step);

    let final_loss = last.map_or(f64::NAN, |e| e.loss.total);
    let record = json!({
        "command": "train",
        "config_hash": config.hash(),
        "seed": config.seed,
        "steps": ckpt.step,
        "final_loss": final_loss,
        "tau": ckpt.params.temperature.tau(),
        "checkpoint": out.display().to_string(),
    });
    let mut text = String::new();
    let _ = writeln!(text, "command = train");
    let _ = writeln!(text, "config_hash = {}", config.hash());
    let _ = writeln!(text, "seed = {}", config.seed);
    let _ = writeln!(text, "steps = {}", ckpt.step);
    let _ = writeln!(text, "final_loss = {final_loss}");
    let _ = writeln!(text, "record = {record}");
    write_result(&result.unwrap_or_else(|| suffixed(out, "train.txt")), &text)
}

fn eval_cmd(a: EvalArgs, forced: Option<ModeArg>) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let dataset = load_dataset(&a.data)?;
    let cfg = ckpt.config.clone();
    let mode = match forced.or(a.mode).unwrap_or(ModeArg::Fewshot) {
        ModeArg::Fewshot => PredictMode::FewShot,
        ModeArg::Zeroshot => PredictMode::ZeroShot,
        ModeArg::Ensemble => PredictMode::Ensemble(a.beta.unwrap_or(cfg.weights.beta)),
    };
    if a.beta.is_some() && !matches!(mode, PredictMode::Ensemble(_)) {
        return Err(FsarError::ModeConflict("--beta only applies to ensemble mode".into()));
    }
    let opts = EvalOptions {
        way: a.way.unwrap_or(cfg.way),
        shot: a.shot.unwrap_or(cfg.shot),
        queries_per_class: a.queries.unwrap_or(cfg.eval_queries_per_class),
        episodes: a.episodes.unwrap_or(cfg.eval_episodes),
        seed: a.seed.unwrap_or(cfg.seed),
        mode,
        workers: a
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    let model = FsarModel::from_checkpoint(ckpt, &dataset)?;
    let report = evaluate(&model, &dataset, &opts)?;
    println!(
        "{}-way {}-shot {} over {} episodes (seed {}): accuracy {:.2}% ± {:.2}%  ({}/{} queries)",
        report.way,
        report.shot,
        report.mode,
        report.episodes,
        report.seed,
        100.0 * report.mean,
        100.0 * report.ci95,
        report.correct,
        report.total
    );
    let path = a
        .result
        .unwrap_or_else(|| suffixed(&a.ckpt, &format!("{}.txt", mode.name())));
    write_result(&path, &eval_result_text(&cfg, &report))
}

fn eval_result_text(cfg: &RunConfig, r: &EvalReport) -> String {
    let beta = match r.mode {
        PredictMode::Ensemble(b) => Some(b),
        _ => None,
    };
    let record = json!({
        "command": "eval",
        "config_hash": cfg.hash(),
        "seed": r.seed,
        "mode": r.mode.name(),
        "beta": beta,
        "way": r.way,
        "shot": r.shot,
        "episodes": r.episodes,
        "mean": r.mean,
        "ci95": r.ci95,
        "correct": r.correct,
        "total": r.total,
    });
    let mut s = String::new();
    let _ = writeln!(s, "command = eval");
    let _ = writeln!(s, "config_hash = {}", cfg.hash());
    let _ = writeln!(s, "seed = {}", r.seed);
    let _ = writeln!(s, "mode = {}", r.mode.name());
    if let Some(b) = beta {
        let _ = writeln!(s, "beta = {b}");
    }
    let _ = writeln!(s, "way = {}", r.way);
    let _ = writeln!(s, "shot = {}", r.shot);
    let _ = writeln!(s, "episodes = {}", r.episodes);
    let _ = writeln!(s, "mean = {}", r.mean);
    let _ = writeln!(s, "ci95 = {}", r.ci95);
    let _ = writeln!(s, "record = {record}");
    s
}

fn export_features(ckpt_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let dataset = load_dataset(data)?;
    let model = FsarModel::from_checkpoint(ckpt, &dataset)?;
    let file = fs::File::create(out).map_err(|e| FsarError::io(out, e))?;
    let mut w = BufWriter::new(file);
    let dim = model.config.embed_dim;
    let mut header = String::from("video_id,class_id,split,kind,frame");
    for i in 0..dim {
        let _ = write!(header, ",f{i}");
    }
    let io = |e| FsarError::io(out, e);
    writeln!(w, "{header}").map_err(io)?;
    for (i, s) in dataset.samples().iter().enumerate() {
        let raw = model.features(&dataset, i)?;
        let w_text = model.bank.row(s.class_id).to_owned();
        let modulated = modulate_support(&model.params.transformer, &raw, &w_text)?;
        let split = dataset.classes().split_of(s.class_id);
        for (kind, feats) in [("raw", &raw), ("modulated", &modulated)] {
            for (k, row) in feats.rows().into_iter().enumerate() {
                let mut line = format!("{},{},{split},{kind},{k}", s.video_id, s.class_id);
                for v in row {
                    // shortest round-trip representation
                    let _ = write!(line, ",{v:?}");
                }
                writeln!(w, "{line}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    println!("wrote features of {} videos to {}", dataset.samples().len(), out.display());
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_result(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| FsarError::io(path, e))?;
    println!("result file: {}", path.display());
    Ok(())
}
