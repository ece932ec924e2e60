//! Command implementations behind the `slotdet` binary.
//!
//! Every command is deterministic given its flags and seed. Config files are
//! JSON with unknown keys rejected; flags override file values.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diffnet::{load_checkpoint, Model};
use crate::evalx::{
    format_report_table, match_slots, EvalReport, MatchCriteria, ReportAccumulator,
};
use crate::pipeline::{
    detect_image, detections_from_json, draw_overlay, image_to_tensor, write_detections,
    DetectOptions,
};
use crate::synth::{self, Corpus, SceneConfig};
use crate::train::{train, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "slotdet", about = "Two-stage parking slot detector", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (images, labels, manifest).
    Gen(GenArgs),
    /// Train a detector on a generated corpus.
    Train(TrainArgs),
    /// Run detection over a directory of P6 pixmaps.
    Detect(DetectArgs),
    /// Match detections against labels and report metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scene config JSON file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of samples to generate.
    #[arg(long)]
    pub count: u64,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory produced by `gen`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoint.bin and metrics.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-weight preset: snu, ps20 or desk.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Train config JSON file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of .ppm images (a corpus dir's images/ works directly).
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory for per-image detection JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tau_prop: Option<f64>,
    #[arg(long)]
    pub tau_j: Option<f64>,
    /// Entrance length normalizer; must match training.
    #[arg(long)]
    pub l_max: Option<f64>,
    /// Also write detection overlays as .ppm next to the JSON.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of detection JSON files.
    #[arg(long)]
    pub detections: PathBuf,
    /// Directory of label JSON files.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory for report.json / report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Extra criteria: "loose", "tight" or "M,N" (pixels,degrees).
    #[arg(long)]
    pub criteria: Option<String>,
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Caps rayon parallelism for generation when SLOT_THREADS is set.
fn gen_pool() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var("SLOT_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("SLOT_THREADS={v} is not a number")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Msg(format!("thread pool: {e}")))?;
            Ok(Some(pool))
        }
        Err(_) => Ok(None),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg: SceneConfig = match &args.config {
        Some(p) => read_json_config(p)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.count == 0 {
        return Err(Error::InvalidConfig("empty corpus requested".into()));
    }
    let run = || synth::write_corpus(&cfg, args.count, &args.out);
    match gen_pool()? {
        Some(pool) => pool.install(run)?,
        None => run()?,
    }
    println!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json_config::<TrainConfig>(p)?,
        None => TrainConfig::for_preset(&args.preset)?,
    };
    if args.config.is_some() {
        // Even with a config file, an explicit preset swaps the weights in.
        if let Some(preset) = crate::losses::preset(&args.preset) {
            cfg.weights = preset.weights;
            cfg.l_max = preset.l_max;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    let corpus = Corpus::open(&args.corpus)?;
    let mut model = Model::new(crate::diffnet::model::ModelConfig::desk(), cfg.seed)?;
    let outcome = train(&mut model, &corpus, &cfg, &args.out)?;
    if outcome.corrupted_samples > 0 {
        eprintln!("skipped {} corrupted samples", outcome.corrupted_samples);
    }
    let last = outcome.metrics.last().unwrap();
    println!(
        "trained {} epochs; final eval recall {:?} precision {:?}",
        cfg.epochs, last.eval_recall, last.eval_precision
    );
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("metrics:    {}", outcome.metrics_path.display());
    Ok(())
}

fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "ppm"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let model = load_checkpoint(&args.model)?;
    let mut opts = DetectOptions::default();
    if let Some(v) = args.tau_prop {
        opts.tau_prop = v;
    }
    if let Some(v) = args.tau_j {
        opts.tau_j = v;
    }
    if let Some(v) = args.l_max {
        opts.l_max = v;
    }
    let images_dir = if args.images.join("images").is_dir() {
        args.images.join("images")
    } else {
        args.images.clone()
    };
    let files = ppm_files(&images_dir)?;
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no .ppm images under {}",
            images_dir.display()
        )));
    }
    fs::create_dir_all(&args.out)?;
    let mut failures = 0usize;
    for f in &files {
        let stem = f.file_stem().unwrap().to_string_lossy().to_string();
        let result = (|| -> Result<()> {
            let (w, h, pixels) = synth::read_ppm(f)?;
            let image = image_to_tensor(&pixels, w, h);
            let det = detect_image(&model, &image, &opts)?;
            write_detections(&args.out.join(format!("{stem}.json")), w, h, &det.slots)?;
            if args.overlay {
                let mut over = pixels;
                draw_overlay(&mut over, w, h, &det.slots);
                synth::write_ppm(&args.out.join(format!("{stem}.overlay.ppm")), w, h, &over)?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            eprintln!("{}: {e}", f.display());
            failures += 1;
        }
    }
    println!(
        "detected over {} images ({} failed) -> {}",
        files.len(),
        failures,
        args.out.display()
    );
    if failures == files.len() {
        return Err(Error::Msg("every image failed".into()));
    }
    Ok(())
}

fn parse_criteria(s: &str) -> Result<MatchCriteria> {
    match s {
        "loose" => Ok(MatchCriteria::loose()),
        "tight" => Ok(MatchCriteria::tight()),
        _ => {
            let parts: Vec<&str> = s.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::InvalidConfig(format!(
                    "criteria {s:?}: expected loose, tight or M,N"
                )));
            }
            let m: f64 = parts[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad criteria pixels {s:?}")))?;
            let n: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad criteria degrees {s:?}")))?;
            Ok(MatchCriteria::custom(m, n))
        }
    }
}

fn json_stems(dir: &Path) -> Result<BTreeSet<String>> {
    Ok(fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map_or(false, |e| e == "json")
                && p.file_name().map_or(true, |n| n != "manifest.json")
        })
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().to_string()))
        .collect())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let labels_dir = if args.labels.join("labels").is_dir() {
        args.labels.join("labels")
    } else {
        args.labels.clone()
    };
    let det_stems = json_stems(&args.detections)?;
    let label_stems = json_stems(&labels_dir)?;
    let missing: Vec<&String> = label_stems.difference(&det_stems).collect();
    if !missing.is_empty() && !det_stems.is_empty() {
        return Err(Error::Msg(format!(
            "detections missing for labels: {}",
            missing
                .iter()
                .take(10)
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let extra: Vec<&String> = det_stems.difference(&label_stems).collect();
    if !extra.is_empty() {
        return Err(Error::Msg(format!(
            "labels missing for detections: {}",
            extra
                .iter()
                .take(10)
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    let mut criteria = vec![MatchCriteria::loose(), MatchCriteria::tight()];
    if let Some(s) = &args.criteria {
        let c = parse_criteria(s)?;
        if !criteria.contains(&c) {
            criteria.push(c);
        }
    }
    let mut accs: Vec<ReportAccumulator> =
        criteria.iter().map(|_| ReportAccumulator::new()).collect();
    for stem in &label_stems {
        let (_, _, gts) =
            synth::labels_from_json(&fs::read_to_string(labels_dir.join(format!("{stem}.json")))?)?;
        let dets = if det_stems.contains(stem) {
            detections_from_json(&fs::read_to_string(
                args.detections.join(format!("{stem}.json")),
            )?)?
        } else {
            Vec::new()
        };
        for (c, acc) in criteria.iter().zip(accs.iter_mut()) {
            acc.add(&match_slots(&dets, &gts, c));
        }
    }
    let reports: Vec<EvalReport> = criteria
        .iter()
        .zip(&accs)
        .map(|(c, a)| a.report(*c))
        .collect();

    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    let table = format_report_table(&reports[0], &reports[1]);
    fs::write(args.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
    }
}
