//! Command-line front end. The `histo-reid` binary only calls [`main`].

use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::RgbImage;

use crate::config::{RunConfig, RunManifest};
use crate::dataset::{build_patient_index, SlideManifestEntry};
use crate::error::{Error, Result};
use crate::evaluation::{
    resolution_sweep, run_experiment1, run_experiment2, write_experiment_report, write_sweep_report, Experiment,
    ExperimentConfig,
};
use crate::latent::{distance_report, experiment_distances, write_records_csv};
use crate::models::{Checkpoint, ModelKind};
use crate::patches::PatchBank;
use crate::risk::{assess, interactive_assess, RiskQuestionnaire, RiskVerdict};
use crate::seed::derived_rng;
use crate::stain::augment_stain;
use crate::tiling::{build_tissue_mask, enumerate_patches, write_patch_list, Slide};

#[derive(Debug, Parser)]
#[command(name = "histo-reid", version, about = "Patient re-identification experiments on histopathology images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a configuration value, e.g. `--set model.training.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic cohort and its manifest.
    Synth(RunArgs),
    /// Tissue masks and patch lists for every slide.
    Tile(RunArgs),
    /// Train the patch classifier on one Monte Carlo split.
    TrainPatch(RunArgs),
    /// Train the attention MIL model on one Monte Carlo split.
    TrainMil(RunArgs),
    /// Repeated Monte Carlo re-identification experiment.
    Exp1(RunArgs),
    /// Temporal experiment: train on the first resection, test on later ones.
    Exp2(RunArgs),
    /// Experiment 1 repeated over a list of spatial resolutions.
    Sweep(RunArgs),
    /// Latent anchor distances of correctly and incorrectly classified slides.
    Latent(RunArgs),
    /// Publication risk assessment.
    Risk(RiskArgs),
    /// Grid of stain-augmented versions of a few patches.
    AugmentDemo(AugmentDemoArgs),
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    /// Answers as TOML; without it the questions are asked on stdin.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Also write the verdict as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentDemoArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 3)]
    pub patches: usize,
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
}

/// Exit code for an error category. Usage errors exit with 2 (clap).
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        "config" => 3,
        "io" => 4,
        "manifest" | "split" | "image" | "tiling" => 5,
        "stain" | "model" | "training" => 6,
        "evaluation" => 7,
        "risk" => 8,
        _ => 9,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            exit_code(&e)
        }
    }
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(o) = &args.output {
        overrides.push(format!("output_dir={}", quoted(&o.to_string_lossy())));
    }
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = args.workers {
        overrides.push(format!("workers={w}"));
    }
    let cfg = RunConfig::load(&args.config, &overrides)?;
    // The global pool can be set once per process; later calls keep the first.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(cfg)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&load_config(&a)?),
        Command::Tile(a) => tile(&load_config(&a)?),
        Command::TrainPatch(a) => train(&load_config(&a)?, ModelKind::Patch),
        Command::TrainMil(a) => train(&load_config(&a)?, ModelKind::Mil),
        Command::Exp1(a) => experiment(&load_config(&a)?, false),
        Command::Exp2(a) => experiment(&load_config(&a)?, true),
        Command::Sweep(a) => sweep(&load_config(&a)?),
        Command::Latent(a) => latent(&load_config(&a)?),
        Command::Risk(a) => risk(&a, std::io::stdin().lock(), std::io::stdout().lock()),
        Command::AugmentDemo(a) => augment_demo(&load_config(&a.run)?, a.patches, a.samples),
    }
}

fn dataset_name(cfg: &RunConfig, entries: &[SlideManifestEntry]) -> String {
    let patients = build_patient_index(entries).map(|i| i.len()).unwrap_or(0);
    match &cfg.dataset.manifest {
        Some(p) => format!(
            "{} ({patients} patients)",
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        ),
        None => format!("synthetic ({patients} patients)"),
    }
}

fn prepare(cfg: &RunConfig) -> Result<(Vec<SlideManifestEntry>, PatchBank)> {
    let entries = cfg.load_entries()?;
    log::info!("{} slides; building patch bank", entries.len());
    let bank = PatchBank::build(&entries, &cfg.bank_params(), &cfg.macenko())?;
    log::info!("{} patches", bank.total_patches());
    Ok((entries, bank))
}

fn rel(cfg: &RunConfig, p: &Path) -> String {
    p.strip_prefix(&cfg.output_dir).unwrap_or(p).to_string_lossy().into_owned()
}

fn synth(cfg: &RunConfig) -> Result<()> {
    if cfg.dataset.synthetic.is_none() {
        return Err(Error::Config("synth needs a [dataset.synthetic] table".into()));
    }
    let entries = cfg.load_entries()?;
    let mut m = RunManifest::new("synth", cfg);
    m.artifacts.push("cohort/manifest.csv".into());
    m.write(&cfg.output_dir)?;
    println!(
        "{} slides written to {}",
        entries.len(),
        cfg.output_dir.join("cohort").display()
    );
    Ok(())
}

fn tile(cfg: &RunConfig) -> Result<()> {
    let entries = cfg.load_entries()?;
    let dir = cfg.output_dir.join("tiles");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let params = cfg.bank_params();
    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))?;
    summary.write_record(["slide_id", "threshold", "tissue_fraction", "n_patches"])?;
    let mut m = RunManifest::new("tile", cfg);
    for e in &entries {
        let slide = Slide::open(e)?;
        let mask = build_tissue_mask(&slide.image, params.downscale_factor)?;
        let specs = enumerate_patches(&slide, &mask, &params.grid)?;
        let mask_path = dir.join(format!("{}_mask.png", e.slide_id));
        let list_path = dir.join(format!("{}_patches.csv", e.slide_id));
        mask.save_png(&mask_path)?;
        write_patch_list(&list_path, &specs)?;
        summary.write_record([
            e.slide_id.clone(),
            mask.threshold_used.to_string(),
            format!("{:.4}", mask.tissue_fraction()),
            specs.len().to_string(),
        ])?;
        m.artifacts.push(rel(cfg, &mask_path));
        m.artifacts.push(rel(cfg, &list_path));
    }
    summary.flush().map_err(|e| Error::io(&dir, e))?;
    m.artifacts.push("tiles/summary.csv".into());
    m.write(&cfg.output_dir)?;
    println!("tiled {} slides into {}", entries.len(), dir.display());
    Ok(())
}

fn record_fold_seeds(m: &mut RunManifest, exp: &Experiment) {
    for f in &exp.artifacts {
        m.seed(format!("split/fold{}", f.fold), f.split.seed);
    }
}

fn train(cfg: &RunConfig, kind: ModelKind) -> Result<()> {
    let (entries, bank) = prepare(cfg)?;
    let mut ec = cfg.experiment_config(1);
    ec.kinds = match kind {
        ModelKind::Patch => vec![ModelKind::Patch],
        ModelKind::Mil => vec![ModelKind::Mil],
    };
    let exp = run_experiment1(&entries, &bank, &ec)?;
    let fold = &exp.artifacts[0];
    let dir = &cfg.output_dir;
    let mut m = RunManifest::new(if kind == ModelKind::Patch { "train-patch" } else { "train-mil" }, cfg);
    record_fold_seeds(&mut m, &exp);
    fold.split.save(&dir.join("split.json"))?;
    m.artifacts.push("split.json".into());
    let (ck, history, stem) = match kind {
        ModelKind::Patch => (
            Checkpoint::patch(
                fold.patch_model.as_ref().expect("patch fold"),
                cfg.model.encoder.clone(),
                cfg.model.training.clone(),
                exp.patient_index.clone(),
                fold.split.fingerprint(),
            ),
            fold.patch_history.as_ref(),
            "patch",
        ),
        ModelKind::Mil => (
            Checkpoint::mil(
                fold.mil_model.as_ref().expect("mil fold"),
                cfg.model.encoder.clone(),
                cfg.model.mil_training.clone(),
                exp.patient_index.clone(),
                fold.split.fingerprint(),
            ),
            fold.mil_history.as_ref(),
            "mil",
        ),
    };
    let ck_name = format!("{stem}_checkpoint.json");
    ck.save(&dir.join(&ck_name))?;
    m.artifacts.push(ck_name);
    if let Some(h) = history {
        let name = format!("{stem}_history.csv");
        h.write_csv(&dir.join(&name))?;
        m.artifacts.push(name);
    }
    let result = exp.result(kind).expect("trained kind has a result");
    let metrics = dir.join(format!("{stem}_metrics.json"));
    std::fs::write(&metrics, serde_json::to_vec_pretty(&result.folds[0].metrics)?).map_err(|e| Error::io(&metrics, e))?;
    m.artifacts.push(rel(cfg, &metrics));
    m.write(dir)?;
    println!(
        "{} model: test recall@1 {:.2}% on {} slides; checkpoint {}",
        kind.name(),
        100.0 * result.folds[0].metrics.recall_at(1).unwrap_or(0.0),
        fold.split.test.len(),
        dir.join(format!("{stem}_checkpoint.json")).display()
    );
    Ok(())
}

fn write_histories(cfg: &RunConfig, exp: &Experiment, m: &mut RunManifest) -> Result<()> {
    let dir = cfg.output_dir.join("folds");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for f in &exp.artifacts {
        let split = dir.join(format!("fold{:02}_split.json", f.fold));
        f.split.save(&split)?;
        m.artifacts.push(rel(cfg, &split));
        for (h, stem) in [(&f.patch_history, "patch"), (&f.mil_history, "mil")] {
            if let Some(h) = h {
                let p = dir.join(format!("fold{:02}_{stem}_history.csv", f.fold));
                h.write_csv(&p)?;
                m.artifacts.push(rel(cfg, &p));
            }
        }
    }
    Ok(())
}

fn experiment(cfg: &RunConfig, temporal: bool) -> Result<()> {
    let (entries, bank) = prepare(cfg)?;
    let (exp, stem, title) = if temporal {
        let ec = cfg.experiment_config(cfg.experiment.repeats);
        (
            run_experiment2(&entries, &bank, &ec)?,
            "exp2",
            "Experiment 2: first resection for training, later resections for testing",
        )
    } else {
        let ec = cfg.experiment_config(cfg.experiment.folds);
        (
            run_experiment1(&entries, &bank, &ec)?,
            "exp1",
            "Experiment 1: Monte Carlo cross-validation",
        )
    };
    let mut m = RunManifest::new(stem, cfg);
    record_fold_seeds(&mut m, &exp);
    let (txt, csv) = write_experiment_report(&cfg.output_dir, stem, title, &dataset_name(cfg, &entries), &exp.results)?;
    m.artifacts.push(rel(cfg, &txt));
    m.artifacts.push(rel(cfg, &csv));
    write_histories(cfg, &exp, &mut m)?;
    m.write(&cfg.output_dir)?;
    print!("{}", std::fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?);
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let entries = cfg.load_entries()?;
    let ec: ExperimentConfig = cfg.experiment_config(cfg.experiment.folds);
    let rows = resolution_sweep(&entries, &cfg.experiment.sweep_mpp, &cfg.bank_params(), &ec)?;
    let mut m = RunManifest::new("sweep", cfg);
    let (txt, csv) = write_sweep_report(&cfg.output_dir, "sweep", &rows)?;
    m.artifacts.push(rel(cfg, &txt));
    m.artifacts.push(rel(cfg, &csv));
    m.write(&cfg.output_dir)?;
    print!("{}", std::fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?);
    Ok(())
}

fn latent(cfg: &RunConfig) -> Result<()> {
    let (entries, bank) = prepare(cfg)?;
    let mut ec = cfg.experiment_config(cfg.experiment.folds);
    if !ec.kinds.contains(&ModelKind::Patch) {
        ec.kinds.insert(0, ModelKind::Patch);
    }
    let exp = run_experiment1(&entries, &bank, &ec)?;
    let mut m = RunManifest::new("latent", cfg);
    record_fold_seeds(&mut m, &exp);
    let (txt, _) = write_experiment_report(
        &cfg.output_dir,
        "exp1",
        "Experiment 1: Monte Carlo cross-validation",
        &dataset_name(cfg, &entries),
        &exp.results,
    )?;
    m.artifacts.push(rel(cfg, &txt));
    let records = experiment_distances(
        &exp,
        &bank,
        ModelKind::Patch,
        cfg.experiment.latent_patches_per_slide,
        cfg.seed,
    )?;
    let csv = cfg.output_dir.join("latent_distances.csv");
    write_records_csv(&csv, &records)?;
    let report = distance_report(&records)?;
    let summary = cfg.output_dir.join("latent_summary.txt");
    std::fs::write(&summary, report.to_text()).map_err(|e| Error::io(&summary, e))?;
    m.artifacts.push(rel(cfg, &csv));
    m.artifacts.push(rel(cfg, &summary));
    m.write(&cfg.output_dir)?;
    print!("{}", report.to_text());
    Ok(())
}

/// Runs the questionnaire from a TOML answers file or interactively.
pub fn risk<R: BufRead, W: std::io::Write>(args: &RiskArgs, input: R, mut output: W) -> Result<()> {
    let verdict: RiskVerdict = match &args.answers {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let q: RiskQuestionnaire =
                toml::from_str(&text).map_err(|e| Error::Risk(format!("invalid answers file: {e}")))?;
            let v = assess(&q)?;
            write!(output, "{}", v.to_text()).map_err(|e| Error::Risk(e.to_string()))?;
            v
        }
        None => interactive_assess(input, &mut output)?,
    };
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_vec_pretty(&verdict)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn augment_demo(cfg: &RunConfig, n_patches: usize, n_samples: usize) -> Result<()> {
    let (_, bank) = prepare(cfg)?;
    let picked: Vec<_> = bank
        .slide_ids()
        .filter_map(|id| bank.patches(id).first().map(|p| (id.to_string(), p.clone())))
        .take(n_patches.max(1))
        .collect();
    if picked.is_empty() {
        return Err(Error::Tiling("no tissue patches to augment".into()));
    }
    let size = picked[0].1.size() as u32;
    let gap = 2;
    let cols = n_samples as u32 + 1;
    let mut grid = RgbImage::from_pixel(
        cols * (size + gap) - gap,
        picked.len() as u32 * (size + gap) - gap,
        image::Rgb([255, 255, 255]),
    );
    let macenko = cfg.macenko();
    for (row, (id, patch)) in picked.iter().enumerate() {
        let mut rng = derived_rng(cfg.seed, &format!("augment-demo/{id}"), 0);
        let y = row as i64 * (size + gap) as i64;
        image::imageops::replace(&mut grid, &patch.to_image(), 0, y);
        for col in 1..cols {
            let aug = augment_stain(patch, cfg.stain.lambda, &mut rng, &macenko);
            image::imageops::replace(&mut grid, &aug.to_image(), col as i64 * (size + gap) as i64, y);
        }
    }
    let path = cfg.output_dir.join("augment_demo.png");
    grid.save(&path)?;
    let mut m = RunManifest::new("augment-demo", cfg);
    m.artifacts.push("augment_demo.png".into());
    m.write(&cfg.output_dir)?;
    println!(
        "{} patches x {} samples (lambda {}) written to {}",
        picked.len(),
        n_samples,
        cfg.stain.lambda,
        path.display()
    );
    Ok(())
}
