//! `fringe`: batch pipeline for fringe-pattern normalisation experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fringe_core::checkpoint::load_checkpoint;
use fringe_core::dataset::{load_dataset, save_dataset};
use fringe_core::io::{read_image, read_tensor, write_pgm16, write_tensor, KeyValues};
use fringe_core::metrics::{eval_report, TestScene};
use fringe_core::model::Variant;
use fringe_core::pipeline::{build_dataset, Preset};
use fringe_core::recon::reconstruct;
use fringe_core::synth::{generate_pair, NoiseSpec, TargetMode};
use fringe_core::train::{train, train_resume, TrainConfig, BEST_CHECKPOINT, LAST_CHECKPOINT};
use fringe_core::{Error, Tensor};

const SCENES_MANIFEST: &str = "scenes.manifest";
const FORMATS: &str = "FPT1/1 FPDS/1 VNCK/1";

#[derive(Parser, Debug)]
#[command(name = "fringe", version, about = "Fringe-pattern normalisation with V-net style networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate corrupted/clean scene pairs.
    Generate(GenerateArgs),
    /// Cut a patch dataset from the training scenes of a generated corpus.
    Sample(SampleArgs),
    /// Train a network on a patch dataset.
    Train(TrainArgs),
    /// Normalise a full image with a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// Tabulate errors of checkpoints on the test scenes of a corpus.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// desk or paper; sets defaults for the other flags.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes [default: 46, desk: 5].
    #[arg(long)]
    count: Option<usize>,
    /// Scene side in pixels [default: 1024, desk: 256].
    #[arg(long)]
    size: Option<usize>,
    /// Scenes used for training; the rest are test scenes [default: 30 of 46, desk: 4].
    #[arg(long)]
    train: Option<usize>,
    /// Corruption, e.g. `none`, `gaussian:0.15`, `gaussian_speckle:0.2+pupil:0.8`.
    #[arg(long)]
    noise: Option<String>,
    /// Target: cosine (1 + cos φ) or sine (1 + sin φ).
    #[arg(long, default_value = "cosine")]
    target: String,
    /// Also write 16-bit PGM previews.
    #[arg(long)]
    pgm: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    preset: Option<String>,
    /// Directory written by `generate`.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total patches [default: 25000, desk: 2000].
    #[arg(long)]
    patches: Option<usize>,
    /// Patch side [default: 32].
    #[arg(long)]
    patch: Option<usize>,
    /// Patches held out for validation [default: 2500, desk: 200].
    #[arg(long)]
    validation: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    preset: Option<String>,
    /// key=value settings applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long = "K")]
    levels: Option<usize>,
    #[arg(long = "F")]
    filters: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target: Option<String>,
    /// Continue from this checkpoint (weights, moments and step counter).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for checkpoints, log and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// FPT1 or PGM image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// FPT1 output.
    #[arg(long)]
    output: PathBuf,
    /// Optional 16-bit PGM preview.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory written by `generate`; its test scenes are evaluated.
    #[arg(long)]
    scenes: PathBuf,
    /// `name=path` of a checkpoint; repeatable, may be omitted for an input-only report.
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// Scenario label recorded in the report [default: the corpus noise spec].
    #[arg(long)]
    scenario: Option<String>,
    /// Output prefix; writes `<out>.tsv`, `<out>.kv` and `<out>.manifest`.
    #[arg(long)]
    out: PathBuf,
}

/// Invalid flag values, reported before any file is touched.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn checked<T>(r: fringe_core::Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

fn preset(name: &Option<String>) -> Result<Option<Preset>> {
    name.as_deref().map(|n| checked(Preset::by_name(n))).transpose()
}

/// Record of one command invocation, written next to its outputs.
struct RunManifest {
    kv: KeyValues,
    start: Instant,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        let mut kv = KeyValues::new();
        kv.set("command", command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        kv.set("formats", FORMATS);
        RunManifest { kv, start: Instant::now() }
    }

    fn flag(&mut self, name: &str, value: impl std::fmt::Display) {
        self.kv.set(&format!("flag.{name}"), value);
    }

    fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.kv.set(key, value);
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.kv.set("wall_time_s", format!("{:.3}", self.start.elapsed().as_secs_f64()));
        std::fs::write(path, self.kv.to_string()).with_context(|| format!("writing {}", path.display()))
    }
}

fn scene_file(dir: &Path, index: usize, kind: &str) -> PathBuf {
    dir.join(format!("scene_{index:03}.{kind}.fpt"))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let p = preset(&a.preset)?;
    let count = a.count.unwrap_or(p.as_ref().map_or(46, |p| p.scene_count()));
    let size = a.size.unwrap_or(p.as_ref().map_or(1024, |p| p.size));
    let default_train = p.as_ref().map_or((count * 30 + 23) / 46, |p| p.train_scenes);
    let train_n = a.train.unwrap_or(default_train.clamp(1, count.max(1)));
    let noise = match &a.noise {
        Some(n) => checked(NoiseSpec::parse(n))?,
        None => p.as_ref().map_or(NoiseSpec::gaussian(0.15), |p| p.noise.clone()),
    };
    let target = checked(TargetMode::parse(&a.target))?;
    if count == 0 {
        return usage("--count must be at least 1");
    }
    if size < 32 {
        return usage("--size must be at least 32");
    }
    if train_n > count {
        return usage(format!("--train {train_n} exceeds --count {count}"));
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut m = RunManifest::new("generate");
    m.flag("seed", a.seed);
    m.flag("count", count);
    m.flag("size", size);
    m.flag("train", train_n);
    m.flag("noise", &noise);
    m.flag("target", target.name());
    m.flag("pgm", a.pgm);
    m.set("seed", a.seed);
    for i in 0..count {
        let g = generate_pair(a.seed, i as u64, size, &noise, target)?;
        write_tensor(scene_file(&a.out, i, "x"), &g.corrupted)?;
        write_tensor(scene_file(&a.out, i, "y"), &g.clean)?;
        if a.pgm {
            write_pgm16(a.out.join(format!("scene_{i:03}.x.pgm")), &g.corrupted)?;
            write_pgm16(a.out.join(format!("scene_{i:03}.y.pgm")), &g.clean)?;
        }
        m.set(&format!("scene.{i:03}"), if i < train_n { "train" } else { "test" });
    }
    m.write(&a.out.join(SCENES_MANIFEST))?;
    println!("wrote {count} scene pairs ({train_n} train / {} test) to {}", count - train_n, a.out.display());
    Ok(())
}

/// Scene indices of a generated corpus, split by role.
struct Corpus {
    dir: PathBuf,
    manifest: KeyValues,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn read_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(SCENES_MANIFEST);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = KeyValues::parse(&text)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for key in manifest.keys() {
        if let Some(idx) = key.strip_prefix("scene.") {
            let i: usize = idx.parse().with_context(|| format!("bad scene key '{key}'"))?;
            match manifest.get(key) {
                Some("train") => train.push(i),
                Some("test") => test.push(i),
                other => bail!("scene {i} has unknown role {other:?}"),
            }
        }
    }
    Ok(Corpus { dir: dir.to_path_buf(), manifest, train, test })
}

fn load_pair(c: &Corpus, i: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
    Ok((read_tensor(scene_file(&c.dir, i, "x"))?, read_tensor(scene_file(&c.dir, i, "y"))?))
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let mut p = preset(&a.preset)?.unwrap_or_else(Preset::paper);
    p.patches = a.patches.unwrap_or(p.patches);
    p.patch = a.patch.unwrap_or(p.patch);
    p.validation = a.validation.unwrap_or(p.validation);
    if p.patches == 0 || p.patch == 0 {
        return usage("--patches and --patch must be at least 1");
    }
    if p.validation >= p.patches {
        return usage(format!("--validation {} must be below --patches {}", p.validation, p.patches));
    }

    let corpus = read_corpus(&a.scenes)?;
    if corpus.train.is_empty() {
        bail!("corpus {} has no training scenes", a.scenes.display());
    }
    let pairs = corpus.train.iter().map(|&i| load_pair(&corpus, i)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = corpus.train.iter().map(|&i| i as u64).collect();
    if let Some(n) = corpus.manifest.get("flag.noise") {
        p.noise = NoiseSpec::parse(n)?;
    }
    if let Some(t) = corpus.manifest.get("flag.target") {
        p.train.target = TargetMode::parse(t)?;
    }
    let mut ds = build_dataset(&p, &pairs, &ids, a.seed)?;
    if let Some(s) = corpus.manifest.get("seed") {
        ds.manifest.set("scene_seed", s);
    }
    save_dataset(&ds, &a.out)?;

    let mut m = RunManifest::new("sample");
    m.flag("scenes", a.scenes.display());
    m.flag("seed", a.seed);
    m.flag("patches", p.patches);
    m.flag("patch", p.patch);
    m.flag("validation", p.validation);
    m.flag("out", a.out.display());
    m.set("seed", a.seed);
    m.write(&a.out.with_extension("manifest"))?;
    println!(
        "wrote {} patches ({} train / {} validation) to {}",
        ds.len(),
        ds.train_count,
        ds.len() - ds.train_count,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = preset(&a.preset)?.map_or_else(TrainConfig::default, |p| p.train);
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        checked(KeyValues::parse(&text).and_then(|kv| cfg.apply_key_values(&kv)))?;
    }
    if let Some(v) = &a.variant {
        cfg.variant = checked(Variant::parse(v))?;
    }
    if let Some(t) = &a.target {
        cfg.target = checked(TargetMode::parse(t))?;
    }
    cfg.levels = a.levels.unwrap_or(cfg.levels);
    cfg.filters = a.filters.unwrap_or(cfg.filters);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.lr0 = a.lr.unwrap_or(cfg.lr0);
    cfg.decay = a.decay.unwrap_or(cfg.decay);
    cfg.dropout = a.dropout.unwrap_or(cfg.dropout);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if a.dataset.is_some() {
        cfg.dataset = a.dataset.clone();
    }
    if a.out.is_some() {
        cfg.checkpoint_dir = a.out.clone();
    }
    checked(cfg.validate())?;
    if cfg.levels == 0 || cfg.filters == 0 {
        return usage("--K and --F must be at least 1");
    }
    let Some(dataset) = cfg.dataset.clone() else {
        return usage("--dataset is required (flag or config key)");
    };
    let Some(out) = cfg.checkpoint_dir.clone() else {
        return usage("--out is required (flag or config key checkpoint_dir)");
    };

    let data = load_dataset(&dataset)?;
    std::fs::create_dir_all(&out)?;
    let mut log = String::from("epoch\ttrain_loss\tval_mae\tval_mse\tseconds\n");
    println!("{}", log.trim_end());
    let on_epoch = |e: &fringe_core::train::EpochRecord| {
        let line = e.log_line();
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    };
    let outcome = match &a.resume {
        Some(path) => train_resume(&cfg, load_checkpoint(path)?, &data, on_epoch)?,
        None => train(&cfg, &data, on_epoch)?,
    };
    std::fs::write(out.join("train.log"), &log)?;

    let mut m = RunManifest::new("train");
    for key in cfg.to_key_values().keys().map(str::to_string).collect::<Vec<_>>() {
        let kv = cfg.to_key_values();
        m.flag(&key, kv.get(&key).unwrap_or_default());
    }
    if let Some(r) = &a.resume {
        m.flag("resume", r.display());
    }
    m.set("seed", cfg.seed);
    m.set("model", outcome.best.model.descriptor().to_string().trim_end().replace('\n', ";"));
    m.set("steps", outcome.last.state.t);
    if let Some(best) = outcome.history.best_record() {
        m.set("best_epoch", best.epoch);
        m.set("best_val_mae", format!("{:?}", best.val_mae));
    }
    m.set("selection", fringe_core::train::History::CRITERION);
    m.set("outputs", format!("{BEST_CHECKPOINT},{LAST_CHECKPOINT},train.log"));
    m.write(&out.join("train.manifest"))?;
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    if a.stride == 0 {
        return usage("--stride must be at least 1");
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let image = read_image(&a.input)?;
    let image = match image.rank() {
        2 => {
            let (rows, cols) = (image.dims()[0], image.dims()[1]);
            image.reshape(&[1, rows, cols])?
        }
        _ => image,
    };
    let r = reconstruct(&ck.model, &ck.store, &image, a.stride)?;
    write_tensor(&a.output, &r.image)?;
    if let Some(p) = &a.pgm {
        write_pgm16(p, &r.image)?;
    }
    let mut m = RunManifest::new("reconstruct");
    m.flag("checkpoint", a.checkpoint.display());
    m.flag("input", a.input.display());
    m.flag("stride", a.stride);
    m.flag("output", a.output.display());
    if let Some(p) = &a.pgm {
        m.flag("pgm", p.display());
    }
    m.set("invocations", r.invocations);
    m.write(&a.output.with_extension("manifest"))?;
    println!("{} patch inferences, wrote {}", r.invocations, a.output.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.stride == 0 {
        return usage("--stride must be at least 1");
    }
    let mut specs = Vec::with_capacity(a.models.len());
    for s in &a.models {
        let Some((name, path)) = s.split_once('=') else {
            return usage(format!("--model expects name=path, got '{s}'"));
        };
        if name.is_empty() {
            return usage(format!("--model '{s}' has an empty name"));
        }
        specs.push((name.to_string(), PathBuf::from(path)));
    }

    let corpus = read_corpus(&a.scenes)?;
    if corpus.test.is_empty() {
        bail!("corpus {} has no test scenes", a.scenes.display());
    }
    let mut models = Vec::with_capacity(specs.len());
    for (name, path) in &specs {
        models.push((name.clone(), load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?));
    }
    let mut scenes = Vec::with_capacity(corpus.test.len());
    for &i in &corpus.test {
        let (x, y) = load_pair(&corpus, i)?;
        scenes.push(TestScene { name: format!("scene_{i:03}"), input: x, truth: Some(y) });
    }
    let scenario = a
        .scenario
        .clone()
        .or_else(|| corpus.manifest.get("flag.noise").map(str::to_string))
        .unwrap_or_else(|| "unknown".into());
    let report = eval_report(&models, &scenes, a.stride, &scenario)?;
    let tsv = report.to_tsv();
    std::fs::write(a.out.with_extension("tsv"), &tsv)?;
    std::fs::write(a.out.with_extension("kv"), report.to_key_values())?;
    let mut m = RunManifest::new("eval");
    m.flag("scenes", a.scenes.display());
    for (name, path) in &specs {
        m.flag(&format!("model.{name}"), path.display());
    }
    m.flag("stride", a.stride);
    m.flag("scenario", &scenario);
    m.flag("out", a.out.display());
    m.write(&a.out.with_extension("manifest"))?;
    print!("{tsv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Usage(_) | Error::Config(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}
