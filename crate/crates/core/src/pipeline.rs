//! Experiment presets and the end-to-end generate → sample → train → reconstruct pipeline.

use crate::dataset::{sample_patches, split_train_val, PatchDataset};
use crate::error::{Error, Result};
use crate::metrics::{image_metrics, ImageMetrics};
use crate::model::Variant;
use crate::recon::reconstruct;
use crate::synth::{generate_corpus, GeneratedPair, LcgState, NoiseSpec, TargetMode};
use crate::tensor::Tensor;
use crate::train::{train, EpochRecord, TrainConfig, TrainOutcome};

/// Stream index for patch sampling, kept apart from the per-scene streams.
const SAMPLE_STREAM: u64 = 3 << 40;

/// Sizes and hyper-parameters of a complete experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// Scene side `N`.
    pub size: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub patch: usize,
    pub patches: usize,
    pub validation: usize,
    pub stride: usize,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
}

impl Preset {
    /// Laptop-scale run: 256² scenes, 4 for training and 1 held out, F=4, 2,000 patches, 30 epochs.
    pub fn desk() -> Preset {
        Preset {
            name: "desk",
            size: 256,
            train_scenes: 4,
            test_scenes: 1,
            patch: 32,
            patches: 2000,
            validation: 200,
            stride: 4,
            noise: NoiseSpec::gaussian(0.15),
            train: TrainConfig { epochs: 30, filters: 4, ..TrainConfig::default() },
        }
    }

    /// Full-scale settings: 46 scenes of 1024² (30 train / 16 test), 25,000 patches
    /// of which 2,500 validate, K=5, F=16, 150 epochs.
    pub fn paper() -> Preset {
        Preset {
            name: "paper",
            size: 1024,
            train_scenes: 30,
            test_scenes: 16,
            patch: 32,
            patches: 25_000,
            validation: 2_500,
            stride: 4,
            noise: NoiseSpec::gaussian(0.15),
            train: TrainConfig::default(),
        }
    }

    pub fn by_name(name: &str) -> Result<Preset> {
        match name {
            "desk" => Ok(Preset::desk()),
            "paper" => Ok(Preset::paper()),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected desk or paper)"))),
        }
    }

    pub fn scene_count(&self) -> usize {
        self.train_scenes + self.test_scenes
    }
}

/// Training and test scenes of an experiment; scene `i` comes from stream `(seed, i)`.
pub fn generate_scenes(preset: &Preset, seed: u64) -> Result<(Vec<GeneratedPair>, Vec<GeneratedPair>)> {
    let target = preset.train.target;
    let mut all = generate_corpus(seed, 0, preset.scene_count(), preset.size, &preset.noise, target)?;
    let test = all.split_off(preset.train_scenes);
    Ok((all, test))
}

/// Patch dataset cut from `(corrupted, clean)` training images with corpus
/// indices `ids`; validation is taken from the tail.
pub fn build_dataset(preset: &Preset, pairs: &[(Tensor<f64>, Tensor<f64>)], ids: &[u64], seed: u64) -> Result<PatchDataset> {
    if ids.len() != pairs.len() {
        return Err(Error::param("one scene id per image pair required"));
    }
    let mut rng = LcgState::derived(seed, SAMPLE_STREAM);
    let ds = sample_patches(pairs, preset.patches, preset.patch, &mut rng)?;
    let mut ds = split_train_val(ds, preset.validation)?;
    ds.manifest.set("seed", seed);
    ds.manifest.set("noise", &preset.noise);
    ds.manifest.set("target_mode", preset.train.target.name());
    let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
    ds.manifest.set("scene_ids", ids.join(","));
    Ok(ds)
}

/// Outcome of one end-to-end run on the held-out scenes.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcome: TrainOutcome,
    pub reconstructions: Vec<Tensor<f64>>,
    /// Errors of the corrupted inputs against ground truth.
    pub input: Vec<ImageMetrics>,
    /// Errors of the reconstructions against ground truth.
    pub output: Vec<ImageMetrics>,
}

impl ExperimentResult {
    pub fn mean_input_mae(&self) -> f64 {
        self.input.iter().map(|m| m.mae).sum::<f64>() / self.input.len() as f64
    }

    pub fn mean_output_mae(&self) -> f64 {
        self.output.iter().map(|m| m.mae).sum::<f64>() / self.output.len() as f64
    }
}

/// Generates scenes, samples patches, trains the best model and reconstructs every test scene.
pub fn run_experiment(
    preset: &Preset,
    variant: Variant,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<ExperimentResult> {
    let (train_scenes, test_scenes) = generate_scenes(preset, seed)?;
    let pairs: Vec<_> = train_scenes.iter().map(|g| (g.corrupted.clone(), g.clean.clone())).collect();
    let ids: Vec<u64> = train_scenes.iter().map(|g| g.index).collect();
    let data = build_dataset(preset, &pairs, &ids, seed)?;
    let config = TrainConfig { variant, seed, ..preset.train.clone() };
    let outcome = train(&config, &data, on_epoch)?;
    let mut reconstructions = Vec::new();
    let (mut input, mut output) = (Vec::new(), Vec::new());
    for g in &test_scenes {
        let r = reconstruct(&outcome.best.model, &outcome.best.store, &g.corrupted, preset.stride)?;
        input.push(image_metrics(&g.corrupted, &g.clean)?);
        output.push(image_metrics(&r.image, &g.clean)?);
        reconstructions.push(r.image);
    }
    Ok(ExperimentResult { outcome, reconstructions, input, output })
}

/// A preset shrunk for quick checks (small scenes, tiny network, few epochs).
pub fn smoke_preset() -> Preset {
    Preset {
        name: "smoke",
        size: 64,
        train_scenes: 2,
        test_scenes: 1,
        patch: 16,
        patches: 48,
        validation: 8,
        stride: 8,
        noise: NoiseSpec::gaussian(0.15),
        train: TrainConfig { epochs: 2, batch: 8, levels: 2, filters: 2, lr0: 1e-3, ..TrainConfig::default() },
    }
}

/// Quadrature target for the sine variant of a preset.
pub fn with_target(mut preset: Preset, target: TargetMode) -> Preset {
    preset.train.target = target;
    preset
}
