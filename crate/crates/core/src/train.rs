//! Mini-batch ADAM training with per-epoch validation and best-model selection.

use std::path::PathBuf;
use std::time::Instant;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::dataset::{PatchDataset, PatchPair};
use crate::error::{Error, Result};
use crate::io::KeyValues;
use crate::metrics::{mae, mse};
use crate::model::{build_model, model_backward_into, model_forward, model_predict, Mode, ModelSpec, Variant};
use crate::nn::{adam_step, init_params, l1_loss, DropoutPlan, ParamStore, TrainStepState, DEFAULT_DROPOUT};
use crate::synth::{LcgState, TargetMode};
use crate::tensor::Tensor;
use crate::threads::worker_count;

/// Stream indices for weight initialisation and for shuffling/dropout.
const INIT_STREAM: u64 = 1 << 40;
const SHUFFLE_STREAM: u64 = 2 << 40;

/// Training hyper-parameters and architecture choice.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub variant: Variant,
    pub levels: usize,
    pub filters: usize,
    pub target: TargetMode,
    pub dataset: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch: 32,
            lr0: 1e-4,
            decay: 1e-3,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
            variant: Variant::VNet,
            levels: 5,
            filters: 16,
            target: TargetMode::Cosine,
            dataset: None,
            checkpoint_dir: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch",
    "lr",
    "decay",
    "dropout",
    "seed",
    "variant",
    "K",
    "F",
    "target_mode",
    "dataset",
    "checkpoint_dir",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be at least 1".into()));
        }
        if !(self.lr0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive and decay non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Reads `key=value` settings; missing keys keep their defaults, unknown keys are rejected.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_key_values(kv)?;
        Ok(cfg)
    }

    /// Overrides the settings present in `kv`; unknown keys are rejected.
    pub fn apply_key_values(&mut self, kv: &KeyValues) -> Result<()> {
        kv.reject_unknown(CONFIG_KEYS)?;
        let mut cfg = self.clone();
        if let Some(v) = kv.parsed("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = kv.parsed("batch")? {
            cfg.batch = v;
        }
        if let Some(v) = kv.parsed("lr")? {
            cfg.lr0 = v;
        }
        if let Some(v) = kv.parsed("decay")? {
            cfg.decay = v;
        }
        if let Some(v) = kv.parsed("dropout")? {
            cfg.dropout = v;
        }
        if let Some(v) = kv.parsed("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = kv.get("variant") {
            cfg.variant = Variant::parse(v)?;
        }
        if let Some(v) = kv.parsed("K")? {
            cfg.levels = v;
        }
        if let Some(v) = kv.parsed("F")? {
            cfg.filters = v;
        }
        if let Some(v) = kv.get("target_mode") {
            cfg.target = TargetMode::parse(v)?;
        }
        if let Some(v) = kv.get("dataset") {
            cfg.dataset = Some(PathBuf::from(v));
        }
        if let Some(v) = kv.get("checkpoint_dir") {
            cfg.checkpoint_dir = Some(PathBuf::from(v));
        }
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("epochs", self.epochs);
        kv.set("batch", self.batch);
        kv.set("lr", self.lr0);
        kv.set("decay", self.decay);
        kv.set("dropout", self.dropout);
        kv.set("seed", self.seed);
        kv.set("variant", self.variant);
        kv.set("K", self.levels);
        kv.set("F", self.filters);
        kv.set("target_mode", self.target.name());
        if let Some(p) = &self.dataset {
            kv.set("dataset", p.display());
        }
        if let Some(p) = &self.checkpoint_dir {
            kv.set("checkpoint_dir", p.display());
        }
        kv
    }

    /// Network for patches of the given size.
    pub fn model(&self, patch: (usize, usize)) -> Result<ModelSpec> {
        Ok(build_model(self.variant, self.levels, self.filters, patch)?.with_target(self.target))
    }
}

/// Statistics of one completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-sample L1 loss over the epoch's training batches.
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_mse: f64,
    pub seconds: f64,
    pub steps: usize,
}

impl EpochRecord {
    /// Tab-separated log line: epoch, train_loss, val_mae, val_mse, seconds.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.2}",
            self.epoch, self.train_loss, self.val_mae, self.val_mse, self.seconds
        )
    }
}

/// Per-epoch log; the best epoch minimises validation MAE.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the selected model.
    pub best: Option<usize>,
}

impl History {
    pub const CRITERION: &'static str = "val_mae";

    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.epochs[i])
    }

    /// Losses only (wall times excluded), for reproducibility comparisons.
    pub fn losses(&self) -> Vec<(f64, f64, f64)> {
        self.epochs.iter().map(|e| (e.train_loss, e.val_mae, e.val_mse)).collect()
    }
}

/// Mean per-patch MAE and MSE of inference-mode predictions.
pub fn validate(model: &ModelSpec, store: &ParamStore<f32>, val: &[PatchPair]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(Error::param("validation set is empty"));
    }
    let (mut a, mut s) = (0.0, 0.0);
    for p in val {
        let pred = model_predict(model, store, &p.x)?;
        a += mae(&pred, &p.y)?;
        s += mse(&pred, &p.y)?;
    }
    Ok((a / val.len() as f64, s / val.len() as f64))
}

/// Forward/backward over `samples`, adding `scale`-weighted gradients into `grads`.
/// Returns the sum of per-sample losses.
fn accumulate_samples(
    model: &ModelSpec,
    store: &ParamStore<f32>,
    plan: &DropoutPlan<f32>,
    samples: &[&PatchPair],
    scale: f32,
    grads: &mut [Tensor<f32>],
) -> Result<f64> {
    let mut total = 0.0;
    for p in samples {
        let (pred, cache) = model_forward(model, store, &p.x, Mode::Train(plan))?;
        let (loss, g) = l1_loss(&pred, &p.y)?;
        total += loss as f64;
        model_backward_into(model, store, cache, &g.scale(scale), grads, false)?;
    }
    Ok(total)
}

/// Stateful trainer; the caller keeps the weights even when a checkpoint write fails.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: ModelSpec,
    pub store: ParamStore<f32>,
    pub state: TrainStepState,
    pub history: History,
    data: &'a PatchDataset,
    rng: LcgState,
    order: Vec<usize>,
    best: Option<ParamStore<f32>>,
    best_state: TrainStepState,
}

impl<'a> Trainer<'a> {
    /// Fresh He-initialised network sized to the dataset's patches.
    pub fn new(config: TrainConfig, data: &'a PatchDataset) -> Result<Self> {
        config.validate()?;
        let dims = data.patch_dims().ok_or_else(|| Error::param("dataset is empty"))?.to_vec();
        if dims.len() != 3 || dims[0] != 1 {
            return Err(Error::dim(format!("patches must be (1, h, w), got {dims:?}")));
        }
        let model = config.model((dims[1], dims[2]))?;
        let store = init_params(&model, &mut LcgState::derived(config.seed, INIT_STREAM));
        let state = TrainStepState { lr0: config.lr0, decay: config.decay, ..Default::default() };
        Self::with_state(config, model, store, state, data)
    }

    /// Continues from a checkpoint (weights, moments and step counter).
    pub fn resume(config: TrainConfig, ck: Checkpoint, data: &'a PatchDataset) -> Result<Self> {
        config.validate()?;
        Self::with_state(config, ck.model, ck.store, ck.state, data)
    }

    fn with_state(
        config: TrainConfig,
        model: ModelSpec,
        store: ParamStore<f32>,
        state: TrainStepState,
        data: &'a PatchDataset,
    ) -> Result<Self> {
        store.check_matches(&model)?;
        if data.train().is_empty() {
            return Err(Error::param("training set is empty"));
        }
        if data.validation().is_empty() {
            return Err(Error::param("validation set is empty; model selection needs one"));
        }
        if let Some(p) = data.pairs.iter().find(|p| p.x.dims() != model.input_dims()) {
            return Err(Error::dim(format!(
                "patch {:?} does not match model input {:?}",
                p.x.dims(),
                model.input_dims()
            )));
        }
        // A resumed run draws from a stream keyed by the step counter so it never replays epoch 1.
        let rng = LcgState::derived(config.seed, SHUFFLE_STREAM + state.t);
        Ok(Trainer {
            order: (0..data.train_count).collect(),
            best_state: state,
            config,
            model,
            store,
            state,
            history: History::default(),
            data,
            rng,
            best: None,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.train_count.div_ceil(self.config.batch)
    }

    /// One pass over the (reshuffled) training set followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.history.epochs.len() + 1;
        for i in (1..self.order.len()).rev() {
            let j = self.rng.below(i + 1);
            self.order.swap(i, j);
        }
        let workers = worker_count();
        let train = self.data.train();
        let mut loss_sum = 0.0;
        let mut steps = 0;
        let order = std::mem::take(&mut self.order);
        for (b, idx) in order.chunks(self.config.batch).enumerate() {
            let plan = DropoutPlan::sample(&self.model, self.config.dropout, &mut self.rng)?;
            let samples: Vec<&PatchPair> = idx.iter().map(|&i| &train[i]).collect();
            let scale = 1.0 / samples.len() as f32;
            let batch_loss = if workers <= 1 || samples.len() < 2 {
                let mut grads = self.store.grad_buffers();
                let l = accumulate_samples(&self.model, &self.store, &plan, &samples, scale, &mut grads)?;
                self.store.accumulate(&grads)?;
                l
            } else {
                self.parallel_batch(&plan, &samples, scale, workers)?
            };
            if !batch_loss.is_finite() {
                return Err(Error::Numeric {
                    location: format!("epoch {epoch} batch {}", b + 1),
                    detail: "non-finite training loss".into(),
                });
            }
            adam_step(&mut self.store, &mut self.state).map_err(|e| match e {
                Error::Numeric { location, detail } => Error::Numeric {
                    location: format!("epoch {epoch} batch {} ({location})", b + 1),
                    detail,
                },
                other => other,
            })?;
            loss_sum += batch_loss;
            steps += 1;
        }
        self.order = order;
        let (val_mae, val_mse) = validate(&self.model, &self.store, self.data.validation())?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mae,
            val_mse,
            seconds: start.elapsed().as_secs_f64(),
            steps,
        };
        let improved = self.history.best_record().map_or(true, |b| val_mae < b.val_mae);
        self.history.epochs.push(record);
        if improved {
            self.history.best = Some(self.history.epochs.len() - 1);
            self.best = Some(self.store.clone());
            self.best_state = self.state;
        }
        Ok(record)
    }

    /// Contiguous sample chunks per worker; gradients reduced in worker order.
    fn parallel_batch(&mut self, plan: &DropoutPlan<f32>, samples: &[&PatchPair], scale: f32, workers: usize) -> Result<f64> {
        let chunk = samples.len().div_ceil(workers);
        let (model, store) = (&self.model, &self.store);
        let results: Vec<Result<(f64, Vec<Tensor<f32>>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        let mut grads = store.grad_buffers();
                        let l = accumulate_samples(model, store, plan, part, scale, &mut grads)?;
                        Ok((l, grads))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        let mut total = 0.0;
        for r in results {
            let (l, grads) = r?;
            total += l;
            self.store.accumulate(&grads)?;
        }
        Ok(total)
    }

    /// Best-validation weights so far (the current weights before any epoch).
    pub fn best_checkpoint(&self) -> Checkpoint {
        let store = self.best.clone().unwrap_or_else(|| self.store.clone());
        Checkpoint { model: self.model.clone(), store, state: self.best_state }
    }

    /// Current weights and optimiser state, for resuming.
    pub fn last_checkpoint(&self) -> Checkpoint {
        Checkpoint { model: self.model.clone(), store: self.store.clone(), state: self.state }
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: History,
}

pub const BEST_CHECKPOINT: &str = "best.vnck";
pub const LAST_CHECKPOINT: &str = "last.vnck";

/// Runs `config.epochs` epochs, calling `on_epoch` after each. When a checkpoint
/// directory is configured, the best model is rewritten whenever it improves and
/// the final state is saved as `last.vnck`.
pub fn train(config: &TrainConfig, data: &PatchDataset, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    run(&mut trainer, &mut on_epoch)
}

/// Like [`train`], continuing from `ck`.
pub fn train_resume(
    config: &TrainConfig,
    ck: Checkpoint,
    data: &PatchDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::resume(config.clone(), ck, data)?;
    run(&mut trainer, &mut on_epoch)
}

fn run(trainer: &mut Trainer, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let dir = trainer.config.checkpoint_dir.clone();
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
    }
    for _ in 0..trainer.config.epochs {
        let rec = trainer.run_epoch()?;
        on_epoch(&rec);
        if let (Some(d), Some(best)) = (&dir, trainer.history.best) {
            if best + 1 == trainer.history.epochs.len() {
                save_checkpoint(&trainer.best_checkpoint(), d.join(BEST_CHECKPOINT), false)?;
            }
        }
    }
    if let Some(d) = &dir {
        save_checkpoint(&trainer.last_checkpoint(), d.join(LAST_CHECKPOINT), true)?;
    }
    Ok(TrainOutcome {
        best: trainer.best_checkpoint(),
        last: trainer.last_checkpoint(),
        history: trainer.history.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize, side: usize, seed: u64) -> PatchDataset {
        let mut rng = LcgState::seeded(seed);
        let pairs = (0..n)
            .map(|i| {
                let x = Tensor::from_fn(&[1, side, side], |_| rng.uniform(0.0, 2.0) as f32);
                PatchPair { y: x.map(|v| 0.5 * v + 0.5), x, image: 0, row: i as u32, col: 0 }
            })
            .collect();
        PatchDataset { pairs, train_count: n - 2, manifest: KeyValues::new() }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig { epochs: 3, batch: 4, lr0: 1e-3, levels: 1, filters: 2, dropout: 0.0, seed: 5, ..Default::default() }
    }

    #[test]
    fn config_defaults_and_parsing() {
        let d = TrainConfig::default();
        assert_eq!((d.epochs, d.batch, d.lr0, d.decay, d.dropout), (150, 32, 1e-4, 1e-3, 0.25));
        let kv = KeyValues::parse("epochs=7\nvariant=unet\n# note\n").unwrap();
        let c = TrainConfig::from_key_values(&kv).unwrap();
        assert_eq!((c.epochs, c.variant, c.batch), (7, Variant::UNet, 32));
        assert_eq!(TrainConfig::from_key_values(&c.to_key_values()).unwrap(), c);
        let bad = KeyValues::parse("epoch=7\n").unwrap();
        assert!(TrainConfig::from_key_values(&bad).is_err());
        let zero = KeyValues::parse("batch=0\n").unwrap();
        assert!(TrainConfig::from_key_values(&zero).is_err());
    }

    #[test]
    fn steps_and_best_selection() {
        let data = pairs(12, 4, 1);
        let cfg = tiny_config();
        let out = train(&cfg, &data, |_| {}).unwrap();
        assert_eq!(out.history.epochs.len(), 3);
        assert!(out.history.epochs.iter().all(|e| e.steps == 3));
        assert_eq!(out.last.state.t, 9);
        let best = out.history.best_record().unwrap();
        assert!(out.history.epochs.iter().all(|e| best.val_mae <= e.val_mae));
        let (m, _) = validate(&out.best.model, &out.best.store, data.validation()).unwrap();
        assert_eq!(m, best.val_mae);
    }

    #[test]
    fn full_batch_is_one_step() {
        let data = pairs(12, 4, 2);
        let cfg = TrainConfig { epochs: 1, batch: 10, ..tiny_config() };
        let out = train(&cfg, &data, |_| {}).unwrap();
        assert_eq!(out.last.state.t, 1);
    }

    #[test]
    fn reproducible() {
        let data = pairs(12, 4, 3);
        let cfg = TrainConfig { dropout: 0.25, ..tiny_config() };
        let a = train(&cfg, &data, |_| {}).unwrap();
        let b = train(&cfg, &data, |_| {}).unwrap();
        assert_eq!(a.history.losses(), b.history.losses());
        assert_eq!(a.last.store, b.last.store);
    }

    #[test]
    fn resume_continues_step_counter() {
        let data = pairs(12, 4, 4);
        let cfg = tiny_config();
        let first = train(&cfg, &data, |_| {}).unwrap();
        let more = train_resume(&TrainConfig { epochs: 1, ..cfg }, first.last.clone(), &data, |_| {}).unwrap();
        assert_eq!(more.last.state.t, first.last.state.t + 3);
    }

    #[test]
    fn validate_offsets() {
        let model = build_model(Variant::VNet, 1, 1, (2, 2)).unwrap();
        let mut store: ParamStore<f32> = init_params(&model, &mut LcgState::seeded(0));
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        // all-zero weights predict relu(0) = 0 everywhere
        let val = vec![PatchPair {
            x: Tensor::full(&[1, 2, 2], 1.0),
            y: Tensor::full(&[1, 2, 2], 0.5),
            image: 0,
            row: 0,
            col: 0,
        }];
        assert_eq!(validate(&model, &store, &val).unwrap(), (0.5, 0.25));
        assert!(validate(&model, &store, &[]).is_err());
    }
}
