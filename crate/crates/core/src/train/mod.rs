//! Windowed, augmented training with Adadelta, validation tracking and
//! checkpoints; slice segmentation with a trained network.

mod adadelta;
mod checkpoint;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adadelta::{adadelta_step, AdadeltaConfig, OptimizerState};
pub use checkpoint::{ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::augment::{apply_transform, sample_augmentation, AugmentConfig};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, cross_entropy, one_hot, LossVariant};
use crate::mdgru::{MdGru, MdGruConfig};
use crate::metrics::{confusion, overlap_metrics};
use crate::pipeline::{
    gaussian_highpass, load_labels, load_slice, DatasetManifest, LabelMap, MultiChannelSlice,
    ProbabilityMap, Split, GM, WM,
};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    /// Weight of the Dice term; `1 − lambda` weighs cross-entropy.
    pub lambda: f64,
    pub loss: LossVariant,
    pub optimizer: AdadeltaConfig,
    pub validation_interval: u64,
    pub seed: u64,
    /// Gaussian high-pass applied to every input slice (variance in px²).
    #[serde(default)]
    pub highpass_variance: Option<f64>,
    /// Which label set of the manifest is the training target.
    #[serde(default)]
    pub rater: u32,
    pub augment: AugmentConfig,
    pub model: MdGruConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::amira()
    }
}

impl TrainConfig {
    /// Multi-inversion protocol: 30000 iterations on 500×500 windows.
    pub fn amira() -> Self {
        Self {
            iterations: 30_000,
            batch_size: 1,
            lambda: 0.5,
            loss: LossVariant::GeneralizedDice,
            optimizer: AdadeltaConfig::default(),
            validation_interval: 500,
            seed: 0,
            highpass_variance: Some(10.0),
            rater: 0,
            augment: AugmentConfig::default(),
            model: MdGruConfig::default(),
        }
    }

    /// Challenge protocol: single channel, 100000 iterations on 200×200 windows.
    pub fn scgm() -> Self {
        let mut c = Self::amira();
        c.iterations = 100_000;
        c.augment.window = (200, 200);
        c.model.input_channels = 1;
        c
    }

    /// Desk-scale protocol for 96×96 phantoms.
    pub fn phantom() -> Self {
        Self {
            iterations: 2000,
            batch_size: 1,
            lambda: 0.5,
            loss: LossVariant::GeneralizedDice,
            optimizer: AdadeltaConfig::default(),
            validation_interval: 100,
            seed: 0,
            highpass_variance: None,
            rater: 0,
            augment: AugmentConfig {
                deform_std: 4.0,
                deform_truncate: 12.0,
                scale_range: (0.8, 1.25),
                max_rotation_deg: 10.0,
                mirror_prob: 0.5,
                safe_margin: 12,
                window: (56, 56),
            },
            model: MdGruConfig {
                input_channels: 8,
                hidden_channels: vec![8],
                kernel_size: 3,
                num_classes: 3,
                dropout_rate: 0.5,
                ..MdGruConfig::default()
            },
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "amira" => Ok(Self::amira()),
            "scgm" => Ok(Self::scgm()),
            "phantom" => Ok(Self::phantom()),
            other => Err(Error::invalid(format!(
                "unknown profile '{other}' (expected amira, scgm or phantom)"
            ))),
        }
    }

    pub fn window(&self) -> (usize, usize) {
        self.augment.window
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if self.batch_size != 1 {
            return Err(Error::invalid("only batch size 1 is supported"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.validation_interval == 0 {
            return Err(Error::invalid("validation_interval must be positive"));
        }
        if let Some(v) = self.highpass_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("high-pass variance {v} must be positive")));
            }
        }
        self.optimizer.validate()?;
        self.augment.validate()?;
        self.model.validate()
    }

    /// Input preprocessing shared by training and inference.
    pub fn preprocess(&self, slice: &MultiChannelSlice) -> Result<MultiChannelSlice> {
        match self.highpass_variance {
            Some(v) => gaussian_highpass(slice, v),
            None => Ok(slice.clone()),
        }
    }
}

/// An image with its target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub slice: MultiChannelSlice,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl TrainData {
    /// Loads the train and validation splits with labels of `rater`;
    /// relative paths are taken from `base`.
    pub fn from_manifest(manifest: &DatasetManifest, rater: u32, base: Option<&Path>) -> Result<Self> {
        let load = |split: Split| -> Result<Vec<Sample>> {
            manifest
                .split(split)
                .map(|e| {
                    let lp = e.label_for(rater).ok_or_else(|| {
                        Error::Manifest(format!("slice {} has no labels from rater {rater}", e.id))
                    })?;
                    let slice = load_slice(resolve(base, &e.slice_path))?;
                    let labels = load_labels(resolve(base, lp))?;
                    if !(slice.height == labels.height && slice.width == labels.width) {
                        return Err(Error::ShapeMismatch {
                            op: "slice/label extent",
                            lhs: vec![slice.height, slice.width],
                            rhs: vec![labels.height, labels.width],
                        });
                    }
                    labels.validate_palette()?;
                    Ok(Sample { slice, labels })
                })
                .collect()
        };
        Ok(Self {
            train: load(Split::Train)?,
            validation: load(Split::Validation)?,
        })
    }

    fn ids(&self) -> (Vec<crate::pipeline::SliceId>, Vec<crate::pipeline::SliceId>) {
        (
            self.train.iter().map(|s| s.slice.id).collect(),
            self.validation.iter().map(|s| s.slice.id).collect(),
        )
    }
}

/// Loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub dice: f64,
    pub cross_entropy: f64,
}

/// Validation scores: mean per-slice DSC and pixel-mean cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationScores {
    pub gm_dsc: f64,
    pub wm_dsc: f64,
    pub cross_entropy: f64,
}

impl ValidationScores {
    /// Model-selection score: mean of GM and WM DSC.
    pub fn selection_score(&self) -> f64 {
        0.5 * (self.gm_dsc + self.wm_dsc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Optimizer steps taken, counting this one.
    pub iteration: u64,
    pub loss: StepLoss,
    pub validation: Option<ValidationScores>,
}

pub const LOG_HEADER: &str =
    "iteration,loss,dice_loss,cross_entropy,val_gm_dsc,val_wm_dsc,val_cross_entropy";

impl LogRow {
    pub fn csv(&self) -> String {
        let mut s = format!(
            "{},{},{},{}",
            self.iteration, self.loss.total, self.loss.dice, self.loss.cross_entropy
        );
        match &self.validation {
            Some(v) => {
                let _ = write!(s, ",{},{},{}", v.gm_dsc, v.wm_dsc, v.cross_entropy);
            }
            None => s.push_str(",,,"),
        }
        s
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

/// Receives progress from [`Trainer::run`].
pub trait TrainObserver {
    fn row(&mut self, _row: &LogRow, _elapsed: Duration) -> Result<()> {
        Ok(())
    }
    fn new_best(&mut self, _checkpoint: &ModelCheckpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Softmax probabilities and arg-max labels for one slice. The slice must
/// already be preprocessed.
pub fn segment(model: &MdGru, slice: &MultiChannelSlice) -> Result<(ProbabilityMap, LabelMap)> {
    let logits = model.logits(&slice.to_tensor())?;
    let mut tape = Tape::new();
    let lv = tape.constant(logits);
    let pv = tape.softmax(lv, 2)?;
    let probs = ProbabilityMap {
        height: slice.height,
        width: slice.width,
        classes: model.config().num_classes,
        probs: tape.value(pv).data().to_vec(),
    };
    let mut labels = LabelMap::new(slice.height, slice.width, probs.argmax(), slice.spacing_mm)?;
    labels.id = slice.id;
    Ok((probs, labels))
}

pub struct Trainer {
    config: TrainConfig,
    model: MdGru,
    optimizer: OptimizerState,
    iteration: u64,
    best: Option<(u64, f64)>,
    train: Vec<Sample>,
    validation: Vec<Sample>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &TrainData) -> Result<Self> {
        config.validate()?;
        let model = MdGru::new(config.model.clone(), config.seed)?;
        let optimizer = OptimizerState::new(model.params());
        Self::assemble(config, model, optimizer, 0, None, data)
    }

    /// Continues from a checkpoint; the data must be the same as before.
    pub fn resume(checkpoint: ModelCheckpoint, data: &TrainData) -> Result<Self> {
        checkpoint.config.validate()?;
        let model = checkpoint.model()?;
        Self::assemble(
            checkpoint.config,
            model,
            checkpoint.optimizer,
            checkpoint.iteration,
            checkpoint.best,
            data,
        )
    }

    fn assemble(
        config: TrainConfig,
        model: MdGru,
        optimizer: OptimizerState,
        iteration: u64,
        best: Option<(u64, f64)>,
        data: &TrainData,
    ) -> Result<Self> {
        if data.train.is_empty() {
            return Err(Error::invalid("no training slices"));
        }
        let need = config.augment.min_extent();
        let prep = |samples: &[Sample]| -> Result<Vec<Sample>> {
            samples
                .par_iter()
                .map(|s| {
                    if s.slice.channels != config.model.input_channels {
                        return Err(Error::ShapeMismatch {
                            op: "slice channels",
                            lhs: vec![config.model.input_channels],
                            rhs: vec![s.slice.channels],
                        });
                    }
                    Ok(Sample {
                        slice: config.preprocess(&s.slice)?,
                        labels: s.labels.clone(),
                    })
                })
                .collect()
        };
        for s in &data.train {
            if s.slice.height < need.0 || s.slice.width < need.1 {
                return Err(Error::invalid(format!(
                    "slice {} ({}x{}) is smaller than window plus margins {}x{}",
                    s.slice.id, s.slice.height, s.slice.width, need.0, need.1
                )));
            }
        }
        Ok(Self {
            train: prep(&data.train)?,
            validation: prep(&data.validation)?,
            config,
            model,
            optimizer,
            iteration,
            best,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn model(&self) -> &MdGru {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn best(&self) -> Option<(u64, f64)> {
        self.best
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            best: self.best,
            params: self.model.params().clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// The augmented window used at step `index` (0-based).
    pub fn training_window(&self, index: u64) -> Result<Sample> {
        let seed = self.config.seed;
        let pick = stream_rng(seed, Stream::Sample, index).random_range(0..self.train.len());
        let sample = &self.train[pick];
        let mut rng = stream_rng(seed, Stream::Augment, index);
        let extent = (sample.slice.height, sample.slice.width);
        let t = sample_augmentation(&mut rng, &self.config.augment, extent)?;
        let (slice, labels) =
            apply_transform(&sample.slice, &sample.labels, &t, self.config.augment.safe_margin)?;
        Ok(Sample { slice, labels })
    }

    /// One optimizer step on `sample` (already preprocessed and windowed).
    pub fn step_on(&mut self, sample: &Sample) -> Result<StepLoss> {
        let l = self.config.model.num_classes;
        let x = sample.slice.to_tensor();
        let target = one_hot(&sample.labels.labels, sample.labels.height, sample.labels.width, l)?;
        let mut pass = self.model.forward(&x, true, self.config.seed, self.iteration)?;
        let probs = pass.tape.softmax(pass.logits, 2)?;
        let terms = combined_loss(&mut pass.tape, probs, &target, self.config.lambda, self.config.loss)?;
        let loss = StepLoss {
            total: pass.tape.value(terms.total).item()?,
            dice: pass.tape.value(terms.dice).item()?,
            cross_entropy: pass.tape.value(terms.cross_entropy).item()?,
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {}", self.iteration + 1)));
        }
        let params = self.model.params_mut();
        params.zero_grad();
        pass.backward(terms.total, params)?;
        adadelta_step(params, &mut self.optimizer, &self.config.optimizer)?;
        params.zero_grad();
        self.iteration += 1;
        Ok(loss)
    }

    /// Samples, augments and takes one optimizer step.
    pub fn step(&mut self) -> Result<StepLoss> {
        let sample = self.training_window(self.iteration)?;
        self.step_on(&sample)
    }

    /// Scores the current network on the validation slices.
    pub fn validate(&self) -> Result<Option<ValidationScores>> {
        if self.validation.is_empty() {
            return Ok(None);
        }
        let l = self.config.model.num_classes;
        let per_slice: Vec<(f64, f64, f64)> = self
            .validation
            .par_iter()
            .map(|s| {
                let (probs, labels) = segment(&self.model, &s.slice)?;
                let gm = overlap_metrics(&confusion(&labels, &s.labels, GM)?).dsc;
                let wm = overlap_metrics(&confusion(&labels, &s.labels, WM)?).dsc;
                let target = one_hot(&s.labels.labels, s.labels.height, s.labels.width, l)?;
                let p = Tensor::new(vec![s.slice.height, s.slice.width, l], probs.probs)?;
                let ce = crate::losses::evaluate(&p, |tape, pv| cross_entropy(tape, pv, &target))?;
                Ok((gm, wm, ce))
            })
            .collect::<Result<_>>()?;
        let n = per_slice.len() as f64;
        let sum = per_slice
            .iter()
            .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
        Ok(Some(ValidationScores {
            gm_dsc: sum.0 / n,
            wm_dsc: sum.1 / n,
            cross_entropy: sum.2 / n,
        }))
    }

    /// Trains until `until` steps have been taken, validating every
    /// `validation_interval` steps.
    pub fn run(&mut self, until: u64, observer: &mut dyn TrainObserver) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while self.iteration < until {
            let start = Instant::now();
            let loss = self.step()?;
            let validation = if self.iteration % self.config.validation_interval == 0 {
                self.validate()?
            } else {
                None
            };
            if let Some(v) = validation {
                let score = v.selection_score();
                if self.best.is_none_or(|(_, b)| score > b) {
                    self.best = Some((self.iteration, score));
                    observer.new_best(&self.checkpoint())?;
                }
            }
            let row = LogRow {
                iteration: self.iteration,
                loss,
                validation,
            };
            observer.row(&row, start.elapsed())?;
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: ModelCheckpoint,
    pub best: Option<ModelCheckpoint>,
    pub log: Vec<LogRow>,
}

/// Keeps the best checkpoint in memory and optionally mirrors progress to
/// `train_log.csv`, `timing.csv` and `best.ckpt` in a directory.
pub struct RunRecorder {
    dir: Option<PathBuf>,
    pub best: Option<ModelCheckpoint>,
    log: String,
    timing: String,
}

pub const LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const BEST_FILE: &str = "best.ckpt";
pub const LAST_FILE: &str = "last.ckpt";

impl RunRecorder {
    /// `previous_rows` seeds the log when resuming.
    pub fn new(dir: Option<&Path>, previous_rows: &str) -> Self {
        Self {
            dir: dir.map(Path::to_path_buf),
            best: None,
            log: if previous_rows.is_empty() {
                format!("{LOG_HEADER}\n")
            } else {
                previous_rows.to_string()
            },
            timing: String::from("iteration,seconds\n"),
        }
    }

    fn flush(&self) -> Result<()> {
        if let Some(d) = &self.dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            for (name, text) in [(LOG_FILE, &self.log), (TIMING_FILE, &self.timing)] {
                let p = d.join(name);
                std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }
}

impl TrainObserver for RunRecorder {
    fn row(&mut self, row: &LogRow, elapsed: Duration) -> Result<()> {
        self.log.push_str(&row.csv());
        self.log.push('\n');
        let _ = writeln!(self.timing, "{},{:.6}", row.iteration, elapsed.as_secs_f64());
        if row.validation.is_some() {
            self.flush()?;
        }
        Ok(())
    }

    fn new_best(&mut self, checkpoint: &ModelCheckpoint) -> Result<()> {
        if let Some(d) = &self.dir {
            checkpoint.save(d.join(BEST_FILE))?;
        }
        self.best = Some(checkpoint.clone());
        Ok(())
    }
}

/// Keeps the log rows of `text` up to and including `iteration`.
pub fn truncate_log(text: &str, iteration: u64) -> String {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|v| v.parse::<u64>().ok())
                .is_some_and(|it| it <= iteration);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Trains `config.iterations` steps from scratch. With `out`, writes the log,
/// timings, the best checkpoint during training and the last one at the end.
pub fn train(data: &TrainData, config: TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data)?;
    finish(&mut trainer, out, "")
}

/// Continues a run from `checkpoint` up to its configured iteration count.
pub fn resume(checkpoint: ModelCheckpoint, data: &TrainData, out: Option<&Path>) -> Result<TrainOutcome> {
    let previous = match out.map(|d| d.join(LOG_FILE)) {
        Some(p) if p.exists() => {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            truncate_log(&text, checkpoint.iteration)
        }
        _ => String::new(),
    };
    let mut trainer = Trainer::resume(checkpoint, data)?;
    finish(&mut trainer, out, &previous)
}

fn finish(trainer: &mut Trainer, out: Option<&Path>, previous: &str) -> Result<TrainOutcome> {
    let mut recorder = RunRecorder::new(out, previous);
    let log = trainer.run(trainer.config.iterations, &mut recorder)?;
    recorder.flush()?;
    let last = trainer.checkpoint();
    if let Some(d) = out {
        last.save(d.join(LAST_FILE))?;
    }
    Ok(TrainOutcome {
        last,
        best: recorder.best,
        log,
    })
}

/// One model per rater's labels; model `k` uses seed `config.seed + k` and
/// writes to `out/member_{k}` when `out` is given.
pub fn train_rater_ensemble(
    per_rater: &[TrainData],
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<Vec<TrainOutcome>> {
    let first = per_rater
        .first()
        .ok_or_else(|| Error::invalid("rater ensemble needs at least one rater"))?;
    let ids = first.ids();
    for (k, d) in per_rater.iter().enumerate() {
        let other = d.ids();
        let same = |a: &[crate::pipeline::SliceId], b: &[crate::pipeline::SliceId]| {
            a.iter().collect::<BTreeSet<_>>() == b.iter().collect::<BTreeSet<_>>()
        };
        if !same(&ids.0, &other.0) || !same(&ids.1, &other.1) {
            return Err(Error::Manifest(format!(
                "rater {k} covers a different set of slices than rater 0"
            )));
        }
    }
    per_rater
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(k as u64);
            let dir = out.map(|o| o.join(format!("member_{k}")));
            train(d, c, dir.as_deref())
        })
        .collect()
}
