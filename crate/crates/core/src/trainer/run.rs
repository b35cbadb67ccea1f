//! The training loop.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::degrade::{degrade, Degradation, DegradationSpec};
use crate::data::image::ImageBuffer;
use crate::data::patches::{crop_pair, modcrop};
use crate::data::resize::bicubic_resize;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::LossConfig;
use crate::metrics;
use crate::model::{checkpoint, forward, init_params, SwinIRConfig, Task};
use crate::params::ModelParams;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::adam::{adam_step, AdamOptions, AdamState};
use super::config::TrainConfig;
use super::state::TrainState;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const STATE_FILE: &str = "train.state";
pub const METRICS_LOG: &str = "metrics.log";

/// RNG label for validation degradations, disjoint from step numbers.
const VAL_STREAM: u64 = u64::MAX;

/// HQ images plus how to degrade them.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<ImageBuffer>,
    pub val: Vec<ImageBuffer>,
    /// The seed field is ignored; randomness comes from the train seed.
    pub degradation: Degradation,
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValRecord {
    pub step: u64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub psnr: f64,
    pub lr: f64,
}

impl ValRecord {
    pub fn log_line(&self) -> String {
        format!(
            "step {} loss {:.6} psnr {:.4} lr {:.6e}",
            self.step, self.loss, self.psnr, self.lr
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::invalid(format!("malformed metrics line: {line:?}"));
        if f.len() != 8 || f[0] != "step" || f[2] != "loss" || f[4] != "psnr" || f[6] != "lr" {
            return Err(bad());
        }
        Ok(Self {
            step: f[1].parse().map_err(|_| bad())?,
            loss: f[3].parse().map_err(|_| bad())?,
            psnr: f[5].parse().map_err(|_| bad())?,
            lr: f[7].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Loss of every step run by this call.
    pub losses: Vec<f64>,
    pub records: Vec<ValRecord>,
    pub best_psnr: f64,
}

struct ValPair {
    lq: Tensor<f32>,
    hq: ImageBuffer,
}

pub struct Trainer {
    model: SwinIRConfig,
    cfg: TrainConfig,
    degradation: Degradation,
    train_hq: Vec<ImageBuffer>,
    /// Pre-computed LQ images for bicubic degradation.
    train_lq: Option<Vec<ImageBuffer>>,
    val: Vec<ValPair>,
    params: ModelParams<f32>,
    state: TrainState,
    loss: LossConfig,
    out_dir: Option<PathBuf>,
}

fn check_degradation(model: &SwinIRConfig, d: &Degradation) -> Result<()> {
    let ok = match (model.task, d) {
        (Task::Sr, Degradation::Bicubic { scale }) => *scale == model.scale,
        (Task::Denoise, Degradation::GaussianNoise { .. }) => true,
        (Task::Car, Degradation::DctQuantize { .. }) => true,
        _ => false,
    };
    if !ok {
        return Err(Error::Config(format!(
            "degradation {d:?} does not fit task {} at scale {}",
            model.task, model.scale
        )));
    }
    DegradationSpec { kind: *d, seed: 0 }.validate()
}

fn stack(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let mut shape = first.shape().to_vec();
    shape[0] = items.len();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape()[1..] != first.shape()[1..] {
            return Err(Error::shape("batch items differ in shape"));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data)
}

impl Trainer {
    /// Fresh run with parameters initialized from `cfg.seed`.
    pub fn new(model: SwinIRConfig, cfg: TrainConfig, data: TrainData) -> Result<Self> {
        let params = init_params::<f32>(&model, cfg.seed)?;
        let state = TrainState {
            adam: AdamState::new(&params),
            seed: cfg.seed,
            best_psnr: f64::NEG_INFINITY,
            interval_loss: 0.0,
            interval_steps: 0,
        };
        Self::resume(model, cfg, data, params, state)
    }

    /// Continues from saved parameters and optimizer state.
    pub fn resume(
        model: SwinIRConfig,
        cfg: TrainConfig,
        data: TrainData,
        params: ModelParams<f32>,
        state: TrainState,
    ) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        check_degradation(&model, &data.degradation)?;
        state.adam.check(&params)?;
        if data.train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        for img in data.train.iter().chain(&data.val) {
            if img.channels() != model.in_channels {
                return Err(Error::Config(format!(
                    "image has {} channels, model expects {}",
                    img.channels(),
                    model.in_channels
                )));
            }
        }
        let r = model.scale;
        let (train_hq, train_lq) = match data.degradation {
            Degradation::Bicubic { .. } => {
                let spec = DegradationSpec {
                    kind: data.degradation,
                    seed: 0,
                };
                let hq = data.train.iter().map(|i| modcrop(i, r)).collect::<Result<Vec<_>>>()?;
                let lq = hq.iter().map(|i| degrade(i, &spec)).collect::<Result<Vec<_>>>()?;
                (hq, Some(lq))
            }
            _ => (data.train, None),
        };
        for img in train_lq.as_ref().unwrap_or(&train_hq) {
            if img.height() < cfg.patch_size || img.width() < cfg.patch_size {
                return Err(Error::invalid(format!(
                    "training image {}x{} (LQ) is smaller than the patch {}",
                    img.height(),
                    img.width(),
                    cfg.patch_size
                )));
            }
        }
        let mut val = Vec::with_capacity(data.val.len());
        for (i, img) in data.val.iter().enumerate() {
            let hq = modcrop(img, r)?;
            let spec = DegradationSpec {
                kind: data.degradation,
                seed: SeededRng::derived(cfg.seed, &[VAL_STREAM, i as u64]).next_u64(),
            };
            let lq = degrade(&hq, &spec)?;
            val.push(ValPair { lq: lq.to_tensor(), hq });
        }
        let loss = cfg.loss_for(model.task);
        Ok(Self {
            model,
            cfg,
            degradation: data.degradation,
            train_hq,
            train_lq,
            val,
            params,
            state,
            loss,
            out_dir: None,
        })
    }

    /// Checkpoints, state and the metrics log go to `dir`.
    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn model_config(&self) -> &SwinIRConfig {
        &self.model
    }

    pub fn step_count(&self) -> u64 {
        self.state.adam.step
    }

    /// LQ/HQ batch for 0-based `step`.
    pub fn sample_batch(&self, step: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut lqs = Vec::with_capacity(self.cfg.batch_size);
        let mut hqs = Vec::with_capacity(self.cfg.batch_size);
        for b in 0..self.cfg.batch_size {
            let mut rng = SeededRng::derived(self.state.seed, &[step, b as u64]);
            let idx = rng.below(self.train_hq.len());
            let hq = &self.train_hq[idx];
            let (lq, hq) = match &self.train_lq {
                Some(lq_imgs) => crop_pair(&lq_imgs[idx], hq, self.model.scale, self.cfg.patch_size, &mut rng)?,
                None => {
                    let (_, hq) = crop_pair(hq, hq, 1, self.cfg.patch_size, &mut rng)?;
                    let spec = DegradationSpec {
                        kind: self.degradation,
                        seed: rng.next_u64(),
                    };
                    (degrade(&hq, &spec)?, hq)
                }
            };
            lqs.push(lq.to_tensor());
            hqs.push(hq.to_tensor());
        }
        Ok((stack(&lqs)?, stack(&hqs)?))
    }

    /// Loss and parameter gradients of a batch; gradients are left on the
    /// parameters.
    fn loss_and_grads(&mut self, lq: Tensor<f32>, hq: Tensor<f32>) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let pv = self.params.register(&mut g, true);
        let x = g.constant(lq);
        let y = forward(&mut g, &self.model, &pv, x)?;
        let t = g.constant(hq);
        let l = self.loss.apply(&mut g, y, t)?;
        let value = g.value(l).item()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss is {value}")));
        }
        g.backward(l)?;
        self.params.zero_grads();
        self.params.accumulate_grads(&g, &pv)?;
        Ok(value)
    }

    /// Runs one optimization step and returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.state.adam.step;
        let (lq, hq) = self.sample_batch(step)?;
        let loss = self.loss_and_grads(lq, hq)?;
        let opts = AdamOptions {
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            eps: self.cfg.eps,
            weight_decay: self.cfg.weight_decay,
        };
        let lr = self.cfg.lr_at(step as usize);
        adam_step(&mut self.params, &mut self.state.adam, &opts, lr)?;
        self.params.zero_grads();
        self.state.interval_loss += loss;
        self.state.interval_steps += 1;
        Ok(loss)
    }

    fn restore(&self, lq: &Tensor<f32>) -> Result<ImageBuffer> {
        let mut g = Graph::<f32>::new();
        let pv = self.params.register(&mut g, false);
        let x = g.constant(lq.clone());
        let y = forward(&mut g, &self.model, &pv, x)?;
        ImageBuffer::from_tensor(g.value(y))
    }

    fn border(&self) -> usize {
        if self.model.task == Task::Sr {
            self.model.scale
        } else {
            0
        }
    }

    fn mean_psnr(&self, mut produce: impl FnMut(&ValPair) -> Result<ImageBuffer>) -> Result<f64> {
        if self.val.is_empty() {
            return Err(Error::invalid("no validation images"));
        }
        let y_only = self.model.task == Task::Sr;
        let mut total = 0.0;
        for pair in &self.val {
            let out = produce(pair)?.to_u8();
            let (p, t) = if y_only && out.channels() == 3 {
                (metrics::rgb_to_y(&out)?, metrics::rgb_to_y(&pair.hq)?)
            } else {
                (out, pair.hq.clone())
            };
            total += metrics::psnr(&p, &t, self.border())?;
        }
        Ok(total / self.val.len() as f64)
    }

    /// Mean validation PSNR of the current parameters.
    pub fn validate(&self) -> Result<f64> {
        self.mean_psnr(|p| self.restore(&p.lq))
    }

    /// Mean validation PSNR of the degraded input itself (bicubic-upsampled
    /// for super-resolution).
    pub fn baseline_psnr(&self) -> Result<f64> {
        self.mean_psnr(|p| {
            let lq = ImageBuffer::from_tensor(&p.lq)?;
            if self.model.task == Task::Sr {
                bicubic_resize(&lq, p.hq.height(), p.hq.width())
            } else {
                Ok(lq)
            }
        })
    }

    fn out_path(&self, name: &str) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(name))
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Writes `last.ckpt` and the optimizer state.
    pub fn save_last(&self) -> Result<()> {
        if let Some(p) = self.out_path(LAST_CHECKPOINT) {
            Self::write_atomic(&p, &checkpoint::to_bytes(&self.model, &self.params)?)?;
        }
        if let Some(p) = self.out_path(STATE_FILE) {
            Self::write_atomic(&p, &self.state.to_bytes()?)?;
        }
        Ok(())
    }

    fn record(&mut self, log: &mut Option<File>) -> Result<ValRecord> {
        let step = self.state.adam.step;
        let psnr = self.validate()?;
        let loss = self.state.interval_loss / self.state.interval_steps.max(1) as f64;
        let rec = ValRecord {
            step,
            loss,
            psnr,
            lr: self.cfg.lr_at(step.saturating_sub(1) as usize),
        };
        self.state.interval_loss = 0.0;
        self.state.interval_steps = 0;
        if psnr > self.state.best_psnr {
            self.state.best_psnr = psnr;
            if let Some(p) = self.out_path(BEST_CHECKPOINT) {
                Self::write_atomic(&p, &checkpoint::to_bytes(&self.model, &self.params)?)?;
            }
        }
        if let Some(f) = log {
            let path = self.out_path(METRICS_LOG).unwrap();
            writeln!(f, "{}", rec.log_line()).map_err(|e| Error::io(&path, e))?;
        }
        self.save_last()?;
        Ok(rec)
    }

    /// Trains until `iterations` steps have run in total, validating every
    /// `val_every` steps and at the end. A non-finite loss or gradient stops
    /// the run with [`Error::NonFinite`]; files written at the last
    /// validation stay untouched.
    pub fn run(&mut self) -> Result<TrainReport> {
        let mut log = match self.out_path(METRICS_LOG) {
            Some(p) => {
                let fresh = self.state.adam.step == 0;
                let f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&p)
                    .map_err(|e| Error::io(&p, e))?;
                Some(f)
            }
            None => None,
        };
        let mut report = TrainReport::default();
        let total = self.cfg.iterations as u64;
        if self.state.adam.step >= total {
            self.save_last()?;
            report.best_psnr = self.state.best_psnr;
            return Ok(report);
        }
        while self.state.adam.step < total {
            let loss = self.step().map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!(
                    "training diverged at step {}: {m}; last good checkpoint kept",
                    self.state.adam.step + 1
                )),
                other => other,
            })?;
            report.losses.push(loss);
            let s = self.state.adam.step;
            if (s.is_multiple_of(self.cfg.val_every as u64) || s == total) && !self.val.is_empty() {
                report.records.push(self.record(&mut log)?);
            }
        }
        if self.val.is_empty() {
            self.save_last()?;
        }
        report.best_psnr = self.state.best_psnr;
        Ok(report)
    }
}

/// Trailing moving average with window `w` (`len − w + 1` values).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || xs.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() - w + 1);
    let mut sum: f64 = xs[..w].iter().sum();
    out.push(sum / w as f64);
    for i in w..xs.len() {
        sum += xs[i] - xs[i - w];
        out.push(sum / w as f64);
    }
    out
}
