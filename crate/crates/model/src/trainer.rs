//! End-to-end optimisation: loss, clipping, accumulation, Adam, the restart
//! schedule, per-step metrics, validation and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use subaru_core::audio::resample;
use subaru_core::metrics::{evaluate_clip, MetricMeans, MetricRecord, MetricReport};
use subaru_core::AudioClip;
use subaru_nn::{Graph, ParamStore, Var};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{NetworkConfig, TrainConfig};
use crate::data::{Batches, Triple};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, Objective};
use crate::networks::{Plans, Subaru};
use crate::optim::{accumulate, clip_global_norm, Adam, CosineWarmRestarts, Grads};

/// One processed batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Batches processed so far, counting this one.
    pub batch: u64,
    /// Optimizer steps taken after this batch.
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub const METRICS_HEADER: &str =
    "batch,step,epoch,lr,multi_scale,multi_period,phase_ip,phase_gd,mr_stft_sc,mr_stft_mag,total,grad_norm";

impl StepRecord {
    pub fn csv(&self) -> String {
        let l = self.loss.values();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.batch, self.step, self.epoch, self.lr, l[0], l[1], l[2], l[3], l[4], l[5], l[6], self.grad_norm
        )
    }
}

/// Enhanced-vs-reference and unprocessed-vs-reference metric means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub enhanced: MetricMeans,
    pub baseline: MetricMeans,
    pub clips: usize,
}

/// Owns the weights, optimizer state and counters of one run.
pub struct Trainer {
    pub model: Subaru,
    pub store: ParamStore<f32>,
    pub plans: Plans<f32>,
    pub objective: Objective<f32>,
    pub adam: Adam<f32>,
    pub cfg: TrainConfig,
    pub step: u64,
    pub batches_seen: u64,
    pub epoch: usize,
    pub best_val_lsd: Option<f64>,
    /// Optimizer steps per epoch, which sets the restart period.
    pub steps_per_epoch: u64,
    accum: Grads<f32>,
    accum_n: usize,
}

/// Stacks per-pair signals into `[B, L]`, zero-filling missing rows.
fn stack(rows: &[Option<&[f64]>], len: usize) -> ArrayD<f32> {
    Array2::from_shape_fn((rows.len(), len), |(b, i)| rows[b].map_or(0.0, |r| r.get(i).copied().unwrap_or(0.0)) as f32)
        .into_dyn()
}

impl Trainer {
    pub fn new(network: NetworkConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Subaru::new(network, &mut store, &mut rng)?;
        let plans = Plans::new(&model.config)?;
        let objective = Objective::new(cfg.weights, cfg.period_mode, model.config.apen_stft())?;
        let adam = Adam::new(cfg.adam(), store.len());
        Ok(Trainer {
            model,
            store,
            plans,
            objective,
            adam,
            cfg,
            step: 0,
            batches_seen: 0,
            epoch: 0,
            best_val_lsd: None,
            steps_per_epoch: 1,
            accum: Vec::new(),
            accum_n: 0,
        })
    }

    pub fn schedule(&self) -> CosineWarmRestarts {
        CosineWarmRestarts {
            base_lr: self.cfg.lr,
            eta_min: self.cfg.eta_min,
            period: self.cfg.t0_epochs as u64 * self.steps_per_epoch.max(1),
        }
    }

    /// Sets the restart period from the number of batches per epoch.
    pub fn set_batches_per_epoch(&mut self, batches: usize) {
        self.steps_per_epoch = (batches.div_ceil(self.cfg.grad_accum_batches)).max(1) as u64;
    }

    /// Forward pass and loss on a batch inside `g`.
    pub fn loss<'g>(&self, g: &'g Graph<f32>, batch: &[Triple]) -> Result<(Var<'g, f32>, LossBreakdown)> {
        let first = batch.first().ok_or(Error::Empty("batch"))?;
        let (n, len) = (first.acm.len(), first.clean.len());
        if batch.iter().any(|t| t.acm.len() != n || t.clean.len() != len) {
            return Err(Error::Shape("pairs in a batch must have equal lengths".into()));
        }
        if len != self.model.output_len(n) {
            return Err(Error::Shape(format!("target length {len} for {n} input samples")));
        }
        let acm = g.input(stack(&batch.iter().map(|t| Some(t.acm.as_slice())).collect::<Vec<_>>(), n));
        let bcm = batch.iter().any(|t| t.bcm.is_some()).then(|| {
            g.input(stack(&batch.iter().map(|t| t.bcm.as_deref()).collect::<Vec<_>>(), len))
        });
        let clean = g.constant(stack(&batch.iter().map(|t| Some(t.clean.as_slice())).collect::<Vec<_>>(), len));
        let out = self.model.forward(acm, bcm, &self.plans);
        // Phase terms use the spectrum of the final waveform.
        let terms = self.objective.evaluate(out.wave, clean, None)?;
        Ok((terms.total, terms.breakdown))
    }

    /// Gradients of one batch; running statistics are updated in place.
    pub fn gradients(&mut self, batch: &[Triple]) -> Result<(Grads<f32>, LossBreakdown)> {
        let (grads, breakdown, updates) = {
            let g = Graph::training(&self.store);
            let (total, breakdown) = self.loss(&g, batch)?;
            if !breakdown.is_finite() {
                return Err(Error::NonFinite {
                    step: self.step,
                    detail: format!("{breakdown:?}"),
                });
            }
            let grads = g.backward(total).into_params();
            (grads, breakdown, g.take_updates())
        };
        for (id, v) in updates {
            self.store.set(id, v);
        }
        Ok((grads, breakdown))
    }

    /// Clips the batch gradient, adds it to the accumulator and takes an
    /// optimizer step once enough batches have been gathered.
    pub fn train_batch(&mut self, batch: &[Triple]) -> Result<StepRecord> {
        let (mut grads, loss) = self.gradients(batch)?;
        let norm = clip_global_norm(&mut grads, self.cfg.grad_clip_norm);
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                detail: "gradient norm".into(),
            });
        }
        let lr = self.schedule().lr(self.step);
        accumulate(&mut self.accum, grads);
        self.accum_n += 1;
        self.batches_seen += 1;
        if self.accum_n >= self.cfg.grad_accum_batches {
            self.apply();
        }
        Ok(StepRecord {
            batch: self.batches_seen,
            step: self.step,
            epoch: self.epoch,
            lr,
            loss,
            grad_norm: norm,
        })
    }

    /// Applies a partially filled accumulator; returns whether a step was
    /// taken.
    pub fn flush(&mut self) -> bool {
        if self.accum_n == 0 {
            return false;
        }
        self.apply();
        true
    }

    fn apply(&mut self) {
        let k = 1.0 / self.accum_n as f32;
        let mut grads = std::mem::take(&mut self.accum);
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
        let lr = self.schedule().lr(self.step);
        self.adam.step(&mut self.store, &grads, lr);
        self.step += 1;
        self.accum_n = 0;
    }

    /// Enhances one pair in inference mode.
    pub fn enhance(&self, t: &Triple) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let acm = AudioClip::new(t.acm.clone(), cfg.source_rate);
        let bcm = t.bcm.as_ref().map(|b| AudioClip::new(b.clone(), cfg.target_rate));
        Ok(self.model.enhance(&self.store, &self.plans, &acm, bcm.as_ref())?.samples)
    }

    /// Metric means of the enhanced output and of the unprocessed capture
    /// resampled to the target rate.
    pub fn validate(&self, pairs: &[Triple]) -> Result<Validation> {
        let rate = self.model.config.target_rate;
        let mut enh = MetricReport::default();
        let mut base = MetricReport::default();
        for t in pairs {
            let clean = AudioClip::new(t.clean.clone(), rate);
            let out = AudioClip::new(self.enhance(t)?, rate);
            enh.records.push(evaluate_clip(&t.id, &clean, &out)?);
            base.records.push(baseline_record(t, rate)?);
        }
        Ok(Validation {
            enhanced: enh.means().ok_or(Error::Empty("validation set"))?,
            baseline: base.means().ok_or(Error::Empty("validation set"))?,
            clips: pairs.len(),
        })
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            train: Some(self.cfg.clone()),
            step: self.step,
            epoch: self.epoch,
            best_val_lsd: self.best_val_lsd,
            ..CheckpointMeta::new(&self.model.config, "f32")
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.meta(), &self.store, Some(&self.adam))
    }

    /// Restores weights, optimizer state and counters. The batch counter is
    /// rebuilt from the step count, which is exact at epoch boundaries.
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let (ck, t) = checkpoint::load::<f32>(path)?;
        if ck.meta.config_hash != self.model.config.hash() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: "network configuration differs".into(),
            });
        }
        ck.apply(&mut self.store, path)?;
        ck.adam(&self.store, &mut self.adam, t);
        self.step = ck.meta.step;
        self.epoch = ck.meta.epoch;
        self.best_val_lsd = ck.meta.best_val_lsd;
        self.accum.clear();
        self.accum_n = 0;
        Ok(())
    }
}

/// Metrics of the capture resampled to `rate` against the reference.
pub fn baseline_record(t: &Triple, rate: u32) -> Result<MetricRecord> {
    let src = (rate as usize * t.acm.len() / t.clean.len().max(1)) as u32;
    let mut up = resample(&AudioClip::new(t.acm.clone(), src), rate as i64)?;
    up.samples.resize(t.clean.len(), 0.0);
    Ok(evaluate_clip(&t.id, &AudioClip::new(t.clean.clone(), rate), &up)?)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Per-epoch record of `epochs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub mean_total: f64,
    pub val: Option<Validation>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub best_val_lsd: Option<f64>,
    pub stopped_early: bool,
}

fn append(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

/// Runs the remaining epochs of `trainer`, writing `metrics.csv`,
/// `epochs.jsonl` and checkpoints under `run_dir`. A fresh run first writes
/// `init.ckpt`.
pub fn train_loop(trainer: &mut Trainer, train: &Batches, val: &[Triple], run_dir: &Path) -> Result<TrainSummary> {
    train_loop_until(trainer, train, val, run_dir, |_| false)
}

/// As [`train_loop`], also stopping after any epoch for which `stop`
/// returns true.
pub fn train_loop_until(
    trainer: &mut Trainer,
    train: &Batches,
    val: &[Triple],
    run_dir: &Path,
    mut stop: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(run_dir)?;
    trainer.set_batches_per_epoch(train.len());
    let mut summary = TrainSummary {
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        best_val_lsd: trainer.best_val_lsd,
        stopped_early: false,
    };
    if trainer.step == 0 && trainer.epoch == 0 {
        let p = run_dir.join("init.ckpt");
        trainer.save(&p)?;
        summary.checkpoints.push(p);
    }
    let metrics = run_dir.join("metrics.csv");
    let start = Instant::now();
    trainer.batches_seen = trainer.epoch as u64 * train.len() as u64;
    while trainer.epoch < trainer.cfg.epochs {
        let epoch = trainer.epoch;
        let mut totals = Vec::new();
        for (b, idx) in train.order(epoch).iter().enumerate() {
            let batch = train.batch(epoch, b, idx)?;
            let rec = trainer.train_batch(&batch)?;
            append(&metrics, METRICS_HEADER, &rec.csv())?;
            totals.push(rec.loss.total);
            let over_time = trainer.cfg.time_budget_s.is_some_and(|t| start.elapsed().as_secs_f64() >= t);
            let over_steps = trainer.cfg.max_steps.is_some_and(|m| trainer.step >= m);
            if over_time || over_steps {
                summary.stopped_early = true;
                break;
            }
        }
        trainer.flush();
        trainer.epoch = epoch + 1;
        let v = if val.is_empty() { None } else { Some(trainer.validate(val)?) };
        if let Some(v) = &v {
            if trainer.best_val_lsd.is_none_or(|b| v.enhanced.lsd < b) {
                trainer.best_val_lsd = Some(v.enhanced.lsd);
                let p = run_dir.join("best.ckpt");
                trainer.save(&p)?;
            }
        }
        let rec = EpochRecord {
            epoch,
            step: trainer.step,
            mean_total: totals.iter().sum::<f64>() / totals.len().max(1) as f64,
            val: v,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        append_line(&run_dir.join("epochs.jsonl"), &serde_json::to_string(&rec)?)?;
        let p = run_dir.join(format!("epoch{:03}.ckpt", epoch + 1));
        trainer.save(&p)?;
        summary.checkpoints.push(p);
        let halt = stop(&rec);
        summary.epochs.push(rec);
        if summary.stopped_early || halt {
            summary.stopped_early = true;
            break;
        }
    }
    summary.best_val_lsd = trainer.best_val_lsd;
    Ok(summary)
}

/// Loss trajectory of repeated updates on one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    /// Total loss before each update, then once more after the last one.
    pub losses: Vec<f64>,
    pub ratio: f64,
}

/// Takes `steps` optimizer steps on `pair` alone, with the cosine schedule
/// spanning exactly those steps.
pub fn overfit(network: NetworkConfig, cfg: TrainConfig, pair: &Triple, steps: usize) -> Result<OverfitReport> {
    let cfg = TrainConfig {
        grad_accum_batches: 1,
        t0_epochs: steps.max(1),
        ..cfg
    };
    let mut tr = Trainer::new(network, cfg)?;
    tr.set_batches_per_epoch(1);
    let batch = std::slice::from_ref(pair);
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        losses.push(tr.train_batch(batch)?.loss.total);
    }
    let (_, last) = tr.gradients(batch)?;
    losses.push(last.total);
    Ok(OverfitReport {
        ratio: losses[0] / last.total,
        losses,
    })
}
