//! Declarative network and training configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subaru_core::StftConfig;
use subaru_nn::{LayerKind, LayerSpec, Padding};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, PeriodMode};
use crate::optim::AdamConfig;

/// Position of the time-domain network relative to the amplitude-phase
/// network in the waveform chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    #[default]
    TenThenApen,
    ApenThenTen,
}

/// Whether the vibration channel is consumed or replaced by zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Multimodal,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub source_rate: u32,
    pub target_rate: u32,
    pub sen_channels: Vec<usize>,
    pub sen_kernel: usize,
    pub sen_dilations: Vec<usize>,
    pub sen_residual_convs: usize,
    pub ups_channels: usize,
    pub ups_stages: Vec<usize>,
    pub ups_pre_kernel: usize,
    pub ups_res_kernel: usize,
    pub ups_res_dilations: Vec<usize>,
    pub ten_channels: Vec<usize>,
    pub ten_dilations: Vec<usize>,
    pub ten_kernel: usize,
    pub ten_stride: usize,
    pub ten_encoder_residuals: usize,
    pub ten_decoder_residuals: usize,
    pub apen_channels: usize,
    pub apen_kernel: usize,
    pub order: Order,
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            source_rate: 4000,
            target_rate: 16000,
            sen_channels: vec![8, 16, 24, 32, 64],
            sen_kernel: 4,
            sen_dilations: vec![1, 1, 2, 3, 5],
            sen_residual_convs: 3,
            ups_channels: 256,
            ups_stages: vec![8, 8, 2, 2],
            ups_pre_kernel: 7,
            ups_res_kernel: 3,
            ups_res_dilations: vec![1, 3, 9],
            ten_channels: vec![10, 20, 40, 80],
            ten_dilations: vec![1, 2, 3, 5],
            ten_kernel: 16,
            ten_stride: 4,
            ten_encoder_residuals: 1,
            ten_decoder_residuals: 2,
            apen_channels: 200,
            apen_kernel: 7,
            order: Order::TenThenApen,
            variant: Variant::Multimodal,
        }
    }
}

impl NetworkConfig {
    pub fn sen_stft(&self) -> StftConfig {
        StftConfig::SEN_INPUT
    }

    pub fn apen_stft(&self) -> StftConfig {
        StftConfig::APEN
    }

    /// Output samples per input sample.
    pub fn rate_ratio(&self) -> usize {
        (self.target_rate / self.source_rate) as usize
    }

    /// Target-rate samples per spectrogram frame.
    pub fn frame_hop(&self) -> usize {
        self.sen_stft().hop * self.rate_ratio()
    }

    pub fn ups_product(&self) -> usize {
        self.ups_stages.iter().product()
    }

    /// Samples per bottleneck step of the time-domain network.
    pub fn ten_block(&self) -> usize {
        self.ten_stride.pow(self.ten_channels.len() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.source_rate == 0 || self.target_rate % self.source_rate != 0 || self.target_rate < self.source_rate {
            return bad(format!(
                "target rate {} must be a multiple of source rate {}",
                self.target_rate, self.source_rate
            ));
        }
        if self.ups_product() != self.frame_hop() {
            return bad(format!(
                "upsampler stage product {} must equal the frame hop {}",
                self.ups_product(),
                self.frame_hop()
            ));
        }
        if self.ups_channels >> self.ups_stages.len() == 0 {
            return bad("upsampler halves its width per stage and ran out of channels".into());
        }
        if self.sen_channels.is_empty() || self.sen_channels.len() != self.sen_dilations.len() {
            return bad("sen channels and dilations must be non-empty and equally long".into());
        }
        if self.ten_channels.is_empty() || self.ten_channels.len() != self.ten_dilations.len() {
            return bad("ten channels and dilations must be non-empty and equally long".into());
        }
        if self.ten_kernel < self.ten_stride || (self.ten_kernel - self.ten_stride) % 2 != 0 {
            return bad(format!(
                "ten kernel {} incompatible with stride {}",
                self.ten_kernel, self.ten_stride
            ));
        }
        if self.apen_channels == 0 || self.apen_kernel == 0 || self.sen_kernel < 2 {
            return bad("kernel sizes and widths must be positive".into());
        }
        for (name, spec) in self.layer_specs() {
            spec.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Shape descriptions of the parameterised layers, keyed by parameter
    /// group name.
    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let mut out = Vec::new();
        let k = self.sen_kernel;
        let mut cin = 1;
        for (i, (&c, &d)) in self.sen_channels.iter().zip(&self.sen_dilations).enumerate() {
            out.push((
                format!("sen.enc{i}.down"),
                LayerSpec::new(LayerKind::Conv2d, cin, c).kernel(&[k, k]).stride(2).padding(Padding::Explicit(k / 2 - 1, k / 2)),
            ));
            for r in 0..self.sen_residual_convs {
                out.push((
                    format!("sen.enc{i}.res{r}"),
                    LayerSpec::new(LayerKind::Conv2d, c, c).kernel(&[k, k]).dilation(d).padding(Padding::Same),
                ));
            }
            cin = c;
        }
        out.push((
            "sen.mamba".into(),
            LayerSpec::new(LayerKind::MambaBlock, cin, cin),
        ));
        let n = self.ups_channels;
        out.push((
            "ups.pre".into(),
            LayerSpec::new(LayerKind::Conv1d, self.sen_stft().bins(), n).kernel(&[self.ups_pre_kernel]).padding(Padding::Same),
        ));
        for (i, &s) in self.ups_stages.iter().enumerate() {
            let (ci, co) = (n >> i, n >> (i + 1));
            out.push((
                format!("ups.up{i}"),
                LayerSpec::new(LayerKind::TransposedConv1d, ci, co).kernel(&[2 * s]).stride(s),
            ));
            for (r, &d) in self.ups_res_dilations.iter().enumerate() {
                out.push((
                    format!("ups.res{i}.{r}"),
                    LayerSpec::new(LayerKind::Conv1d, co, co).kernel(&[self.ups_res_kernel]).dilation(d).padding(Padding::Same),
                ));
            }
        }
        out.push((
            "ups.post".into(),
            LayerSpec::new(LayerKind::Conv1d, n >> self.ups_stages.len(), 1).kernel(&[self.ups_pre_kernel]).padding(Padding::Same),
        ));
        let (tk, ts) = (self.ten_kernel, self.ten_stride);
        let pad = (tk - ts) / 2;
        let mut cin = 2;
        for (i, (&c, &d)) in self.ten_channels.iter().zip(&self.ten_dilations).enumerate() {
            out.push((
                format!("ten.enc{i}.down"),
                LayerSpec::new(LayerKind::Conv1d, cin, c).kernel(&[tk]).stride(ts).padding(Padding::Explicit(pad, pad)),
            ));
            for r in 0..self.ten_encoder_residuals {
                out.push((
                    format!("ten.enc{i}.res{r}"),
                    LayerSpec::new(LayerKind::Conv1d, c, c).kernel(&[tk]).dilation(d).padding(Padding::Same),
                ));
            }
            cin = c;
        }
        out.push((
            "ten.mamba".into(),
            LayerSpec::new(LayerKind::MambaBlock, cin, cin),
        ));
        let c = self.apen_channels;
        for s in ["amp", "pha"] {
            out.push((
                format!("apen.{s}.dw"),
                LayerSpec::new(LayerKind::DepthwiseConv1d, c, c).kernel(&[self.apen_kernel]).padding(Padding::Same),
            ));
            out.push((
                format!("apen.{s}.expand"),
                LayerSpec::new(LayerKind::Pointwise, c, 2 * c),
            ));
            out.push((
                format!("apen.{s}.restore"),
                LayerSpec::new(LayerKind::Pointwise, 2 * c, c),
            ));
        }
        out
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Capture simulation applied to every training and validation pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source_rate: u32,
    pub bits: u32,
    /// Probability that a pair gets additive noise.
    pub noise_prob: f64,
    pub snr_range: (f64, f64),
    pub hpf_cutoff: Option<f64>,
    pub slice_seconds: f64,
    /// Directory of noise WAV files; procedural noise when absent.
    pub noise_dir: Option<std::path::PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source_rate: 4000,
            bits: 8,
            noise_prob: 1.0,
            snr_range: (-7.0, 5.0),
            hpf_cutoff: Some(15.0),
            slice_seconds: 1.0,
            noise_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub eta_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Restart period of the cosine schedule, in epochs.
    pub t0_epochs: usize,
    pub t_mult: usize,
    pub grad_clip_norm: f64,
    pub grad_accum_batches: usize,
    /// Synthetic-pair fraction at epoch 0.
    pub mix_start: f64,
    /// Fraction of the run over which the synthetic share decays to zero.
    pub mix_decay_fraction: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub period_mode: PeriodMode,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Stop once this much wall-clock training time has elapsed.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 50,
            lr: 1e-4,
            eta_min: 0.0,
            weight_decay: 1e-5,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            t0_epochs: 10,
            t_mult: 1,
            grad_clip_norm: 10.0,
            grad_accum_batches: 2,
            mix_start: 0.5,
            mix_decay_fraction: 0.5,
            seed: 0,
            weights: LossWeights::default(),
            period_mode: PeriodMode::PerRow,
            max_steps: None,
            time_budget_s: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Synthetic-pair share for `epoch`: linear from `mix_start` down to zero
    /// at `mix_decay_fraction` of the run, zero afterwards.
    pub fn mix_fraction(&self, epoch: usize) -> f64 {
        let span = self.mix_decay_fraction * self.epochs as f64;
        if span <= 0.0 {
            return 0.0;
        }
        (self.mix_start * (1.0 - epoch as f64 / span)).clamp(0.0, self.mix_start)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.grad_accum_batches == 0 || self.t0_epochs == 0 {
            return bad("batch_size, grad_accum_batches and t0_epochs must be at least 1");
        }
        if self.t_mult != 1 {
            return bad("only t_mult = 1 is supported");
        }
        if !(self.lr >= 0.0) || !(self.eta_min >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.mix_start) || !(self.mix_decay_fraction >= 0.0) {
            return bad("mix_start must lie in [0, 1]");
        }
        Ok(())
    }
}
