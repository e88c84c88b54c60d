//! The four sub-networks and their assembly.

use std::rc::Rc;
use std::time::Instant;

use ndarray::{Array2, ArrayD, Ix2, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use subaru_core::audio::interp_linear;
use subaru_core::{AudioClip, StftPlan};
use subaru_nn::layers::{cat_channels, lrelu};
use subaru_nn::spectral::{istft, stft};
use subaru_nn::{
    concat, BatchNorm, Conv1d, Conv2d, ConvTranspose1d, ConvTranspose2d, DepthwiseConv1d, Graph, LayerNorm, Linear,
    MambaBlock, MambaConfig, Padding, ParamStore, Scalar, Var,
};

use crate::config::{NetworkConfig, Order, Variant};
use crate::error::{Error, Result};

/// Cached transforms for the front-end and amplitude-phase analyses.
pub struct Plans<T: Scalar> {
    pub sen: Rc<StftPlan<T>>,
    pub apen: Rc<StftPlan<T>>,
}

impl<T: Scalar> Plans<T> {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        Ok(Plans {
            sen: Rc::new(StftPlan::new(config.sen_stft())?),
            apen: Rc::new(StftPlan::new(config.apen_stft())?),
        })
    }
}

/// A convolution followed by batch normalisation and leaky ReLU.
#[derive(Debug, Clone)]
struct Conv2dBlock {
    conv: Conv2d,
    bn: BatchNorm,
}

impl Conv2dBlock {
    fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        lrelu(self.bn.forward(self.conv.forward(x)))
    }
}

#[derive(Debug, Clone)]
struct Conv1dBlock {
    conv: Conv1d,
    bn: BatchNorm,
}

impl Conv1dBlock {
    fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        lrelu(self.bn.forward(self.conv.forward(x)))
    }
}

#[derive(Debug, Clone)]
struct SenEncoder {
    down: Conv2dBlock,
    res: Vec<Conv2dBlock>,
}

#[derive(Debug, Clone)]
struct SenDecoder {
    up: ConvTranspose2d,
    bn: BatchNorm,
    res: Vec<Conv2dBlock>,
}

/// Spectral enhancement U-Net over the log-amplitude of the low-rate
/// capture, `[B, 1, T, F]` to the same shape.
#[derive(Debug, Clone)]
pub struct Sen {
    enc: Vec<SenEncoder>,
    mamba: MambaBlock,
    dec: Vec<SenDecoder>,
    head: Conv2d,
}

fn zero_conv2d<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Conv2d {
    Conv2d {
        w: store.add(format!("{name}.weight"), ArrayD::zeros(IxDyn(&[cout, cin, 1, 1])), true),
        b: Some(store.add(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout])), true)),
        stride: (1, 1),
        dilation: (1, 1),
        pad: (0, 0, 0, 0),
    }
}

fn zero_conv1d<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Conv1d {
    Conv1d {
        w: store.add(format!("{name}.weight"), ArrayD::zeros(IxDyn(&[cout, cin, 1])), true),
        b: Some(store.add(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout])), true)),
        stride: 1,
        dilation: 1,
        pad: (0, 0),
    }
}

impl Sen {
    pub fn new<T: Scalar>(cfg: &NetworkConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let k = cfg.sen_kernel;
        let down_pad = Padding::Explicit(k / 2 - 1, k / 2);
        let res_block = |store: &mut ParamStore<T>, name: String, c: usize, d: usize, rng: &mut _| Conv2dBlock {
            conv: Conv2d::new(store, &name, c, c, (k, k), (1, 1), (d, d), (Padding::Same, Padding::Same), rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c),
        };
        let mut enc = Vec::new();
        let mut cin = 1;
        for (i, (&c, &d)) in cfg.sen_channels.iter().zip(&cfg.sen_dilations).enumerate() {
            let name = format!("sen.enc{i}");
            let down = Conv2dBlock {
                conv: Conv2d::new(store, &format!("{name}.down"), cin, c, (k, k), (2, 2), (1, 1), (down_pad, down_pad), rng),
                bn: BatchNorm::new(store, &format!("{name}.down.bn"), c),
            };
            let res = (0..cfg.sen_residual_convs)
                .map(|r| res_block(store, format!("{name}.res{r}"), c, d, rng))
                .collect();
            enc.push(SenEncoder { down, res });
            cin = c;
        }
        let mamba = MambaBlock::new(store, "sen.mamba", MambaConfig::new(cin), rng);
        let mut dec = Vec::new();
        let n = cfg.sen_channels.len();
        let mut h = cin;
        for j in 0..n {
            let skip = cfg.sen_channels[n - 1 - j];
            let cout = skip;
            let d = cfg.sen_dilations[n - 1 - j];
            let name = format!("sen.dec{j}");
            let up = ConvTranspose2d::new(store, &format!("{name}.up"), h + skip, cout, (k, k), (2, 2), (k / 2 - 1, k / 2 - 1), rng);
            let bn = BatchNorm::new(store, &format!("{name}.up.bn"), cout);
            let res = (0..cfg.sen_residual_convs)
                .map(|r| res_block(store, format!("{name}.res{r}"), cout, d, rng))
                .collect();
            dec.push(SenDecoder { up, bn, res });
            h = cout;
        }
        let head = zero_conv2d(store, "sen.head", h + 1, 1);
        Sen { enc, mamba, dec, head }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let shape = x.shape();
        assert_eq!(shape.len(), 4, "sen input must be [B, 1, T, F]");
        assert_eq!(shape[1], 1, "sen input has one channel");
        let mut skips = Vec::new();
        let mut sizes = Vec::new();
        let mut h = x;
        for e in &self.enc {
            let s = h.shape();
            sizes.push((s[2], s[3]));
            h = e.down.forward(h);
            for r in &e.res {
                h = h.add(r.forward(h));
            }
            skips.push(h);
        }
        let s = h.shape();
        let (nb, c, ht, wd) = (s[0], s[1], s[2], s[3]);
        let seq = h.permute(&[0, 2, 3, 1]).reshape(&[nb, ht * wd, c]);
        let seq = self.mamba.forward(seq);
        h = seq.reshape(&[nb, ht, wd, c]).permute(&[0, 3, 1, 2]);
        for (j, d) in self.dec.iter().enumerate() {
            let skip = skips[skips.len() - 1 - j];
            let size = sizes[sizes.len() - 1 - j];
            h = lrelu(d.bn.forward(d.up.forward(cat_channels(&[h, skip]), size)));
            for r in &d.res {
                h = h.add(r.forward(h));
            }
        }
        x.add(self.head.forward(cat_channels(&[h, x])))
    }
}

#[derive(Debug, Clone)]
struct UpStage {
    up: ConvTranspose1d,
    res: Vec<Conv1d>,
}

/// Transposed-convolution vocoder from `[B, F, T]` features to `[B, T * hop]`
/// samples.
#[derive(Debug, Clone)]
pub struct Upsampler {
    pre: Conv1d,
    stages: Vec<UpStage>,
    post: Conv1d,
}

impl Upsampler {
    pub fn new<T: Scalar>(cfg: &NetworkConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let n = cfg.ups_channels;
        let bins = cfg.sen_stft().bins();
        let pre = Conv1d::new(store, "ups.pre", bins, n, cfg.ups_pre_kernel, 1, 1, Padding::Same, rng);
        let stages = cfg
            .ups_stages
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let (ci, co) = (n >> i, n >> (i + 1));
                UpStage {
                    up: ConvTranspose1d::new(store, &format!("ups.up{i}"), ci, co, s, rng),
                    res: cfg
                        .ups_res_dilations
                        .iter()
                        .enumerate()
                        .map(|(r, &d)| {
                            Conv1d::new(store, &format!("ups.res{i}.{r}"), co, co, cfg.ups_res_kernel, 1, d, Padding::Same, rng)
                        })
                        .collect(),
                }
            })
            .collect();
        let last = n >> cfg.ups_stages.len();
        let post = Conv1d::new(store, "ups.post", last, 1, cfg.ups_pre_kernel, 1, 1, Padding::Same, rng);
        Upsampler { pre, stages, post }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let mut h = self.pre.forward(x);
        for s in &self.stages {
            h = s.up.forward(lrelu(h));
            for r in &s.res {
                h = h.add(r.forward(lrelu(h)));
            }
        }
        let y = self.post.forward(lrelu(h)).tanh();
        let s = y.shape();
        y.reshape(&[s[0], s[2]])
    }
}

#[derive(Debug, Clone)]
struct TenEncoder {
    down: Conv1dBlock,
    res: Vec<Conv1dBlock>,
}

#[derive(Debug, Clone)]
struct TenDecoder {
    up: ConvTranspose1d,
    bn: BatchNorm,
    res: Vec<Conv1dBlock>,
}

/// Waveform U-Net fusing the acoustic and vibration channels.
#[derive(Debug, Clone)]
pub struct Ten {
    block: usize,
    enc: Vec<TenEncoder>,
    mamba: MambaBlock,
    dec: Vec<TenDecoder>,
    head: Conv1d,
}

impl Ten {
    pub fn new<T: Scalar>(cfg: &NetworkConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let (k, st) = (cfg.ten_kernel, cfg.ten_stride);
        let pad = (k - st) / 2;
        let block = |store: &mut ParamStore<T>, name: String, c: usize, d: usize, rng: &mut _| Conv1dBlock {
            conv: Conv1d::new(store, &name, c, c, k, 1, d, Padding::Same, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c),
        };
        let mut enc = Vec::new();
        let mut cin = 2;
        for (i, (&c, &d)) in cfg.ten_channels.iter().zip(&cfg.ten_dilations).enumerate() {
            let name = format!("ten.enc{i}");
            let down = Conv1dBlock {
                conv: Conv1d::new(store, &format!("{name}.down"), cin, c, k, st, 1, Padding::Explicit(pad, pad), rng),
                bn: BatchNorm::new(store, &format!("{name}.down.bn"), c),
            };
            let res = (0..cfg.ten_encoder_residuals)
                .map(|r| block(store, format!("{name}.res{r}"), c, d, rng))
                .collect();
            enc.push(TenEncoder { down, res });
            cin = c;
        }
        let mamba = MambaBlock::new(store, "ten.mamba", MambaConfig::new(cin), rng);
        let n = cfg.ten_channels.len();
        let mut h = cin;
        let mut dec = Vec::new();
        for j in 0..n {
            let skip = cfg.ten_channels[n - 1 - j];
            let d = cfg.ten_dilations[n - 1 - j];
            let name = format!("ten.dec{j}");
            let up = ConvTranspose1d::with_kernel(store, &format!("{name}.up"), h + skip, skip, st, k, rng)
                .map_err(Error::Config)?;
            let bn = BatchNorm::new(store, &format!("{name}.up.bn"), skip);
            let res = (0..cfg.ten_decoder_residuals)
                .map(|r| block(store, format!("{name}.res{r}"), skip, d, rng))
                .collect();
            dec.push(TenDecoder { up, bn, res });
            h = skip;
        }
        let head = zero_conv1d(store, "ten.head", h + 2, 1);
        Ok(Ten {
            block: cfg.ten_block(),
            enc,
            mamba,
            dec,
            head,
        })
    }

    /// `acm, bcm [B, L]` to `[B, L]`; the output is the acoustic input plus
    /// a learned correction.
    pub fn forward<'g, T: Scalar>(&self, acm: Var<'g, T>, bcm: Var<'g, T>) -> Var<'g, T> {
        let (nb, len) = (acm.shape()[0], acm.shape()[1]);
        assert_eq!(bcm.shape(), vec![nb, len], "ten inputs must have equal shapes");
        let padded = len.div_ceil(self.block).max(1) * self.block;
        let x = concat(&[acm.reshape(&[nb, 1, len]), bcm.reshape(&[nb, 1, len])], 1).pad_zero(0, padded - len);
        let mut skips = Vec::new();
        let mut h = x;
        for e in &self.enc {
            h = e.down.forward(h);
            for r in &e.res {
                h = h.add(r.forward(h));
            }
            skips.push(h);
        }
        let seq = self.mamba.forward(h.permute(&[0, 2, 1]));
        h = seq.permute(&[0, 2, 1]);
        for (j, d) in self.dec.iter().enumerate() {
            let skip = skips[skips.len() - 1 - j];
            h = lrelu(d.bn.forward(d.up.forward(cat_channels(&[h, skip]))));
            for r in &d.res {
                h = h.add(r.forward(h));
            }
        }
        let y = self.head.forward(cat_channels(&[h, x])).narrow(2, 0, len).reshape(&[nb, len]);
        acm.add(y)
    }
}

#[derive(Debug, Clone)]
struct Stream {
    input: Linear,
    dw: DepthwiseConv1d,
    norm: LayerNorm,
    expand: Linear,
    restore: Linear,
}

impl Stream {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, bins: usize, c: usize, k: usize, rng: &mut impl Rng) -> Self {
        Stream {
            input: Linear::new(store, &format!("{name}.input"), bins, c, true, rng),
            dw: DepthwiseConv1d::new(store, &format!("{name}.dw"), c, k, Padding::Same, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
            expand: Linear::new(store, &format!("{name}.expand"), c, 2 * c, true, rng),
            restore: Linear::new(store, &format!("{name}.restore"), 2 * c, c, true, rng),
        }
    }

    /// `[B, T, bins]` to `[B, T, C]`.
    fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let h = self.input.forward(x);
        let t = self.dw.forward(h.permute(&[0, 2, 1])).permute(&[0, 2, 1]);
        let t = self.restore.forward(self.expand.forward(self.norm.forward(t)).gelu());
        h.add(t)
    }
}

/// Output of the amplitude-phase network: waveform and the enhanced
/// amplitude and wrapped phase, each `[B, T, F]`.
pub struct ApenOutput<'g, T: Scalar> {
    pub wave: Var<'g, T>,
    pub amp: Var<'g, T>,
    pub phase: Var<'g, T>,
}

/// Dual-stream amplitude and phase refinement on the STFT.
#[derive(Debug, Clone)]
pub struct Apen {
    amp: Stream,
    pha: Stream,
    amp_from_pha: Linear,
    pha_from_amp: Linear,
    amp_out: Linear,
    pha_out: Linear,
}

/// Bound on the amplitude log-gain, which keeps `exp` finite in f32.
pub const GAIN_BOUND: f64 = 10.0;

/// Amplitude and wrapped phase `[B, T, F]` of a batch of signals.
pub fn polar<'g, T: Scalar>(x: Var<'g, T>, plan: &Rc<StftPlan<T>>) -> (Var<'g, T>, Var<'g, T>) {
    let spec = stft(x, plan);
    let s = spec.shape();
    let (nb, nt, nf) = (s[0], s[2], s[3]);
    let re = spec.narrow(1, 0, 1).reshape(&[nb, nt, nf]);
    let im = spec.narrow(1, 1, 1).reshape(&[nb, nt, nf]);
    (re.hypot(im), im.atan2(re).wrap())
}

impl Apen {
    pub fn new<T: Scalar>(cfg: &NetworkConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let bins = cfg.apen_stft().bins();
        let (c, k) = (cfg.apen_channels, cfg.apen_kernel);
        Apen {
            amp: Stream::new(store, "apen.amp", bins, c, k, rng),
            pha: Stream::new(store, "apen.pha", bins, c, k, rng),
            amp_from_pha: Linear::new(store, "apen.amp_from_pha", c, c, true, rng),
            pha_from_amp: Linear::new(store, "apen.pha_from_amp", c, c, true, rng),
            amp_out: Linear::zeroed(store, "apen.amp_out", c, bins),
            pha_out: Linear::zeroed(store, "apen.pha_out", c, bins),
        }
    }

    /// `x [B, L]` to an enhanced `[B, L]` plus its spectrogram.
    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>, plan: &Rc<StftPlan<T>>) -> ApenOutput<'g, T> {
        let len = x.shape()[1];
        let (amp, phase) = polar(x, plan);
        let ha = self.amp.forward(amp.shift(T::one()).ln());
        let hp = self.pha.forward(phase);
        let ha2 = ha.add(self.amp_from_pha.forward(hp));
        let hp2 = hp.add(self.pha_from_amp.forward(ha));
        let gain = self.amp_out.forward(ha2).scale(T::c(1.0 / GAIN_BOUND)).tanh().scale(T::c(GAIN_BOUND));
        let ya = amp.mul(gain.exp());
        let yp = phase.add(self.pha_out.forward(hp2)).wrap();
        let s = ya.shape();
        let re = ya.mul(yp.cos()).reshape(&[s[0], 1, s[1], s[2]]);
        let im = ya.mul(yp.sin()).reshape(&[s[0], 1, s[1], s[2]]);
        let wave = istft(concat(&[re, im], 1), plan, len);
        ApenOutput { wave, amp: ya, phase: yp }
    }
}

/// Full chain output; `amp` and `phase` come from the amplitude-phase stage.
pub struct Output<'g, T: Scalar> {
    pub wave: Var<'g, T>,
    pub amp: Var<'g, T>,
    pub phase: Var<'g, T>,
}

/// The assembled model: front-end spectral U-Net, vocoder upsampler and the
/// two waveform refiners.
#[derive(Debug, Clone)]
pub struct Subaru {
    pub config: NetworkConfig,
    pub sen: Sen,
    pub ups: Upsampler,
    pub ten: Ten,
    pub apen: Apen,
}

/// Milliseconds spent in each network during one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub sen_ms: f64,
    pub ups_ms: f64,
    pub ten_ms: f64,
    pub apen_ms: f64,
}

/// Selections accepted by [`param_count`].
pub const SELECTIONS: [&str; 5] = ["sen", "ups", "ten", "apen", "all"];

/// Exact number of trainable scalars in one sub-network or in all of them.
pub fn param_count<T: Scalar>(store: &ParamStore<T>, selection: &str) -> Result<usize> {
    match selection {
        "all" => Ok(store.count_trainable("")),
        "sen" | "ups" | "ten" | "apen" => Ok(store.count_trainable(&format!("{selection}."))),
        other => Err(Error::UnknownSelection(other.to_string())),
    }
}

impl Subaru {
    pub fn new<T: Scalar>(config: NetworkConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let sen = Sen::new(&config, store, rng);
        let ups = Upsampler::new(&config, store, rng);
        let ten = Ten::new(&config, store, rng)?;
        let apen = Apen::new(&config, store, rng);
        Ok(Subaru {
            config,
            sen,
            ups,
            ten,
            apen,
        })
    }

    /// Shortest accepted capture, in source-rate samples.
    pub fn min_input_len(&self) -> usize {
        self.config.sen_stft().n_fft
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        input_len * self.config.rate_ratio()
    }

    /// Front-end features `ln(1 + |X|)` of `acm [B, n]` as `[B, 1, T, F]`.
    pub fn sen_input<'g, T: Scalar>(&self, acm: Var<'g, T>, plans: &Plans<T>) -> Var<'g, T> {
        let (amp, _) = polar(acm, &plans.sen);
        let s = amp.shape();
        amp.shift(T::one()).ln().reshape(&[s[0], 1, s[1], s[2]])
    }

    /// `acm [B, n]` at the source rate and `bcm [B, n * ratio]` already at
    /// the target rate to `[B, n * ratio]`.
    pub fn forward<'g, T: Scalar>(&self, acm: Var<'g, T>, bcm: Option<Var<'g, T>>, plans: &Plans<T>) -> Output<'g, T> {
        self.forward_timed(acm, bcm, plans).0
    }

    /// [`Subaru::forward`] plus the wall-clock time spent in each network.
    pub fn forward_timed<'g, T: Scalar>(
        &self,
        acm: Var<'g, T>,
        bcm: Option<Var<'g, T>>,
        plans: &Plans<T>,
    ) -> (Output<'g, T>, StageTimes) {
        let mut times = StageTimes::default();
        let mut clock = Instant::now();
        let mut lap = |slot: &mut f64| {
            *slot += clock.elapsed().as_secs_f64() * 1000.0;
            clock = Instant::now();
        };
        let g = acm.graph();
        let (nb, n) = (acm.shape()[0], acm.shape()[1]);
        let len = self.output_len(n);
        let bcm = match (self.config.variant, bcm) {
            (Variant::Multimodal, Some(b)) => {
                assert_eq!(b.shape(), vec![nb, len], "bcm must be aligned to the output length");
                b
            }
            _ => g.constant(ArrayD::zeros(IxDyn(&[nb, len]))),
        };
        let feats = self.sen.forward(self.sen_input(acm, plans));
        let s = feats.shape();
        let feats = feats.reshape(&[s[0], s[2], s[3]]).permute(&[0, 2, 1]);
        lap(&mut times.sen_ms);
        let wave = self.ups.forward(feats);
        let off = self.config.frame_hop() / 2;
        let have = wave.shape()[1];
        let wave = if have >= off + len {
            wave.narrow(1, off, len)
        } else {
            wave.narrow(1, off, have - off).pad_zero(0, off + len - have)
        };
        lap(&mut times.ups_ms);
        let (wave, amp, phase) = match self.config.order {
            Order::TenThenApen => {
                let t = self.ten.forward(wave, bcm);
                lap(&mut times.ten_ms);
                let a = self.apen.forward(t, &plans.apen);
                lap(&mut times.apen_ms);
                (a.wave, a.amp, a.phase)
            }
            Order::ApenThenTen => {
                let a = self.apen.forward(wave, &plans.apen);
                lap(&mut times.apen_ms);
                let t = self.ten.forward(a.wave, bcm);
                lap(&mut times.ten_ms);
                (t, a.amp, a.phase)
            }
        };
        let out = Output {
            wave: wave.tanh(),
            amp,
            phase,
        };
        (out, times)
    }

    /// Enhances one capture; the vibration clip may be at any rate and is
    /// linearly interpolated to the target rate.
    pub fn enhance<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        plans: &Plans<T>,
        acm: &AudioClip,
        bcm: Option<&AudioClip>,
    ) -> Result<AudioClip> {
        Ok(self.enhance_timed(store, plans, acm, bcm)?.0)
    }

    /// [`Subaru::enhance`] plus per-network timings.
    pub fn enhance_timed<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        plans: &Plans<T>,
        acm: &AudioClip,
        bcm: Option<&AudioClip>,
    ) -> Result<(AudioClip, StageTimes)> {
        if acm.sample_rate != self.config.source_rate {
            return Err(subaru_core::Error::RateMismatch(acm.sample_rate, self.config.source_rate).into());
        }
        if acm.len() < self.min_input_len() {
            return Err(subaru_core::Error::TooShort {
                needed: self.min_input_len(),
                got: acm.len(),
            }
            .into());
        }
        let len = self.output_len(acm.len());
        let g = Graph::inference(store);
        let x = g.input(row(&acm.samples));
        let b = bcm.map(|b| g.input(row(&interp_linear(b, self.config.target_rate, len).samples)));
        let (out, times) = self.forward_timed(x, b, plans);
        let v = out.wave.value();
        let samples = v.iter().map(|s| s.f64()).collect();
        let mut clip = AudioClip::new(samples, self.config.target_rate);
        clip.label = acm.label.clone();
        Ok((clip, times))
    }
}

/// One signal as a `[1, L]` batch.
pub fn row<T: Scalar>(x: &[f64]) -> ArrayD<T> {
    Array2::from_shape_fn((1, x.len()), |(_, i)| T::c(x[i])).into_dyn()
}

/// Stacks equal-length signals into `[B, L]`.
pub fn batch<T: Scalar>(xs: &[&[f64]]) -> Result<ArrayD<T>> {
    let len = xs.first().map(|x| x.len()).ok_or(Error::Empty("batch"))?;
    if let Some(bad) = xs.iter().find(|x| x.len() != len) {
        return Err(subaru_core::Error::LengthMismatch(len, bad.len()).into());
    }
    Ok(Array2::from_shape_fn((xs.len(), len), |(b, i)| T::c(xs[b][i])).into_dyn())
}

/// Rows of a `[B, L]` array as `f64` vectors.
pub fn rows<T: Scalar>(x: &ArrayD<T>) -> Vec<Vec<f64>> {
    let x = x.view().into_dimensionality::<Ix2>().expect("expected [B, L]");
    x.outer_iter().map(|r| r.iter().map(|v| v.f64()).collect()).collect()
}
