//! Short-time Fourier analysis/synthesis and phase helpers.
//!
//! Frames are taken from a zero-padded signal (n_fft/2 on each side when
//! `center` is set) with a periodic Hann window. Synthesis divides the
//! overlap-added frames by the summed squared window, which inverts the
//! analysis exactly wherever that sum is non-zero.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_traits::Float;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub center: bool,
}

impl StftConfig {
    pub const fn new(n_fft: usize, hop: usize, win_length: usize) -> Self {
        StftConfig {
            n_fft,
            hop,
            win_length,
            center: true,
        }
    }

    /// Amplitude/phase branch analysis at 16 kHz.
    pub const APEN: StftConfig = StftConfig::new(1024, 128, 1024);
    /// Front-end analysis of the 4 kHz capture.
    pub const SEN_INPUT: StftConfig = StftConfig::new(256, 64, 256);
    /// Analysis used by the log-spectral distance.
    pub const LSD: StftConfig = StftConfig::new(2048, 512, 2048);

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.n_fft {
            return Err(Error::InvalidParameter(format!(
                "need 0 < hop <= win_length <= n_fft, got {self:?}"
            )));
        }
        if self.n_fft % 2 != 0 {
            return Err(Error::InvalidParameter("n_fft must be even".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn pad(&self) -> usize {
        if self.center {
            self.n_fft / 2
        } else {
            0
        }
    }

    pub fn frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded < self.n_fft {
            0
        } else {
            1 + (padded - self.n_fft) / self.hop
        }
    }

    /// Signal length implied by a frame count when no explicit length is kept.
    pub fn implied_len(&self, frames: usize) -> usize {
        if frames == 0 {
            return 0;
        }
        ((frames - 1) * self.hop + self.n_fft).saturating_sub(2 * self.pad())
    }
}

/// Periodic Hann window of length `win_length`, zero-extended and centred
/// inside `n_fft`.
pub fn hann_window<T: Float>(config: &StftConfig) -> Vec<T> {
    let mut w = vec![T::zero(); config.n_fft];
    let off = (config.n_fft - config.win_length) / 2;
    for i in 0..config.win_length {
        let v = 0.5 - 0.5 * (2.0 * PI * i as f64 / config.win_length as f64).cos();
        w[off + i] = T::from(v).unwrap();
    }
    w
}

/// Reusable transform pair for one configuration.
pub struct StftPlan<T: FftNum + Float> {
    pub config: StftConfig,
    window: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: FftNum + Float> StftPlan<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(StftPlan {
            config,
            window: hann_window(&config),
            fwd: planner.plan_fft_forward(config.n_fft),
            inv: planner.plan_fft_inverse(config.n_fft),
        })
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    fn padded(&self, x: &[T]) -> Vec<T> {
        let pad = self.config.pad();
        let mut p = vec![T::zero(); x.len() + 2 * pad];
        p[pad..pad + x.len()].copy_from_slice(x);
        p
    }

    fn span(&self, frames: usize, len: usize) -> usize {
        let c = &self.config;
        let covered = if frames == 0 { 0 } else { (frames - 1) * c.hop + c.n_fft };
        covered.max(len + 2 * c.pad())
    }

    /// Real and imaginary parts, each `[frames, bins]`.
    pub fn forward(&self, x: &[T]) -> (Array2<T>, Array2<T>) {
        let c = &self.config;
        let n = c.n_fft;
        let frames = c.frames(x.len());
        let bins = c.bins();
        let xp = self.padded(x);
        let mut re = Array2::zeros((frames, bins));
        let mut im = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            let seg = &xp[t * c.hop..t * c.hop + n];
            for i in 0..n {
                buf[i] = Complex::new(seg[i] * self.window[i], T::zero());
            }
            self.fwd.process(&mut buf);
            for k in 0..bins {
                re[[t, k]] = buf[k].re;
                im[[t, k]] = buf[k].im;
            }
            // Real input: the DC and Nyquist bins are real, so rounding noise
            // there must not pick the sign of the phase.
            im[[t, 0]] = T::zero();
            if n % 2 == 0 {
                im[[t, n / 2]] = T::zero();
            }
        }
        (re, im)
    }

    /// Gradient of a scalar with respect to the input signal, given its
    /// gradients with respect to the real and imaginary spectra.
    pub fn forward_adjoint(&self, gre: ArrayView2<T>, gim: ArrayView2<T>, len: usize) -> Vec<T> {
        let c = &self.config;
        let n = c.n_fft;
        let frames = gre.nrows();
        let pad = c.pad();
        let mut gp = vec![T::zero(); self.span(frames, len)];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < c.bins() {
                    Complex::new(gre[[t, k]], gim[[t, k]])
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
            self.inv.process(&mut buf);
            let base = t * c.hop;
            for i in 0..n {
                gp[base + i] = gp[base + i] + buf[i].re * self.window[i];
            }
        }
        gp[pad..pad + len].to_vec()
    }

    fn window_sum_square(&self, frames: usize, total: usize) -> Vec<T> {
        let c = &self.config;
        let mut ws = vec![T::zero(); total];
        for t in 0..frames {
            for i in 0..c.n_fft {
                let w = self.window[i];
                ws[t * c.hop + i] = ws[t * c.hop + i] + w * w;
            }
        }
        ws
    }

    fn ws_floor() -> T {
        T::from(1e-11).unwrap()
    }

    /// Overlap-add synthesis of `len` samples. Imaginary parts of the DC and
    /// Nyquist bins are ignored.
    pub fn inverse(&self, re: ArrayView2<T>, im: ArrayView2<T>, len: usize) -> Vec<T> {
        let c = &self.config;
        let n = c.n_fft;
        let frames = re.nrows();
        let bins = c.bins();
        let pad = c.pad();
        let total = self.span(frames, len);
        let mut y = vec![T::zero(); total];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let scale = T::one() / T::from(n).unwrap();
        for t in 0..frames {
            buf[0] = Complex::new(re[[t, 0]], T::zero());
            buf[n / 2] = Complex::new(re[[t, bins - 1]], T::zero());
            for k in 1..bins - 1 {
                let v = Complex::new(re[[t, k]], im[[t, k]]);
                buf[k] = v;
                buf[n - k] = v.conj();
            }
            self.inv.process(&mut buf);
            let base = t * c.hop;
            for i in 0..n {
                y[base + i] = y[base + i] + buf[i].re * scale * self.window[i];
            }
        }
        let ws = self.window_sum_square(frames, total);
        (pad..pad + len)
            .map(|i| {
                if ws[i] > Self::ws_floor() {
                    y[i] / ws[i]
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// Gradients with respect to the real and imaginary spectra of a scalar
    /// whose gradient with respect to `inverse(...)` is `g`.
    pub fn inverse_adjoint(&self, g: &[T], frames: usize) -> (Array2<T>, Array2<T>) {
        let c = &self.config;
        let n = c.n_fft;
        let bins = c.bins();
        let pad = c.pad();
        let total = self.span(frames, g.len());
        let ws = self.window_sum_square(frames, total);
        let mut h = vec![T::zero(); total];
        for (i, &v) in g.iter().enumerate() {
            let w = ws[pad + i];
            if w > Self::ws_floor() {
                h[pad + i] = v / w;
            }
        }
        let mut gre = Array2::zeros((frames, bins));
        let mut gim = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let inv_n = T::one() / T::from(n).unwrap();
        let two = T::from(2.0).unwrap();
        for t in 0..frames {
            let base = t * c.hop;
            for i in 0..n {
                buf[i] = Complex::new(h[base + i] * self.window[i], T::zero());
            }
            self.fwd.process(&mut buf);
            for k in 0..bins {
                if k == 0 || k == bins - 1 {
                    gre[[t, k]] = buf[k].re * inv_n;
                } else {
                    gre[[t, k]] = buf[k].re * inv_n * two;
                    gim[[t, k]] = buf[k].im * inv_n * two;
                }
            }
        }
        (gre, gim)
    }
}

/// Amplitude/phase view of an analysed clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub amplitude: Array2<f64>,
    pub phase: Array2<f64>,
    pub config: StftConfig,
    pub source_rate: u32,
    pub length: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.amplitude.nrows()
    }

    pub fn bins(&self) -> usize {
        self.amplitude.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFeatures {
    pub instantaneous_phase: Array2<f64>,
    pub group_delay: Array2<f64>,
}

/// Principal value in (-pi, pi].
pub fn wrap(x: f64) -> f64 {
    x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil()
}

/// Distance from `x` to the nearest multiple of 2*pi.
pub fn anti_wrap(x: f64) -> f64 {
    (x - 2.0 * PI * (x / (2.0 * PI)).round()).abs()
}

pub fn stft(clip: &AudioClip, config: &StftConfig) -> Result<Spectrogram> {
    let plan = StftPlan::<f64>::new(*config)?;
    stft_with(&plan, clip)
}

pub fn stft_with(plan: &StftPlan<f64>, clip: &AudioClip) -> Result<Spectrogram> {
    let config = plan.config;
    if clip.len() < config.win_length {
        return Err(Error::TooShort {
            needed: config.win_length,
            got: clip.len(),
        });
    }
    let (re, im) = plan.forward(&clip.samples);
    let amplitude = ndarray::Zip::from(&re).and(&im).map_collect(|&r, &i| r.hypot(i));
    let phase = ndarray::Zip::from(&re)
        .and(&im)
        .map_collect(|&r, &i| wrap(i.atan2(r)));
    Ok(Spectrogram {
        amplitude,
        phase,
        config,
        source_rate: clip.sample_rate,
        length: clip.len(),
    })
}

pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    let c = &spec.config;
    c.validate()?;
    if spec.amplitude.dim() != spec.phase.dim() {
        return Err(Error::Dimensions(format!(
            "amplitude {:?} vs phase {:?}",
            spec.amplitude.dim(),
            spec.phase.dim()
        )));
    }
    if spec.bins() != c.bins() {
        return Err(Error::Dimensions(format!(
            "{} bins for n_fft {}",
            spec.bins(),
            c.n_fft
        )));
    }
    if c.frames(spec.length) != spec.frames() {
        return Err(Error::Dimensions(format!(
            "{} frames cannot describe {} samples",
            spec.frames(),
            spec.length
        )));
    }
    let plan = StftPlan::<f64>::new(*c)?;
    let re = ndarray::Zip::from(&spec.amplitude)
        .and(&spec.phase)
        .map_collect(|&a, &p| a * p.cos());
    let im = ndarray::Zip::from(&spec.amplitude)
        .and(&spec.phase)
        .map_collect(|&a, &p| a * p.sin());
    let samples = plan.inverse(re.view(), im.view(), spec.length);
    Ok(AudioClip::new(samples, spec.source_rate))
}

/// Forward difference of a phase field along frequency, last column
/// replicated.
pub fn frequency_difference(phase: ArrayView2<f64>) -> Array2<f64> {
    let (t, f) = phase.dim();
    let mut gd = Array2::zeros((t, f));
    for i in 0..t {
        for k in 0..f - 1 {
            gd[[i, k]] = phase[[i, k + 1]] - phase[[i, k]];
        }
        gd[[i, f - 1]] = gd[[i, f - 2]];
    }
    gd
}

pub fn group_delay(spec: &Spectrogram) -> Result<PhaseFeatures> {
    if spec.bins() < 2 {
        return Err(Error::Dimensions("group delay needs at least two bins".into()));
    }
    Ok(PhaseFeatures {
        instantaneous_phase: spec.phase.clone(),
        group_delay: frequency_difference(spec.phase.view()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(rng: &mut ChaCha8Rng, n: usize) -> AudioClip {
        AudioClip::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000)
    }

    #[test]
    fn frame_counts() {
        let c = StftConfig::APEN;
        let s = stft(&AudioClip::new(vec![0.0; 16000], 16000), &c).unwrap();
        assert_eq!((s.frames(), s.bins()), (126, 513));
        assert!(s.amplitude.iter().all(|&a| a == 0.0));
        let s = stft(&AudioClip::new(vec![0.0; 4000], 4000), &StftConfig::SEN_INPUT).unwrap();
        assert_eq!((s.frames(), s.bins()), (63, 129));
    }

    #[test]
    fn too_short_is_rejected() {
        let r = stft(&AudioClip::new(vec![0.0; 100], 16000), &StftConfig::APEN);
        assert!(matches!(r, Err(Error::TooShort { .. })));
    }

    #[test]
    fn tone_peak_bin() {
        let x: Vec<f64> = (0..16000)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let s = stft(&AudioClip::new(x, 16000), &StftConfig::APEN).unwrap();
        let mean = s.amplitude.mean_axis(ndarray::Axis(0)).unwrap();
        let arg = mean
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        assert_eq!(arg, 64);
    }

    #[test]
    fn round_trip_random_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.gen_range(1024..5000);
            let c = random_clip(&mut rng, n);
            let y = istft(&stft(&c, &StftConfig::APEN).unwrap()).unwrap();
            assert_eq!(y.len(), c.len());
            let err = y.samples.iter().zip(&c.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn istft_linear_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_clip(&mut rng, 3000);
        let mut s = stft(&c, &StftConfig::APEN).unwrap();
        let y1 = istft(&s).unwrap();
        s.amplitude.mapv_inplace(|a| 2.0 * a);
        let y2 = istft(&s).unwrap();
        for (a, b) in y1.samples.iter().zip(&y2.samples) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        s.amplitude.fill(0.0);
        assert!(istft(&s).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_rejects_inconsistent_dims() {
        let c = AudioClip::new(vec![0.1; 2048], 16000);
        let mut s = stft(&c, &StftConfig::APEN).unwrap();
        s.phase = Array2::zeros((3, 513));
        assert!(matches!(istft(&s), Err(Error::Dimensions(_))));
    }

    #[test]
    fn parseval_with_window_normalisation() {
        // Interior samples are covered by a full set of frames; the edges are
        // kept silent so the constant applies everywhere.
        let c = StftConfig::APEN;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.0; 8192];
        for v in x.iter_mut().take(8192 - 1024).skip(1024) {
            *v = rng.gen_range(-1.0..1.0);
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let s = stft(&AudioClip::new(x, 16000), &c).unwrap();
        let n = c.n_fft as f64;
        let mut spec_energy = 0.0;
        for row in s.amplitude.rows() {
            for (k, a) in row.iter().enumerate() {
                let w = if k == 0 || k == c.bins() - 1 { 1.0 } else { 2.0 };
                spec_energy += w * a * a;
            }
        }
        let w = hann_window::<f64>(&c);
        let wss: f64 = w.iter().map(|v| v * v).sum::<f64>() / c.hop as f64;
        let est = spec_energy / n / wss;
        assert!((est - energy).abs() / energy < 1e-4, "{est} vs {energy}");
    }

    #[test]
    fn adjoints_match_inner_products() {
        let c = StftConfig::new(64, 16, 64);
        let plan = StftPlan::<f64>::new(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (re, im) = plan.forward(&x);
        let gre = re.mapv(|_| rng.gen_range(-1.0..1.0));
        let gim = im.mapv(|_| rng.gen_range(-1.0..1.0));
        let lhs = (&re * &gre).sum() + (&im * &gim).sum();
        let gx = plan.forward_adjoint(gre.view(), gim.view(), x.len());
        let rhs: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        let y = plan.inverse(gre.view(), gim.view(), x.len());
        let lhs: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (are, aim) = plan.inverse_adjoint(&x, gre.nrows());
        let rhs = (&are * &gre).sum() + (&aim * &gim).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn anti_wrap_values() {
        assert_eq!(anti_wrap(0.0), 0.0);
        assert!(anti_wrap(2.0 * PI).abs() < 1e-15);
        assert!((anti_wrap(PI) - PI).abs() < 1e-15);
        assert!((anti_wrap(3.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn wrap_principal_interval() {
        assert_eq!(wrap(PI), PI);
        assert!((wrap(-PI) - PI).abs() < 1e-15);
        assert!((wrap(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn group_delay_cases() {
        let mk = |phase: Array2<f64>| Spectrogram {
            amplitude: Array2::zeros(phase.dim()),
            phase,
            config: StftConfig::new(8, 2, 8),
            source_rate: 16000,
            length: 0,
        };
        let g = group_delay(&mk(Array2::from_elem((3, 5), 0.7))).unwrap();
        assert!(g.group_delay.iter().all(|&v| v == 0.0));
        let g = group_delay(&mk(Array2::from_shape_fn((3, 5), |(_, f)| 0.25 * f as f64))).unwrap();
        assert!(g.group_delay.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-PI..PI));
        let g = group_delay(&mk(p.clone())).unwrap();
        for t in 0..4 {
            for f in 0..6 {
                let fi = if f == 5 { 4 } else { f };
                assert_eq!(g.group_delay[[t, f]], p[[t, fi + 1]] - p[[t, fi]]);
            }
        }
        assert_eq!(g.instantaneous_phase, p);
        assert!(group_delay(&mk(Array2::zeros((3, 1)))).is_err());
    }

    proptest! {
        #[test]
        fn anti_wrap_periodic_even(x in -50.0f64..50.0, k in -20i32..20) {
            let a = anti_wrap(x);
            prop_assert!((0.0..=PI + 1e-12).contains(&a));
            prop_assert!((anti_wrap(x + 2.0 * PI * k as f64) - a).abs() < 1e-9);
            prop_assert!((anti_wrap(-x) - a).abs() < 1e-12);
        }

        #[test]
        fn amplitude_scales_linearly(seed in 0u64..1000, a in 0.01f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_clip(&mut rng, 1500);
            let s1 = stft(&c, &StftConfig::APEN).unwrap();
            let scaled = AudioClip::new(c.samples.iter().map(|v| v * a).collect(), 16000);
            let s2 = stft(&scaled, &StftConfig::APEN).unwrap();
            for (x, y) in s1.amplitude.iter().zip(s2.amplitude.iter()) {
                prop_assert!((x * a - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn phase_is_principal(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_clip(&mut rng, 1100);
            let s = stft(&c, &StftConfig::APEN).unwrap();
            prop_assert!(s.phase.iter().all(|&p| p > -PI && p <= PI));
        }
    }
}
